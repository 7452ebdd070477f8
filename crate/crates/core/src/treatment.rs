//! Treatments defined by network evolution, `Zᵢ = fᵢ(G⁻, G⁺)`, and the
//! entanglement constraints `L(Z) = 0` they satisfy.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{check_supergraph, Graph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TreatmentDef {
    /// Number of new connections.
    NewDegree,
    /// At least one new connection.
    AtLeastOne,
    /// Strictly more than `k` new connections.
    MoreThan(usize),
    /// The neighborhood grew. Equivalent to [`AtLeastOne`](Self::AtLeastOne)
    /// when edges are never deleted.
    NeighborhoodGrew,
}

impl TreatmentDef {
    /// Treatment value for a unit with `new_degree` new connections.
    pub fn of_new_degree(self, new_degree: usize) -> usize {
        match self {
            TreatmentDef::NewDegree => new_degree,
            TreatmentDef::AtLeastOne | TreatmentDef::NeighborhoodGrew => usize::from(new_degree > 0),
            TreatmentDef::MoreThan(k) => usize::from(new_degree > k),
        }
    }

    pub fn is_binary(self) -> bool {
        !matches!(self, TreatmentDef::NewDegree)
    }
}

impl fmt::Display for TreatmentDef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TreatmentDef::NewDegree => f.write_str("new_degree"),
            TreatmentDef::AtLeastOne => f.write_str("at_least_one"),
            TreatmentDef::MoreThan(k) => write!(f, "more_than:{k}"),
            TreatmentDef::NeighborhoodGrew => f.write_str("neighborhood_grew"),
        }
    }
}

impl FromStr for TreatmentDef {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "new_degree" => Ok(TreatmentDef::NewDegree),
            "at_least_one" => Ok(TreatmentDef::AtLeastOne),
            "neighborhood_grew" => Ok(TreatmentDef::NeighborhoodGrew),
            _ => match s.strip_prefix("more_than:") {
                Some(k) => k
                    .parse()
                    .map(TreatmentDef::MoreThan)
                    .map_err(|_| Error::arg(format!("bad threshold in `{s}`"))),
                None => Err(Error::arg(format!("unknown treatment `{s}`"))),
            },
        }
    }
}

/// New degree of every unit, `dᵢ(G⁺) − dᵢ(G⁻)`.
pub fn new_degrees(g_minus: &Graph, g_plus: &Graph) -> Result<Vec<usize>> {
    check_supergraph(g_minus, g_plus)?;
    Ok(g_plus.degrees().iter().zip(g_minus.degrees()).map(|(p, m)| p - m).collect())
}

pub fn apply_treatment(def: TreatmentDef, g_minus: &Graph, g_plus: &Graph) -> Result<Vec<usize>> {
    Ok(new_degrees(g_minus, g_plus)?.into_iter().map(|d| def.of_new_degree(d)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EntanglementConstraint {
    /// `Z − (G⁺ − G⁻)·1`.
    DegreeDiff,
    /// `Zᵀ1 − n·p`: a completely randomized design treating `n·p` units.
    FixedTotal { n: usize, p: f64 },
}

/// Residual of the constraint; all zeros certifies consistency.
pub fn constraint_residual(
    constraint: EntanglementConstraint,
    z: &[f64],
    g_minus: &Graph,
    g_plus: &Graph,
) -> Result<Vec<f64>> {
    match constraint {
        EntanglementConstraint::DegreeDiff => {
            let d = new_degrees(g_minus, g_plus)?;
            if z.len() != d.len() {
                return Err(Error::DimensionMismatch { expected: d.len(), found: z.len() });
            }
            Ok(z.iter().zip(d).map(|(zi, di)| zi - di as f64).collect())
        }
        EntanglementConstraint::FixedTotal { n, p } => {
            if z.len() != n {
                return Err(Error::DimensionMismatch { expected: n, found: z.len() });
            }
            Ok(vec![z.iter().sum::<f64>() - n as f64 * p])
        }
    }
}
