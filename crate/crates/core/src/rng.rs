//! Counter-based random streams.
//!
//! A [`Streams`] value is a ChaCha8 key. Independent generators are obtained
//! by index ([`Streams::stream`]) and sub-families by label
//! ([`Streams::derive`]), so parallel work can pick its generator from its
//! position alone without coordinating with other workers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Streams {
    key: [u8; 32],
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl Streams {
    pub fn new(seed: u64) -> Self {
        let mut state = seed;
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        Streams { key }
    }

    /// A child family, keyed by this family's key and `label`.
    pub fn derive(&self, label: u64) -> Self {
        let mut state = u64::from_le_bytes(self.key[..8].try_into().unwrap())
            ^ u64::from_le_bytes(self.key[8..16].try_into().unwrap()).rotate_left(17)
            ^ u64::from_le_bytes(self.key[16..24].try_into().unwrap()).rotate_left(31)
            ^ u64::from_le_bytes(self.key[24..].try_into().unwrap()).rotate_left(47);
        let mut label = label;
        state ^= splitmix64(&mut label);
        let mut key = [0u8; 32];
        for chunk in key.chunks_exact_mut(8) {
            chunk.copy_from_slice(&splitmix64(&mut state).to_le_bytes());
        }
        Streams { key }
    }

    /// The generator for stream `index` of this family.
    pub fn stream(&self, index: u64) -> Rng {
        let mut rng = ChaCha8Rng::from_seed(self.key);
        rng.set_stream(index);
        rng
    }
}
