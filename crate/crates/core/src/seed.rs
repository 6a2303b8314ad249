use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// 64-bit seed for one trial or one deployment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(transparent)]
pub struct RngSeed(pub u64);

impl RngSeed {
    /// Sub-seed for deployment `t` of the trial seeded with `self`.
    ///
    /// Every deployment gets its own stream, so a trajectory only depends on
    /// (trial seed, t) and never on how many draws earlier rounds consumed.
    pub fn deployment(self, t: u64) -> RngSeed {
        RngSeed(mix64(mix64(self.0) ^ t.wrapping_mul(0xD1B5_4A32_D192_ED03)))
    }

    /// Independent stream derived from `self` and an index.
    pub fn stream(self, index: u64) -> RngSeed {
        RngSeed(mix64(
            self.0.rotate_left(17) ^ mix64(index ^ 0xA076_1D64_78BD_642F),
        ))
    }

    pub fn rng(self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.0)
    }
}

impl From<u64> for RngSeed {
    fn from(v: u64) -> Self {
        RngSeed(v)
    }
}

// splitmix64 finalizer
fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deployment_seeds_differ_across_t_and_trials() {
        let a = RngSeed(7);
        assert_ne!(a.deployment(0), a.deployment(1));
        assert_ne!(a.deployment(3), RngSeed(8).deployment(3));
        assert_eq!(a.deployment(5), RngSeed(7).deployment(5));
    }
}
