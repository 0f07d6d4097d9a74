//! Deterministic seed derivation for independent sub-streams.

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for sub-stream `index` of `seed`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ index.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

/// Pipeline stages that draw their own random streams.
#[derive(Debug, Clone, Copy)]
pub enum Stage {
    Clustering = 1,
    CentroidRouting = 2,
    ClusterRouting = 3,
}

pub fn stage_seed(seed: u64, stage: Stage, index: u64) -> u64 {
    derive_seed(derive_seed(seed, stage as u64), index)
}
