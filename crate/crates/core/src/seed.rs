//! Independent random streams derived from one run seed.

/// SplitMix64 finalizer applied to `seed` mixed with a stream tag.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub mod streams {
    pub const ENV: u64 = 1;
    pub const ACTOR: u64 = 2;
    pub const MODEL_REPLAY: u64 = 3;
    pub const POLICY_REPLAY: u64 = 4;
    pub const WORLD_MODEL: u64 = 5;
    pub const LEARNER: u64 = 6;
    pub const SELECTOR: u64 = 7;
    pub const AUX: u64 = 8;
    pub const EVAL: u64 = 9;
    pub const SAMPLING: u64 = 10;
}
