//! Seed derivation so independent random streams never share state.

/// SplitMix64 finalizer.
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Seed for item `index` of stream `stream` under `base`.
pub fn derive(base: u64, stream: u64, index: u64) -> u64 {
    mix(mix(base ^ mix(stream)) ^ index)
}

pub mod streams {
    pub const PUZZLE: u64 = 1;
    pub const TIE_BREAK: u64 = 2;
    pub const AGENT: u64 = 3;
    pub const TRIAL: u64 = 4;
}
