//! Deterministic seed derivation.

/// SplitMix64 finalizer.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Child seed for stream `index` under `parent`.
pub fn derive(parent: u64, index: u64) -> u64 {
    mix(mix(parent) ^ index.wrapping_mul(0xD1B5_4A32_D192_ED03))
}
