//! Deterministic derivation of per-component RNG seeds.

/// Mixes a base seed with a salt (cell index, run id, tree id, ...) so that
/// each component gets an independent-looking stream while staying fully
/// reproducible. Splitmix64 finalizer.
pub(crate) fn mix(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
