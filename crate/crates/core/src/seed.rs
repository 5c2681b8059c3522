//! Counter-based seed derivation, so that work split across threads draws
//! from streams that depend only on (base seed, work-item id).

#[inline]
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed for work item `key` under `base`.
pub fn derive(base: u64, key: &[usize]) -> u64 {
    key.iter()
        .fold(splitmix64(base), |h, &k| splitmix64(h ^ (k as u64).wrapping_mul(0xd6e8_feb8_6659_fd93)))
}
