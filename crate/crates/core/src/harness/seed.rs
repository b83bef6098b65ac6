//! Counter-based seed derivation.

const GOLDEN: u64 = 0x9e37_79b9_7f4a_7c15;

fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Hash `master` together with a list of counters into a 64-bit seed.
///
/// The result depends only on the inputs, so trials can run in any order.
pub fn derive_seed(master: u64, counters: &[u64]) -> u64 {
    counters
        .iter()
        .fold(mix(master.wrapping_add(GOLDEN)), |acc, &c| {
            mix(acc ^ mix(c.wrapping_add(GOLDEN).wrapping_mul(3)))
        })
}
