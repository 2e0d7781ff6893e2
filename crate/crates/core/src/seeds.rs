// Copyright 2026 The copal Authors
// SPDX-License-Identifier: Apache-2.0

//! Stable seed derivation. Child seeds depend only on the base seed and the
//! labels, never on scheduling or iteration order.

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes `base` with a sequence of labels.
pub fn derive_seed(base: u64, labels: &[&str]) -> u64 {
    let mut h = FNV_OFFSET ^ splitmix(base);
    for label in labels {
        for b in label.bytes().chain(std::iter::once(0xff)) {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    splitmix(h)
}

/// As [`derive_seed`] with trailing integer labels.
pub fn derive_seed_idx(base: u64, labels: &[&str], idx: &[usize]) -> u64 {
    let mut h = derive_seed(base, labels);
    for &i in idx {
        h = splitmix(h ^ (i as u64).wrapping_mul(FNV_PRIME));
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn labels_separate() {
        assert_ne!(derive_seed(1, &["ab", "c"]), derive_seed(1, &["a", "bc"]));
        assert_ne!(derive_seed(1, &["a"]), derive_seed(2, &["a"]));
        assert_eq!(derive_seed(7, &["x"]), derive_seed(7, &["x"]));
        assert_ne!(derive_seed_idx(7, &["x"], &[1, 2]), derive_seed_idx(7, &["x"], &[2, 1]));
    }
}
