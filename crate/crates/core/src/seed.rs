//! Deterministic seed derivation.
//!
//! Everything randomized in this crate draws its seed through [`derive_seed`],
//! so a single top-level seed pins the whole pipeline regardless of how the
//! work is scheduled across threads.

/// SplitMix64 finalizer. Decorrelates nearby inputs.
pub fn splitmix64(mut state: u64) -> u64 {
    state = state.wrapping_add(0x9E37_79B9_7F4A_7C15);
    state = (state ^ (state >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    state = (state ^ (state >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    state ^ (state >> 31)
}

/// Derive an independent child seed for the given stream index.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream.wrapping_add(0x517C_C1B7_2722_0A95)))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_are_stable_and_distinct() {
        let a = derive_seed(7, 0);
        let b = derive_seed(7, 1);
        assert_eq!(a, derive_seed(7, 0));
        assert_ne!(a, b);
        assert_ne!(derive_seed(8, 0), a);
    }
}
