//! Benchmark fixtures shared by the criterion targets.

use dpn_core::Tensor;

/// Deterministic pseudo-random tensor in `[-1, 1)`; no RNG dependency needed for fixtures.
pub fn fixture(shape: &[usize], salt: u64) -> Tensor<f32> {
    let mut state = salt.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
    Tensor::from_fn(shape.to_vec(), |_| {
        state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((state >> 40) as f32 / (1u64 << 24) as f32) * 2.0 - 1.0
    })
}
