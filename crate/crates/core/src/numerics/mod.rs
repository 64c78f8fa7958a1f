//! Dense `f64` tensors, a define-by-run autodiff graph, Adam and checkpoints.

mod checkpoint;
pub mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use checkpoint::Checkpoint;
pub use graph::{log_sum_exp, sigmoid, Axis, Bound, Gradients, Graph, Var};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore, INIT_RANGE};
pub use tensor::{argmax, Tensor};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic generator for one named purpose under a run seed.
///
/// Distinct `stream` values give independent sequences, so adding a new
/// consumer of randomness never perturbs existing ones.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

#[cfg(test)]
mod tests;
