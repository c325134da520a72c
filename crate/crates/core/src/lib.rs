//! Tensor regression toolkit: dense tensor algebra, Tucker/CP decompositions,
//! exponential-family GLM solvers, noise-augmented l0 sparsification of the
//! Tucker core, block-relaxation baselines and a seeded simulation harness.

pub mod baselines;
pub mod decomp;
pub mod error;
pub mod glm;
pub mod io;
pub mod model;
pub mod na;
pub mod rng;
pub mod simbench;
pub mod tensor;

pub use error::{Error, Result};
pub use glm::Family;
pub use model::{FitResult, Method};
pub use tensor::{DenseTensor, TensorDataset};
