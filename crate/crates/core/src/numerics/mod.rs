//! Dense tensors, reverse-mode gradients, optimizers, gradient checking and
//! checkpoint I/O.

pub mod checkpoint;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;
pub mod tensor;

use rand::Rng;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use gradcheck::{evaluate, fd_check, forward_backward};
pub use graph::{ConvGeom, Gradients, Graph, Var};
pub use optim::{Algorithm, FreezeMask, OptimizerConfig, OptimizerState};
pub use params::{collect_grads, GradMap, ParamStore};
pub use tensor::Tensor;

/// Uniform `±sqrt(6 / fan_in)` initialization (He scaling for rectified units).
pub fn he_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape and length agree")
}
