//! Reverse-mode automatic differentiation over dense NCHW tensors.
//!
//! The engine covers exactly the layers an image-to-image GAN needs:
//! convolutions (plain and transposed) lowered to GEMM, instance
//! normalisation, pointwise activations, broadcasting arithmetic, channel
//! concatenation, pixel shuffle, bilinear resampling and pooling.
//!
//! ```
//! use pgcycle_autograd::{Graph, Tensor};
//!
//! let g = Graph::<f64>::new();
//! let x = g.variable(Tensor::from_vec([1, 1, 1, 2], vec![1.0, -2.0]).unwrap());
//! let loss = x.square().mean();
//! let grads = g.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap().data(), &[1.0, -2.0]);
//! ```

mod float;
mod graph;
pub mod ops;
mod tensor;

pub use float::Float;
pub use graph::{Gradients, Graph, Var};
pub use ops::conv::ConvOpts;
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{op}: incompatible shapes {lhs:?} and {rhs:?}")]
    Shape {
        op: &'static str,
        lhs: [usize; 4],
        rhs: [usize; 4],
    },
    #[error("{0}")]
    InvalidArgument(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, lhs: [usize; 4], rhs: [usize; 4]) -> Self {
        Error::Shape { op, lhs, rhs }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
