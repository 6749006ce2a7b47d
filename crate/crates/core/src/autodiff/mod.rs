//! Tape-based reverse-mode differentiation over dense NHWC tensors.
//!
//! Every forward op appends a node to a [`Graph`]; [`Graph::backward`]
//! walks the nodes in reverse and accumulates gradients into every node
//! that requires them. After a backward pass the graph is released: op
//! caches and intermediate gradients are dropped, leaf gradients stay
//! readable.
//!
//! ```
//! use ssb_core::autodiff::Graph;
//! use ssb_core::Tensor;
//!
//! let mut g = Graph::<f64>::new();
//! let x = g.leaf(Tensor::new(&[3], vec![1.0, -2.0, 0.5]).unwrap(), true);
//! let sq = g.mul(x, x).unwrap();
//! let loss = g.sum(sq).unwrap();
//! g.backward(loss).unwrap();
//! assert_eq!(g.grad(x).unwrap().data(), &[2.0, -4.0, 1.0]);
//! ```

mod conv;
mod graph;
mod norm;
mod optim;
mod par;

pub use conv::{ConvGeom, Padding};
pub use graph::{Axis, Graph, Var};
pub use norm::{BatchNormParams, BnStats, BN_EPSILON, BN_MOMENTUM};
pub use optim::{CosineSchedule, Sgd};
