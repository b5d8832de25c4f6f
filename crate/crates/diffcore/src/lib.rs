//! Dense f64 tensors with opt-in reverse-mode differentiation.
//!
//! Operations on untracked tensors are plain computations. Calling
//! [`Tensor::tracked`] registers a leaf on a [`Record`]; every op that
//! touches a tracked operand is appended to that record, and
//! [`Tensor::backward`] replays it in reverse.
//!
//! ```
//! use diffcore::{Record, Tensor};
//!
//! let rec = Record::new();
//! let x = Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap().tracked(&rec);
//! let loss = x.mul(&x).unwrap().sum().unwrap();
//! let grads = loss.backward().unwrap();
//! assert_eq!(grads.get(&x).unwrap(), &[2.0, 4.0, 6.0]);
//! ```

mod error;
pub mod gradcheck;
pub mod io;
mod ops;
mod record;
mod tensor;

pub use error::{DiffError, Result};
pub use gradcheck::{finite_diff_check, finite_diff_check_with, GradCheckOptions, GradCheckReport};
pub use ops::concat;
pub use record::{Gradients, Record};
pub use tensor::Tensor;
