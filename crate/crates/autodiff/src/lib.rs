//! Tape-based reverse-mode differentiation over dense `f64` matrices.
//!
//! ```
//! use bertctc_autodiff::{ParamStore, Tape, Tensor};
//!
//! let mut store = ParamStore::new();
//! store.insert("x", Tensor::scalar(3.0)).unwrap();
//! let tape = Tape::new();
//! let x = tape.param(&store, "x").unwrap();
//! let y = tape.scale(x, 2.0);
//! let z = tape.mul(y, y).unwrap();
//! let grads = tape.backward(z).unwrap();
//! assert_eq!(grads.get("x").unwrap().item(), 24.0);
//! ```

mod error;
pub mod gradcheck;
mod ops;
mod params;
mod tape;
mod tensor;

pub use error::{Error, Result};
pub use gradcheck::{check_gradients, relative_error, GradCheckReport};
pub use ops::GruWeights;
pub use params::{sgd_step, ParamStore, Sgd, CHECKPOINT_FORMAT_VERSION};
pub use tape::{Gradients, Tape, Value};
pub use tensor::Tensor;
