//! Minimal dense-tensor arithmetic with reverse-mode automatic
//! differentiation, covering exactly the operations the model graph needs.

mod store;
mod tape;
mod tensor;

pub use store::{AdamHyper, CheckpointError, LoadReport, ParamEntry, ParamStore};
pub use tape::{AdError, LookupTable, NodeId, Tape};
pub use tensor::{ShapeError, Tensor};
