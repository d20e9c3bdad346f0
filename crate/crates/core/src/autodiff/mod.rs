//! Reverse-mode automatic differentiation over dense matrices, plus the
//! Adam optimizer and a one-cycle learning-rate schedule.

mod adam;
mod params;
mod schedule;
mod tape;

pub use adam::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore};
pub use schedule::OneCycle;
pub use tape::{Gradients, NodeId, RowGroups, Tape};
