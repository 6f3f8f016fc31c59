//! Guide chapters compiled as doc-tests, one module per chapter so a failing
//! snippet points at its chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/timing_model.md")]
pub mod timing_model {}
#[doc = include_str!("../../../book/src/observer.md")]
pub mod observer {}
#[doc = include_str!("../../../book/src/schedulability.md")]
pub mod schedulability {}
#[doc = include_str!("../../../book/src/mpc.md")]
pub mod mpc {}
#[doc = include_str!("../../../book/src/scenarios.md")]
pub mod scenarios {}
