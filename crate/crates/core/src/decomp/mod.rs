//! Randomized matrix decompositions.

mod cqrrpt;
mod rsvd;

pub use cqrrpt::{cqrrpt, sketch_precondition, CqrrptResult, Preconditioned, DEFAULT_GAMMA};
pub use rsvd::{rsvd, RsvdResult, DEFAULT_OVERSAMPLE, DEFAULT_POWER_ITERS};
