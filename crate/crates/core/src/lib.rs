//! Synthetic traffic-sign detection datasets from sign templates and
//! arbitrary natural images, and VOC-style evaluation of detector output.

// `!(x >= lo)` style checks are used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bbox;
pub mod imageops;
pub mod catalog;
pub mod corpus;
pub mod dataset_io;
pub mod eval;
pub mod synth;
