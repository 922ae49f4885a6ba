#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod atlas;
pub mod domain;
pub mod error;
pub mod functionals;
pub mod ldp;
pub mod prior;
pub mod solver;
pub mod stability;
