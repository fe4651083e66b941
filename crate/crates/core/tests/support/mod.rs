//! Independent oracles shared by the integration tests and the acceptance runner.
#![allow(dead_code)]

pub mod dense_qp;
pub mod jacobian;
pub mod lti;
pub mod metrics;
pub mod weights;
