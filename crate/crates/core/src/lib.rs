//! Synthesis of passive, fixed-order controllers in port-Hamiltonian form.
//!
//! Controllers are parameterized so that every parameter vector yields a
//! valid port-Hamiltonian realization. The closed-loop H∞ norm is minimized
//! over a finite, adaptively refined frequency grid and then checked on the
//! whole imaginary axis.
#![allow(clippy::neg_cmp_op_on_partial_ord)]


pub mod error;
pub mod experiment;
pub mod hinf;
pub mod io;
pub mod linalg;
pub mod lti;
pub mod msd;
pub mod optim;
pub mod passivity;
pub mod ph;
pub mod statespace;
pub mod synthesis;

pub use error::{Error, Result};
pub use lti::{FeedbackSign, PlantEvaluation, PlantEvaluator, PlantResponse};
pub use ph::{PhForm, PhPlant, ThetaLayout, ThetaVector, ToleranceSet};
pub use statespace::StateSpace;
