//! Premium optimisation for insurance new business.
//!
//! Given a portfolio of customer quotes and the competitors' premiums for each
//! customer, the engine chooses per-customer premium changes `delta` that
//! maximise either the expected premium volume or the expected number of new
//! customers, subject to business constraints. Non-smooth conversion models
//! (step functions, discrete delta grids) are handled by a penalty-method
//! genetic algorithm; smooth models (linear, logistic) by an SQP solver with a
//! BFGS Hessian approximation. A seeded market simulator and a brute-force
//! oracle support validation end to end.

pub mod conversion;
pub mod error;
pub mod ga;
pub mod linalg;
pub mod market;
pub mod objective;
pub mod oracle;
pub mod qp;
pub mod report;
pub mod rng;
pub mod scenario;
pub mod simulate;
pub mod solver;
pub mod sqp;

pub use error::{Error, Result};
pub use market::{DeltaDomain, MarketQuote, Portfolio};
pub use solver::{SolverResult, SolverStatus};
