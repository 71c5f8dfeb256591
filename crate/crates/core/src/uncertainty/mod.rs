//! Forecast-error modeling: risk coefficients, 1-D Gaussian mixtures fitted
//! by EM, scenario tables keyed by weather and power level, and propagation
//! of injection moments through affine network functionals.

mod gmm;
pub(crate) mod propagate;
mod risk;
mod scenario;

pub use gmm::{fit_gmm, gmm_moments, sample_gmm, ComponentScore, EmOptions, Gmm, GmmError, GmmSelection};
pub use propagate::{propagate, Propagation, SourceTag, UncertainInjection};
pub use risk::{k_epsilon, RiskConfig, RiskError};
pub use scenario::{
    read_error_history, BinFit, DayType, ErrorHistory, ErrorScenarioTable, PowerBin, ScenarioEntry, ScenarioError,
    TableFit,
};
