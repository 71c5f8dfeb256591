use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum RiskError {
    #[error("risk level {0} outside (0, 1)")]
    OutOfRange(f64),
}

/// Tightening coefficient `sqrt((1 - eps) / eps)` of a moment-based chance
/// constraint at risk level `eps`.
pub fn k_epsilon(eps: f64) -> Result<f64, RiskError> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(RiskError::OutOfRange(eps));
    }
    Ok(((1.0 - eps) / eps).sqrt())
}

/// Risk levels for PV availability, nodal voltage and line current. The
/// coefficients are derived on every access.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRisk", into = "RawRisk")]
pub struct RiskConfig {
    eps_p: f64,
    eps_v: f64,
    eps_i: f64,
}

#[derive(Serialize, Deserialize)]
struct RawRisk {
    eps_p: f64,
    eps_v: f64,
    eps_i: f64,
}

impl TryFrom<RawRisk> for RiskConfig {
    type Error = RiskError;
    fn try_from(r: RawRisk) -> Result<Self, Self::Error> {
        RiskConfig::new(r.eps_p, r.eps_v, r.eps_i)
    }
}

impl From<RiskConfig> for RawRisk {
    fn from(r: RiskConfig) -> Self {
        RawRisk {
            eps_p: r.eps_p,
            eps_v: r.eps_v,
            eps_i: r.eps_i,
        }
    }
}

impl Default for RiskConfig {
    fn default() -> Self {
        RiskConfig {
            eps_p: 0.5,
            eps_v: 0.05,
            eps_i: 0.05,
        }
    }
}

impl RiskConfig {
    pub fn new(eps_p: f64, eps_v: f64, eps_i: f64) -> Result<Self, RiskError> {
        for e in [eps_p, eps_v, eps_i] {
            k_epsilon(e)?;
        }
        Ok(RiskConfig { eps_p, eps_v, eps_i })
    }

    pub fn eps_p(&self) -> f64 {
        self.eps_p
    }

    pub fn eps_v(&self) -> f64 {
        self.eps_v
    }

    pub fn eps_i(&self) -> f64 {
        self.eps_i
    }

    pub fn k_p(&self) -> f64 {
        k_epsilon(self.eps_p).expect("validated at construction")
    }

    pub fn k_v(&self) -> f64 {
        k_epsilon(self.eps_v).expect("validated at construction")
    }

    pub fn k_i(&self) -> f64 {
        k_epsilon(self.eps_i).expect("validated at construction")
    }

    pub fn with_eps_p(self, eps_p: f64) -> Result<Self, RiskError> {
        RiskConfig::new(eps_p, self.eps_v, self.eps_i)
    }

    pub fn with_eps_v(self, eps_v: f64) -> Result<Self, RiskError> {
        RiskConfig::new(self.eps_p, eps_v, self.eps_i)
    }

    pub fn with_eps_i(self, eps_i: f64) -> Result<Self, RiskError> {
        RiskConfig::new(self.eps_p, self.eps_v, eps_i)
    }
}
