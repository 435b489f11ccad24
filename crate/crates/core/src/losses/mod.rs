//! Distillation losses: correlation-matrix errors, head consistency, cross
//! space similarity, partial-order ranking terms, the combined objective and
//! the soft-label baseline.

mod objective;
mod terms;

pub use objective::{fpd_objective, jpl_objective, FpdBatch, JplGraph, NonBatch, OverlapBatch};
pub use terms::{
    bhc_non, bhc_overlap, class_indices, cme_loss, cme_matrix, csi, fhc_non, fhc_overlap, fpd,
    pom_blocks, pom_loss, pom_matrix, PomBlocks, NORM_EPS,
};

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::models::ModelError;

#[derive(Debug, Error)]
pub enum LossError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("{0} needs both classes in the batch")]
    SingleClass(String),
    #[error("invalid loss input: {0}")]
    Invalid(String),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CmeVariant {
    Cme,
    Bcme,
    #[default]
    Dcme,
}

impl FromStr for CmeVariant {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cme" => Ok(Self::Cme),
            "bcme" => Ok(Self::Bcme),
            "dcme" => Ok(Self::Dcme),
            other => Err(format!("unknown cme variant '{other}' (cme|bcme|dcme)")),
        }
    }
}

impl fmt::Display for CmeVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cme => "cme",
            Self::Bcme => "bcme",
            Self::Dcme => "dcme",
        })
    }
}

/// Form of the embedding regularizer.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegForm {
    #[default]
    Squared,
    Plain,
}

impl FromStr for RegForm {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "squared" => Ok(Self::Squared),
            "plain" => Ok(Self::Plain),
            other => Err(format!("unknown regularizer form '{other}' (squared|plain)")),
        }
    }
}

/// Per-term on/off switches. Disabled terms are left out of the total.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TermSwitches {
    pub cme: bool,
    pub fhc_o: bool,
    pub bhc_o: bool,
    pub pom_o: bool,
    pub csi: bool,
    pub bhc_n: bool,
    pub fhc_n: bool,
    pub pom_n: bool,
}

impl Default for TermSwitches {
    fn default() -> Self {
        Self {
            cme: true,
            fhc_o: true,
            bhc_o: true,
            pom_o: true,
            csi: true,
            bhc_n: true,
            fhc_n: true,
            pom_n: true,
        }
    }
}

impl TermSwitches {
    pub fn none() -> Self {
        Self {
            cme: false,
            fhc_o: false,
            bhc_o: false,
            pom_o: false,
            csi: false,
            bhc_n: false,
            fhc_n: false,
            pom_n: false,
        }
    }
}

/// Weights and switches of the combined objective.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub tau: f64,
    pub cme: CmeVariant,
    pub reg: RegForm,
    /// Adds plain CE on the A and federated heads for overlapped rows.
    pub aux_ce: bool,
    pub terms: TermSwitches,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            beta: 1.0,
            lambda: 1e-5,
            tau: 0.2,
            cme: CmeVariant::Dcme,
            reg: RegForm::Squared,
            aux_ce: false,
            terms: TermSwitches::default(),
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<(), LossError> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("lambda", self.lambda)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(LossError::Invalid(format!("{name} must be non-negative, got {v}")));
            }
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(LossError::Invalid(format!("tau must be positive, got {}", self.tau)));
        }
        Ok(())
    }
}

/// Scalar value of every term for one step, with the weights in force.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub cme: f64,
    pub fhc_o: f64,
    pub bhc_o: f64,
    pub pom_o: f64,
    pub csi: f64,
    pub bhc_n: f64,
    pub fhc_n: f64,
    pub pom_n: f64,
    pub aux_ce: f64,
    pub emb_reg: f64,
    pub total: f64,
    pub alpha: f64,
    pub beta: f64,
    pub lambda: f64,
    pub tau: f64,
}

impl LossReport {
    /// Weighted sum of the components, recomputed from the stored scalars.
    pub fn recompute_total(&self) -> f64 {
        let a2b_o = self.cme + self.bhc_o + self.alpha * self.fhc_o;
        let non = self.csi + self.bhc_n + self.fhc_n + self.pom_n;
        a2b_o + self.pom_o + self.beta * non + self.lambda * self.emb_reg + self.aux_ce
    }

    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_parsing() {
        assert_eq!("dCME".parse::<CmeVariant>().unwrap(), CmeVariant::Dcme);
        assert_eq!("bcme".parse::<CmeVariant>().unwrap(), CmeVariant::Bcme);
        assert!("xcme".parse::<CmeVariant>().is_err());
        assert_eq!(CmeVariant::Cme.to_string(), "cme");
        assert_eq!("plain".parse::<RegForm>().unwrap(), RegForm::Plain);
    }

    #[test]
    fn negative_weights_rejected() {
        let w = LossWeights {
            beta: -1.0,
            ..LossWeights::default()
        };
        assert!(w.validate().is_err());
        let w = LossWeights {
            tau: 0.0,
            ..LossWeights::default()
        };
        assert!(w.validate().is_err());
        assert!(LossWeights::default().validate().is_ok());
    }

    #[test]
    fn report_total_bookkeeping() {
        let r = LossReport {
            cme: 0.5,
            fhc_o: 0.2,
            bhc_o: 1.0,
            pom_o: -0.3,
            csi: 0.1,
            bhc_n: 0.7,
            fhc_n: 1.4,
            pom_n: -0.2,
            emb_reg: 3.0,
            alpha: 0.5,
            beta: 0.25,
            lambda: 0.01,
            ..LossReport::default()
        };
        let hand = 0.5 + 1.0 + 0.1 - 0.3 + 0.25 * (0.1 + 0.7 + 1.4 - 0.2) + 0.03;
        assert!((r.recompute_total() - hand).abs() < 1e-12);
        let back: LossReport = serde_json::from_str(&r.to_json_line()).unwrap();
        assert_eq!(back, r);
    }
}
