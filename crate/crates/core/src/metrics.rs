//! Selection-quality statistics over simulation replications.

use std::f64::consts::FRAC_PI_2;

use crate::data::PredictorSet;
use crate::error::{Error, Result};

/// `arccos |cos ∠(a, b)|`, taken as π/2 when either vector is zero.
pub fn angle_statistic(true_direction: &[f64], estimated: &[f64]) -> Result<f64> {
    if true_direction.len() != estimated.len() {
        return Err(Error::DimensionMismatch {
            expected: true_direction.len(),
            got: estimated.len(),
        });
    }
    let na = true_direction.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nb = estimated.iter().map(|v| v * v).sum::<f64>().sqrt();
    if na * nb == 0.0 || !(na * nb).is_finite() {
        return Ok(FRAC_PI_2);
    }
    let dot: f64 = true_direction.iter().zip(estimated).map(|(a, b)| a * b).sum();
    Ok((dot.abs() / (na * nb)).min(1.0).acos())
}

/// Outcome of one procedure on one simulated dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplicationRecord {
    pub selected: PredictorSet,
    pub family_contained_truth: bool,
    /// Refit slopes on the original predictor scale, length p.
    pub refit_coefficients: Vec<f64>,
    pub true_support: PredictorSet,
    /// Zero-padded to length p.
    pub true_direction: Vec<f64>,
}

impl ReplicationRecord {
    pub fn is_equal(&self) -> bool {
        self.selected == self.true_support
    }

    pub fn is_superset(&self) -> bool {
        self.selected.is_superset(&self.true_support)
    }

    pub fn angle(&self) -> Result<f64> {
        angle_statistic(&self.true_direction, &self.refit_coefficients)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentReport {
    pub p_inc: f64,
    pub p_equal: f64,
    pub p_supset: f64,
    /// Mean angle in radians.
    pub angle: f64,
    pub p_inc_se: f64,
    pub p_equal_se: f64,
    pub p_supset_se: f64,
    pub angle_se: f64,
    /// Number of records aggregated.
    pub l: usize,
    pub per_replication: Vec<ReplicationRecord>,
}

/// Standard error of a proportion estimated from `l` draws.
pub fn binomial_se(p: f64, l: usize) -> f64 {
    (p * (1.0 - p) / l as f64).sqrt()
}

pub fn aggregate(records: Vec<ReplicationRecord>) -> Result<ExperimentReport> {
    if records.is_empty() {
        return Err(Error::InvalidArgument("no replication records to aggregate".into()));
    }
    let l = records.len();
    let lf = l as f64;
    let frac = |f: &dyn Fn(&ReplicationRecord) -> bool| records.iter().filter(|r| f(r)).count() as f64 / lf;
    let p_inc = frac(&|r| r.family_contained_truth);
    let p_equal = frac(&|r| r.is_equal());
    let p_supset = frac(&|r| r.is_superset());
    let angles = records.iter().map(ReplicationRecord::angle).collect::<Result<Vec<f64>>>()?;
    let angle = angles.iter().sum::<f64>() / lf;
    let angle_se = if l > 1 {
        let var = angles.iter().map(|a| (a - angle).powi(2)).sum::<f64>() / (lf - 1.0);
        (var / lf).sqrt()
    } else {
        0.0
    };
    Ok(ExperimentReport {
        p_inc,
        p_equal,
        p_supset,
        angle,
        p_inc_se: binomial_se(p_inc, l),
        p_equal_se: binomial_se(p_equal, l),
        p_supset_se: binomial_se(p_supset, l),
        angle_se,
        l,
        per_replication: records,
    })
}
