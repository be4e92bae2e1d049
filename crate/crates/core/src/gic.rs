//! Generalized Information Criterion and the selection procedures built on it.
//!
//! `GIC(w) = n·R_n(β̂(w)) + a_n·(|w| + 1)` where `β̂(w)` is the unpenalized
//! refit on `w`; the `+ 1` counts the intercept and can be switched off.
//!
//! Four procedures are provided:
//! - [`select_ss`]: one Lasso fit, its prefix chain, GIC minimization.
//! - [`select_ssnet`]: the union of prefix chains along a λ path.
//! - [`select_sscv`]: λ chosen by K-fold cross-validation with the one
//!   standard error rule, then as `select_ss`.
//! - [`select_lft`]: GIC evaluated on the Lasso fits themselves with the
//!   Fan–Tang penalty; the support at the minimizing λ is selected.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, PredictorSet};
use crate::error::{Error, Result};
use crate::family::{nested_from_order, order_support, path_supports, union_families, NestedFamily};
use crate::loss::{mean_loss, LossSpec};
use crate::solver::{fit_lasso, fit_path, refit, PathResult, PenalizedFit, SolverConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum PenaltyKind {
    Aic,
    Bic,
    /// `log n + 2d·log p`
    Ebic(f64),
    /// `log(log n)·log p`
    FanTang,
    Custom(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GicPenalty {
    pub kind: PenaltyKind,
    pub counts_intercept: bool,
}

impl GicPenalty {
    pub fn new(kind: PenaltyKind) -> Self {
        Self {
            kind,
            counts_intercept: true,
        }
    }

    pub fn aic() -> Self {
        Self::new(PenaltyKind::Aic)
    }

    pub fn bic() -> Self {
        Self::new(PenaltyKind::Bic)
    }

    pub fn ebic(d: f64) -> Self {
        Self::new(PenaltyKind::Ebic(d))
    }

    pub fn fan_tang() -> Self {
        Self::new(PenaltyKind::FanTang)
    }

    /// Short label used in reports: `aic`, `bic`, `ebic:1`, `fan-tang`, `custom:3.5`.
    pub fn label(&self) -> String {
        match self.kind {
            PenaltyKind::Aic => "aic".into(),
            PenaltyKind::Bic => "bic".into(),
            PenaltyKind::Ebic(d) => format!("ebic:{d}"),
            PenaltyKind::FanTang => "fan-tang".into(),
            PenaltyKind::Custom(a) => format!("custom:{a}"),
        }
    }

    /// Number of parameters charged for model `w`.
    pub fn model_size(&self, w: &PredictorSet) -> usize {
        w.len() + usize::from(self.counts_intercept)
    }
}

impl fmt::Display for GicPenalty {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label())
    }
}

impl FromStr for GicPenalty {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let num = |v: &str| -> Result<f64> {
            v.parse::<f64>()
                .ok()
                .filter(|x| *x > 0.0 && x.is_finite())
                .ok_or_else(|| Error::InvalidArgument(format!("bad penalty parameter `{v}`")))
        };
        let kind = match s.as_str() {
            "aic" => PenaltyKind::Aic,
            "bic" => PenaltyKind::Bic,
            "ebic" | "ebic1" => PenaltyKind::Ebic(1.0),
            "fan-tang" | "fantang" | "fan_tang" => PenaltyKind::FanTang,
            other => {
                if let Some(d) = other.strip_prefix("ebic:") {
                    PenaltyKind::Ebic(num(d)?)
                } else if let Some(a) = other.strip_prefix("custom:") {
                    PenaltyKind::Custom(num(a)?)
                } else {
                    return Err(Error::InvalidArgument(format!("unknown penalty `{other}`")));
                }
            }
        };
        Ok(GicPenalty::new(kind))
    }
}

/// The per-parameter penalty `a_n`.
pub fn penalty_value(pen: &GicPenalty, n: usize, p: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!("penalty needs n >= 2, got {n}")));
    }
    let (ln_n, ln_p) = ((n as f64).ln(), (p as f64).ln());
    let a = match pen.kind {
        PenaltyKind::Aic => 2.0,
        PenaltyKind::Bic => ln_n,
        PenaltyKind::Ebic(d) => ln_n + 2.0 * d * ln_p,
        PenaltyKind::FanTang => {
            if ln_n <= 1.0 {
                return Err(Error::InvalidArgument(format!(
                    "Fan-Tang penalty needs n > e, got {n}"
                )));
            }
            ln_n.ln() * ln_p
        }
        PenaltyKind::Custom(a) => a,
    };
    if !(a > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "penalty {} is not positive for n = {n}, p = {p}",
            pen.label()
        )));
    }
    Ok(a)
}

/// Memo of unpenalized refits for one (dataset, loss, solver config).
#[derive(Debug, Default)]
pub struct RefitCache {
    fits: Mutex<HashMap<PredictorSet, PenalizedFit>>,
}

impl RefitCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.fits.lock().expect("refit cache poisoned").len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get_or_refit(
        &self,
        d: &Dataset,
        spec: &LossSpec,
        w: &PredictorSet,
        cfg: &SolverConfig,
    ) -> Result<PenalizedFit> {
        if let Some(fit) = self.fits.lock().expect("refit cache poisoned").get(w) {
            return Ok(fit.clone());
        }
        let fit = refit(d, spec, w, cfg)?;
        self.fits
            .lock()
            .expect("refit cache poisoned")
            .insert(w.clone(), fit.clone());
        Ok(fit)
    }
}

fn gic_from_fit(d: &Dataset, w: &PredictorSet, fit: &PenalizedFit, pen: &GicPenalty) -> Result<f64> {
    if fit.separated {
        return Err(Error::GicUndefined(w.to_string()));
    }
    let a_n = penalty_value(pen, d.n(), d.p())?;
    Ok(d.n() as f64 * fit.risk() + a_n * pen.model_size(w) as f64)
}

/// GIC of a single model, refitting it from scratch.
pub fn gic(
    d: &Dataset,
    spec: &LossSpec,
    w: &PredictorSet,
    pen: &GicPenalty,
    cfg: &SolverConfig,
) -> Result<f64> {
    let fit = refit(d, spec, w, cfg)?;
    gic_from_fit(d, w, &fit, pen)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GicStatus {
    Evaluated,
    /// Refit diverged (logistic separation); GIC taken as +∞.
    Separated,
    /// Too many parameters for n; GIC taken as +∞.
    Infeasible,
    /// Skipped: its penalty term alone exceeds the best value found.
    Pruned,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GicEntry {
    pub model: PredictorSet,
    /// GIC value, +∞ unless `status` is `Evaluated`.
    pub value: f64,
    /// Grid λ for rows computed on Lasso fits.
    pub lambda: Option<f64>,
    pub status: GicStatus,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Procedure {
    Ss,
    Ssnet,
    Sscv,
    Lft,
}

impl Procedure {
    pub fn name(&self) -> &'static str {
        match self {
            Procedure::Ss => "ss",
            Procedure::Ssnet => "ssnet",
            Procedure::Sscv => "sscv",
            Procedure::Lft => "lft",
        }
    }
}

impl fmt::Display for Procedure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Procedure {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ss" => Ok(Procedure::Ss),
            "ssnet" => Ok(Procedure::Ssnet),
            "sscv" => Ok(Procedure::Sscv),
            "lft" => Ok(Procedure::Lft),
            other => Err(Error::InvalidArgument(format!("unknown procedure `{other}`"))),
        }
    }
}

/// Result of one selection run.
#[derive(Clone, Debug)]
pub struct SelectionOutcome {
    pub procedure: Procedure,
    pub penalty: GicPenalty,
    pub selected: PredictorSet,
    /// Unpenalized refit on `selected` (the Lasso fit itself for LFT).
    pub refit: PenalizedFit,
    pub gic_table: Vec<GicEntry>,
    pub family: NestedFamily,
    /// Screening λ for SS and SSCV, minimizing grid λ for LFT.
    pub lambda: Option<f64>,
}

impl SelectionOutcome {
    pub fn min_gic(&self) -> f64 {
        self.gic_table
            .iter()
            .map(|e| e.value)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Minimizes GIC over `family`. Models are visited by size then
/// lexicographically and the first strict minimum wins, so ties go to the
/// smaller model. With `prune`, models whose penalty term alone exceeds the
/// running minimum are skipped; this never changes the minimizer because
/// the risk term is nonnegative.
#[allow(clippy::too_many_arguments)]
pub fn minimize_over_family(
    d: &Dataset,
    spec: &LossSpec,
    family: &NestedFamily,
    pen: &GicPenalty,
    cfg: &SolverConfig,
    cache: &RefitCache,
    prune: bool,
) -> Result<(Vec<GicEntry>, usize, PenalizedFit)> {
    let a_n = penalty_value(pen, d.n(), d.p())?;
    let mut order: Vec<usize> = (0..family.len()).collect();
    order.sort_by(|&a, &b| {
        let (ma, mb) = (&family.models[a], &family.models[b]);
        ma.len().cmp(&mb.len()).then_with(|| ma.cmp(mb))
    });
    let mut table: Vec<Option<GicEntry>> = vec![None; family.len()];
    let mut best: Option<(usize, f64, PenalizedFit)> = None;
    for k in order {
        let w = &family.models[k];
        let entry = |value, status| GicEntry {
            model: w.clone(),
            value,
            lambda: None,
            status,
        };
        let floor = a_n * pen.model_size(w) as f64;
        if prune && best.as_ref().is_some_and(|(_, v, _)| floor > *v) {
            table[k] = Some(entry(f64::INFINITY, GicStatus::Pruned));
            continue;
        }
        if w.len() + 1 > d.n() {
            table[k] = Some(entry(f64::INFINITY, GicStatus::Infeasible));
            continue;
        }
        let fit = cache.get_or_refit(d, spec, w, cfg)?;
        match gic_from_fit(d, w, &fit, pen) {
            Ok(value) => {
                if best.as_ref().is_none_or(|(_, v, _)| value < *v) {
                    best = Some((k, value, fit));
                }
                table[k] = Some(entry(value, GicStatus::Evaluated));
            }
            Err(Error::GicUndefined(_)) => {
                table[k] = Some(entry(f64::INFINITY, GicStatus::Separated));
            }
            Err(e) => return Err(e),
        }
    }
    let (idx, _, fit) =
        best.ok_or_else(|| Error::Numerical("no model in the family has a finite GIC".into()))?;
    Ok((table.into_iter().map(|e| e.expect("every model visited")).collect(), idx, fit))
}

#[allow(clippy::too_many_arguments)]
fn outcome_from_family(
    d: &Dataset,
    spec: &LossSpec,
    family: NestedFamily,
    pen: &GicPenalty,
    cfg: &SolverConfig,
    cache: &RefitCache,
    prune: bool,
    procedure: Procedure,
    lambda: Option<f64>,
) -> Result<SelectionOutcome> {
    let (gic_table, idx, refit) = minimize_over_family(d, spec, &family, pen, cfg, cache, prune)?;
    Ok(SelectionOutcome {
        procedure,
        penalty: *pen,
        selected: family.models[idx].clone(),
        refit,
        gic_table,
        family,
        lambda,
    })
}

/// SS second stage for an already computed Lasso fit.
#[allow(clippy::too_many_arguments)]
pub fn ss_from_fit(
    d: &Dataset,
    spec: &LossSpec,
    fit: &PenalizedFit,
    pen: &GicPenalty,
    cfg: &SolverConfig,
    cache: &RefitCache,
    prune: bool,
    procedure: Procedure,
) -> Result<SelectionOutcome> {
    let family = nested_from_order(&order_support(fit))?;
    outcome_from_family(d, spec, family, pen, cfg, cache, prune, procedure, Some(fit.lambda))
}

/// Screening by one Lasso fit at `lambda`, then GIC over its prefix chain.
pub fn select_ss(
    d: &Dataset,
    spec: &LossSpec,
    lambda: f64,
    pen: &GicPenalty,
    cfg: &SolverConfig,
) -> Result<SelectionOutcome> {
    let fit = fit_lasso(d, spec, lambda, cfg, None)?;
    ss_from_fit(d, spec, &fit, pen, cfg, &RefitCache::new(), false, Procedure::Ss)
}

/// SSnet second stage for an already computed path.
pub fn ssnet_from_path(
    d: &Dataset,
    spec: &LossSpec,
    path: &PathResult,
    pen: &GicPenalty,
    cfg: &SolverConfig,
    cache: &RefitCache,
    prune: bool,
) -> Result<SelectionOutcome> {
    let family = union_families(path);
    outcome_from_family(d, spec, family, pen, cfg, cache, prune, Procedure::Ssnet, None)
}

/// Screening along an `m`-point λ path, then GIC over the union family.
pub fn select_ssnet(
    d: &Dataset,
    spec: &LossSpec,
    m: usize,
    ratio: f64,
    pen: &GicPenalty,
    cfg: &SolverConfig,
) -> Result<SelectionOutcome> {
    let path = fit_path(d, spec, m, ratio, cfg)?;
    ssnet_from_path(d, spec, &path, pen, cfg, &RefitCache::new(), false)
}

/// Cross-validated risk along a λ grid.
#[derive(Clone, Debug, PartialEq)]
pub struct CvCurve {
    pub lambdas: Vec<f64>,
    pub mean: Vec<f64>,
    pub se: Vec<f64>,
    pub index_min: usize,
    pub index_1se: usize,
}

/// Largest λ (smallest index) whose mean risk is within one standard error
/// of the minimum. Returns `(index_min, index_1se)`.
pub fn one_se_rule(mean: &[f64], se: &[f64]) -> (usize, usize) {
    let mut imin = 0;
    for (k, &m) in mean.iter().enumerate() {
        if m < mean[imin] {
            imin = k;
        }
    }
    let threshold = mean[imin] + se[imin];
    let i1se = mean.iter().position(|&m| m <= threshold).unwrap_or(imin);
    (imin, i1se)
}

/// K-fold cross-validation of the path's λ values on validation risk.
///
/// Each training fold is re-standardized and fitted along the grid; its
/// coefficients are mapped back to the scale of `d` to score the held-out
/// rows. A training fold that cannot be fitted (single-class response,
/// constant column) is scored with the full-data path fits instead.
pub fn cross_validate(
    d: &Dataset,
    spec: &LossSpec,
    path: &PathResult,
    folds: usize,
    cfg: &SolverConfig,
    seed: u64,
) -> Result<CvCurve> {
    let n = d.n();
    if folds < 2 || folds > n {
        return Err(Error::InvalidArgument(format!(
            "folds must lie in 2..={n}, got {folds}"
        )));
    }
    if path.fits.is_empty() {
        return Err(Error::InvalidArgument("empty path".into()));
    }
    let lambdas = path.lambdas();
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut assignment = vec![0usize; n];
    for (pos, &i) in perm.iter().enumerate() {
        assignment[i] = pos % folds;
    }

    let mut risks = vec![vec![0.0; folds]; lambdas.len()];
    for k in 0..folds {
        let train: Vec<usize> = (0..n).filter(|&i| assignment[i] != k).collect();
        let valid: Vec<usize> = (0..n).filter(|&i| assignment[i] == k).collect();
        let yv: Vec<f64> = valid.iter().map(|&i| d.y()[i]).collect();
        let fold_fits = fit_fold(d, spec, &train, &lambdas, cfg);
        for (l, risk_row) in risks.iter_mut().enumerate() {
            let (b0, b) = match &fold_fits {
                Some(fits) => (fits[l].0, &fits[l].1),
                None => (path.fits[l].intercept, &path.fits[l].coefficients),
            };
            let eta: Vec<f64> = valid
                .iter()
                .map(|&i| b0 + b.iter().enumerate().map(|(j, bj)| bj * d.x()[(i, j)]).sum::<f64>())
                .collect();
            risk_row[k] = mean_loss(spec, &eta, &yv);
        }
    }
    let kf = folds as f64;
    let mean: Vec<f64> = risks.iter().map(|r| r.iter().sum::<f64>() / kf).collect();
    let se: Vec<f64> = risks
        .iter()
        .zip(&mean)
        .map(|(r, m)| {
            let var = r.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (kf - 1.0);
            (var / kf).sqrt()
        })
        .collect();
    let (index_min, index_1se) = one_se_rule(&mean, &se);
    Ok(CvCurve {
        lambdas,
        mean,
        se,
        index_min,
        index_1se,
    })
}

/// Fits one training fold along `lambdas`; coefficients on the scale of `d`.
fn fit_fold(
    d: &Dataset,
    spec: &LossSpec,
    train: &[usize],
    lambdas: &[f64],
    cfg: &SolverConfig,
) -> Option<Vec<(f64, Vec<f64>)>> {
    let sub = d.subset_rows(train).ok()?.standardize().ok()?;
    let mut out = Vec::with_capacity(lambdas.len());
    let mut previous: Option<PenalizedFit> = None;
    for &lambda in lambdas {
        let fit = fit_lasso(&sub, spec, lambda, cfg, previous.as_ref()).ok()?;
        out.push(sub.destandardize_coefficients(fit.intercept, &fit.coefficients).ok()?);
        previous = Some(fit);
    }
    Some(out)
}

/// SSCV second stage given the full-data path.
#[allow(clippy::too_many_arguments)]
pub fn sscv_from_path(
    d: &Dataset,
    spec: &LossSpec,
    path: &PathResult,
    folds: usize,
    pen: &GicPenalty,
    cfg: &SolverConfig,
    seed: u64,
    cache: &RefitCache,
    prune: bool,
) -> Result<(SelectionOutcome, CvCurve)> {
    let curve = cross_validate(d, spec, path, folds, cfg, seed)?;
    let fit = &path.fits[curve.index_1se];
    let outcome = ss_from_fit(d, spec, fit, pen, cfg, cache, prune, Procedure::Sscv)?;
    Ok((outcome, curve))
}

/// λ chosen by K-fold cross-validation with the one-SE rule, then SS.
#[allow(clippy::too_many_arguments)]
pub fn select_sscv(
    d: &Dataset,
    spec: &LossSpec,
    folds: usize,
    m: usize,
    ratio: f64,
    pen: &GicPenalty,
    cfg: &SolverConfig,
    seed: u64,
) -> Result<SelectionOutcome> {
    let path = fit_path(d, spec, m, ratio, cfg)?;
    sscv_from_path(d, spec, &path, folds, pen, cfg, seed, &RefitCache::new(), false).map(|r| r.0)
}

/// Fan–Tang selection on an already computed path.
pub fn lft_from_path(d: &Dataset, spec: &LossSpec, path: &PathResult) -> Result<SelectionOutcome> {
    if path.loss != *spec {
        return Err(Error::InvalidArgument(format!(
            "path was fitted with {}, not {spec}",
            path.loss
        )));
    }
    let pen = GicPenalty::fan_tang();
    let a_n = penalty_value(&pen, d.n(), d.p())?;
    if path.fits.is_empty() {
        return Err(Error::InvalidArgument("empty path".into()));
    }
    let nf = d.n() as f64;
    let table: Vec<GicEntry> = path
        .fits
        .iter()
        .map(|fit| {
            let model = fit.support();
            let value = nf * fit.risk() + a_n * pen.model_size(&model) as f64;
            GicEntry {
                model,
                value,
                lambda: Some(fit.lambda),
                status: GicStatus::Evaluated,
            }
        })
        .collect();
    let mut best = 0;
    for (k, e) in table.iter().enumerate() {
        let b = &table[best];
        let better = e.value < b.value
            || (e.value == b.value
                && (e.model.len(), &e.model) < (b.model.len(), &b.model));
        if better {
            best = k;
        }
    }
    Ok(SelectionOutcome {
        procedure: Procedure::Lft,
        penalty: pen,
        selected: table[best].model.clone(),
        refit: path.fits[best].clone(),
        lambda: Some(path.fits[best].lambda),
        family: path_supports(path),
        gic_table: table,
    })
}

/// Lasso with λ chosen by the Fan–Tang criterion on the Lasso fits; the
/// selected set is the support at that λ and no refit is done.
pub fn select_lft(
    d: &Dataset,
    spec: &LossSpec,
    m: usize,
    ratio: f64,
    cfg: &SolverConfig,
) -> Result<SelectionOutcome> {
    let path = fit_path(d, spec, m, ratio, cfg)?;
    lft_from_path(d, spec, &path)
}
