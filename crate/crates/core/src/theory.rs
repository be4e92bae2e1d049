//! Monte Carlo checks of the concentration and separation results behind
//! the selection procedures.
//!
//! Population risks come from the M2 quadrature in [`crate::sim`], so the
//! sup-deviation checks are available for model M2 only. The intercept is
//! held at its population value and only the slopes are perturbed.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp1, StandardNormal};
use rayon::prelude::*;

use crate::data::{Dataset, PredictorSet};
use crate::error::{Error, Result};
use crate::loss::{mean_loss, LossSpec};
use crate::metrics::binomial_se;
use crate::sim::{generate, population_fit_m2, GroundTruth, M2Population, SimModel, SimModelSpec};
use crate::solver::{fit_lasso, SolverConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SupVariant {
    /// Supremum over an ℓ1 ball around β*.
    S,
    /// ℓ2 ball, supports containing s* of size at most k_n.
    S1,
    /// ℓ2 ball, supports inside s*.
    S2,
}

impl fmt::Display for SupVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SupVariant::S => "s",
            SupVariant::S1 => "s1",
            SupVariant::S2 => "s2",
        })
    }
}

impl FromStr for SupVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "s" => Ok(SupVariant::S),
            "s1" => Ok(SupVariant::S1),
            "s2" => Ok(SupVariant::S2),
            other => Err(Error::InvalidArgument(format!("unknown variant `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TheoryCheckConfig {
    /// Datasets drawn.
    pub mc_samples: usize,
    /// Random points probed per supremum, on top of the extreme points.
    pub sup_probes: usize,
    /// Ball radius.
    pub r: f64,
    /// Tail threshold.
    pub t: f64,
    /// Sparsity cap for the S1 variant.
    pub k_n: usize,
    pub epsilon_cone: f64,
    /// Subgaussian scale of the predictors.
    pub s_n: f64,
}

impl Default for TheoryCheckConfig {
    fn default() -> Self {
        Self {
            mc_samples: 500,
            sup_probes: 200,
            r: 0.5,
            t: 0.1,
            k_n: 3,
            epsilon_cone: 0.1,
            s_n: 1.0,
        }
    }
}

impl TheoryCheckConfig {
    pub fn validate(&self) -> Result<()> {
        let finite_pos = |v: f64| v > 0.0 && v.is_finite();
        if self.mc_samples == 0 || self.k_n == 0 {
            return Err(Error::InvalidArgument("mc_samples and k_n must be positive".into()));
        }
        // r = 0 is allowed for the degenerate-ball case
        if !(self.r >= 0.0 && self.r.is_finite()) {
            return Err(Error::InvalidArgument(format!("bad radius {}", self.r)));
        }
        if !(finite_pos(self.t) || self.t == f64::INFINITY) {
            return Err(Error::InvalidArgument(format!("bad threshold {}", self.t)));
        }
        if !finite_pos(self.epsilon_cone) || !finite_pos(self.s_n) {
            return Err(Error::InvalidArgument("epsilon_cone and s_n must be positive".into()));
        }
        Ok(())
    }
}

/// Inputs of the closed-form tail bounds.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundParams {
    pub r: f64,
    pub t: f64,
    pub s_n: f64,
    pub n: usize,
    pub p: usize,
    pub k_n: usize,
    pub s_star_size: usize,
}

/// Upper bound on `P(S(r) > t)` (or `P(S_k(r) ≥ t)`) for an `L`-Lipschitz
/// loss and subgaussian predictors, capped at 1.
pub fn lemma2_bound(variant: SupVariant, loss: &LossSpec, b: &BoundParams) -> Result<f64> {
    let l = loss.lipschitz_constant().ok_or_else(|| {
        Error::BoundInapplicable(format!("{loss} loss is not Lipschitz"))
    })?;
    if !(b.r > 0.0 && b.t > 0.0 && b.s_n > 0.0) || b.n == 0 || b.p == 0 {
        return Err(Error::InvalidArgument("bound parameters must be positive".into()));
    }
    let ln_p = (b.p.max(2) as f64).ln();
    let scale = l * b.r * b.s_n / (b.t * (b.n as f64).sqrt());
    let v = match variant {
        SupVariant::S => 8.0 * scale * ln_p.sqrt(),
        SupVariant::S1 => 8.0 * scale * (b.k_n as f64 * ln_p).sqrt(),
        SupVariant::S2 => 4.0 * scale * (b.s_star_size as f64).sqrt(),
    };
    Ok(v.min(1.0))
}

/// Fixed probe points and their population `W` values.
#[derive(Clone, Debug)]
pub struct SupProbes {
    pub intercept: f64,
    pub beta_star: Vec<f64>,
    pub points: Vec<Vec<f64>>,
    pub population_w: Vec<f64>,
}

fn m2_only(sim: &SimModelSpec) -> Result<()> {
    if sim.model == SimModel::M2 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(
            "sup-deviation checks need the quadrature population risk of model m2".into(),
        ))
    }
}

fn uniform_l2_ball(rng: &mut ChaCha8Rng, coords: &[usize], p: usize, r: f64) -> Vec<f64> {
    let mut g: Vec<f64> = coords.iter().map(|_| rng.sample(StandardNormal)).collect();
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
    let radius = r * rng.gen::<f64>().powf(1.0 / coords.len() as f64);
    for v in &mut g {
        *v *= radius / norm;
    }
    let mut delta = vec![0.0; p];
    for (&j, v) in coords.iter().zip(g) {
        delta[j] = v;
    }
    delta
}

fn uniform_l1_ball(rng: &mut ChaCha8Rng, p: usize, r: f64) -> Vec<f64> {
    let e: Vec<f64> = (0..=p).map(|_| rng.sample(Exp1)).collect();
    let total: f64 = e.iter().sum();
    (0..p)
        .map(|j| {
            let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            sign * r * e[j] / total
        })
        .collect()
}

/// Probe set for one (population, variant, radius). Extreme points come
/// first, then `cfg.sup_probes` random feasible points drawn from `seed`;
/// a larger `sup_probes` extends the same sequence.
pub fn build_probes(
    pop: &M2Population,
    intercept: f64,
    beta_star: &[f64],
    truth: &PredictorSet,
    cfg: &TheoryCheckConfig,
    variant: SupVariant,
    seed: u64,
) -> Result<SupProbes> {
    cfg.validate()?;
    let p = beta_star.len();
    let star: Vec<usize> = truth.columns().collect();
    let others: Vec<usize> = (0..p).filter(|j| !truth.contains(j + 1)).collect();
    if variant == SupVariant::S1 && cfg.k_n < star.len() {
        return Err(Error::InvalidArgument(format!(
            "k_n = {} is smaller than |s*| = {}",
            cfg.k_n,
            star.len()
        )));
    }
    let mut deltas: Vec<Vec<f64>> = vec![vec![0.0; p]];
    if cfg.r > 0.0 {
        let axes: Vec<usize> = match variant {
            SupVariant::S => (0..p).collect(),
            SupVariant::S1 if cfg.k_n > star.len() => (0..p).collect(),
            SupVariant::S1 | SupVariant::S2 => star.clone(),
        };
        for &j in &axes {
            for sign in [1.0, -1.0] {
                let mut d = vec![0.0; p];
                d[j] = sign * cfg.r;
                deltas.push(d);
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..cfg.sup_probes {
            let d = match variant {
                SupVariant::S => uniform_l1_ball(&mut rng, p, cfg.r),
                SupVariant::S1 => {
                    let room = (cfg.k_n - star.len()).min(others.len());
                    let extra = rng.gen_range(0..=room);
                    let mut w = star.clone();
                    w.extend(others.choose_multiple(&mut rng, extra).copied());
                    uniform_l2_ball(&mut rng, &w, p, cfg.r)
                }
                SupVariant::S2 => uniform_l2_ball(&mut rng, &star, p, cfg.r),
            };
            deltas.push(d);
        }
    }
    let base = pop.risk(intercept, beta_star);
    let points: Vec<Vec<f64>> = deltas
        .into_iter()
        .map(|d| beta_star.iter().zip(d).map(|(b, dj)| b + dj).collect())
        .collect();
    let population_w = points.iter().map(|b| pop.risk(intercept, b) - base).collect();
    Ok(SupProbes {
        intercept,
        beta_star: beta_star.to_vec(),
        points,
        population_w,
    })
}

/// `max_k |W(b_k) − W_n(b_k)|` over the probes for one dataset on the
/// original predictor scale.
pub fn sup_deviation(d: &Dataset, spec: &LossSpec, probes: &SupProbes) -> Result<f64> {
    let emp = |b: &[f64]| -> Result<f64> {
        let eta = d.linear_predictor(probes.intercept, b)?;
        Ok(mean_loss(spec, &eta, d.y()))
    };
    let base = emp(&probes.beta_star)?;
    let mut best: f64 = 0.0;
    for (b, w) in probes.points.iter().zip(&probes.population_w) {
        let wn = emp(b)? - base;
        best = best.max((w - wn).abs());
    }
    Ok(best)
}

/// Population point `(β*_0, β*)` of model M2 over all `p` predictors.
pub fn m2_beta_star(rho: f64, loss: &LossSpec, p: usize) -> Result<(f64, Vec<f64>)> {
    let fit = population_fit_m2(rho, loss)?;
    let mut beta = vec![0.0; p];
    beta[0] = fit.coefficients[0];
    beta[1] = fit.coefficients[1];
    Ok((fit.intercept, beta))
}

fn probes_for(sim: &SimModelSpec, spec: &LossSpec, cfg: &TheoryCheckConfig, variant: SupVariant) -> Result<SupProbes> {
    m2_only(sim)?;
    sim.validate()?;
    let pop = M2Population::new(*spec, sim.rho)?;
    let (b0, beta) = m2_beta_star(sim.rho, spec, sim.p)?;
    let truth = GroundTruth::of(SimModel::M2).true_support;
    // probes use their own stream so they stay fixed across datasets
    build_probes(&pop, b0, &beta, &truth, cfg, variant, sim.seed ^ 0x5eed_9b0b_e5a1_0000)
}

/// Probe-maximum lower estimate of the supremum for the dataset drawn
/// with `sim.seed`.
pub fn estimate_sup_deviation(
    sim: &SimModelSpec,
    spec: &LossSpec,
    cfg: &TheoryCheckConfig,
    variant: SupVariant,
) -> Result<f64> {
    let probes = probes_for(sim, spec, cfg, variant)?;
    let (d, _) = generate(sim)?;
    sup_deviation(&d, spec, &probes)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TailCheck {
    pub empirical: f64,
    pub bound: f64,
    pub se: f64,
    pub pass: bool,
}

/// Fraction of `mc_samples` datasets (seeds `sim.seed + k`) whose
/// supremum estimate reaches `t`, against the closed-form bound.
pub fn check_tail_bound(
    spec: &LossSpec,
    sim: &SimModelSpec,
    cfg: &TheoryCheckConfig,
    variant: SupVariant,
) -> Result<TailCheck> {
    m2_only(sim)?;
    let truth = GroundTruth::of(SimModel::M2).true_support;
    let bound = lemma2_bound(
        variant,
        spec,
        &BoundParams {
            r: cfg.r,
            t: cfg.t,
            s_n: cfg.s_n,
            n: sim.n,
            p: sim.p,
            k_n: cfg.k_n,
            s_star_size: truth.len(),
        },
    )?;
    if bound >= 1.0 {
        return Err(Error::BoundInapplicable(format!(
            "bound for variant {variant} is vacuous at this configuration"
        )));
    }
    let probes = probes_for(sim, spec, cfg, variant)?;
    let exceed: Vec<bool> = (0..cfg.mc_samples as u64)
        .into_par_iter()
        .map(|k| -> Result<bool> {
            let (d, _) = generate(&SimModelSpec {
                seed: sim.seed.wrapping_add(k),
                ..*sim
            })?;
            let s = sup_deviation(&d, spec, &probes)?;
            Ok(match variant {
                SupVariant::S => s > cfg.t,
                SupVariant::S1 | SupVariant::S2 => s >= cfg.t,
            })
        })
        .collect::<Result<_>>()?;
    let empirical = exceed.iter().filter(|&&e| e).count() as f64 / cfg.mc_samples as f64;
    let se = binomial_se(empirical, cfg.mc_samples);
    Ok(TailCheck {
        empirical,
        bound,
        se,
        pass: empirical <= bound + 2.0 * se,
    })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SeparationCheck {
    pub fraction: f64,
    pub se: f64,
    pub replications: usize,
}

/// Whether every true-support coefficient is at least as large in magnitude
/// as every other coefficient (0-based `coefs`).
pub fn separates_support(coefs: &[f64], truth: &PredictorSet) -> bool {
    let mut min_in = f64::INFINITY;
    let mut max_out: f64 = 0.0;
    for (j, b) in coefs.iter().enumerate() {
        if truth.contains(j + 1) {
            min_in = min_in.min(b.abs());
        } else {
            max_out = max_out.max(b.abs());
        }
    }
    max_out <= min_in
}

/// Fraction of replications (seeds `sim.seed + k`) in which the Lasso fit
/// at `lambda` on standardized data separates the true support.
pub fn check_separation(
    spec: &LossSpec,
    sim: &SimModelSpec,
    lambda: f64,
    replications: usize,
    cfg: &SolverConfig,
) -> Result<SeparationCheck> {
    if replications == 0 {
        return Err(Error::InvalidArgument("replications must be positive".into()));
    }
    let truth = GroundTruth::of(sim.model).true_support;
    let hits: Vec<bool> = (0..replications as u64)
        .into_par_iter()
        .map(|k| -> Result<bool> {
            let (d, _) = generate(&SimModelSpec {
                seed: sim.seed.wrapping_add(k),
                ..*sim
            })?;
            let fit = fit_lasso(&d.standardize()?, spec, lambda, cfg, None)?;
            Ok(separates_support(&fit.coefficients, &truth))
        })
        .collect::<Result<_>>()?;
    let fraction = hits.iter().filter(|&&h| h).count() as f64 / replications as f64;
    Ok(SeparationCheck {
        fraction,
        se: binomial_se(fraction, replications),
        replications,
    })
}

fn rayleigh(h: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    (v.transpose() * h * v)[(0, 0)] / v.norm_squared()
}

fn in_cone(v: &DVector<f64>, support: &PredictorSet, epsilon: f64) -> bool {
    let (mut on, mut off) = (0.0, 0.0);
    for (j, x) in v.iter().enumerate() {
        if support.contains(j + 1) {
            on += x.abs();
        } else {
            off += x.abs();
        }
    }
    on > 0.0 && off <= (3.0 + epsilon) * on * (1.0 + 1e-12)
}

/// Sampling estimate (an upper bound) of the smallest Rayleigh quotient of
/// `h` over the cone `‖Δ_{s*ᶜ}‖₁ ≤ (3 + ε)‖Δ_{s*}‖₁`, refined by projected
/// descent from the best sample.
pub fn estimate_kappa(
    h: &DMatrix<f64>,
    support: &PredictorSet,
    epsilon: f64,
    probes: usize,
    seed: u64,
) -> Result<f64> {
    let p = h.nrows();
    if h.ncols() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            got: h.ncols(),
        });
    }
    if support.is_empty() || support.indices().last().is_some_and(|&j| j > p) {
        return Err(Error::InvalidArgument("support must be a nonempty subset of 1..=p".into()));
    }
    if !(epsilon > 0.0) || probes == 0 {
        return Err(Error::InvalidArgument("epsilon and probes must be positive".into()));
    }
    let asym = (h - h.transpose()).abs().max();
    if asym > 1e-10 {
        return Err(Error::InvalidArgument("matrix is not symmetric".into()));
    }
    if SymmetricEigen::new(h.clone()).eigenvalues.min() < -1e-10 {
        return Err(Error::InvalidArgument("matrix is not nonnegative definite".into()));
    }
    let on: Vec<usize> = support.columns().collect();
    let off: Vec<usize> = (0..p).filter(|j| !support.contains(j + 1)).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<(f64, DVector<f64>)> = None;
    for _ in 0..probes {
        let mut v = DVector::zeros(p);
        let g: Vec<f64> = on.iter().map(|_| rng.sample(StandardNormal)).collect();
        let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        for (&j, x) in on.iter().zip(&g) {
            v[j] = x / norm;
        }
        if !off.is_empty() {
            let l1_on: f64 = on.iter().map(|&j| v[j].abs()).sum();
            let budget = (3.0 + epsilon) * rng.gen::<f64>() * l1_on;
            let e: Vec<f64> = off.iter().map(|_| rng.sample(Exp1)).collect();
            let total: f64 = e.iter().sum();
            for (&j, ej) in off.iter().zip(e) {
                let sign = if rng.gen::<bool>() { 1.0 } else { -1.0 };
                v[j] = sign * budget * ej / total;
            }
        }
        let q = rayleigh(h, &v);
        if best.as_ref().is_none_or(|(bq, _)| q < *bq) {
            best = Some((q, v));
        }
    }
    let (mut q, mut v) = best.expect("at least one probe");
    let mut step = 0.5;
    for _ in 0..2000 {
        if step < 1e-14 {
            break;
        }
        v /= v.norm();
        let grad = (h * &v - &v * q) * 2.0;
        if grad.norm() < 1e-13 {
            break;
        }
        let trial = &v - &grad * step;
        let tq = if trial.norm() > 0.0 { rayleigh(h, &trial) } else { f64::INFINITY };
        if tq < q && in_cone(&trial, support, epsilon) {
            v = trial;
            q = tq;
            step *= 1.5;
        } else {
            step *= 0.5;
        }
    }
    Ok(q)
}

/// Distribution of the bounded factor in the subgaussian-product check.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BoundedFactor {
    /// Uniform on `[−M, M]`.
    Uniform,
    /// Identically `M`, the equality case.
    Constant,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MgfPoint {
    pub t: f64,
    pub empirical: f64,
    pub bound: f64,
    pub se: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubgaussianCheck {
    pub points: Vec<MgfPoint>,
    pub pass: bool,
}

/// Compares the empirical MGF of `S·T`, with `S ~ N(0, σ²)` and `|T| ≤ M`
/// independent, to `exp(t²M²σ²/2)` on a grid of `t`.
pub fn check_subgaussian_product_with(
    factor: BoundedFactor,
    sigma: f64,
    m_bound: f64,
    t_grid: &[f64],
    mc_samples: usize,
    seed: u64,
) -> Result<SubgaussianCheck> {
    if !(sigma > 0.0 && m_bound > 0.0) || mc_samples < 2 {
        return Err(Error::InvalidArgument("sigma, M must be positive and mc_samples >= 2".into()));
    }
    if let Some(t) = t_grid.iter().find(|t| !t.is_finite() || t.abs() * m_bound * sigma > 3.0) {
        return Err(Error::InvalidArgument(format!(
            "grid point t = {t} is outside the stable range |t|·M·σ <= 3"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let products: Vec<f64> = (0..mc_samples)
        .map(|_| {
            let s: f64 = sigma * rng.sample::<f64, _>(StandardNormal);
            let t = match factor {
                BoundedFactor::Uniform => rng.gen_range(-m_bound..=m_bound),
                BoundedFactor::Constant => m_bound,
            };
            s * t
        })
        .collect();
    let m = mc_samples as f64;
    let points: Vec<MgfPoint> = t_grid
        .iter()
        .map(|&t| {
            let vals: Vec<f64> = products.iter().map(|x| (t * x).exp()).collect();
            let mean = vals.iter().sum::<f64>() / m;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0);
            let se = (var / m).sqrt();
            let bound = (0.5 * t * t * m_bound * m_bound * sigma * sigma).exp();
            let pass = mean <= bound * (1.0 + 3.0 * se / mean);
            MgfPoint {
                t,
                empirical: mean,
                bound,
                se,
                pass,
            }
        })
        .collect();
    let pass = points.iter().all(|p| p.pass);
    Ok(SubgaussianCheck { points, pass })
}

pub fn check_subgaussian_product(
    sigma: f64,
    m_bound: f64,
    t_grid: &[f64],
    mc_samples: usize,
    seed: u64,
) -> Result<SubgaussianCheck> {
    check_subgaussian_product_with(BoundedFactor::Uniform, sigma, m_bound, t_grid, mc_samples, seed)
}
