//! Simulation models M1 and M2 and their population-level ground truth.
//!
//! Both models draw Gaussian AR(1) predictors and a response with
//! `P(Y = 1 | x) = q_L((x1 + x2)³)`. M1 adds the cubic monomials of
//! `x1, x2` as columns 3–9, which makes the logistic model well specified
//! with support `{6, 7, 8, 9}`; M2 keeps the raw columns only, so the
//! logistic fit is misspecified and its projection is `η·(1, 1, 0, …)`.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, PredictorSet};
use crate::error::{Error, Result};
use crate::loss::{sigmoid, LossSpec};
use crate::quadrature::GaussHermite;

/// Quadrature order used for population quantities.
pub const POPULATION_QUADRATURE_ORDER: usize = 60;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimModel {
    M1,
    M2,
}

impl SimModel {
    pub fn name(&self) -> &'static str {
        match self {
            SimModel::M1 => "m1",
            SimModel::M2 => "m2",
        }
    }

    pub fn min_p(&self) -> usize {
        match self {
            SimModel::M1 => 9,
            SimModel::M2 => 2,
        }
    }
}

impl fmt::Display for SimModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SimModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "m1" => Ok(SimModel::M1),
            "m2" => Ok(SimModel::M2),
            other => Err(Error::InvalidArgument(format!("unknown model `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimModelSpec {
    pub model: SimModel,
    pub n: usize,
    pub p: usize,
    pub rho: f64,
    pub seed: u64,
}

impl SimModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidArgument("n must be positive".into()));
        }
        if self.p < self.model.min_p() {
            return Err(Error::InvalidArgument(format!(
                "model {} needs p >= {}, got {}",
                self.model,
                self.model.min_p(),
                self.p
            )));
        }
        check_rho(self.rho)
    }
}

fn check_rho(rho: f64) -> Result<()> {
    if rho.abs() < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("rho must lie in (-1, 1), got {rho}")))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruth {
    pub true_support: PredictorSet,
    /// Coefficients on `true_support`, in index order. For M2 only the
    /// direction is known.
    pub true_direction: Vec<f64>,
    pub wellspecified: bool,
}

impl GroundTruth {
    pub fn of(model: SimModel) -> Self {
        match model {
            SimModel::M1 => Self {
                true_support: PredictorSet::new(vec![6, 7, 8, 9]).expect("valid set"),
                true_direction: vec![3.0, 3.0, 1.0, 1.0],
                wellspecified: true,
            },
            SimModel::M2 => Self {
                true_support: PredictorSet::new(vec![1, 2]).expect("valid set"),
                true_direction: vec![1.0, 1.0],
                wellspecified: false,
            },
        }
    }

    /// `true_direction` zero-padded to length `p`.
    pub fn padded_direction(&self, p: usize) -> Vec<f64> {
        let mut v = vec![0.0; p];
        for (j, &b) in self.true_support.columns().zip(&self.true_direction) {
            v[j] = b;
        }
        v
    }
}

fn ar1_rows(rng: &mut ChaCha8Rng, n: usize, p: usize, rho: f64) -> DMatrix<f64> {
    let innovation = (1.0 - rho * rho).sqrt();
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        let mut prev: f64 = rng.sample(StandardNormal);
        x[(i, 0)] = prev;
        for j in 1..p {
            let e: f64 = rng.sample(StandardNormal);
            prev = rho * prev + innovation * e;
            x[(i, j)] = prev;
        }
    }
    x
}

/// n i.i.d. rows of `N_p(0, Σ)` with `Σ_jk = ρ^|j−k|`, drawn by the AR(1)
/// recursion.
pub fn sample_ar1_gaussian(n: usize, p: usize, rho: f64, seed: u64) -> Result<DMatrix<f64>> {
    check_rho(rho)?;
    if n == 0 || p == 0 {
        return Err(Error::InvalidArgument("n and p must be positive".into()));
    }
    Ok(ar1_rows(&mut ChaCha8Rng::seed_from_u64(seed), n, p, rho))
}

fn bernoulli(rng: &mut ChaCha8Rng, prob: f64) -> f64 {
    f64::from(u8::from(rng.gen::<f64>() < prob))
}

/// Model M1, unstandardized.
pub fn generate_m1(spec: &SimModelSpec) -> Result<(Dataset, GroundTruth)> {
    if spec.model != SimModel::M1 {
        return Err(Error::InvalidArgument("generate_m1 called with another model".into()));
    }
    spec.validate()?;
    let (n, p) = (spec.n, spec.p);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let z = ar1_rows(&mut rng, n, p, spec.rho);
    let mut x = DMatrix::zeros(n, p);
    for i in 0..n {
        let (a, b) = (z[(i, 0)], z[(i, 1)]);
        let row = [a, b, a * a, b * b, a * b, a * a * b, a * b * b, a * a * a, b * b * b];
        for (j, v) in row.into_iter().enumerate() {
            x[(i, j)] = v;
        }
        for j in 10..=p {
            x[(i, j - 1)] = z[(i, j - 8)];
        }
    }
    let y = (0..n)
        .map(|i| {
            let eta = 3.0 * x[(i, 5)] + 3.0 * x[(i, 6)] + x[(i, 7)] + x[(i, 8)];
            bernoulli(&mut rng, sigmoid(eta))
        })
        .collect();
    Ok((Dataset::new(x, y)?, GroundTruth::of(SimModel::M1)))
}

/// Model M2, unstandardized.
pub fn generate_m2(spec: &SimModelSpec) -> Result<(Dataset, GroundTruth)> {
    if spec.model != SimModel::M2 {
        return Err(Error::InvalidArgument("generate_m2 called with another model".into()));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let x = ar1_rows(&mut rng, spec.n, spec.p, spec.rho);
    let y = (0..spec.n)
        .map(|i| bernoulli(&mut rng, sigmoid((x[(i, 0)] + x[(i, 1)]).powi(3))))
        .collect();
    Ok((Dataset::new(x, y)?, GroundTruth::of(SimModel::M2)))
}

pub fn generate(spec: &SimModelSpec) -> Result<(Dataset, GroundTruth)> {
    match spec.model {
        SimModel::M1 => generate_m1(spec),
        SimModel::M2 => generate_m2(spec),
    }
}

/// Population risk of M2 predictors under a given loss.
///
/// For any `b`, `bᵀX` and `S = x1 + x2` are jointly normal and `Y` depends
/// on `X` only through `S`, so `E ρ(b0 + bᵀX, Y)` is a two-dimensional
/// Gaussian integral whatever the dimension of `b`.
#[derive(Clone, Debug)]
pub struct M2Population {
    pub loss: LossSpec,
    pub rho: f64,
    gh: GaussHermite,
    /// `(s, P(Y = 1 | S = s))` at the quadrature nodes of `S`.
    s_nodes: Vec<(f64, f64)>,
}

impl M2Population {
    pub fn new(loss: LossSpec, rho: f64) -> Result<Self> {
        Self::with_order(loss, rho, POPULATION_QUADRATURE_ORDER)
    }

    pub fn with_order(loss: LossSpec, rho: f64, order: usize) -> Result<Self> {
        check_rho(rho)?;
        let gh = GaussHermite::new(order)?;
        let sd_s = (2.0 * (1.0 + rho)).sqrt();
        let s_nodes = gh
            .nodes
            .iter()
            .map(|&z| {
                let s = sd_s * z;
                (s, sigmoid(s.powi(3)))
            })
            .collect();
        Ok(Self {
            loss,
            rho,
            gh,
            s_nodes,
        })
    }

    fn var_s(&self) -> f64 {
        2.0 * (1.0 + self.rho)
    }

    /// `E ρ(b0 + bᵀX, Y)` for a slope vector of any length.
    pub fn risk(&self, b0: f64, b: &[f64]) -> f64 {
        let rho = self.rho;
        let corr = |j: usize, k: usize| rho.powi(j.abs_diff(k) as i32);
        let mut var_u = 0.0;
        let mut cov_us = 0.0;
        for (j, &bj) in b.iter().enumerate() {
            if bj == 0.0 {
                continue;
            }
            cov_us += bj * (corr(j, 0) + corr(j, 1));
            for (k, &bk) in b.iter().enumerate() {
                if bk != 0.0 {
                    var_u += bj * bk * corr(j, k);
                }
            }
        }
        let slope = cov_us / self.var_s();
        let sd_r = (var_u - slope * cov_us).max(0.0).sqrt();
        self.risk_from_projection(b0, slope, sd_r)
    }

    /// Risk when `b0 + bᵀX = b0 + slope·S + sd_r·Z` with `Z ⟂ S`.
    fn risk_from_projection(&self, b0: f64, slope: f64, sd_r: f64) -> f64 {
        let spec = self.loss;
        let mut total = 0.0;
        for (&(s, q), &w1) in self.s_nodes.iter().zip(&self.gh.weights) {
            let centre = b0 + slope * s;
            let inner = if sd_r == 0.0 {
                q * spec.value(centre, 1.0) + (1.0 - q) * spec.value(centre, 0.0)
            } else {
                self.gh
                    .nodes
                    .iter()
                    .zip(&self.gh.weights)
                    .map(|(&z, &w2)| {
                        let eta = centre + sd_r * z;
                        w2 * (q * spec.value(eta, 1.0) + (1.0 - q) * spec.value(eta, 0.0))
                    })
                    .sum()
            };
            total += w1 * inner;
        }
        total
    }

    /// Hessian in the slopes of the population risk over `p` predictors at
    /// `b0 + η·(x1 + x2)`.
    ///
    /// Given `S`, `X` is normal with mean `a·S/v` and covariance `Σ − a aᵀ/v`,
    /// where `a = Σ(e1 + e2)` and `v = Var S`, so the Hessian reduces to two
    /// one-dimensional integrals.
    pub fn slope_hessian(&self, b0: f64, eta: f64, p: usize) -> DMatrix<f64> {
        let spec = self.loss;
        let (mut e0, mut e2) = (0.0, 0.0);
        for (&(s, q), &w) in self.s_nodes.iter().zip(&self.gh.weights) {
            let lin = b0 + eta * s;
            let curv = q * spec.second_derivative(lin, 1.0) + (1.0 - q) * spec.second_derivative(lin, 0.0);
            e0 += w * curv;
            e2 += w * curv * s * s;
        }
        let v = self.var_s();
        let corr = |j: usize, k: usize| self.rho.powi(j.abs_diff(k) as i32);
        let a: Vec<f64> = (0..p).map(|j| corr(j, 0) + corr(j, 1)).collect();
        DMatrix::from_fn(p, p, |j, k| {
            let aa = a[j] * a[k];
            e0 * (corr(j, k) - aa / v) + e2 * aa / (v * v)
        })
    }

    /// Risk, gradient and Hessian in `(b0, b1, b2)` for the model on `{1, 2}`.
    pub fn risk_derivatives_2(&self, b: [f64; 3]) -> (f64, [f64; 3], [[f64; 3]; 3]) {
        let spec = self.loss;
        let sd_d = (2.0 * (1.0 - self.rho)).sqrt();
        let mut r = 0.0;
        let mut g = [0.0; 3];
        let mut h = [[0.0; 3]; 3];
        for (&(s, q), &w1) in self.s_nodes.iter().zip(&self.gh.weights) {
            for (&z, &w2) in self.gh.nodes.iter().zip(&self.gh.weights) {
                let d = sd_d * z;
                let x = [1.0, 0.5 * (s + d), 0.5 * (s - d)];
                let eta = b[0] + b[1] * x[1] + b[2] * x[2];
                let w = w1 * w2;
                r += w * (q * spec.value(eta, 1.0) + (1.0 - q) * spec.value(eta, 0.0));
                let d1 = q * spec.derivative(eta, 1.0) + (1.0 - q) * spec.derivative(eta, 0.0);
                let d2 = q * spec.second_derivative(eta, 1.0)
                    + (1.0 - q) * spec.second_derivative(eta, 0.0);
                for j in 0..3 {
                    g[j] += w * d1 * x[j];
                    for k in 0..3 {
                        h[j][k] += w * d2 * x[j] * x[k];
                    }
                }
            }
        }
        (r, g, h)
    }
}

/// Population minimizer over the intercept and predictors `{1, 2}` in M2.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PopulationFit {
    pub intercept: f64,
    pub coefficients: [f64; 2],
    pub risk: f64,
    pub gradient_norm: f64,
}

fn solve3(h: [[f64; 3]; 3], g: [f64; 3]) -> Option<[f64; 3]> {
    let m = nalgebra::Matrix3::from_fn(|i, j| h[i][j]);
    let v = nalgebra::Vector3::from_column_slice(&g);
    m.cholesky().map(|c| {
        let s = c.solve(&v);
        [s[0], s[1], s[2]]
    })
}

pub fn population_fit_m2(rho: f64, loss: &LossSpec) -> Result<PopulationFit> {
    const GRADIENT_TOL: f64 = 1e-8;
    let pop = M2Population::new(*loss, rho)?;
    let mut b = [0.5, 0.0, 0.0];
    if matches!(loss, LossSpec::Logistic) {
        b[0] = 0.0;
    }
    let norm = |g: &[f64; 3]| g.iter().map(|v| v * v).sum::<f64>().sqrt();
    let (mut r, mut g, mut h) = pop.risk_derivatives_2(b);
    for _ in 0..200 {
        if norm(&g) <= 1e-12 {
            break;
        }
        let mut ridge = 0.0;
        let dir = loop {
            let mut hr = h;
            for (k, row) in hr.iter_mut().enumerate() {
                row[k] += ridge;
            }
            if let Some(d) = solve3(hr, g) {
                break d;
            }
            ridge = if ridge == 0.0 { 1e-10 } else { ridge * 10.0 };
            if ridge > 1e6 {
                return Err(Error::Numerical("population Hessian is singular".into()));
            }
        };
        let slope: f64 = -(0..3).map(|k| g[k] * dir[k]).sum::<f64>();
        let mut step = 1.0;
        let mut moved = false;
        for _ in 0..60 {
            let trial = [b[0] - step * dir[0], b[1] - step * dir[1], b[2] - step * dir[2]];
            let (rt, gt, ht) = pop.risk_derivatives_2(trial);
            if rt <= r + 1e-4 * step * slope || norm(&gt) < norm(&g) * 0.5 {
                b = trial;
                (r, g, h) = (rt, gt, ht);
                moved = true;
                break;
            }
            step *= 0.5;
        }
        if !moved {
            break;
        }
    }
    let gradient_norm = norm(&g);
    if !(gradient_norm <= GRADIENT_TOL) {
        return Err(Error::Numerical(format!(
            "population minimization stalled with gradient norm {gradient_norm:e}"
        )));
    }
    Ok(PopulationFit {
        intercept: b[0],
        coefficients: [b[1], b[2]],
        risk: r,
        gradient_norm,
    })
}

/// `(b1*, b2*)` of the population fit on `{1, 2}` in M2; both equal `η`.
pub fn population_target_m2(rho: f64, loss: &LossSpec) -> Result<[f64; 2]> {
    population_fit_m2(rho, loss).map(|f| f.coefficients)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::solver::{refit, SolverConfig};

    fn spec(model: SimModel, n: usize, p: usize, rho: f64, seed: u64) -> SimModelSpec {
        SimModelSpec {
            model,
            n,
            p,
            rho,
            seed,
        }
    }

    fn corr(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn ar1_basic_properties() {
        let x = sample_ar1_gaussian(4000, 3, 0.0, 1).unwrap();
        let c: f64 = x.column(0).iter().zip(x.column(1).iter()).map(|(a, b)| a * b).sum::<f64>() / 4000.0;
        assert!(c.abs() < 3.0 / 4000f64.sqrt());
        assert_eq!(x, sample_ar1_gaussian(4000, 3, 0.0, 1).unwrap());
        assert_ne!(x, sample_ar1_gaussian(4000, 3, 0.0, 2).unwrap());
        assert!(sample_ar1_gaussian(10, 3, 1.0, 1).is_err());
        assert!(sample_ar1_gaussian(10, 3, -1.2, 1).is_err());
    }

    #[test]
    fn ar1_lag_two_correlation() {
        let x = sample_ar1_gaussian(100_000, 3, 0.6, 7).unwrap();
        let r = corr(x.column(0).as_slice(), x.column(2).as_slice());
        assert!((r - 0.36).abs() < 0.01, "{r}");
    }

    #[test]
    fn m1_columns() {
        let (d, truth) = generate_m1(&spec(SimModel::M1, 50, 20, 0.3, 3)).unwrap();
        assert_eq!((d.n(), d.p()), (50, 20));
        let z = sample_ar1_gaussian(50, 20, 0.3, 3).unwrap();
        for i in 0..50 {
            let (a, b) = (d.x()[(i, 0)], d.x()[(i, 1)]);
            let lhs = 3.0 * d.x()[(i, 5)] + 3.0 * d.x()[(i, 6)] + d.x()[(i, 7)] + d.x()[(i, 8)];
            assert!((lhs - (a + b).powi(3)).abs() <= 1e-12 * (1.0 + lhs.abs()));
            assert_eq!(d.x()[(i, 4)], a * b);
            assert_eq!(d.x()[(i, 9)], z[(i, 2)]);
            assert_eq!(d.x()[(i, 19)], z[(i, 12)]);
        }
        assert_eq!(truth.true_support.indices(), &[6, 7, 8, 9]);
        assert!(truth.wellspecified);
        assert!(generate_m1(&spec(SimModel::M1, 50, 8, 0.3, 3)).is_err());
    }

    #[test]
    fn m1_cubic_correlation_and_balance() {
        let (d, _) = generate_m1(&spec(SimModel::M1, 100_000, 9, 0.0, 11)).unwrap();
        let r = corr(d.column(0), d.column(7));
        assert!((r - 3.0 / 15f64.sqrt()).abs() < 0.02, "{r}");
        assert!((d.mean_response() - 0.5).abs() < 0.01);
    }

    #[test]
    fn m2_response_ignores_other_columns() {
        let (d, truth) = generate_m2(&spec(SimModel::M2, 100_000, 3, 0.0, 5)).unwrap();
        assert!((d.mean_response() - 0.5).abs() < 0.01);
        assert!(!truth.wellspecified);
        assert_eq!(truth.padded_direction(4), vec![1.0, 1.0, 0.0, 0.0]);
        let (a, _) = generate_m2(&spec(SimModel::M2, 200, 5, 0.4, 9)).unwrap();
        let (b, _) = generate_m2(&spec(SimModel::M2, 200, 5, 0.4, 9)).unwrap();
        assert_eq!(a.x(), b.x());
        assert_eq!(a.y(), b.y());
        assert!(generate_m2(&spec(SimModel::M2, 10, 1, 0.0, 1)).is_err());
    }

    #[test]
    fn population_risk_matches_monte_carlo() {
        let pop = M2Population::new(LossSpec::Logistic, 0.3).unwrap();
        let b = [0.4, -0.2, 0.1, 0.0];
        let (d, _) = generate_m2(&spec(SimModel::M2, 400_000, 4, 0.3, 21)).unwrap();
        let eta = d.linear_predictor(0.1, &b).unwrap();
        let mc = crate::loss::mean_loss(&LossSpec::Logistic, &eta, d.y());
        let exact = pop.risk(0.1, &b);
        // MC standard error of the logistic loss here is about 1e-3
        assert!((mc - exact).abs() < 5e-3, "{mc} vs {exact}");
        let (r2, _, _) = pop.risk_derivatives_2([0.1, 0.4, -0.2]);
        assert!((r2 - pop.risk(0.1, &[0.4, -0.2])).abs() < 1e-12);
    }

    #[test]
    fn slope_hessian_matches_two_predictor_hessian() {
        let pop = M2Population::new(LossSpec::Logistic, 0.4).unwrap();
        let (_, _, h3) = pop.risk_derivatives_2([0.1, 0.7, 0.7]);
        let h = pop.slope_hessian(0.1, 0.7, 4);
        for j in 0..2 {
            for k in 0..2 {
                assert!((h[(j, k)] - h3[j + 1][k + 1]).abs() < 1e-12);
            }
        }
        assert!((h[(2, 3)] - h[(3, 2)]).abs() < 1e-15);
        // finite difference of the general risk in a direction off {1, 2}
        let e = 1e-4;
        let r = |t: f64| pop.risk(0.1, &[0.7, 0.7, t, 0.0]);
        let fd = (r(e) - 2.0 * r(0.0) + r(-e)) / (e * e);
        assert!((fd - h[(2, 2)]).abs() < 1e-5, "{fd} vs {}", h[(2, 2)]);
    }

    #[test]
    fn population_target_symmetry_and_sign() {
        for loss in [LossSpec::Logistic, LossSpec::Quadratic, LossSpec::Huber { delta: 0.1 }] {
            for rho in [-0.6, 0.0, 0.75] {
                let fit = population_fit_m2(rho, &loss).unwrap();
                let [b1, b2] = fit.coefficients;
                assert!((b1 - b2).abs() < 1e-6, "{loss} {rho}: {b1} {b2}");
                assert!(b1 > 0.0);
                assert!(fit.gradient_norm <= 1e-8);
            }
        }
    }

    #[test]
    #[ignore = "one million row refit; run with --ignored"]
    fn population_target_matches_large_sample_refit() {
        let eta = population_target_m2(0.0, &LossSpec::Logistic).unwrap()[0];
        let (d, _) = generate_m2(&spec(SimModel::M2, 1_000_000, 2, 0.0, 3)).unwrap();
        let s = d.standardize().unwrap();
        let fit = refit(&s, &LossSpec::Logistic, &PredictorSet::new(vec![1, 2]).unwrap(), &SolverConfig::default()).unwrap();
        let (_, raw) = s.destandardize_coefficients(fit.intercept, &fit.coefficients).unwrap();
        assert!((raw[0] - eta).abs() < 0.02 && (raw[1] - eta).abs() < 0.02);
    }

    #[test]
    fn population_target_matches_sample_refit() {
        let eta = population_target_m2(0.0, &LossSpec::Logistic).unwrap()[0];
        let (d, _) = generate_m2(&spec(SimModel::M2, 200_000, 2, 0.0, 3)).unwrap();
        let s = d.standardize().unwrap();
        let fit = refit(&s, &LossSpec::Logistic, &PredictorSet::new(vec![1, 2]).unwrap(), &SolverConfig::default()).unwrap();
        let (_, raw) = s.destandardize_coefficients(fit.intercept, &fit.coefficients).unwrap();
        assert!((raw[0] - eta).abs() < 0.05, "{} vs {eta}", raw[0]);
        assert!((raw[0] - raw[1]).abs() < 0.05 * eta);
    }
}
