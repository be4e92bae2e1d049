//! L1-penalized risk minimization with an unpenalized intercept, plus
//! unpenalized refits on a fixed support.
//!
//! The Lasso is solved by proximal Newton: each outer step builds a weighted
//! least-squares model of the loss at the current point (Newton weights for
//! the logistic loss, the sharp quadratic majorizer for Huber, exact for the
//! quadratic loss), solves the weighted Lasso subproblem by cyclic coordinate
//! descent with an active set, and backtracks on the true objective. The
//! stopping rule is the KKT residual, which certifies optimality because the
//! problem is convex.

use nalgebra::{DMatrix, DVector};

use crate::data::{Dataset, PredictorSet};
use crate::error::{Error, Result};
use crate::loss::{mean_loss, LossSpec};

/// Coefficient norm beyond which a logistic refit is declared separated.
pub const SEPARATION_NORM: f64 = 1e4;

/// Floor on logistic Newton weights inside the Lasso subproblem.
const MIN_NEWTON_WEIGHT: f64 = 1e-5;

const ARMIJO: f64 = 1e-4;
const MAX_BACKTRACKS: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Inner coordinate-descent stop: largest curvature-weighted coordinate move.
    pub tolerance: f64,
    pub kkt_tol: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 10_000,
            tolerance: 1e-7,
            kkt_tol: 1e-6,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let in_unit = |v: f64| v > 0.0 && v < 1.0;
        if self.max_iterations == 0 || !in_unit(self.tolerance) || !in_unit(self.kkt_tol) {
            return Err(Error::InvalidArgument(format!(
                "invalid solver config {self:?}"
            )));
        }
        Ok(())
    }
}

/// A (possibly penalized) fit: intercept plus one coefficient per predictor.
#[derive(Clone, Debug, PartialEq)]
pub struct PenalizedFit {
    pub lambda: f64,
    pub intercept: f64,
    pub coefficients: Vec<f64>,
    /// Empirical risk plus `lambda` times the L1 norm of the slopes.
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Set by logistic refits whose coefficients diverge.
    pub separated: bool,
}

impl PenalizedFit {
    pub fn support(&self) -> PredictorSet {
        self.coefficients
            .iter()
            .enumerate()
            .filter(|(_, &b)| b != 0.0)
            .map(|(j, _)| j + 1)
            .collect()
    }

    pub fn support_size(&self) -> usize {
        self.coefficients.iter().filter(|&&b| b != 0.0).count()
    }

    pub fn l1_norm(&self) -> f64 {
        self.coefficients.iter().map(|b| b.abs()).sum()
    }

    /// The empirical-risk part of the objective.
    pub fn risk(&self) -> f64 {
        self.objective - self.lambda * self.l1_norm()
    }
}

/// Fits along a decreasing λ grid.
#[derive(Clone, Debug)]
pub struct PathResult {
    pub fits: Vec<PenalizedFit>,
    pub loss: LossSpec,
    pub lambda_max: f64,
}

impl PathResult {
    pub fn lambdas(&self) -> Vec<f64> {
        self.fits.iter().map(|f| f.lambda).collect()
    }
}

fn require_standardized(d: &Dataset) -> Result<()> {
    if d.is_standardized() {
        Ok(())
    } else {
        Err(Error::NotStandardized)
    }
}

/// Minimizer of the mean loss over a constant predictor.
pub fn intercept_only(spec: &LossSpec, y: &[f64]) -> Result<f64> {
    let n = y.len() as f64;
    let ybar = y.iter().sum::<f64>() / n;
    match *spec {
        LossSpec::Logistic => {
            if ybar <= 0.0 || ybar >= 1.0 {
                return Err(Error::DegenerateResponse);
            }
            Ok((ybar / (1.0 - ybar)).ln())
        }
        LossSpec::Quadratic => Ok(ybar),
        LossSpec::Huber { delta } => {
            // the derivative Σ −ψ(y_i − b) is nondecreasing in b and changes sign on [0, 1]
            let slope = |b: f64| -> f64 {
                y.iter()
                    .map(|&yi| -(yi - b).clamp(-delta, delta))
                    .sum::<f64>()
            };
            let (mut lo, mut hi) = (0.0f64, 1.0f64);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if slope(mid) < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
                if hi - lo < 1e-16 {
                    break;
                }
            }
            Ok(0.5 * (lo + hi))
        }
    }
}

/// Smallest λ at which the all-zero slope vector is optimal.
pub fn lambda_max(d: &Dataset, spec: &LossSpec) -> Result<f64> {
    require_standardized(d)?;
    let b0 = intercept_only(spec, d.y())?;
    let n = d.n() as f64;
    let deriv: Vec<f64> = d.y().iter().map(|&y| spec.derivative(b0, y)).collect();
    let lmax = (0..d.p())
        .map(|j| {
            d.column(j)
                .iter()
                .zip(&deriv)
                .map(|(x, g)| x * g)
                .sum::<f64>()
                .abs()
                / n
        })
        .fold(0.0, f64::max);
    if !(lmax > 1e-300) {
        return Err(Error::DegenerateResponse);
    }
    Ok(lmax)
}

/// `m` log-equispaced values from `lmax` down to `ratio · lmax`.
pub fn lambda_grid(lmax: f64, m: usize, ratio: f64) -> Result<Vec<f64>> {
    if m < 2 {
        return Err(Error::InvalidArgument(format!(
            "lambda grid needs m >= 2, got {m}"
        )));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "lambda ratio must lie in (0, 1), got {ratio}"
        )));
    }
    if !(lmax > 0.0 && lmax.is_finite()) {
        return Err(Error::InvalidArgument(format!("lambda max must be positive, got {lmax}")));
    }
    let step = ratio.ln() / (m - 1) as f64;
    Ok((0..m)
        .map(|k| match k {
            0 => lmax,
            k if k == m - 1 => lmax * ratio,
            k => lmax * (step * k as f64).exp(),
        })
        .collect())
}

/// Grid used by path-based procedures; a single point sits at `ratio · lmax`.
pub fn path_lambdas(lmax: f64, m: usize, ratio: f64) -> Result<Vec<f64>> {
    if m == 1 {
        if !(ratio > 0.0 && ratio < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda ratio must lie in (0, 1), got {ratio}"
            )));
        }
        return Ok(vec![lmax * ratio]);
    }
    lambda_grid(lmax, m, ratio)
}

fn gradient(d: &Dataset, spec: &LossSpec, eta: &[f64]) -> (f64, Vec<f64>) {
    let n = d.n() as f64;
    let deriv: Vec<f64> = eta
        .iter()
        .zip(d.y())
        .map(|(&s, &y)| spec.derivative(s, y))
        .collect();
    let g0 = deriv.iter().sum::<f64>() / n;
    let g = (0..d.p())
        .map(|j| {
            d.column(j)
                .iter()
                .zip(&deriv)
                .map(|(x, g)| x * g)
                .sum::<f64>()
                / n
        })
        .collect();
    (g0, g)
}

fn kkt_from_gradient(g0: f64, g: &[f64], coefs: &[f64], lambda: f64) -> f64 {
    let mut worst = g0.abs();
    for (&gj, &bj) in g.iter().zip(coefs) {
        let r = if bj != 0.0 {
            (gj + lambda * bj.signum()).abs()
        } else {
            (gj.abs() - lambda).max(0.0)
        };
        worst = worst.max(r);
    }
    worst
}

/// Largest violation of the Lasso optimality conditions at `fit`.
pub fn verify_kkt(d: &Dataset, spec: &LossSpec, fit: &PenalizedFit) -> Result<f64> {
    require_standardized(d)?;
    let eta = d.linear_predictor(fit.intercept, &fit.coefficients)?;
    let (g0, g) = gradient(d, spec, &eta);
    Ok(kkt_from_gradient(g0, &g, &fit.coefficients, fit.lambda))
}

/// Weights and working response of the local quadratic model.
fn working_model(spec: &LossSpec, eta: &[f64], y: &[f64], w: &mut [f64], z: &mut [f64], floor: f64) {
    for i in 0..eta.len() {
        let (s, yi) = (eta[i], y[i]);
        match *spec {
            LossSpec::Quadratic => {
                w[i] = 1.0;
                z[i] = yi;
            }
            LossSpec::Logistic => {
                let wi = spec.second_derivative(s, yi).max(floor);
                w[i] = wi;
                z[i] = s - spec.derivative(s, yi) / wi;
            }
            LossSpec::Huber { delta } => {
                let r = (yi - s).abs();
                w[i] = if r <= delta { 1.0 } else { delta / r };
                z[i] = yi;
            }
        }
    }
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// Weighted Lasso subproblem solved in place by coordinate descent.
///
/// Minimizes `(1/2n) Σ w_i (z_i − b0 − x_i·b)² + λ‖b‖₁`. Returns the number
/// of sweeps.
#[allow(clippy::too_many_arguments)]
fn weighted_lasso_cd(
    d: &Dataset,
    w: &[f64],
    z: &[f64],
    lambda: f64,
    b0: &mut f64,
    b: &mut [f64],
    tol: f64,
    max_sweeps: usize,
) -> usize {
    let n = d.n();
    let nf = n as f64;
    let p = d.p();
    let sw: f64 = w.iter().sum();
    let v: Vec<f64> = (0..p)
        .map(|j| d.column(j).iter().zip(w).map(|(x, wi)| wi * x * x).sum::<f64>() / nf)
        .collect();
    let mut r: Vec<f64> = z.to_vec();
    for (ri, &e) in r.iter_mut().zip(&d.linear_predictor(*b0, b).expect("length checked")) {
        *ri -= e;
    }

    let mut sweep = |coords: &mut dyn Iterator<Item = usize>, b0: &mut f64, b: &mut [f64]| -> f64 {
        let mut biggest: f64 = 0.0;
        let shift = r.iter().zip(w).map(|(ri, wi)| ri * wi).sum::<f64>() / sw;
        if shift != 0.0 {
            *b0 += shift;
            r.iter_mut().for_each(|ri| *ri -= shift);
            biggest = biggest.max(sw / nf * shift.abs());
        }
        for j in coords {
            if v[j] <= 0.0 {
                continue;
            }
            let col = d.column(j);
            let grad: f64 = col
                .iter()
                .zip(&r)
                .zip(w)
                .map(|((x, ri), wi)| wi * x * ri)
                .sum::<f64>()
                / nf;
            let old = b[j];
            let new = soft_threshold(grad + v[j] * old, lambda) / v[j];
            if new != old {
                let diff = new - old;
                for (ri, x) in r.iter_mut().zip(col) {
                    *ri -= diff * x;
                }
                b[j] = new;
                biggest = biggest.max(v[j] * diff.abs());
            }
        }
        biggest
    };

    let mut sweeps = 0;
    while sweeps < max_sweeps {
        sweeps += 1;
        let change = sweep(&mut (0..p), b0, b);
        if change < tol {
            break;
        }
        // iterate on the active set until it settles, then re-check all coordinates
        loop {
            if sweeps >= max_sweeps {
                break;
            }
            sweeps += 1;
            let active: Vec<usize> = (0..p).filter(|&j| b[j] != 0.0).collect();
            let change = sweep(&mut active.into_iter(), b0, b);
            if change < tol {
                break;
            }
        }
    }
    sweeps
}

fn penalized_objective(spec: &LossSpec, eta: &[f64], y: &[f64], lambda: f64, b: &[f64]) -> f64 {
    mean_loss(spec, eta, y) + lambda * b.iter().map(|v| v.abs()).sum::<f64>()
}

/// Lasso fit at a single penalty level.
pub fn fit_lasso(
    d: &Dataset,
    spec: &LossSpec,
    lambda: f64,
    cfg: &SolverConfig,
    warm_start: Option<&PenalizedFit>,
) -> Result<PenalizedFit> {
    require_standardized(d)?;
    cfg.validate()?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "lambda must be nonnegative, got {lambda}"
        )));
    }
    let (n, p) = (d.n(), d.p());
    let (mut b0, mut b) = match warm_start {
        Some(f) if f.coefficients.len() == p => (f.intercept, f.coefficients.clone()),
        Some(f) => {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: f.coefficients.len(),
            })
        }
        None => (intercept_only(spec, d.y())?, vec![0.0; p]),
    };
    let y = d.y();
    let mut eta = d.linear_predictor(b0, &b)?;
    let mut obj = penalized_objective(spec, &eta, y, lambda, &b);
    let mut w = vec![0.0; n];
    let mut z = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;

    while iterations < cfg.max_iterations {
        let (g0, g) = gradient(d, spec, &eta);
        if kkt_from_gradient(g0, &g, &b, lambda) <= cfg.kkt_tol {
            converged = true;
            break;
        }
        iterations += 1;
        working_model(spec, &eta, y, &mut w, &mut z, MIN_NEWTON_WEIGHT);
        let (mut nb0, mut nb) = (b0, b.clone());
        weighted_lasso_cd(d, &w, &z, lambda, &mut nb0, &mut nb, cfg.tolerance, cfg.max_iterations);

        // predicted decrease for the Armijo test
        let l1_old: f64 = b.iter().map(|v| v.abs()).sum();
        let l1_new: f64 = nb.iter().map(|v| v.abs()).sum();
        let slope = g0 * (nb0 - b0)
            + g.iter().zip(nb.iter().zip(&b)).map(|(gj, (n, o))| gj * (n - o)).sum::<f64>()
            + lambda * (l1_new - l1_old);
        let new_eta = d.linear_predictor(nb0, &nb)?;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_BACKTRACKS {
            let (trial_b0, trial_b, trial_eta) = if step == 1.0 {
                (nb0, nb.clone(), new_eta.clone())
            } else {
                (
                    b0 + step * (nb0 - b0),
                    b.iter().zip(&nb).map(|(o, n)| o + step * (n - o)).collect(),
                    eta.iter().zip(&new_eta).map(|(o, n)| o + step * (n - o)).collect(),
                )
            };
            let trial = penalized_objective(spec, &trial_eta, y, lambda, &trial_b);
            let slack = 1e-14 * obj.abs().max(1.0);
            if trial <= obj + ARMIJO * step * slope.min(0.0) + slack {
                b0 = trial_b0;
                b = trial_b;
                eta = trial_eta;
                obj = trial;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if !converged {
        let (g0, g) = gradient(d, spec, &eta);
        converged = kkt_from_gradient(g0, &g, &b, lambda) <= cfg.kkt_tol;
    }
    Ok(PenalizedFit {
        lambda,
        intercept: b0,
        coefficients: b,
        objective: obj,
        converged,
        iterations,
        separated: false,
    })
}

/// Lasso fits along a log-spaced grid from λ_max, warm-started, keeping
/// only fits whose support size is at most n.
pub fn fit_path(
    d: &Dataset,
    spec: &LossSpec,
    m: usize,
    ratio: f64,
    cfg: &SolverConfig,
) -> Result<PathResult> {
    let lmax = lambda_max(d, spec)?;
    let grid = path_lambdas(lmax, m, ratio)?;
    let mut fits = Vec::with_capacity(grid.len());
    let mut previous: Option<PenalizedFit> = None;
    for &lambda in &grid {
        let fit = fit_lasso(d, spec, lambda, cfg, previous.as_ref())?;
        previous = Some(fit.clone());
        if fit.support_size() <= d.n() {
            fits.push(fit);
        }
    }
    Ok(PathResult {
        fits,
        loss: *spec,
        lambda_max: lmax,
    })
}

/// Unpenalized minimizer of the empirical risk over the intercept and the
/// predictors in `w`; every other coefficient is exactly zero.
pub fn refit(d: &Dataset, spec: &LossSpec, w: &PredictorSet, cfg: &SolverConfig) -> Result<PenalizedFit> {
    require_standardized(d)?;
    cfg.validate()?;
    let (n, p) = (d.n(), d.p());
    if let Some(&max) = w.indices().last() {
        if max > p {
            return Err(Error::InvalidArgument(format!(
                "predictor {max} outside 1..={p}"
            )));
        }
    }
    if w.len() + 1 > n {
        return Err(Error::InvalidArgument(format!(
            "model of size {} needs more than n = {n} observations",
            w.len()
        )));
    }
    let cols: Vec<usize> = w.columns().collect();
    let k = cols.len() + 1;
    let design = DMatrix::from_fn(n, k, |i, c| if c == 0 { 1.0 } else { d.x()[(i, cols[c - 1])] });
    let y = d.y();
    let nf = n as f64;

    let mut theta = DVector::zeros(k);
    theta[0] = match intercept_only(spec, y) {
        Ok(b0) => b0,
        Err(Error::DegenerateResponse) => {
            return Ok(PenalizedFit {
                lambda: 0.0,
                intercept: 0.0,
                coefficients: vec![0.0; p],
                objective: f64::NAN,
                converged: false,
                iterations: 0,
                separated: true,
            })
        }
        Err(e) => return Err(e),
    };
    let mut eta: DVector<f64> = &design * &theta;
    let mut risk = mean_loss(spec, eta.as_slice(), y);
    let mut weights = vec![0.0; n];
    let mut scratch = vec![0.0; n];
    let mut iterations = 0;
    let mut converged = false;
    let mut separated = false;

    while iterations < cfg.max_iterations {
        let deriv = DVector::from_iterator(n, eta.iter().zip(y).map(|(&s, &yi)| spec.derivative(s, yi)));
        let grad: DVector<f64> = design.tr_mul(&deriv) / nf;
        if grad.amax() <= cfg.kkt_tol {
            converged = true;
            // a vanishing gradient with every point on the correct side means the
            // risk only reaches its infimum at infinity
            separated = matches!(spec, LossSpec::Logistic) && separates(eta.as_slice(), y);
            break;
        }
        if matches!(spec, LossSpec::Logistic) && (theta.norm() > SEPARATION_NORM || separates(eta.as_slice(), y)) {
            separated = true;
            break;
        }
        iterations += 1;
        working_model(spec, eta.as_slice(), y, &mut weights, &mut scratch, 0.0);
        let mut weighted = design.clone();
        for mut col in weighted.column_iter_mut() {
            for (v, wi) in col.iter_mut().zip(&weights) {
                *v *= wi;
            }
        }
        let mut hessian: DMatrix<f64> = design.tr_mul(&weighted) / nf;
        let direction = solve_spd(&mut hessian, &(-&grad))
            .ok_or_else(|| Error::Numerical("refit Hessian is not positive definite".into()))?;
        let slope = grad.dot(&direction);
        let step_eta: DVector<f64> = &design * &direction;
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..MAX_BACKTRACKS {
            let trial_eta = &eta + &step_eta * step;
            let trial = mean_loss(spec, trial_eta.as_slice(), y);
            if trial <= risk + ARMIJO * step * slope.min(0.0) + 1e-15 * risk.abs().max(1.0) {
                theta += &direction * step;
                eta = trial_eta;
                risk = trial;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    let mut coefficients = vec![0.0; p];
    for (c, &j) in cols.iter().enumerate() {
        coefficients[j] = theta[c + 1];
    }
    if !converged && !separated && matches!(spec, LossSpec::Logistic) && theta.norm() > SEPARATION_NORM {
        separated = true;
    }
    Ok(PenalizedFit {
        lambda: 0.0,
        intercept: theta[0],
        coefficients,
        objective: risk,
        converged: converged && !separated,
        iterations,
        separated,
    })
}

/// Every observation strictly on its own side of the hyperplane.
fn separates(eta: &[f64], y: &[f64]) -> bool {
    eta.iter().zip(y).all(|(&s, &yi)| s * (2.0 * yi - 1.0) > 0.0)
}

/// Solves `H x = b` for symmetric positive semidefinite `H`, adding a small
/// ridge when the plain Cholesky factorization fails.
fn solve_spd(h: &mut DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = h.clone().cholesky() {
        return Some(ch.solve(b));
    }
    let scale = h.diagonal().amax().max(1e-300);
    let mut ridge = 1e-12 * scale;
    for _ in 0..12 {
        let mut shifted = h.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += ridge;
        }
        if let Some(ch) = shifted.cholesky() {
            return Some(ch.solve(b));
        }
        ridge *= 100.0;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::empirical_risk;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    const HUBER: LossSpec = LossSpec::Huber { delta: 0.1 };

    pub(crate) fn random_dataset(n: usize, p: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = DMatrix::from_fn(n, p, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y: Vec<f64> = (0..n)
            .map(|i| {
                let s = x[(i, 0)] - 0.5 * x[(i, p.min(2) - 1)];
                let prob = crate::loss::sigmoid(2.0 * s);
                if rng.gen::<f64>() < prob { 1.0 } else { 0.0 }
            })
            .collect();
        Dataset::new(x, y).unwrap().standardize().unwrap()
    }

    #[test]
    fn grid_endpoints_and_ratios() {
        assert_eq!(lambda_grid(1.0, 2, 0.1).unwrap(), vec![1.0, 0.1]);
        let g = lambda_grid(1.0, 3, 0.01).unwrap();
        assert!((g[1] - 0.1).abs() < 1e-15 && g[2] == 0.01);
        let g = lambda_grid(2.5, 20, 0.01).unwrap();
        let r0 = g[1] / g[0];
        for w in g.windows(2) {
            assert!((w[1] / w[0] - r0).abs() < 1e-12);
        }
        assert!(lambda_grid(1.0, 1, 0.1).is_err());
        assert!(lambda_grid(1.0, 5, 1.0).is_err());
        assert!(lambda_grid(1.0, 5, 0.0).is_err());
        assert_eq!(path_lambdas(2.0, 1, 0.25).unwrap(), vec![0.5]);
    }

    #[test]
    fn lambda_max_quadratic_closed_form() {
        let d = random_dataset(30, 4, 1);
        let ybar = d.mean_response();
        let expected = (0..4)
            .map(|j| {
                d.column(j).iter().zip(d.y()).map(|(x, y)| x * (y - ybar)).sum::<f64>().abs() / 30.0
            })
            .fold(0.0, f64::max);
        let got = lambda_max(&d, &LossSpec::Quadratic).unwrap();
        assert!((got - expected).abs() < 1e-15);
    }

    #[test]
    fn orthogonal_column_contributes_nothing() {
        // balanced y, column 2 orthogonal to the centered response
        let rows = vec![
            vec![1.0, 1.0],
            vec![2.0, -1.0],
            vec![3.0, -1.0],
            vec![4.0, 1.0],
        ];
        let d = Dataset::from_rows(&rows, vec![0.0, 0.0, 1.0, 1.0])
            .unwrap()
            .standardize()
            .unwrap();
        let deriv: Vec<f64> = d.y().iter().map(|&y| LossSpec::Logistic.derivative(0.0, y)).collect();
        let c: f64 = d.column(1).iter().zip(&deriv).map(|(x, g)| x * g).sum();
        assert!(c.abs() < 1e-15);
    }

    #[test]
    fn degenerate_response_is_rejected() {
        let d = Dataset::from_rows(&[vec![1.0], vec![2.0], vec![4.0]], vec![1.0, 1.0, 1.0])
            .unwrap()
            .standardize()
            .unwrap();
        assert!(matches!(lambda_max(&d, &LossSpec::Logistic), Err(Error::DegenerateResponse)));
        assert!(matches!(
            fit_path(&d, &LossSpec::Logistic, 5, 0.1, &SolverConfig::default()),
            Err(Error::DegenerateResponse)
        ));
    }

    #[test]
    fn unstandardized_input_is_rejected() {
        let d = Dataset::from_rows(&[vec![1.0], vec![2.0]], vec![0.0, 1.0]).unwrap();
        assert!(matches!(
            fit_lasso(&d, &LossSpec::Logistic, 0.1, &SolverConfig::default(), None),
            Err(Error::NotStandardized)
        ));
    }

    #[test]
    fn null_model_above_lambda_max() {
        let cfg = SolverConfig::default();
        for spec in [LossSpec::Logistic, LossSpec::Quadratic, HUBER] {
            let d = random_dataset(50, 6, 7);
            let lmax = lambda_max(&d, &spec).unwrap();
            let fit = fit_lasso(&d, &spec, lmax, &cfg, None).unwrap();
            assert!(fit.coefficients.iter().all(|&b| b == 0.0), "{spec}");
            assert!(verify_kkt(&d, &spec, &fit).unwrap() <= 1e-10);
            let b0 = intercept_only(&spec, d.y()).unwrap();
            assert_eq!(fit.intercept, b0);
        }
        let d = random_dataset(50, 6, 7);
        let fit = fit_lasso(&d, &LossSpec::Logistic, 10.0, &cfg, None).unwrap();
        let ybar = d.mean_response();
        assert!((fit.intercept - (ybar / (1.0 - ybar)).ln()).abs() < 1e-12);
    }

    #[test]
    fn soft_threshold_on_orthogonal_design() {
        // repeated Hadamard rows: centered orthogonal columns, each with
        // (1/n) Σ x² = (n − 1)/n after standardization
        let h = [
            [1.0, 1.0, 1.0],
            [-1.0, 1.0, -1.0],
            [1.0, -1.0, -1.0],
            [-1.0, -1.0, 1.0],
        ];
        let rows: Vec<Vec<f64>> = h.iter().chain(h.iter()).map(|r| r.to_vec()).collect();
        let y = vec![1.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 0.0];
        let d = Dataset::from_rows(&rows, y).unwrap().standardize().unwrap();
        let n = 8.0;
        let v = (n - 1.0) / n;
        let ybar = d.mean_response();
        for &lambda in &[0.01, 0.05, 0.1, 0.3] {
            let fit = fit_lasso(&d, &LossSpec::Quadratic, lambda, &SolverConfig::default(), None).unwrap();
            for j in 0..3 {
                let zj: f64 = d.column(j).iter().zip(d.y()).map(|(x, y)| x * (y - ybar)).sum::<f64>() / n;
                assert!((fit.coefficients[j] - soft_threshold(zj, lambda) / v).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn logistic_fit_beats_random_probes() {
        let d = random_dataset(40, 3, 11);
        let spec = LossSpec::Logistic;
        let lambda = 0.05;
        let fit = fit_lasso(&d, &spec, lambda, &SolverConfig::default(), None).unwrap();
        assert!(fit.converged);
        assert!(verify_kkt(&d, &spec, &fit).unwrap() <= 1e-6);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..10_000 {
            let b0 = fit.intercept + rng.gen_range(-1.0..1.0);
            let b: Vec<f64> = fit.coefficients.iter().map(|c| c + rng.gen_range(-1.0..1.0)).collect();
            let obj = empirical_risk(&spec, &d, b0, &b).unwrap()
                + lambda * b.iter().map(|v| v.abs()).sum::<f64>();
            assert!(fit.objective <= obj + 1e-12);
        }
        let stored = empirical_risk(&spec, &d, fit.intercept, &fit.coefficients).unwrap() + lambda * fit.l1_norm();
        assert!((stored - fit.objective).abs() < 1e-10);
    }

    #[test]
    fn kkt_detects_perturbation() {
        let d = random_dataset(60, 5, 5);
        let spec = LossSpec::Logistic;
        let lmax = lambda_max(&d, &spec).unwrap();
        let mut fit = fit_lasso(&d, &spec, 0.2 * lmax, &SolverConfig::default(), None).unwrap();
        assert!(verify_kkt(&d, &spec, &fit).unwrap() <= 1e-6);
        let j = fit.coefficients.iter().position(|&b| b != 0.0).unwrap();
        fit.coefficients[j] += 0.1;
        assert!(verify_kkt(&d, &spec, &fit).unwrap() > 1e-6);
    }

    #[test]
    fn path_properties() {
        let cfg = SolverConfig::default();
        for (k, spec) in [LossSpec::Logistic, LossSpec::Quadratic, HUBER].iter().enumerate() {
            let d = random_dataset(80, 10, 20 + k as u64);
            let path = fit_path(&d, spec, 20, 0.01, &cfg).unwrap();
            assert_eq!(path.fits.len(), 20);
            assert_eq!(path.fits[0].support_size(), 0);
            assert!((path.fits[0].lambda - path.lambda_max).abs() < 1e-15);
            for w in path.fits.windows(2) {
                assert!(w[1].lambda < w[0].lambda);
                assert!(w[1].risk() <= w[0].risk() + 1e-9, "{spec}");
            }
            for f in &path.fits {
                assert!(f.converged, "{spec} lambda {}", f.lambda);
                assert!(verify_kkt(&d, spec, f).unwrap() <= cfg.kkt_tol);
                assert!(f.support_size() <= d.n());
            }
        }
    }

    #[test]
    fn support_cap_drops_dense_fits() {
        // p > n: small lambdas activate more than n predictors
        let d = random_dataset(8, 20, 4);
        let path = fit_path(&d, &LossSpec::Quadratic, 20, 0.001, &SolverConfig::default()).unwrap();
        assert!(path.fits.iter().all(|f| f.support_size() <= 8));
    }

    #[test]
    fn refit_null_model_closed_form() {
        let d = random_dataset(50, 3, 9);
        let fit = refit(&d, &LossSpec::Logistic, &PredictorSet::empty(), &SolverConfig::default()).unwrap();
        let ybar = d.mean_response();
        assert!((fit.intercept - (ybar / (1.0 - ybar)).ln()).abs() < 1e-10);
        let entropy = -(ybar * ybar.ln() + (1.0 - ybar) * (1.0 - ybar).ln());
        assert!((fit.risk() - entropy).abs() < 1e-12);
    }

    #[test]
    fn refit_quadratic_matches_normal_equations() {
        let d = random_dataset(40, 5, 13);
        let w = PredictorSet::new(vec![2, 4, 5]).unwrap();
        let fit = refit(&d, &LossSpec::Quadratic, &w, &SolverConfig::default()).unwrap();
        let a = DMatrix::from_fn(40, 4, |i, c| if c == 0 { 1.0 } else { d.x()[(i, [1, 3, 4][c - 1])] });
        let yv = DVector::from_column_slice(d.y());
        let beta = (a.transpose() * &a).lu().solve(&(a.transpose() * yv)).unwrap();
        assert!((fit.intercept - beta[0]).abs() < 1e-8);
        for (c, &j) in [1usize, 3, 4].iter().enumerate() {
            assert!((fit.coefficients[j] - beta[c + 1]).abs() < 1e-8);
        }
        assert_eq!(fit.coefficients[0], 0.0);
        assert_eq!(fit.coefficients[2], 0.0);
    }

    #[test]
    fn refit_risk_is_monotone_under_inclusion() {
        let cfg = SolverConfig::default();
        for spec in [LossSpec::Logistic, LossSpec::Quadratic, HUBER] {
            let d = random_dataset(100, 6, 17);
            let mut prev = f64::INFINITY;
            for k in 0..=6 {
                let w: PredictorSet = (1..=k).collect();
                let fit = refit(&d, &spec, &w, &cfg).unwrap();
                assert!(fit.converged, "{spec} k={k}");
                assert!(fit.risk() <= prev + 1e-9);
                prev = fit.risk();
            }
        }
    }

    #[test]
    fn refit_flags_separation() {
        let rows: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, ((i * 7) % 5) as f64]).collect();
        let y = (0..10).map(|i| if i >= 5 { 1.0 } else { 0.0 }).collect();
        let d = Dataset::from_rows(&rows, y).unwrap().standardize().unwrap();
        let fit = refit(&d, &LossSpec::Logistic, &PredictorSet::new(vec![1]).unwrap(), &SolverConfig::default()).unwrap();
        assert!(fit.separated, "{fit:?}");
        assert!(!fit.converged);
    }

    #[test]
    fn refit_rejects_oversized_models() {
        let d = random_dataset(4, 6, 2);
        let w: PredictorSet = (1..=4).collect();
        assert!(refit(&d, &LossSpec::Quadratic, &w, &SolverConfig::default()).is_err());
    }

    #[test]
    fn scaling_a_raw_column_leaves_the_fit_unchanged() {
        let base = random_dataset(60, 4, 31);
        let raw = base.original_x();
        let mut scaled = raw.clone();
        scaled.column_mut(2).iter_mut().for_each(|v| *v *= 4.0);
        let a = Dataset::new(raw, base.y().to_vec()).unwrap().standardize().unwrap();
        let b = Dataset::new(scaled, base.y().to_vec()).unwrap().standardize().unwrap();
        let cfg = SolverConfig::default();
        let fa = fit_lasso(&a, &LossSpec::Logistic, 0.02, &cfg, None).unwrap();
        let fb = fit_lasso(&b, &LossSpec::Logistic, 0.02, &cfg, None).unwrap();
        assert_eq!(fa, fb);
    }
}
