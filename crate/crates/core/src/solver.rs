//! Minimisation of `‖Ax − y^δ‖_Y^p + α ‖x‖₁` and the choice of α.
//!
//! Euclidean data norms with `p = 2` go through accelerated proximal
//! gradient with function-value restart. Once the iterate's support looks
//! settled, the reduced optimality system on that support is solved directly
//! and accepted when it satisfies the full KKT conditions.
//!
//! For the ℓ^q embedding every minimiser is a soft thresholding of the data,
//! `x = S_τ(y^δ)`, where τ solves a monotone scalar equation; it is found by
//! bisection for both `p = 1` and `p = 2`.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{lq_norm, DataVector, ForwardOperator, OperatorKind};
use crate::sequence::TruncatedSequence;

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 100_000;
/// α returned by the a-priori rule for exact data.
pub const ALPHA_FLOOR: f64 = 1e-12;

/// Componentwise `sign(v) max(|v| − τ, 0)`.
pub fn soft_threshold(v: &[f64], tau: f64) -> Vec<f64> {
    assert!(tau >= 0.0, "threshold must be nonnegative");
    v.iter().map(|&x| shrink(x, tau)).collect()
}

#[inline]
fn shrink(x: f64, tau: f64) -> f64 {
    if x > tau {
        x - tau
    } else if x < -tau {
        x + tau
    } else {
        0.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Exponent {
    One,
    Two,
}

impl Exponent {
    pub fn value(self) -> f64 {
        match self {
            Exponent::One => 1.0,
            Exponent::Two => 2.0,
        }
    }
}

impl TryFrom<u8> for Exponent {
    type Error = String;

    fn try_from(p: u8) -> std::result::Result<Self, String> {
        match p {
            1 => Ok(Exponent::One),
            2 => Ok(Exponent::Two),
            _ => Err(format!("exponent p must be 1 or 2, got {p}")),
        }
    }
}

impl From<Exponent> for u8 {
    fn from(p: Exponent) -> u8 {
        match p {
            Exponent::One => 1,
            Exponent::Two => 2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct TikhonovProblem<'a> {
    pub op: &'a ForwardOperator,
    pub y_delta: DataVector,
    pub alpha: f64,
    pub p: Exponent,
}

impl<'a> TikhonovProblem<'a> {
    pub fn new(op: &'a ForwardOperator, y_delta: DataVector, alpha: f64, p: Exponent) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
        }
        if y_delta.len() != op.data_dim() {
            return Err(Error::DimensionMismatch {
                expected: op.data_dim(),
                found: y_delta.len(),
            });
        }
        Ok(Self { op, y_delta, alpha, p })
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        let r = self.op.apply_slice(x).expect("domain dimension") - &self.y_delta;
        let misfit = self.op.y_norm(&r).expect("data dimension");
        misfit.powf(self.p.value()) + self.alpha * x.iter().map(|v| v.abs()).sum::<f64>()
    }

    pub fn residual_norm(&self, x: &[f64]) -> f64 {
        let r = self.op.apply_slice(x).expect("domain dimension") - &self.y_delta;
        self.op.y_norm(&r).expect("data dimension")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveMethod {
    ProximalGradient,
    ClosedForm,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveDiagnostics {
    pub iterations: usize,
    pub final_objective: f64,
    pub kkt_residual: f64,
    pub support_size: usize,
    pub method: SolveMethod,
    /// Smallest KKT residual resolvable in double precision for this
    /// problem; convergence is declared below `max(tol, kkt_floor)`.
    pub kkt_floor: f64,
    /// Objective at every momentum restart and at termination.
    pub checkpoints: Vec<f64>,
}

pub fn solve_tikhonov(
    prob: &TikhonovProblem<'_>,
    opts: &SolverOptions,
) -> Result<(TruncatedSequence, SolveDiagnostics)> {
    solve_tikhonov_from(prob, opts, None)
}

/// Like [`solve_tikhonov`], starting the iteration at `warm` when given.
pub fn solve_tikhonov_from(
    prob: &TikhonovProblem<'_>,
    opts: &SolverOptions,
    warm: Option<&[f64]>,
) -> Result<(TruncatedSequence, SolveDiagnostics)> {
    let op = prob.op;
    let origin = op.index_origin();
    let (x, diag) = if op.kind() == OperatorKind::LqEmbedding {
        closed_form(prob)
    } else if op.is_euclidean() && prob.p == Exponent::Two {
        let n = op.domain_dim();
        let start = match warm {
            Some(w) if w.len() == n => w.to_vec(),
            Some(w) => {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: w.len(),
                })
            }
            None => vec![0.0; n],
        };
        proximal_gradient(prob, opts, start)?
    } else {
        return Err(Error::UnsupportedProblem(format!(
            "p = {} with a {:?} data norm on a {:?} operator",
            u8::from(prob.p),
            op.norm_kind(),
            op.kind()
        )));
    };
    if diag.kkt_residual <= opts.tol.max(diag.kkt_floor) {
        Ok((TruncatedSequence::with_origin(x, origin), diag))
    } else {
        Err(Error::NotConverged {
            best: Box::new(TruncatedSequence::with_origin(x, origin)),
            diagnostics: Box::new(diag),
        })
    }
}

/// KKT residual of the euclidean `p = 2` problem: with `g = Aᵀ(Ax − y)`,
/// `max(|g_k| − α/2, 0)` off the support and `|2 g_k / α + sgn x_k|` on it.
pub fn kkt_residual(prob: &TikhonovProblem<'_>, x: &[f64]) -> f64 {
    let r = prob.op.apply_slice(x).expect("domain dimension") - &prob.y_delta;
    let g = prob.op.matrix().tr_mul(&r);
    euclidean_kkt(&g, x, prob.alpha)
}

fn euclidean_kkt(g: &DVector<f64>, x: &[f64], alpha: f64) -> f64 {
    g.iter()
        .zip(x)
        .map(|(&gk, &xk)| {
            if xk == 0.0 {
                (gk.abs() - alpha / 2.0).max(0.0)
            } else {
                (2.0 * gk / alpha + xk.signum()).abs()
            }
        })
        .fold(0.0, f64::max)
}

fn proximal_gradient(
    prob: &TikhonovProblem<'_>,
    opts: &SolverOptions,
    start: Vec<f64>,
) -> Result<(Vec<f64>, SolveDiagnostics)> {
    let a = prob.op.matrix();
    let n = a.ncols();
    let alpha = prob.alpha;
    let gram = a.tr_mul(a);
    let aty = a.tr_mul(&prob.y_delta);
    let sigma2 = largest_eigenvalue(&gram)?;
    let lip = 2.0 * sigma2 * (1.0 + 1e-8);
    let step = 1.0 / lip;
    let floor = kkt_floor(sigma2.sqrt(), prob.y_delta.norm(), alpha);
    let accept = opts.tol.max(floor);

    let grad = |v: &DVector<f64>| (&gram * v - &aty) * 2.0;
    let prox_step = |v: &DVector<f64>| {
        let g = grad(v);
        DVector::from_iterator(
            n,
            v.iter()
                .zip(g.iter())
                .map(|(vi, gi)| shrink(vi - step * gi, alpha * step)),
        )
    };

    let mut x = DVector::from_vec(start);
    let mut fx = prob.objective(x.as_slice());
    let mut z = x.clone();
    let mut t = 1.0f64;
    let mut checkpoints = vec![fx];
    let mut stable_support = 0usize;
    let mut last_support = support_signs(x.as_slice());

    for iter in 1..=opts.max_iter {
        let mut x_new = prox_step(&z);
        let mut f_new = prob.objective(x_new.as_slice());
        if f_new > fx {
            // momentum overshot: restart from x with a plain proximal step
            t = 1.0;
            x_new = prox_step(&x);
            f_new = prob.objective(x_new.as_slice());
            checkpoints.push(f_new.min(fx));
            if f_new > fx {
                x_new = x.clone();
                f_new = fx;
            }
        }
        let t_new = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = &x_new + (&x_new - &x) * ((t - 1.0) / t_new);
        t = t_new;
        x = x_new;
        fx = f_new;

        let signs = support_signs(x.as_slice());
        if signs == last_support {
            stable_support += 1;
        } else {
            stable_support = 0;
            last_support = signs;
        }

        if stable_support >= 5 && (stable_support.is_multiple_of(5) || iter.is_multiple_of(50)) {
            if let Some(candidate) = polish(prob, &gram, &aty, x.as_slice()) {
                let kkt = kkt_residual(prob, &candidate);
                if kkt <= accept {
                    let f_c = prob.objective(&candidate);
                    checkpoints.push(f_c);
                    return Ok((
                        candidate.clone(),
                        diagnostics(iter, f_c, kkt, floor, &candidate, checkpoints),
                    ));
                }
            }
        }
        if iter % 10 == 0 || iter == opts.max_iter {
            let kkt = kkt_residual(prob, x.as_slice());
            if kkt <= accept {
                checkpoints.push(fx);
                return Ok((
                    x.as_slice().to_vec(),
                    diagnostics(iter, fx, kkt, floor, x.as_slice(), checkpoints),
                ));
            }
        }
    }
    // a last polish on whatever support the iterate has settled on
    let mut x = x.as_slice().to_vec();
    let mut kkt = kkt_residual(prob, &x);
    if let Some(candidate) = polish(prob, &gram, &aty, &x) {
        let kkt_c = kkt_residual(prob, &candidate);
        let f_c = prob.objective(&candidate);
        if kkt_c < kkt && f_c <= fx {
            x = candidate;
            kkt = kkt_c;
            fx = f_c;
        }
    }
    checkpoints.push(fx);
    Ok((x.clone(), diagnostics(opts.max_iter, fx, kkt, floor, &x, checkpoints)))
}

/// Round-off level of `|2 g_k / α + sgn x_k|`: the residual `Ax − y` is a
/// difference of vectors of size `‖y‖`, so `g = Aᵀr` carries an error of
/// order `ε ‖A‖ ‖y‖`, which the on-support test magnifies by `2/α`.
fn kkt_floor(norm_a: f64, norm_y: f64, alpha: f64) -> f64 {
    64.0 * f64::EPSILON * norm_a * norm_y.max(1.0) * 2.0 / alpha
}

fn diagnostics(
    iterations: usize,
    objective: f64,
    kkt: f64,
    floor: f64,
    x: &[f64],
    checkpoints: Vec<f64>,
) -> SolveDiagnostics {
    SolveDiagnostics {
        iterations,
        final_objective: objective,
        kkt_residual: kkt,
        kkt_floor: floor,
        support_size: x.iter().filter(|v| **v != 0.0).count(),
        method: SolveMethod::ProximalGradient,
        checkpoints,
    }
}

fn support_signs(x: &[f64]) -> Vec<i8> {
    x.iter()
        .map(|&v| {
            if v > 0.0 {
                1
            } else if v < 0.0 {
                -1
            } else {
                0
            }
        })
        .collect()
}

/// Solves `A_Sᵀ(A_S w − y) = −(α/2) s` on the support S of `x` with signs s,
/// with one step of iterative refinement. Returns the candidate when its
/// signs agree with s.
fn polish(prob: &TikhonovProblem<'_>, gram: &DMatrix<f64>, aty: &DVector<f64>, x: &[f64]) -> Option<Vec<f64>> {
    let support: Vec<usize> = (0..x.len()).filter(|&k| x[k] != 0.0).collect();
    let n = x.len();
    let half = prob.alpha / 2.0;
    if support.is_empty() {
        return Some(vec![0.0; n]);
    }
    let k = support.len();
    let g_s = DMatrix::from_fn(k, k, |i, j| gram[(support[i], support[j])]);
    let chol = Cholesky::new(g_s)?;
    let signs = DVector::from_fn(k, |i, _| x[support[i]].signum());
    let rhs = DVector::from_fn(k, |i, _| aty[support[i]] - half * signs[i]);
    let mut w = chol.solve(&rhs);

    let mut full = vec![0.0; n];
    let scatter = |w: &DVector<f64>, full: &mut Vec<f64>| {
        for (i, &pos) in support.iter().enumerate() {
            full[pos] = w[i];
        }
    };
    scatter(&w, &mut full);
    let r = prob.op.apply_slice(&full).ok()? - &prob.y_delta;
    let g = prob.op.matrix().tr_mul(&r);
    let defect = DVector::from_fn(k, |i, _| g[support[i]] + half * signs[i]);
    w -= chol.solve(&defect);
    scatter(&w, &mut full);

    if support.iter().zip(signs.iter()).all(|(&pos, &s)| full[pos] * s > 0.0) {
        Some(full)
    } else {
        None
    }
}

/// Largest eigenvalue of a symmetric positive semidefinite matrix by power
/// iteration (relative tolerance 1e-10, at most 10⁴ iterations).
pub fn largest_eigenvalue(m: &DMatrix<f64>) -> Result<f64> {
    let n = m.nrows();
    // fixed, non-symmetric start so that no eigenvector is missed by construction
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.1 * ((i * 7919 % 97) as f64) / 97.0);
    v /= v.norm();
    let mut lambda = 0.0;
    for _ in 0..10_000 {
        let w = m * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return Ok(0.0);
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - lambda).abs() <= 1e-10 * next.abs() {
            return Ok(next.max(norm));
        }
        lambda = next;
    }
    Ok(lambda)
}

/// Exact minimiser for the ℓ^q embedding: `x = S_τ(y)` where τ is the
/// smallest threshold at which the residual `clip(y, τ)` balances α.
fn closed_form(prob: &TikhonovProblem<'_>) -> (Vec<f64>, SolveDiagnostics) {
    let q = prob.op.q().expect("embedding carries q");
    let p = prob.p.value();
    let y = prob.y_delta.as_slice();
    let alpha = prob.alpha;
    let tau = threshold(y, alpha, p, q);
    let x = soft_threshold(y, tau);
    let kkt = embedding_kkt(y, &x, tau, alpha, p, q);
    let objective = prob.objective(&x);
    let support_size = x.iter().filter(|v| **v != 0.0).count();
    (
        x,
        SolveDiagnostics {
            iterations: 0,
            final_objective: objective,
            kkt_residual: kkt,
            kkt_floor: 0.0,
            support_size,
            method: SolveMethod::ClosedForm,
            checkpoints: vec![objective],
        },
    )
}

fn clip_norm(y: &[f64], tau: f64, q: f64) -> f64 {
    let c: Vec<f64> = y.iter().map(|v| v.abs().min(tau)).collect();
    lq_norm(&c, q)
}

/// True when the data-fit gradient at `S_τ(y)` is still below α, i.e. the
/// threshold must grow.
fn threshold_too_small(y: &[f64], tau: f64, alpha: f64, p: f64, q: f64) -> bool {
    if q.is_infinite() {
        let above = y.iter().filter(|v| v.abs() > tau).count() as f64;
        return above * alpha > p * tau.powf(p - 1.0);
    }
    let nc = clip_norm(y, tau, q);
    if nc == 0.0 {
        return true;
    }
    p * nc.powf(p - 1.0) * (tau / nc).powf(q - 1.0) < alpha
}

fn threshold(y: &[f64], alpha: f64, p: f64, q: f64) -> f64 {
    let ymax = y.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
    if ymax == 0.0 {
        return 0.0;
    }
    if threshold_too_small(y, ymax, alpha, p, q) {
        return ymax;
    }
    if p == 1.0 {
        // as τ → 0 the balance tends to α·|supp y|^{1/q'} against 1
        let s = y.iter().filter(|v| **v != 0.0).count() as f64;
        let limit = if q.is_infinite() {
            1.0 / s
        } else {
            s.powf(-(q - 1.0) / q)
        };
        if alpha <= limit {
            return 0.0;
        }
    }
    let (mut lo, mut hi) = (0.0f64, ymax);
    while hi - lo > 4.0 * f64::EPSILON * hi {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if threshold_too_small(y, mid, alpha, p, q) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // snap onto a data magnitude when the root sits on a jump
    y.iter()
        .map(|v| v.abs())
        .find(|&a| (a - hi).abs() <= 8.0 * f64::EPSILON * hi)
        .unwrap_or(hi)
}

fn embedding_kkt(y: &[f64], x: &[f64], tau: f64, alpha: f64, p: f64, q: f64) -> f64 {
    let r: Vec<f64> = y.iter().zip(x).map(|(a, b)| a - b).collect();
    let rn = lq_norm(&r, q);
    if rn == 0.0 {
        // x = y: need α·‖sgn y‖_{q'} <= 1 (p = 1) which the threshold rule ensures
        let s = y.iter().filter(|v| **v != 0.0).count() as f64;
        let dual = if q.is_infinite() { s } else { s.powf((q - 1.0) / q) };
        return if p == 1.0 {
            (alpha * dual - 1.0).max(0.0) / alpha
        } else {
            0.0
        };
    }
    if q.is_infinite() {
        let tol = 8.0 * f64::EPSILON * tau.max(f64::MIN_POSITIVE);
        let above = y.iter().filter(|v| v.abs() > tau + tol).count() as f64;
        let at_least = y.iter().filter(|v| v.abs() >= tau - tol).count() as f64;
        let level = p * tau.powf(p - 1.0);
        return ((above * alpha - level).max(0.0)).max((level - at_least * alpha).max(0.0)) / alpha;
    }
    // gradient of ‖r‖_q^p is p ‖r‖^{p−q} |r_k|^{q−1} sgn r_k
    let scale = p * rn.powf(p - q);
    r.iter()
        .zip(x)
        .map(|(&rk, &xk)| {
            let w = scale * rk.abs().powf(q - 1.0) * rk.signum();
            if xk == 0.0 {
                (w.abs() - alpha).max(0.0) / alpha
            } else {
                (w - alpha * xk.signum()).abs() / alpha
            }
        })
        .fold(0.0, f64::max)
}

/// Smallest α for which `x = 0` minimises the functional.
pub fn zero_threshold(op: &ForwardOperator, y: &DataVector, p: Exponent) -> Result<f64> {
    if op.kind() == OperatorKind::LqEmbedding {
        let q = op.q().expect("embedding carries q");
        let p = p.value();
        let ymax = y.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
        if ymax == 0.0 {
            return Ok(0.0);
        }
        if q.is_infinite() {
            let at_max = y.iter().filter(|v| v.abs() == ymax).count() as f64;
            return Ok(p * ymax.powf(p - 1.0) / at_max);
        }
        let yn = lq_norm(y.as_slice(), q);
        return Ok(p * yn.powf(p - q) * ymax.powf(q - 1.0));
    }
    if op.is_euclidean() && p == Exponent::Two {
        return Ok(2.0 * op.matrix().tr_mul(y).amax());
    }
    Err(Error::UnsupportedProblem(
        "zero threshold for this operator and exponent".into(),
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "kebab-case")]
pub enum AlphaRule {
    /// α = κ δ.
    APriori {
        #[serde(default = "default_kappa")]
        kappa: f64,
    },
    /// Largest α on the grid `α₀ ratio^j` with `‖A x_α − y^δ‖ <= τ δ`.
    Discrepancy {
        #[serde(default = "default_tau")]
        tau: f64,
        #[serde(default = "default_ratio")]
        ratio: f64,
        #[serde(default = "default_alpha_min")]
        alpha_min: f64,
    },
}

fn default_kappa() -> f64 {
    1.0
}
fn default_tau() -> f64 {
    1.5
}
fn default_ratio() -> f64 {
    0.8
}
fn default_alpha_min() -> f64 {
    ALPHA_FLOOR
}

impl Default for AlphaRule {
    fn default() -> Self {
        AlphaRule::APriori { kappa: 1.0 }
    }
}

impl AlphaRule {
    pub fn discrepancy() -> Self {
        AlphaRule::Discrepancy {
            tau: default_tau(),
            ratio: default_ratio(),
            alpha_min: default_alpha_min(),
        }
    }
}

pub fn choose_alpha(
    rule: &AlphaRule,
    delta: f64,
    op: &ForwardOperator,
    y_delta: &DataVector,
    p: Exponent,
    opts: &SolverOptions,
) -> Result<f64> {
    if !(delta >= 0.0) {
        return Err(Error::InvalidParameter(format!(
            "delta must be nonnegative, got {delta}"
        )));
    }
    match *rule {
        AlphaRule::APriori { kappa } => {
            if !(kappa > 0.0) {
                return Err(Error::InvalidParameter(format!("kappa must be positive, got {kappa}")));
            }
            Ok(if delta == 0.0 { ALPHA_FLOOR } else { kappa * delta })
        }
        AlphaRule::Discrepancy { tau, ratio, alpha_min } => {
            if delta == 0.0 {
                return Err(Error::InvalidParameter(
                    "the discrepancy principle needs delta > 0".into(),
                ));
            }
            if !(ratio > 0.0 && ratio < 1.0) || !(tau > 0.0) || !(alpha_min > 0.0) {
                return Err(Error::InvalidParameter(
                    "discrepancy needs tau > 0, 0 < ratio < 1, alpha_min > 0".into(),
                ));
            }
            let hi = zero_threshold(op, y_delta, p)?.max(alpha_min);
            let mut alpha = hi;
            let mut warm: Option<Vec<f64>> = None;
            while alpha >= alpha_min {
                let prob = TikhonovProblem::new(op, y_delta.clone(), alpha, p)?;
                let (x, _) = solve_tikhonov_from(&prob, opts, warm.as_deref())?;
                if prob.residual_norm(x.coeffs()) <= tau * delta {
                    return Ok(alpha);
                }
                warm = Some(x.into_coeffs());
                alpha *= ratio;
            }
            Err(Error::DiscrepancyExhausted { lo: alpha_min, hi })
        }
    }
}
