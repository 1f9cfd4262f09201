//! The concave rate function φ and sampling checks of the variational
//! inequality
//!
//! ```text
//! β ‖x − x†‖₁ ≤ ‖x‖₁ − ‖x†‖₁ + φ(‖Ax − Ax†‖_Y)   for all x.
//! ```
//!
//! φ is the minimum of the affine functions `2 tailₙ + 2 γₙ t / (1 + c)`,
//! held as its lower envelope so evaluation is a binary search.

use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificates::GammaTable;
use crate::error::{Error, Result};
use crate::operator::ForwardOperator;
use crate::seeding::job_rng;
use crate::sequence::{project, IndexSetFamily, TruncatedSequence};

/// Absolute slack tolerance for the variational inequality.
pub const TOL_VI: f64 = 1e-9;

/// `β = (1 − c) / (1 + c)`.
pub fn compute_beta(c: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&c) {
        return Err(Error::InvalidC(c));
    }
    Ok((1.0 - c) / (1.0 + c))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub n: usize,
    pub tail: f64,
    pub gamma: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Breakpoint {
    /// Left end of the interval on which `active_n` attains the minimum.
    pub t: f64,
    pub phi: f64,
    pub active_n: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RateFunction {
    pub points: Vec<RatePoint>,
    pub c: f64,
    pub family: IndexSetFamily,
    // (start, intercept, slope, n) of each envelope piece, starts increasing
    envelope: Vec<(f64, f64, f64, usize)>,
}

impl RateFunction {
    pub fn eval(&self, t: f64) -> f64 {
        debug_assert!(t >= 0.0);
        let i = self.envelope.partition_point(|piece| piece.0 <= t).saturating_sub(1);
        let (_, a, b, _) = self.envelope[i];
        a + b * t
    }

    /// Index n attaining the minimum at `t`.
    pub fn active_n(&self, t: f64) -> usize {
        let i = self.envelope.partition_point(|piece| piece.0 <= t).saturating_sub(1);
        self.envelope[i].3
    }

    pub fn breakpoints(&self) -> Vec<Breakpoint> {
        self.envelope
            .iter()
            .map(|&(t, a, b, n)| Breakpoint {
                t,
                phi: a + b * t,
                active_n: n,
            })
            .collect()
    }

    /// The affine pieces `(n, intercept, slope)` before taking the minimum.
    pub fn lines(&self) -> impl Iterator<Item = (usize, f64, f64)> + '_ {
        let scale = 2.0 / (1.0 + self.c);
        self.points.iter().map(move |p| (p.n, 2.0 * p.tail, scale * p.gamma))
    }
}

/// Builds `φ(t) = 2 min_n (tailₙ + γₙ t / (1 + c))` over the entries of the
/// table, with tails taken according to the table's family.
pub fn build_phi(xdag: &TruncatedSequence, gammas: &GammaTable) -> Result<RateFunction> {
    if gammas.entries.is_empty() {
        return Err(Error::EmptyGammaTable);
    }
    let c = gammas.c_used;
    if !(0.0..1.0).contains(&c) {
        return Err(Error::InvalidC(c));
    }
    let points: Vec<RatePoint> = gammas
        .entries
        .iter()
        .map(|e| RatePoint {
            n: e.n,
            tail: gammas.family.tail(xdag, e.n.min(xdag.len())),
            gamma: e.gamma,
        })
        .collect();
    if let Some(p) = points.iter().find(|p| !(p.gamma > 0.0 && p.gamma.is_finite())) {
        return Err(Error::InvalidParameter(format!(
            "gamma_{} = {} is not positive",
            p.n, p.gamma
        )));
    }

    let scale = 2.0 / (1.0 + c);
    let mut lines: Vec<(f64, f64, usize)> = points.iter().map(|p| (2.0 * p.tail, scale * p.gamma, p.n)).collect();
    // steepest first; equal slopes keep the lower intercept, then the smaller n
    lines.sort_by(|x, y| y.1.total_cmp(&x.1).then(x.0.total_cmp(&y.0)).then(x.2.cmp(&y.2)));
    lines.dedup_by(|later, earlier| later.1 == earlier.1);

    let mut env: Vec<(f64, f64, f64, usize)> = Vec::with_capacity(lines.len());
    for (a, b, n) in lines {
        let mut start = 0.0;
        while let Some(&(top_start, ta, tb, _)) = env.last() {
            // the flatter line wins for t beyond the crossing
            let cross = (a - ta) / (tb - b);
            if cross <= top_start {
                env.pop();
                start = 0.0;
            } else {
                start = cross;
                break;
            }
        }
        env.push((start, a, b, n));
    }
    Ok(RateFunction {
        points,
        c,
        family: gammas.family,
        envelope: env,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleKind {
    Exact,
    Zero,
    SignFlip,
    Gaussian,
    Truncation,
    Scaling,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct ViSampler {
    pub samples: usize,
    pub seed: u64,
    /// Perturbation scales are log-uniform in `[min_scale, max_scale] · ‖x†‖₁`.
    pub min_scale: f64,
    pub max_scale: f64,
}

impl Default for ViSampler {
    fn default() -> Self {
        Self {
            samples: 10_000,
            seed: 0,
            min_scale: 1e-6,
            max_scale: 1e1,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ViReport {
    pub beta: f64,
    pub samples_tested: usize,
    pub worst_slack: f64,
    pub worst_kind: SampleKind,
    pub violating_x: Option<TruncatedSequence>,
    pub seed: u64,
    pub tol_vi: f64,
}

impl ViReport {
    pub fn holds(&self) -> bool {
        self.worst_slack >= -self.tol_vi
    }
}

/// `‖x‖₁ − ‖x†‖₁ + φ(‖Ax − Ax†‖_Y) − β ‖x − x†‖₁`.
pub fn vi_slack(
    op: &ForwardOperator,
    xdag: &TruncatedSequence,
    beta: f64,
    phi: &RateFunction,
    x: &TruncatedSequence,
) -> Result<f64> {
    let diff = x.sub(xdag);
    let misfit = op.y_norm(&op.apply(&diff)?)?;
    Ok(x.l1_norm() - xdag.l1_norm() + phi.eval(misfit) - beta * diff.l1_norm())
}

/// Evaluates the variational inequality on `x = x†`, `x = 0` and
/// `sampler.samples` random candidates cycling through sign flips, dense
/// Gaussian perturbations, support truncations `P_M x†` and rescalings.
pub fn check_vi(
    op: &ForwardOperator,
    xdag: &TruncatedSequence,
    beta: f64,
    phi: &RateFunction,
    sampler: &ViSampler,
) -> Result<ViReport> {
    if xdag.len() != op.domain_dim() {
        return Err(Error::DimensionMismatch {
            expected: op.domain_dim(),
            found: xdag.len(),
        });
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::InvalidParameter(format!("beta must lie in (0, 1], got {beta}")));
    }
    if !(sampler.min_scale > 0.0 && sampler.min_scale <= sampler.max_scale) {
        return Err(Error::InvalidParameter(
            "sampler scales must satisfy 0 < min <= max".into(),
        ));
    }
    let mut fixed = vec![
        (SampleKind::Exact, xdag.clone()),
        (
            SampleKind::Zero,
            TruncatedSequence::with_origin(vec![0.0; xdag.len()], xdag.index_origin()),
        ),
    ];
    let mut results: Vec<(f64, SampleKind, TruncatedSequence)> = fixed
        .drain(..)
        .map(|(kind, x)| vi_slack(op, xdag, beta, phi, &x).map(|s| (s, kind, x)))
        .collect::<Result<_>>()?;

    let sampled: Vec<(f64, SampleKind, TruncatedSequence)> = (0..sampler.samples)
        .into_par_iter()
        .map(|i| {
            let (kind, x) = draw_candidate(xdag, sampler, i);
            vi_slack(op, xdag, beta, phi, &x).map(|s| (s, kind, x))
        })
        .collect::<Result<_>>()?;
    results.extend(sampled);

    let mut worst = 0;
    for (i, r) in results.iter().enumerate() {
        if r.0 < results[worst].0 {
            worst = i;
        }
    }
    let (worst_slack, worst_kind, worst_x) = results.swap_remove(worst);
    Ok(ViReport {
        beta,
        samples_tested: sampler.samples + 2,
        worst_slack,
        worst_kind,
        violating_x: (worst_slack < -TOL_VI).then_some(worst_x),
        seed: sampler.seed,
        tol_vi: TOL_VI,
    })
}

fn draw_candidate(xdag: &TruncatedSequence, sampler: &ViSampler, i: usize) -> (SampleKind, TruncatedSequence) {
    let mut rng = job_rng(sampler.seed, &[i as u64]);
    let dim = xdag.len();
    let norm = if xdag.l1_norm() > 0.0 { xdag.l1_norm() } else { 1.0 };
    let log_lo = sampler.min_scale.ln();
    let log_hi = sampler.max_scale.ln();
    let scale = |rng: &mut rand_chacha::ChaCha8Rng| norm * (log_lo + (log_hi - log_lo) * rng.random::<f64>()).exp();

    match i % 4 {
        0 => {
            let mut x = xdag.clone();
            let support = xdag.support();
            if !support.is_empty() {
                let flips = rng.random_range(1..=support.len().min(3));
                for j in index::sample(&mut rng, support.len(), flips) {
                    let k = support[j];
                    let factor = if rng.random::<bool>() {
                        1.0
                    } else {
                        rng.random::<f64>() * 2.0
                    };
                    x.coeffs_mut()[k] *= -factor;
                }
            }
            if support.is_empty() || rng.random::<bool>() {
                let k = rng.random_range(0..dim);
                let v: f64 = rng.sample(StandardNormal);
                x.coeffs_mut()[k] += v * scale(&mut rng) / (1.0 + v.abs());
            }
            (SampleKind::SignFlip, x)
        }
        1 => {
            let g: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            let g1: f64 = g.iter().map(|v| v.abs()).sum();
            let s = scale(&mut rng) / g1.max(f64::MIN_POSITIVE);
            let coeffs = xdag.coeffs().iter().zip(&g).map(|(a, b)| a + s * b).collect();
            (
                SampleKind::Gaussian,
                TruncatedSequence::with_origin(coeffs, xdag.index_origin()),
            )
        }
        2 => {
            let m: Vec<usize> = if rng.random::<bool>() {
                (0..rng.random_range(0..=dim)).collect()
            } else {
                let size = rng.random_range(0..=dim);
                index::sample(&mut rng, dim, size).into_vec()
            };
            (SampleKind::Truncation, project(&m, xdag))
        }
        _ => {
            let s = -2.0 + 5.0 * rng.random::<f64>();
            (SampleKind::Scaling, xdag.scaled(s))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::certificates::{GammaTable, Method};
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn table(gammas: &[f64], c: f64, family: IndexSetFamily) -> GammaTable {
        GammaTable::new(family, gammas, c, Method::Analytic)
    }

    fn scan(phi: &RateFunction, t: f64) -> f64 {
        phi.lines().map(|(_, a, b)| a + b * t).fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn beta_values() {
        assert_eq!(compute_beta(0.0).unwrap(), 1.0);
        assert_relative_eq!(compute_beta(1.0 / 3.0).unwrap(), 0.5, epsilon = 1e-15);
        let mut prev = 1.0;
        for c in [0.5, 0.9, 0.99, 0.999999] {
            let b = compute_beta(c).unwrap();
            assert!(b < prev && b > 0.0);
            prev = b;
        }
        assert!(compute_beta(1.0).is_err());
        assert!(compute_beta(-0.1).is_err());
    }

    #[test]
    fn sparse_xdag_gives_linear_phi() {
        let xdag = TruncatedSequence::new(vec![1.0, -0.5, 0.25, 0.0, 0.0, 0.0]);
        let gammas: Vec<f64> = (1..=6).map(|n| (n as f64).sqrt()).collect();
        let phi = build_phi(&xdag, &table(&gammas, 0.2, IndexSetFamily::Prefix)).unwrap();
        assert_eq!(phi.eval(0.0), 0.0);
        let slope = 2.0 / 1.2 * 3f64.sqrt();
        for t in [1e-6, 1e-4, 1e-2] {
            assert_relative_eq!(phi.eval(t), slope * t, max_relative = 1e-14);
            let exhaustive = (1..=6)
                .map(|n| 2.0 * (IndexSetFamily::Prefix.tail(&xdag, n) + gammas[n - 1] * t / 1.2))
                .fold(f64::INFINITY, f64::min);
            assert_relative_eq!(phi.eval(t), exhaustive, max_relative = 1e-14);
            assert_eq!(phi.active_n(t), 3);
        }
    }

    #[test]
    fn zero_xdag_is_degenerate_but_valid() {
        let xdag = TruncatedSequence::zeros(4);
        let phi = build_phi(&xdag, &table(&[1.0, 2.0, 3.0, 4.0], 0.0, IndexSetFamily::AllSubsets)).unwrap();
        assert_eq!(phi.breakpoints().len(), 1);
        assert_eq!(phi.eval(3.0), 6.0);
    }

    #[test]
    fn power_decay_matches_scan() {
        let xdag = TruncatedSequence::new((1..=200).map(|k| (k as f64).powi(-2)).collect());
        let gammas: Vec<f64> = (1..=200).map(|n| (n as f64).sqrt()).collect();
        let phi = build_phi(&xdag, &table(&gammas, 0.0, IndexSetFamily::AllSubsets)).unwrap();
        for t in [1e-4, 1e-3, 1e-2] {
            assert!((phi.eval(t) - scan(&phi, t)).abs() <= 1e-12);
        }
    }

    #[test]
    fn empty_table_is_rejected() {
        let t = GammaTable::new(IndexSetFamily::Prefix, &[], 0.0, Method::Analytic);
        assert!(matches!(
            build_phi(&TruncatedSequence::zeros(3), &t),
            Err(Error::EmptyGammaTable)
        ));
    }

    #[test]
    fn vi_examples_on_identity() {
        let op = ForwardOperator::lq_embedding(8, 2.0).unwrap();
        let xdag = TruncatedSequence::new(vec![1.0, 0.0, -2.0, 0.0, 0.5, 0.0, 0.0, 0.0]);
        let gammas: Vec<f64> = (1..=8).map(|n| (n as f64).sqrt()).collect();
        let phi = build_phi(&xdag, &table(&gammas, 0.0, IndexSetFamily::AllSubsets)).unwrap();
        let beta = compute_beta(0.0).unwrap();

        assert_eq!(vi_slack(&op, &xdag, beta, &phi, &xdag).unwrap(), 0.0);

        let zero = TruncatedSequence::zeros(8);
        let direct =
            0.0 - xdag.l1_norm() + phi.eval(op.y_norm(&op.apply(&xdag).unwrap()).unwrap()) - beta * xdag.l1_norm();
        let slack = vi_slack(&op, &xdag, beta, &phi, &zero).unwrap();
        assert_eq!(slack, direct);
        assert!(slack >= 0.0);

        let rep = check_vi(
            &op,
            &xdag,
            beta,
            &phi,
            &ViSampler {
                samples: 10_000,
                seed: 3,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(rep.holds(), "{rep:?}");
        assert_eq!(rep.samples_tested, 10_002);
    }

    #[test]
    fn vi_detects_an_overoptimistic_phi() {
        let op = ForwardOperator::lq_embedding(6, 2.0).unwrap();
        let xdag = TruncatedSequence::new(vec![1.0, -1.0, 0.5, 0.0, 0.0, 0.0]);
        // far too small gammas
        let phi = build_phi(&xdag, &table(&[0.01; 6], 0.0, IndexSetFamily::AllSubsets)).unwrap();
        let rep = check_vi(
            &op,
            &xdag,
            1.0,
            &phi,
            &ViSampler {
                samples: 2_000,
                seed: 1,
                ..Default::default()
            },
        )
        .unwrap();
        assert!(!rep.holds());
        assert!(rep.violating_x.is_some());
    }

    proptest! {
        #[test]
        fn phi_is_monotone_concave_and_matches_scan(
            mags in prop::collection::vec(0.0f64..3.0, 1..30),
            incs in prop::collection::vec(0.0f64..2.0, 30),
            c in 0.0f64..0.95,
            prefix in any::<bool>(),
        ) {
            let n = mags.len();
            let xdag = TruncatedSequence::new(mags);
            let gammas: Vec<f64> = incs.iter().take(n).scan(0.1, |acc, d| { *acc += d; Some(*acc) }).collect();
            let family = if prefix { IndexSetFamily::Prefix } else { IndexSetFamily::AllSubsets };
            let phi = build_phi(&xdag, &table(&gammas, c, family)).unwrap();
            prop_assert_eq!(phi.eval(0.0), 0.0);
            let ts: Vec<f64> = (0..200).map(|i| 1e-3 * 1.06f64.powi(i) - 1e-3).collect();
            for w in ts.windows(2) {
                prop_assert!(phi.eval(w[0]) <= phi.eval(w[1]) + 1e-12);
                let mid = phi.eval(0.5 * (w[0] + w[1]));
                prop_assert!(mid >= 0.5 * (phi.eval(w[0]) + phi.eval(w[1])) - 1e-12);
                prop_assert!((phi.eval(w[0]) - scan(&phi, w[0])).abs() <= 1e-12 * (1.0 + scan(&phi, w[0])));
            }
        }

        #[test]
        fn all_subsets_phi_is_below_prefix_phi(mags in prop::collection::vec(-3.0f64..3.0, 1..20), t in 0.0f64..10.0) {
            let n = mags.len();
            let xdag = TruncatedSequence::new(mags);
            let gammas: Vec<f64> = (1..=n).map(|k| k as f64).collect();
            let all = build_phi(&xdag, &table(&gammas, 0.0, IndexSetFamily::AllSubsets)).unwrap();
            let pre = build_phi(&xdag, &table(&gammas, 0.0, IndexSetFamily::Prefix)).unwrap();
            prop_assert!(all.eval(t) <= pre.eval(t) + 1e-12);
        }
    }
}
