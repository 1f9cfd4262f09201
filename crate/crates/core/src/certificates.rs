//! Source elements η for the ℓ¹ source condition and the constants γₙ.
//!
//! For a sign pattern ξ on a support S the canonical source element is the
//! minimum-norm solution of `P_S A* η = ξ`. With a euclidean data norm this
//! is `η = A_S (A_Sᵀ A_S)⁻¹ ξ_S`; for the ℓ^q embedding it is ξ itself.
//! Maximising ‖η‖ over all admissible patterns gives the best constant γₙ,
//! which coincides with the restricted injectivity constant
//! `sup ‖x‖₁ / ‖Ax‖` over n-sparse x.

use itertools::Itertools;
use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::operator::{conjugate_exponent, lq_norm, DataVector, ForwardOperator, OperatorKind, YNorm};
use crate::seeding::job_rng;
use crate::sequence::{IndexSetFamily, Sign, SignPattern, TruncatedSequence};

/// Absolute tolerance for the equality conditions on the support.
pub const TOL_EQ: f64 = 1e-8;

/// Largest number of (support, sign) patterns a brute-force search visits.
pub const ENUMERATION_BUDGET: u128 = 1_000_000;

// squared sine of the angle between a column and the span of its
// predecessors below which a restricted Gram matrix counts as singular
const SINGULAR_ANGLE_SQ: f64 = 1e-14;

#[derive(Clone, Debug, Serialize)]
pub struct CertificateReport {
    pub xi: SignPattern,
    pub eta: Vec<f64>,
    pub eta_norm: f64,
    pub on_support_residual: f64,
    pub off_support_sup: f64,
    pub c_target: f64,
    pub passed: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Gamma {
    Finite(f64),
    /// Restricted injectivity fails on some admissible support.
    Unbounded,
}

impl Gamma {
    pub fn finite(self) -> Option<f64> {
        match self {
            Gamma::Finite(g) => Some(g),
            Gamma::Unbounded => None,
        }
    }
}

/// Outcome of an exhaustive search over sign patterns.
#[derive(Clone, Debug, Serialize)]
pub struct GammaSearch {
    pub n: usize,
    pub family: IndexSetFamily,
    pub gamma: Gamma,
    /// Maximising pattern, or a pattern on the first singular support.
    pub witness: SignPattern,
    /// Largest off-support sup-norm of `A* η` over all visited patterns.
    pub off_support_max: f64,
    pub patterns: u128,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Analytic,
    BruteForce,
    SmoothBasis,
    NonsmoothBasis,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Analytic => "analytic",
            Method::BruteForce => "brute-force",
            Method::SmoothBasis => "smooth-basis",
            Method::NonsmoothBasis => "nonsmooth-basis",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaEntry {
    pub n: usize,
    pub gamma: f64,
    pub method: Method,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GammaTable {
    pub family: IndexSetFamily,
    pub entries: Vec<GammaEntry>,
    pub c_used: f64,
    pub method: Method,
}

impl GammaTable {
    pub fn new(family: IndexSetFamily, gammas: &[f64], c_used: f64, method: Method) -> Self {
        let entries = gammas
            .iter()
            .enumerate()
            .map(|(i, &gamma)| GammaEntry {
                n: i + 1,
                gamma,
                method,
            })
            .collect();
        Self {
            family,
            entries,
            c_used,
            method,
        }
    }

    pub fn gamma(&self, n: usize) -> Option<f64> {
        self.entries.iter().find(|e| e.n == n).map(|e| e.gamma)
    }

    pub fn n_max(&self) -> usize {
        self.entries.iter().map(|e| e.n).max().unwrap_or(0)
    }

    pub fn is_nondecreasing(&self) -> bool {
        self.entries.windows(2).all(|w| w[0].gamma <= w[1].gamma)
    }
}

/// Minimum-norm source element for `xi`, with the residuals of the
/// equality and off-support conditions.
pub fn find_certificate(op: &ForwardOperator, xi: &SignPattern, c_target: f64) -> Result<CertificateReport> {
    find_certificate_with_tol(op, xi, c_target, TOL_EQ)
}

pub fn find_certificate_with_tol(
    op: &ForwardOperator,
    xi: &SignPattern,
    c_target: f64,
    tol_eq: f64,
) -> Result<CertificateReport> {
    check_c(c_target)?;
    let engine = Engine::new(op, "find_certificate")?;
    check_pattern(op, xi)?;
    let eta = match &engine {
        Engine::Embedding { dim, .. } => DVector::from_vec(xi.to_dense(*dim)),
        Engine::Euclidean { .. } => {
            let chol = restricted_cholesky(op.matrix(), xi.support())?;
            let w = chol.solve(&DVector::from_vec(xi.sign_values()));
            restricted_columns(op.matrix(), xi.support()) * w
        }
    };
    Ok(report_for(op, xi, eta, c_target, tol_eq))
}

/// Source element solving the full range condition `A* η = ξ` in the least
/// squares sense (minimum norm among minimisers). It passes with `c = 0`
/// exactly when ξ lies in the range of the adjoint.
pub fn find_exact_certificate(op: &ForwardOperator, xi: &SignPattern) -> Result<CertificateReport> {
    let engine = Engine::new(op, "find_exact_certificate")?;
    check_pattern(op, xi)?;
    let target = DVector::from_vec(xi.to_dense(op.domain_dim()));
    let eta = match engine {
        Engine::Embedding { .. } => target,
        Engine::Euclidean { .. } => op
            .matrix()
            .transpose()
            .svd(true, true)
            .solve(&target, f64::EPSILON)
            .map_err(|e| Error::InvalidParameter(e.into()))?,
    };
    Ok(report_for(op, xi, eta, 0.0, TOL_EQ))
}

fn report_for(
    op: &ForwardOperator,
    xi: &SignPattern,
    eta: DataVector,
    c_target: f64,
    tol_eq: f64,
) -> CertificateReport {
    let adj = op.adjoint(&eta).expect("eta has data dimension");
    let mut on = 0.0f64;
    let mut off = 0.0f64;
    let mut in_support = vec![false; op.domain_dim()];
    for (&k, s) in xi.support().iter().zip(xi.signs()) {
        in_support[k] = true;
        on = on.max((adj[k] - s.value()).abs());
    }
    for (k, v) in adj.iter().enumerate() {
        if !in_support[k] {
            off = off.max(v.abs());
        }
    }
    CertificateReport {
        xi: xi.clone(),
        eta_norm: op.dual_norm(&eta),
        eta: eta.as_slice().to_vec(),
        on_support_residual: on,
        off_support_sup: off,
        c_target,
        passed: on <= tol_eq && off <= c_target + tol_eq,
    }
}

/// Exhaustive search for γₙ over the family's sign patterns.
///
/// For `AllSubsets` every support of size `n` with every full sign pattern is
/// visited. For `Prefix` every nonzero pattern supported in the first `n`
/// positions is visited (sub-supports matter for the off-support constant).
pub fn brute_force_gamma(op: &ForwardOperator, n: usize, family: IndexSetFamily) -> Result<GammaSearch> {
    let engine = Engine::new(op, "brute_force_gamma")?;
    let dim = op.domain_dim();
    if n == 0 || n > dim {
        return Err(Error::InvalidParameter(format!("n = {n} outside 1..={dim}")));
    }
    let patterns = pattern_count(dim, n, family);
    if patterns > ENUMERATION_BUDGET {
        return Err(Error::BudgetExceeded {
            required: patterns,
            budget: ENUMERATION_BUDGET,
        });
    }
    let supports: Vec<Vec<usize>> = match family {
        IndexSetFamily::AllSubsets => (0..dim).combinations(n).collect(),
        IndexSetFamily::Prefix => {
            let mut s: Vec<Vec<usize>> = (1..=n).flat_map(|k| (0..n).combinations(k)).collect();
            s.sort();
            s
        }
    };

    let best = supports
        .par_iter()
        .map(|s| engine.search_support(op, s))
        .reduce_with(SupportBest::merge)
        .expect("at least one support");

    Ok(GammaSearch {
        n,
        family,
        gamma: best.gamma,
        witness: best.witness,
        off_support_max: best.off_support_max,
        patterns,
    })
}

/// Restricted injectivity constant `max ‖x‖₁ / ‖Ax‖` over x with at most
/// `n` nonzeros, computed on the primal side.
///
/// On each support the ratio is maximised inside the orthant of ξ by
/// `x = (RᵀR)⁻¹ ξ` where `A_S = QR`; the ratio is evaluated by applying
/// the operator to that candidate.
pub fn injectivity_gamma(op: &ForwardOperator, n: usize) -> Result<Gamma> {
    if !op.is_euclidean() {
        return Err(Error::UnsupportedNorm("injectivity_gamma"));
    }
    let dim = op.domain_dim();
    if n == 0 || n > dim {
        return Err(Error::InvalidParameter(format!("n = {n} outside 1..={dim}")));
    }
    let total: u128 = (1..=n).map(|k| binomial(dim, k) << k).sum();
    if total > ENUMERATION_BUDGET {
        return Err(Error::BudgetExceeded {
            required: total,
            budget: ENUMERATION_BUDGET,
        });
    }
    let supports: Vec<Vec<usize>> = (1..=n).flat_map(|k| (0..dim).combinations(k)).collect();
    let best = supports
        .par_iter()
        .map(|s| -> Option<f64> {
            let cols = restricted_columns(op.matrix(), s);
            let r = cols.clone().qr().r();
            let k = s.len();
            for i in 0..k {
                let col_norm = cols.column(i).norm();
                if r[(i, i)].abs() <= col_norm * SINGULAR_ANGLE_SQ.sqrt() {
                    return None;
                }
            }
            let rt = r.transpose();
            let mut best = 0.0f64;
            for bits in 0..(1u64 << k) {
                let xi = DVector::from_fn(k, |j, _| if bits >> (k - 1 - j) & 1 == 1 { 1.0 } else { -1.0 });
                let z = rt.solve_lower_triangular(&xi).expect("nonsingular R");
                let x_s = r.solve_upper_triangular(&z).expect("nonsingular R");
                let mut x = vec![0.0; dim];
                for (j, &pos) in s.iter().enumerate() {
                    x[pos] = x_s[j];
                }
                let ax = op.apply_slice(&x).expect("domain dimension");
                let ratio = x.iter().map(|v| v.abs()).sum::<f64>() / op.y_norm(&ax).expect("data dimension");
                best = best.max(ratio);
            }
            Some(best)
        })
        .collect::<Vec<_>>();
    let mut gamma = 0.0f64;
    for b in best {
        match b {
            None => return Ok(Gamma::Unbounded),
            Some(v) => gamma = gamma.max(v),
        }
    }
    Ok(Gamma::Finite(gamma))
}

#[derive(Clone, Debug, Serialize)]
pub struct InjectivityReport {
    pub n: usize,
    pub gamma: f64,
    pub samples: usize,
    pub violations: usize,
    /// Smallest observed `‖Ax‖_Y / ‖x‖₁`; the bound requires it `>= 1/γ`.
    pub worst_ratio: f64,
    pub worst_x: TruncatedSequence,
    /// Up to 16 violating samples in sampling order.
    pub violating: Vec<TruncatedSequence>,
    pub seed: u64,
}

/// Samples x with `1 <= |supp x| <= n` and checks `‖Ax‖_Y >= ‖x‖₁ / γ`.
pub fn check_restricted_injectivity(
    op: &ForwardOperator,
    n: usize,
    gamma: f64,
    samples: usize,
    seed: u64,
) -> Result<InjectivityReport> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidParameter(format!("gamma must be positive, got {gamma}")));
    }
    let dim = op.domain_dim();
    if n == 0 || n > dim {
        return Err(Error::InvalidParameter(format!("n = {n} outside 1..={dim}")));
    }
    if samples == 0 {
        return Err(Error::InvalidParameter("need at least one sample".into()));
    }
    let results: Vec<(f64, bool, Vec<f64>)> = (0..samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = job_rng(seed, &[i as u64]);
            let s = rng.random_range(1..=n);
            let mut x = vec![0.0; dim];
            for pos in index::sample(&mut rng, dim, s) {
                let mut v: f64 = rng.sample(StandardNormal);
                while v == 0.0 {
                    v = rng.sample(StandardNormal);
                }
                x[pos] = v;
            }
            let l1: f64 = x.iter().map(|v| v.abs()).sum();
            let ax = op.apply_slice(&x).expect("domain dimension");
            let norm = op.y_norm(&ax).expect("data dimension");
            let violated = l1 > gamma * norm * (1.0 + 1e-12);
            (norm / l1, violated, x)
        })
        .collect();

    let origin = op.index_origin();
    let mut worst = 0;
    for (i, r) in results.iter().enumerate() {
        if r.0 < results[worst].0 {
            worst = i;
        }
    }
    let violating: Vec<TruncatedSequence> = results
        .iter()
        .filter(|r| r.1)
        .take(16)
        .map(|r| TruncatedSequence::with_origin(r.2.clone(), origin))
        .collect();
    Ok(InjectivityReport {
        n,
        gamma,
        samples,
        violations: results.iter().filter(|r| r.1).count(),
        worst_ratio: results[worst].0,
        worst_x: TruncatedSequence::with_origin(results[worst].2.clone(), origin),
        violating,
        seed,
    })
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum SmoothBasisOutcome {
    Certified {
        table: GammaTable,
        /// ‖f^(k)‖ for each position k.
        f_norms: Vec<f64>,
    },
    /// `e^(k) = A* f` has no solution for this 0-based position.
    Failed { position: usize, residual: f64 },
}

/// Solves `min ‖A* f − e^(k)‖` for each of the first `k_max` positions and
/// accumulates `γₙ = Σ_{k<=n} ‖f^(k)‖` for the prefix family with `c = 0`.
pub fn smooth_basis_check(op: &ForwardOperator, k_max: usize) -> Result<SmoothBasisOutcome> {
    if !op.is_euclidean() {
        return Err(Error::UnsupportedNorm("smooth_basis_check"));
    }
    let dim = op.domain_dim();
    if k_max == 0 || k_max > dim {
        return Err(Error::InvalidParameter(format!("k_max = {k_max} outside 1..={dim}")));
    }
    let at = op.matrix().transpose();
    let svd = at.clone().svd(true, true);
    let mut f_norms = Vec::with_capacity(k_max);
    for k in 0..k_max {
        let e = DVector::from_fn(dim, |i, _| if i == k { 1.0 } else { 0.0 });
        let f = svd
            .solve(&e, f64::EPSILON)
            .map_err(|msg| Error::InvalidParameter(msg.into()))?;
        let residual = (&at * &f - e).norm();
        if residual > TOL_EQ {
            return Ok(SmoothBasisOutcome::Failed { position: k, residual });
        }
        f_norms.push(f.norm());
    }
    let gammas: Vec<f64> = f_norms
        .iter()
        .scan(0.0, |acc, v| {
            *acc += v;
            Some(*acc)
        })
        .collect();
    Ok(SmoothBasisOutcome::Certified {
        table: GammaTable::new(IndexSetFamily::Prefix, &gammas, 0.0, Method::SmoothBasis),
        f_norms,
    })
}

#[derive(Clone, Debug, Serialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum NonsmoothOutcome {
    Certified {
        n: usize,
        gamma: f64,
        c_est: f64,
        /// `f^(n,k)` for k = 1..n, in data space.
        sources: Vec<Vec<f64>>,
    },
    /// The interpolation conditions fail for this 0-based position.
    Unsolvable { position: usize },
    /// Off-block column sums reach one.
    ConstantTooLarge { n: usize, gamma: f64, c_est: f64 },
}

/// Minimum-norm `f^(n,k)` with `[A* f]_l = δ_kl` for `l <= n`, the off-block
/// constant `sup_{l>n} Σ_k |[A* f^(n,k)]_l|` and `γₙ = Σ_k ‖f^(n,k)‖`.
pub fn nonsmooth_basis_check(op: &ForwardOperator, n: usize) -> Result<NonsmoothOutcome> {
    if !op.is_euclidean() {
        return Err(Error::UnsupportedNorm("nonsmooth_basis_check"));
    }
    let dim = op.domain_dim();
    if n == 0 || n > dim {
        return Err(Error::InvalidParameter(format!("n = {n} outside 1..={dim}")));
    }
    let block: Vec<usize> = (0..n).collect();
    let chol = match restricted_cholesky(op.matrix(), &block) {
        Ok(c) => c,
        Err(_) => {
            return Ok(NonsmoothOutcome::Unsolvable {
                position: first_dependent_column(op.matrix(), &block),
            })
        }
    };
    let cols = restricted_columns(op.matrix(), &block);
    let mut sums = vec![0.0; dim];
    let mut gamma = 0.0;
    let mut sources = Vec::with_capacity(n);
    for k in 0..n {
        let e = DVector::from_fn(n, |i, _| if i == k { 1.0 } else { 0.0 });
        let f = &cols * chol.solve(&e);
        let adj = op.adjoint(&f)?;
        for l in 0..n {
            let want = if l == k { 1.0 } else { 0.0 };
            if (adj[l] - want).abs() > TOL_EQ {
                return Ok(NonsmoothOutcome::Unsolvable { position: k });
            }
        }
        for l in n..dim {
            sums[l] += adj[l].abs();
        }
        gamma += f.norm();
        sources.push(f.as_slice().to_vec());
    }
    let c_est = sums[n..].iter().copied().fold(0.0, f64::max);
    if c_est >= 1.0 {
        return Ok(NonsmoothOutcome::ConstantTooLarge { n, gamma, c_est });
    }
    Ok(NonsmoothOutcome::Certified {
        n,
        gamma,
        c_est,
        sources,
    })
}

/// γₙ = n^{1−1/q} (n for q = ∞) for the ℓ^q embedding, `c = 0`.
pub fn embedding_gamma(q: f64, n: usize) -> f64 {
    let n = n as f64;
    if q.is_infinite() {
        n
    } else {
        n.powf(1.0 - 1.0 / q)
    }
}

/// Restricted injectivity constant `(14/|E|)^{n−1}` of the Wiener operators.
pub fn wiener_gamma(measure: f64, n: usize) -> f64 {
    (14.0 / measure).powi(n as i32 - 1)
}

/// Picks a method that certifies the source condition for n = 1..=n_max and
/// returns its table.
///
/// Order: the analytic constants of the ℓ^q embedding; for euclidean dense
/// operators the brute-force minimum-norm certificates when they fit the
/// enumeration budget and meet `c_target`, then the smooth-basis range
/// condition (`c = 0`), then the nonsmooth-basis construction (prefix only).
pub fn assemble_assumption(
    op: &ForwardOperator,
    family: IndexSetFamily,
    n_max: usize,
    c_target: f64,
) -> Result<GammaTable> {
    check_c(c_target)?;
    let dim = op.domain_dim();
    if n_max == 0 || n_max > dim {
        return Err(Error::InvalidParameter(format!("n_max = {n_max} outside 1..={dim}")));
    }
    match op.kind() {
        OperatorKind::LqEmbedding => {
            let q = op.q().expect("embedding carries q");
            let gammas: Vec<f64> = (1..=n_max).map(|n| embedding_gamma(q, n)).collect();
            return Ok(GammaTable::new(family, &gammas, 0.0, Method::Analytic));
        }
        OperatorKind::WienerRestriction | OperatorKind::WienerMultiplication => {
            return Err(Error::NotCertified {
                n_max,
                reason: "only the restricted injectivity bound (14/|E|)^(n-1) is available; \
                         no off-support constant is known for the Wiener operators"
                    .into(),
            })
        }
        OperatorKind::DenseMatrix if !op.is_euclidean() => return Err(Error::UnsupportedNorm("assemble_assumption")),
        OperatorKind::DenseMatrix => {}
    }

    let mut reasons = Vec::new();

    let total: u128 = (1..=n_max).map(|n| pattern_count(dim, n, family)).sum();
    if total <= ENUMERATION_BUDGET {
        let mut gammas = Vec::with_capacity(n_max);
        let mut c = 0.0f64;
        let mut ok = true;
        for n in 1..=n_max {
            let search = brute_force_gamma(op, n, family)?;
            match search.gamma {
                Gamma::Finite(g) => gammas.push(g),
                Gamma::Unbounded => {
                    reasons.push(format!("brute force: singular support {:?}", search.witness.support()));
                    ok = false;
                    break;
                }
            }
            c = c.max(search.off_support_max);
        }
        if ok && c <= c_target {
            return Ok(GammaTable::new(family, &gammas, c, Method::BruteForce));
        }
        if ok {
            reasons.push(format!("brute force: off-support constant {c} exceeds {c_target}"));
        }
    } else {
        reasons.push(format!("brute force: {total} patterns exceed the budget"));
    }

    let smooth_k = match family {
        IndexSetFamily::Prefix => n_max,
        IndexSetFamily::AllSubsets => dim,
    };
    match smooth_basis_check(op, smooth_k)? {
        SmoothBasisOutcome::Certified { table, f_norms } => {
            return Ok(match family {
                IndexSetFamily::Prefix => table,
                IndexSetFamily::AllSubsets => {
                    // any support of size n: η = Σ ξ_k f^(k) is bounded by the n largest norms
                    let mut sorted = f_norms;
                    sorted.sort_by(|a, b| b.total_cmp(a));
                    let gammas: Vec<f64> = (1..=n_max).map(|n| sorted[..n].iter().sum()).collect();
                    GammaTable::new(family, &gammas, 0.0, Method::SmoothBasis)
                }
            });
        }
        SmoothBasisOutcome::Failed { position, .. } => {
            reasons.push(format!("smooth basis: e^({position}) not in the range of A*"));
        }
    }

    if family == IndexSetFamily::Prefix {
        let mut gammas = Vec::with_capacity(n_max);
        let mut c = 0.0f64;
        for n in 1..=n_max {
            match nonsmooth_basis_check(op, n)? {
                NonsmoothOutcome::Certified { gamma, c_est, .. } => {
                    gammas.push(gamma);
                    c = c.max(c_est);
                }
                other => {
                    reasons.push(format!("nonsmooth basis at n = {n}: {other:?}"));
                    break;
                }
            }
        }
        if gammas.len() == n_max && c <= c_target {
            return Ok(GammaTable::new(family, &gammas, c, Method::NonsmoothBasis));
        }
    }

    Err(Error::NotCertified {
        n_max,
        reason: reasons.join("; "),
    })
}

enum Engine {
    Euclidean { gram: DMatrix<f64> },
    Embedding { dim: usize, q: f64 },
}

struct SupportBest {
    gamma: Gamma,
    value: f64,
    witness: SignPattern,
    off_support_max: f64,
}

impl SupportBest {
    fn merge(a: SupportBest, b: SupportBest) -> SupportBest {
        let off = a.off_support_max.max(b.off_support_max);
        let a_wins = match (a.gamma, b.gamma) {
            (Gamma::Unbounded, Gamma::Unbounded) => a.witness <= b.witness,
            (Gamma::Unbounded, _) => true,
            (_, Gamma::Unbounded) => false,
            _ => a.value > b.value || (a.value == b.value && a.witness <= b.witness),
        };
        let mut w = if a_wins { a } else { b };
        w.off_support_max = off;
        w
    }
}

impl Engine {
    fn new(op: &ForwardOperator, what: &'static str) -> Result<Self> {
        if op.kind() == OperatorKind::LqEmbedding {
            return Ok(Engine::Embedding {
                dim: op.domain_dim(),
                q: op.q().expect("embedding carries q"),
            });
        }
        match op.norm_kind() {
            n if n.is_euclidean() => Ok(Engine::Euclidean {
                gram: op.matrix().tr_mul(op.matrix()),
            }),
            YNorm::Lq(_) | YNorm::SupGrid | YNorm::Euclidean => Err(Error::UnsupportedNorm(what)),
        }
    }

    fn search_support(&self, op: &ForwardOperator, support: &[usize]) -> SupportBest {
        let k = support.len();
        let pattern = |bits: u64| {
            SignPattern::new(
                support
                    .iter()
                    .enumerate()
                    .map(|(j, &pos)| {
                        (
                            pos,
                            if bits >> (k - 1 - j) & 1 == 1 {
                                Sign::Plus
                            } else {
                                Sign::Minus
                            },
                        )
                    })
                    .collect(),
            )
        };
        let signs = |bits: u64| DVector::from_fn(k, |j, _| if bits >> (k - 1 - j) & 1 == 1 { 1.0 } else { -1.0 });

        match self {
            Engine::Embedding { dim, q } => {
                let qc = conjugate_exponent(*q);
                let mut best_value = f64::NEG_INFINITY;
                let mut best_bits = 0;
                for bits in 0..(1u64 << k) {
                    let value = lq_norm(signs(bits).as_slice(), qc);
                    if value > best_value {
                        best_value = value;
                        best_bits = bits;
                    }
                }
                let _ = dim;
                SupportBest {
                    gamma: Gamma::Finite(best_value),
                    value: best_value,
                    witness: pattern(best_bits),
                    off_support_max: 0.0,
                }
            }
            Engine::Euclidean { gram } => {
                let chol = match restricted_cholesky(op.matrix(), support) {
                    Ok(c) => c,
                    Err(_) => {
                        return SupportBest {
                            gamma: Gamma::Unbounded,
                            value: f64::INFINITY,
                            witness: pattern((1u64 << k) - 1),
                            off_support_max: f64::INFINITY,
                        }
                    }
                };
                let dim = gram.nrows();
                let outside: Vec<usize> = (0..dim).filter(|l| !support.contains(l)).collect();
                let cross = DMatrix::from_fn(outside.len(), k, |i, j| gram[(outside[i], support[j])]);
                let mut best_value = f64::NEG_INFINITY;
                let mut best_bits = 0;
                let mut off_max = 0.0f64;
                for bits in 0..(1u64 << k) {
                    let xi = signs(bits);
                    let w = chol.solve(&xi);
                    let value = xi.dot(&w).max(0.0).sqrt();
                    if value > best_value {
                        best_value = value;
                        best_bits = bits;
                    }
                    if !outside.is_empty() {
                        off_max = off_max.max((&cross * &w).amax());
                    }
                }
                SupportBest {
                    gamma: Gamma::Finite(best_value),
                    value: best_value,
                    witness: pattern(best_bits),
                    off_support_max: off_max,
                }
            }
        }
    }
}

fn check_c(c: f64) -> Result<()> {
    if (0.0..1.0).contains(&c) {
        Ok(())
    } else {
        Err(Error::InvalidC(c))
    }
}

fn check_pattern(op: &ForwardOperator, xi: &SignPattern) -> Result<()> {
    if xi.is_empty() {
        return Err(Error::InvalidParameter("sign pattern has empty support".into()));
    }
    if let Some(&k) = xi.support().last() {
        if k >= op.domain_dim() {
            return Err(Error::DimensionMismatch {
                expected: op.domain_dim(),
                found: k + 1,
            });
        }
    }
    Ok(())
}

fn restricted_columns(a: &DMatrix<f64>, support: &[usize]) -> DMatrix<f64> {
    a.select_columns(support)
}

fn restricted_cholesky(a: &DMatrix<f64>, support: &[usize]) -> Result<Cholesky<f64, Dyn>> {
    let cols = restricted_columns(a, support);
    let gram = cols.tr_mul(&cols);
    let singular = || Error::SingularSupport {
        support: support.to_vec(),
    };
    let chol = Cholesky::new(gram.clone()).ok_or_else(singular)?;
    let l = chol.l_dirty();
    for i in 0..support.len() {
        let g = gram[(i, i)];
        if g <= 0.0 || l[(i, i)] * l[(i, i)] <= SINGULAR_ANGLE_SQ * g {
            return Err(singular());
        }
    }
    Ok(chol)
}

fn first_dependent_column(a: &DMatrix<f64>, support: &[usize]) -> usize {
    (1..=support.len())
        .find(|&k| restricted_cholesky(a, &support[..k]).is_err())
        .map_or(0, |k| support[k - 1])
}

fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u128, |acc, i| acc * (n - i) as u128 / (i as u128 + 1))
}

fn pattern_count(dim: usize, n: usize, family: IndexSetFamily) -> u128 {
    match family {
        IndexSetFamily::AllSubsets => binomial(dim, n).saturating_mul(1u128 << n.min(127)),
        IndexSetFamily::Prefix => 3u128.saturating_pow(n as u32) - 1,
    }
}
