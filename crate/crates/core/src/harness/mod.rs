//! Rate experiments: synthesize noisy data, sweep δ, solve, and compare the
//! measured ℓ¹ error against φ(δ).

mod examples;
mod nazarov;
mod output;

pub use examples::{reproduce_example, Bundle, ExampleName};
pub use nazarov::{nazarov_check, NazarovConfig, NazarovReport};
pub use output::{
    default_t_grid, gamma_rows, phi_rows, write_json, GammaRow, OutputFormat, PhiRow, Table, SCHEMA_VERSION,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificates::{assemble_assumption, GammaTable, Method};
use crate::error::{Error, Result};
use crate::operator::{DataVector, ForwardOperator, OperatorConfig, QValue};
use crate::rate::{build_phi, RateFunction};
use crate::seeding::derive_seed;
use crate::sequence::{IndexSetFamily, TruncatedSequence};
use crate::solver::{choose_alpha, solve_tikhonov, AlphaRule, Exponent, SolveMethod, SolverOptions, TikhonovProblem};

/// Returns `y + e` with `‖e‖_Y = δ`: a Gaussian direction on the observed
/// rows, rescaled in the operator's data norm.
pub fn synthesize_noise(op: &ForwardOperator, y: &DataVector, delta: f64, seed: u64) -> Result<DataVector> {
    if !(delta >= 0.0) || !delta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "delta must be finite and nonnegative, got {delta}"
        )));
    }
    if y.len() != op.data_dim() {
        return Err(Error::DimensionMismatch {
            expected: op.data_dim(),
            found: y.len(),
        });
    }
    if delta == 0.0 {
        return Ok(y.clone());
    }
    let rows = op.observed_rows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let e = DataVector::from_fn(y.len(), |i, _| if rows[i] { rng.sample(StandardNormal) } else { 0.0 });
        let norm = op.y_norm(&e)?;
        if norm > 0.0 {
            return Ok(y + e * (delta / norm));
        }
    }
}

/// The exact solution of an experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum XdagSpec {
    Explicit(Vec<f64>),
    Tagged(XdagKind),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum XdagKind {
    /// Values at the given 0-based positions, zero elsewhere.
    Sparse {
        support: Vec<usize>,
        values: Vec<f64>,
    },
    /// `x_k = k^{−μ}` for `k = 1..=N`.
    PowerDecay {
        mu: f64,
        #[serde(default, alias = "N")]
        n: Option<usize>,
    },
    Explicit {
        values: Vec<f64>,
    },
}

impl XdagSpec {
    pub fn build(&self, dim: usize, index_origin: i64) -> Result<TruncatedSequence> {
        let coeffs = match self {
            XdagSpec::Explicit(values) | XdagSpec::Tagged(XdagKind::Explicit { values }) => values.clone(),
            XdagSpec::Tagged(XdagKind::Sparse { support, values }) => {
                if support.len() != values.len() {
                    return Err(Error::InvalidParameter(
                        "sparse xdag needs one value per support index".into(),
                    ));
                }
                let mut x = vec![0.0; dim];
                for (&k, &v) in support.iter().zip(values) {
                    if k >= dim {
                        return Err(Error::InvalidParameter(format!("support index {k} outside 0..{dim}")));
                    }
                    x[k] = v;
                }
                x
            }
            XdagSpec::Tagged(XdagKind::PowerDecay { mu, n }) => {
                let len = n.unwrap_or(dim);
                (1..=len).map(|k| (k as f64).powf(-mu)).collect()
            }
        };
        if coeffs.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: coeffs.len(),
            });
        }
        if coeffs.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("xdag has non-finite entries".into()));
        }
        Ok(TruncatedSequence::with_origin(coeffs, index_origin))
    }
}

/// Geometric grid from `max` down to `min`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeltaGrid {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Default for DeltaGrid {
    fn default() -> Self {
        Self {
            min: 1e-4,
            max: 1e-1,
            count: 8,
        }
    }
}

impl DeltaGrid {
    pub fn values(&self) -> Result<Vec<f64>> {
        if !(self.min > 0.0 && self.min.is_finite() && self.max.is_finite()) || self.count == 0 {
            return Err(Error::InvalidParameter(
                "delta grid needs 0 < min, finite max and count >= 1".into(),
            ));
        }
        if self.count == 1 {
            return Ok(vec![self.max]);
        }
        if !(self.max > self.min) {
            return Err(Error::InvalidParameter("delta grid needs max > min".into()));
        }
        let ratio = (self.min / self.max).ln() / (self.count - 1) as f64;
        let mut v: Vec<f64> = (0..self.count).map(|i| self.max * (ratio * i as f64).exp()).collect();
        v[self.count - 1] = self.min;
        Ok(v)
    }
}

/// Constants supplied by hand instead of being computed by the certificates
/// module.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyticGammas {
    pub gammas: Vec<f64>,
    #[serde(default)]
    pub c: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub operator: OperatorConfig,
    pub xdag: XdagSpec,
    #[serde(default = "default_family")]
    pub family: IndexSetFamily,
    #[serde(default = "default_c_target")]
    pub c_target: f64,
    /// Largest sparsity level in the γ table; defaults to the dimension.
    #[serde(default)]
    pub n_max: Option<usize>,
    #[serde(default)]
    pub gammas: Option<AnalyticGammas>,
    #[serde(default)]
    pub delta_grid: DeltaGrid,
    #[serde(default = "default_trials")]
    pub trials: usize,
    #[serde(default)]
    pub alpha_rule: AlphaRule,
    #[serde(default = "default_p")]
    pub p: Exponent,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub solver: SolverOptions,
}

fn default_family() -> IndexSetFamily {
    IndexSetFamily::AllSubsets
}
fn default_c_target() -> f64 {
    0.5
}
fn default_trials() -> usize {
    5
}
fn default_p() -> Exponent {
    Exponent::Two
}

impl ExperimentConfig {
    pub fn new(operator: OperatorConfig, xdag: XdagSpec) -> Self {
        Self {
            operator,
            xdag,
            family: default_family(),
            c_target: default_c_target(),
            n_max: None,
            gammas: None,
            delta_grid: DeltaGrid::default(),
            trials: default_trials(),
            alpha_rule: AlphaRule::default(),
            p: default_p(),
            seed: 0,
            solver: SolverOptions::default(),
        }
    }

    /// Sparse x† observed through the ℓ² embedding of dimension 50.
    pub fn sparse_preset() -> Self {
        Self::new(
            OperatorConfig::LqEmbedding {
                dim: 50,
                q: QValue::Number(2.0),
            },
            XdagSpec::Tagged(XdagKind::Sparse {
                support: vec![0, 3, 9, 20, 41],
                values: vec![1.0, -0.8, 0.5, 2.0, -0.3],
            }),
        )
    }

    /// `x†_k = k^{−2}`, `k = 1..=200`, observed through the ℓ² embedding.
    pub fn power_decay_preset() -> Self {
        Self::new(
            OperatorConfig::LqEmbedding {
                dim: 200,
                q: QValue::Number(2.0),
            },
            XdagSpec::Tagged(XdagKind::PowerDecay { mu: 2.0, n: Some(200) }),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::InvalidParameter("trials must be at least 1".into()));
        }
        self.delta_grid.values()?;
        Ok(())
    }

    /// Operator, x† and the γ table of this configuration.
    pub fn setup(&self) -> Result<(ForwardOperator, TruncatedSequence, GammaTable)> {
        let op = ForwardOperator::from_config(&self.operator)?;
        let xdag = self.xdag.build(op.domain_dim(), op.index_origin())?;
        let table = match &self.gammas {
            Some(g) => {
                if g.gammas.is_empty() {
                    return Err(Error::EmptyGammaTable);
                }
                GammaTable::new(self.family, &g.gammas, g.c, Method::Analytic)
            }
            None => {
                let n_max = self.n_max.unwrap_or(op.domain_dim()).min(op.domain_dim());
                assemble_assumption(&op, self.family, n_max, self.c_target)?
            }
        };
        Ok((op, xdag, table))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub schema_version: u32,
    pub delta_index: usize,
    pub delta: f64,
    pub trial: usize,
    pub alpha: Option<f64>,
    pub error_l1: Option<f64>,
    pub residual: Option<f64>,
    pub phi_of_delta: f64,
    pub iterations: Option<usize>,
    pub kkt_residual: Option<f64>,
    pub support_size: Option<usize>,
    pub method: Option<SolveMethod>,
    /// `ok`, or a short failure marker.
    pub status: String,
}

impl ExperimentRecord {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DeltaSummary {
    pub schema_version: u32,
    pub delta: f64,
    pub median_error: Option<f64>,
    pub phi_of_delta: f64,
    pub ratio: Option<f64>,
    pub successes: usize,
    pub failures: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSummary {
    pub schema_version: u32,
    pub seed: u64,
    pub gamma_method: Method,
    pub c_used: f64,
    pub beta: f64,
    /// OLS slope of log median error against log δ.
    pub slope: Option<f64>,
    /// Largest median-error / φ(δ) over the grid.
    pub max_ratio: Option<f64>,
    pub failures: usize,
    pub per_delta: Vec<DeltaSummary>,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub records: Vec<ExperimentRecord>,
    pub summary: ExperimentSummary,
    pub gammas: GammaTable,
    pub phi: RateFunction,
}

pub fn run_rate_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let (op, xdag, table) = cfg.setup()?;
    let phi = build_phi(&xdag, &table)?;
    let y = op.apply(&xdag)?;
    let deltas = cfg.delta_grid.values()?;

    let cells: Vec<(usize, usize)> = (0..deltas.len())
        .flat_map(|i| (0..cfg.trials).map(move |t| (i, t)))
        .collect();
    let records: Vec<ExperimentRecord> = cells
        .par_iter()
        .map(|&(i, trial)| {
            let delta = deltas[i];
            let seed = derive_seed(cfg.seed, &[i as u64, trial as u64]);
            let mut rec = ExperimentRecord {
                schema_version: SCHEMA_VERSION,
                delta_index: i,
                delta,
                trial,
                alpha: None,
                error_l1: None,
                residual: None,
                phi_of_delta: phi.eval(delta),
                iterations: None,
                kkt_residual: None,
                support_size: None,
                method: None,
                status: "ok".into(),
            };
            if let Err(e) = run_cell(cfg, &op, &xdag, &y, delta, seed, &mut rec) {
                rec.status = failure_marker(&e);
            }
            rec
        })
        .collect();

    let summary = summarize(cfg, &table, &deltas, &records, &phi);
    Ok(ExperimentOutcome {
        records,
        summary,
        gammas: table,
        phi,
    })
}

fn run_cell(
    cfg: &ExperimentConfig,
    op: &ForwardOperator,
    xdag: &TruncatedSequence,
    y: &DataVector,
    delta: f64,
    seed: u64,
    rec: &mut ExperimentRecord,
) -> Result<()> {
    let y_delta = synthesize_noise(op, y, delta, seed)?;
    let alpha = choose_alpha(&cfg.alpha_rule, delta, op, &y_delta, cfg.p, &cfg.solver)?;
    rec.alpha = Some(alpha);
    let prob = TikhonovProblem::new(op, y_delta, alpha, cfg.p)?;
    let (x, diag) = match solve_tikhonov(&prob, &cfg.solver) {
        Ok(sol) => sol,
        Err(Error::NotConverged { best, diagnostics }) => {
            // keep the best iterate so the cell still carries numbers
            rec.status = "not-converged".into();
            (*best, *diagnostics)
        }
        Err(e) => return Err(e),
    };
    rec.error_l1 = Some(x.sub(xdag).l1_norm());
    rec.residual = Some(prob.residual_norm(x.coeffs()));
    rec.iterations = Some(diag.iterations);
    rec.kkt_residual = Some(diag.kkt_residual);
    rec.support_size = Some(diag.support_size);
    rec.method = Some(diag.method);
    Ok(())
}

fn failure_marker(e: &Error) -> String {
    match e {
        Error::DiscrepancyExhausted { .. } => "discrepancy-exhausted".into(),
        Error::NotConverged { .. } => "not-converged".into(),
        other => format!("error: {other}"),
    }
}

fn summarize(
    cfg: &ExperimentConfig,
    table: &GammaTable,
    deltas: &[f64],
    records: &[ExperimentRecord],
    phi: &RateFunction,
) -> ExperimentSummary {
    let per_delta: Vec<DeltaSummary> = deltas
        .iter()
        .enumerate()
        .map(|(i, &delta)| {
            let mut errors: Vec<f64> = records
                .iter()
                .filter(|r| r.delta_index == i && r.is_ok())
                .filter_map(|r| r.error_l1)
                .collect();
            let failures = records.iter().filter(|r| r.delta_index == i && !r.is_ok()).count();
            let successes = errors.len();
            let median_error = median(&mut errors);
            let phi_of_delta = phi.eval(delta);
            let ratio = median_error.filter(|_| phi_of_delta > 0.0).map(|m| m / phi_of_delta);
            DeltaSummary {
                schema_version: SCHEMA_VERSION,
                delta,
                median_error,
                phi_of_delta,
                ratio,
                successes,
                failures,
            }
        })
        .collect();

    let points: Vec<(f64, f64)> = per_delta
        .iter()
        .filter_map(|d| d.median_error.filter(|m| *m > 0.0).map(|m| (d.delta.ln(), m.ln())))
        .collect();
    let max_ratio = per_delta.iter().filter_map(|d| d.ratio).reduce(f64::max);
    ExperimentSummary {
        schema_version: SCHEMA_VERSION,
        seed: cfg.seed,
        gamma_method: table.method,
        c_used: table.c_used,
        beta: (1.0 - table.c_used) / (1.0 + table.c_used),
        slope: ols_slope(&points),
        max_ratio,
        failures: records.iter().filter(|r| !r.is_ok()).count(),
        per_delta,
    }
}

pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Least-squares slope of `v` against `u` over the points `(u, v)`.
pub fn ols_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mu = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mv = points.iter().map(|p| p.1).sum::<f64>() / n;
    let suu: f64 = points.iter().map(|p| (p.0 - mu).powi(2)).sum();
    let suv: f64 = points.iter().map(|p| (p.0 - mu) * (p.1 - mv)).sum();
    (suu > 0.0).then(|| suv / suu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::{Interval, YNorm};
    use approx::assert_relative_eq;
    use nalgebra::DMatrix;

    #[test]
    fn noise_has_exact_norm() {
        let ops = [
            ForwardOperator::lq_embedding(10, 3.0).unwrap(),
            ForwardOperator::dense(
                DMatrix::from_fn(7, 3, |i, j| (i + 2 * j) as f64 + 1.0 / (1.0 + (i * j) as f64)),
                YNorm::Euclidean,
            )
            .unwrap(),
            ForwardOperator::wiener_restriction(vec![Interval::new(0.1, 0.4)], -3, 7, 128).unwrap(),
        ];
        for op in &ops {
            let y = DataVector::from_element(op.data_dim(), 0.3);
            for (s, delta) in [1e-3, 0.5, 7.0].into_iter().enumerate() {
                let yd = synthesize_noise(op, &y, delta, s as u64).unwrap();
                assert_relative_eq!(op.y_norm(&(&yd - &y)).unwrap(), delta, max_relative = 1e-14);
                assert_eq!(yd, synthesize_noise(op, &y, delta, s as u64).unwrap());
            }
            assert_eq!(synthesize_noise(op, &y, 0.0, 1).unwrap(), y);
            assert!(synthesize_noise(op, &y, -1.0, 1).is_err());
        }
    }

    #[test]
    fn restricted_noise_stays_on_e() {
        let op = ForwardOperator::wiener_restriction(vec![Interval::new(0.0, 0.25)], 0, 4, 64).unwrap();
        let y = DataVector::zeros(op.data_dim());
        let yd = synthesize_noise(&op, &y, 1.0, 5).unwrap();
        for (v, observed) in yd.iter().zip(op.observed_rows()) {
            if !observed {
                assert_eq!(*v, 0.0);
            }
        }
    }

    #[test]
    fn delta_grid_is_geometric_and_decreasing() {
        let g = DeltaGrid::default().values().unwrap();
        assert_eq!(g.len(), 8);
        assert_eq!(g[0], 1e-1);
        assert_eq!(g[7], 1e-4);
        for w in g.windows(2) {
            assert!(w[1] < w[0]);
            assert_relative_eq!(w[0] / w[1], 10f64.powf(3.0 / 7.0), max_relative = 1e-12);
        }
        assert!(DeltaGrid {
            min: 0.0,
            max: 1.0,
            count: 3
        }
        .values()
        .is_err());
        assert_eq!(
            DeltaGrid {
                min: 0.1,
                max: 0.1,
                count: 1
            }
            .values()
            .unwrap(),
            vec![0.1]
        );
    }

    #[test]
    fn xdag_specs() {
        let s: XdagSpec =
            serde_json::from_str(r#"{"kind": "sparse", "support": [1, 3], "values": [2.0, -1.0]}"#).unwrap();
        assert_eq!(s.build(5, 0).unwrap().coeffs(), &[0.0, 2.0, 0.0, -1.0, 0.0]);
        let s: XdagSpec = serde_json::from_str(r#"{"kind": "power-decay", "mu": 2, "N": 3}"#).unwrap();
        assert_eq!(s.build(3, 0).unwrap().coeffs(), &[1.0, 0.25, 1.0 / 9.0]);
        assert!(s.build(4, 0).is_err());
        let s: XdagSpec = serde_json::from_str("[1.0, 2.0]").unwrap();
        assert_eq!(s.build(2, 0).unwrap().coeffs(), &[1.0, 2.0]);
        let s: XdagSpec = serde_json::from_str(r#"{"kind": "sparse", "support": [7], "values": [1.0]}"#).unwrap();
        assert!(s.build(5, 0).is_err());
    }

    #[test]
    fn config_defaults() {
        let cfg: ExperimentConfig =
            serde_json::from_str(r#"{"operator": {"kind": "lq-embedding", "dim": 4, "q": 2}, "xdag": [1, 0, 0, 0]}"#)
                .unwrap();
        assert_eq!(cfg.trials, 5);
        assert_eq!(cfg.delta_grid, DeltaGrid::default());
        assert_eq!(cfg.alpha_rule, AlphaRule::APriori { kappa: 1.0 });
        assert_eq!(cfg.p, Exponent::Two);
        let bad = r#"{"operator": {"kind": "lq-embedding", "dim": 4, "q": 2}, "xdag": [1, 0, 0, 0], "trails": 3}"#;
        assert!(serde_json::from_str::<ExperimentConfig>(bad).is_err());
    }

    #[test]
    fn slope_and_median_helpers() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), Some(2.5));
        assert_eq!(median(&mut []), None);
        let pts: Vec<(f64, f64)> = (0..5).map(|i| (i as f64, 0.5 * i as f64 + 1.0)).collect();
        assert_relative_eq!(ols_slope(&pts).unwrap(), 0.5, epsilon = 1e-14);
        assert_eq!(ols_slope(&pts[..1]), None);
    }

    #[test]
    fn records_are_reproducible() {
        let mut cfg = ExperimentConfig::sparse_preset();
        cfg.delta_grid = DeltaGrid {
            min: 0.01,
            max: 0.01,
            count: 1,
        };
        cfg.trials = 3;
        cfg.seed = 9;
        let a = run_rate_experiment(&cfg).unwrap();
        let b = run_rate_experiment(&cfg).unwrap();
        assert_eq!(a.records, b.records);
        assert_eq!(a.records.len(), 3);
        assert!(a.records.iter().all(|r| r.is_ok() && r.alpha == Some(0.01)));
    }

    #[test]
    fn failed_cells_are_marked() {
        let mut cfg = ExperimentConfig::sparse_preset();
        cfg.delta_grid = DeltaGrid {
            min: 1e-3,
            max: 1e-2,
            count: 2,
        };
        cfg.trials = 1;
        cfg.alpha_rule = AlphaRule::Discrepancy {
            tau: 1.5,
            ratio: 0.8,
            alpha_min: 0.5,
        };
        let out = run_rate_experiment(&cfg).unwrap();
        assert!(out.records.iter().all(|r| r.status == "discrepancy-exhausted"));
        assert_eq!(out.summary.failures, 2);
        assert_eq!(out.summary.slope, None);
    }
}
