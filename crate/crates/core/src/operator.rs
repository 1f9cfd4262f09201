//! Forward operators from truncated coefficient space into a data space.
//!
//! Every operator is held as a dense real matrix acting on coefficient
//! vectors. For the Wiener-algebra operators the data vector stores complex
//! grid samples as interleaved real/imaginary parts: row `2j` is the real
//! part and row `2j + 1` the imaginary part of the sample at `t_j = j / G`.
//! The adjoint is always the transpose of that real matrix, so the pairing
//! between data vectors and dual vectors is the Euclidean dot product of the
//! real layout. For `sup-grid` norms this means a dual vector is a discrete
//! measure on the grid and its dual norm is the sum of sample moduli.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sequence::TruncatedSequence;

pub type DataVector = DVector<f64>;

pub const DEFAULT_GRID_SIZE: usize = 4096;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OperatorKind {
    DenseMatrix,
    LqEmbedding,
    WienerRestriction,
    WienerMultiplication,
}

/// Norm on the data space Y.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum YNorm {
    Euclidean,
    /// ℓ^q with `1 < q <= ∞`.
    Lq(f64),
    /// Maximum modulus over grid samples.
    SupGrid,
}

impl YNorm {
    pub fn is_euclidean(self) -> bool {
        match self {
            YNorm::Euclidean => true,
            YNorm::Lq(q) => q == 2.0,
            YNorm::SupGrid => false,
        }
    }
}

/// Half-open sub-interval `[start, end)` of the circle `[0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub start: f64,
    pub end: f64,
}

impl Interval {
    pub fn new(start: f64, end: f64) -> Self {
        Self { start, end }
    }

    pub fn contains(&self, t: f64) -> bool {
        self.start <= t && t < self.end
    }

    pub fn length(&self) -> f64 {
        self.end - self.start
    }
}

impl From<[f64; 2]> for Interval {
    fn from([start, end]: [f64; 2]) -> Self {
        Self { start, end }
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> Self {
        [i.start, i.end]
    }
}

/// Sampled weight `g` of the multiplication operator.
#[derive(Clone, Debug, PartialEq)]
pub enum Weight {
    One,
    Samples(Vec<f64>),
}

#[derive(Clone, Debug)]
struct WienerGrid {
    intervals: Vec<Interval>,
    grid_size: usize,
    in_e: Vec<bool>,
    weight: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ForwardOperator {
    kind: OperatorKind,
    norm: YNorm,
    matrix: DMatrix<f64>,
    index_origin: i64,
    wiener: Option<WienerGrid>,
}

impl ForwardOperator {
    /// Dense `m x N` operator. Rejects matrices without full column rank.
    pub fn dense(matrix: DMatrix<f64>, norm: YNorm) -> Result<Self> {
        let op = Self::dense_unchecked(matrix, norm)?;
        let rank = numerical_rank(&op.matrix);
        if rank < op.domain_dim() {
            return Err(Error::NotInjective {
                rank,
                dim: op.domain_dim(),
            });
        }
        Ok(op)
    }

    /// Dense operator without the rank check. Used to study matrices on
    /// which restricted injectivity fails; the certificate routines report
    /// the offending support instead.
    pub fn dense_unchecked(matrix: DMatrix<f64>, norm: YNorm) -> Result<Self> {
        match norm {
            YNorm::SupGrid => {
                return Err(Error::InvalidOperator(
                    "dense matrices support euclidean or lq data norms".into(),
                ))
            }
            YNorm::Lq(q) => check_q(q)?,
            YNorm::Euclidean => {}
        }
        let (m, n) = matrix.shape();
        if m == 0 || n == 0 {
            return Err(Error::InvalidOperator("empty matrix".into()));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidOperator("matrix has non-finite entries".into()));
        }
        Ok(Self {
            kind: OperatorKind::DenseMatrix,
            norm,
            matrix,
            index_origin: 0,
            wiener: None,
        })
    }

    /// The embedding ℓ¹ → ℓ^q truncated to `dim` coefficients.
    pub fn lq_embedding(dim: usize, q: f64) -> Result<Self> {
        check_q(q)?;
        if dim == 0 {
            return Err(Error::InvalidOperator("embedding dimension must be positive".into()));
        }
        Ok(Self {
            kind: OperatorKind::LqEmbedding,
            norm: YNorm::Lq(q),
            matrix: DMatrix::identity(dim, dim),
            index_origin: 0,
            wiener: None,
        })
    }

    /// `x ↦ χ_E p_x` sampled on the grid, with coefficients for the
    /// frequencies `index_origin .. index_origin + dim`.
    pub fn wiener_restriction(
        intervals: Vec<Interval>,
        index_origin: i64,
        dim: usize,
        grid_size: usize,
    ) -> Result<Self> {
        let grid = WienerGrid::new(intervals, grid_size, None)?;
        Ok(Self::wiener(OperatorKind::WienerRestriction, grid, index_origin, dim))
    }

    /// `x ↦ g p_x` sampled on the grid. `g` takes values in (0, 1] and equals
    /// one on E.
    pub fn wiener_multiplication(
        intervals: Vec<Interval>,
        weight: Weight,
        index_origin: i64,
        dim: usize,
        grid_size: usize,
    ) -> Result<Self> {
        let grid = WienerGrid::new(intervals, grid_size, Some(weight))?;
        Ok(Self::wiener(
            OperatorKind::WienerMultiplication,
            grid,
            index_origin,
            dim,
        ))
    }

    fn wiener(kind: OperatorKind, grid: WienerGrid, index_origin: i64, dim: usize) -> Self {
        let g = grid.grid_size;
        let mut matrix = DMatrix::zeros(2 * g, dim);
        for k in 0..dim {
            let freq = index_origin + k as i64;
            for j in 0..g {
                let w = grid.weight[j];
                if w == 0.0 {
                    continue;
                }
                let (s, c) = unit_phase(freq, j, g).sin_cos();
                matrix[(2 * j, k)] = w * c;
                matrix[(2 * j + 1, k)] = w * s;
            }
        }
        Self {
            kind,
            norm: YNorm::SupGrid,
            matrix,
            index_origin,
            wiener: Some(grid),
        }
    }

    pub fn from_config(cfg: &OperatorConfig) -> Result<Self> {
        match cfg {
            OperatorConfig::DenseMatrix { matrix, y_norm, q } => {
                let rows = matrix.len();
                let cols = matrix.first().map_or(0, Vec::len);
                if matrix.iter().any(|r| r.len() != cols) {
                    return Err(Error::InvalidOperator("ragged matrix rows".into()));
                }
                let m = DMatrix::from_row_iterator(rows, cols, matrix.iter().flatten().copied());
                let norm = match y_norm {
                    NormTag::Euclidean => YNorm::Euclidean,
                    NormTag::Lq => YNorm::Lq(
                        q.as_ref()
                            .ok_or_else(|| Error::InvalidOperator("lq norm needs q".into()))?
                            .value()?,
                    ),
                };
                Self::dense(m, norm)
            }
            OperatorConfig::LqEmbedding { dim, q } => Self::lq_embedding(*dim, q.value()?),
            OperatorConfig::WienerRestriction {
                intervals,
                index_origin,
                dim,
                grid_size,
            } => Self::wiener_restriction(intervals.clone(), *index_origin, *dim, *grid_size),
            OperatorConfig::WienerMultiplication {
                intervals,
                index_origin,
                dim,
                grid_size,
                weight_g,
            } => {
                let weight = match weight_g {
                    WeightSpec::Tag(t) if t == "one" => Weight::One,
                    WeightSpec::Tag(t) => return Err(Error::InvalidOperator(format!("unknown weight tag {t:?}"))),
                    WeightSpec::Samples(v) => Weight::Samples(v.clone()),
                };
                Self::wiener_multiplication(intervals.clone(), weight, *index_origin, *dim, *grid_size)
            }
        }
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn norm_kind(&self) -> YNorm {
        self.norm
    }

    pub fn is_euclidean(&self) -> bool {
        self.norm.is_euclidean()
    }

    pub fn q(&self) -> Option<f64> {
        match self.norm {
            YNorm::Lq(q) => Some(q),
            _ => None,
        }
    }

    /// Number of coefficients N.
    pub fn domain_dim(&self) -> usize {
        self.matrix.ncols()
    }

    pub fn data_dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn index_origin(&self) -> i64 {
        self.index_origin
    }

    pub fn intervals(&self) -> &[Interval] {
        self.wiener.as_ref().map_or(&[], |w| &w.intervals)
    }

    /// Lebesgue measure |E| of the interval set (wiener kinds).
    pub fn measure(&self) -> Option<f64> {
        self.wiener
            .as_ref()
            .map(|w| w.intervals.iter().map(Interval::length).sum())
    }

    pub fn grid_size(&self) -> Option<usize> {
        self.wiener.as_ref().map(|w| w.grid_size)
    }

    /// Grid samples of the weight (χ_E for the restriction operator).
    pub fn weight(&self) -> Option<&[f64]> {
        self.wiener.as_ref().map(|w| w.weight.as_slice())
    }

    pub fn apply(&self, x: &TruncatedSequence) -> Result<DataVector> {
        self.apply_slice(x.coeffs())
    }

    pub fn apply_slice(&self, x: &[f64]) -> Result<DataVector> {
        self.check_domain(x.len())?;
        Ok(&self.matrix * DVector::from_column_slice(x))
    }

    /// `A* η` for a dual vector η in the real data layout.
    pub fn adjoint(&self, eta: &DataVector) -> Result<DVector<f64>> {
        if eta.len() != self.data_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.data_dim(),
                found: eta.len(),
            });
        }
        Ok(self.matrix.tr_mul(eta))
    }

    /// ‖y‖_Y in the declared data norm.
    pub fn y_norm(&self, y: &DataVector) -> Result<f64> {
        if y.len() != self.data_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.data_dim(),
                found: y.len(),
            });
        }
        Ok(match self.norm {
            YNorm::Euclidean => y.norm(),
            YNorm::Lq(q) => lq_norm(y.as_slice(), q),
            YNorm::SupGrid => {
                let grid = self.wiener.as_ref().expect("sup-grid norm without grid");
                let restrict = self.kind == OperatorKind::WienerRestriction;
                (0..grid.grid_size)
                    .filter(|&j| !restrict || grid.in_e[j])
                    .map(|j| y[2 * j].hypot(y[2 * j + 1]))
                    .fold(0.0, f64::max)
            }
        })
    }

    /// Norm of a dual vector in Y* under the documented pairing.
    pub fn dual_norm(&self, eta: &DataVector) -> f64 {
        match self.norm {
            YNorm::Euclidean => eta.norm(),
            YNorm::Lq(q) => lq_norm(eta.as_slice(), conjugate_exponent(q)),
            YNorm::SupGrid => eta
                .as_slice()
                .chunks(2)
                .map(|c| c[0].hypot(c.get(1).copied().unwrap_or(0.0)))
                .sum(),
        }
    }

    /// ‖A e^(k)‖_Y for every column.
    pub fn column_norms(&self) -> Vec<f64> {
        (0..self.domain_dim())
            .map(|k| {
                let col: DataVector = self.matrix.column(k).into_owned();
                self.y_norm(&col).expect("column has data dimension")
            })
            .collect()
    }

    /// `C` with ‖Ax‖_Y <= C ‖x‖₁: the largest column norm.
    pub fn bound_constant(&self) -> f64 {
        self.column_norms().into_iter().fold(0.0, f64::max)
    }

    /// Data rows that carry observed values; noise lives on these rows only.
    pub fn observed_rows(&self) -> Vec<bool> {
        match (&self.wiener, self.kind) {
            (Some(grid), OperatorKind::WienerRestriction) => {
                grid.in_e.iter().flat_map(|&inside| [inside, inside]).collect()
            }
            _ => vec![true; self.data_dim()],
        }
    }

    fn check_domain(&self, len: usize) -> Result<()> {
        if len != self.domain_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.domain_dim(),
                found: len,
            });
        }
        Ok(())
    }
}

impl WienerGrid {
    fn new(mut intervals: Vec<Interval>, grid_size: usize, weight: Option<Weight>) -> Result<Self> {
        if grid_size == 0 {
            return Err(Error::InvalidOperator("grid_size must be positive".into()));
        }
        if intervals.is_empty() {
            return Err(Error::InvalidOperator("E needs at least one interval".into()));
        }
        intervals.sort_by(|a, b| a.start.total_cmp(&b.start));
        for i in &intervals {
            if !(0.0 <= i.start && i.start < i.end && i.end <= 1.0) {
                return Err(Error::InvalidOperator(format!(
                    "interval [{}, {}) is not a sub-interval of [0, 1)",
                    i.start, i.end
                )));
            }
        }
        if intervals.windows(2).any(|w| w[1].start < w[0].end) {
            return Err(Error::InvalidOperator("intervals overlap".into()));
        }
        let in_e: Vec<bool> = (0..grid_size)
            .map(|j| {
                let t = j as f64 / grid_size as f64;
                intervals.iter().any(|i| i.contains(t))
            })
            .collect();
        if !in_e.iter().any(|&b| b) {
            return Err(Error::InvalidOperator("no grid point falls inside E".into()));
        }
        let weight = match weight {
            None => in_e.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            Some(Weight::One) => vec![1.0; grid_size],
            Some(Weight::Samples(g)) => {
                if g.len() != grid_size {
                    return Err(Error::DimensionMismatch {
                        expected: grid_size,
                        found: g.len(),
                    });
                }
                if g.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
                    return Err(Error::InvalidOperator("weight must take values in (0, 1]".into()));
                }
                if g.iter().zip(&in_e).any(|(&v, &inside)| inside && v < 1.0) {
                    return Err(Error::InvalidOperator("weight must be >= 1 on E".into()));
                }
                g
            }
        };
        Ok(Self {
            intervals,
            grid_size,
            in_e,
            weight,
        })
    }
}

/// `2π (freq * j mod G) / G`, reduced before scaling to keep the phase exact.
pub(crate) fn unit_phase(freq: i64, j: usize, grid_size: usize) -> f64 {
    let g = grid_size as i128;
    let r = (freq as i128 * j as i128).rem_euclid(g);
    2.0 * PI * (r as f64) / (grid_size as f64)
}

fn check_q(q: f64) -> Result<()> {
    if q > 1.0 && !q.is_nan() {
        Ok(())
    } else {
        Err(Error::InvalidOperator(format!("q must lie in (1, inf], got {q}")))
    }
}

fn numerical_rank(m: &DMatrix<f64>) -> usize {
    let sv = m.clone().svd(false, false).singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    let tol = smax * f64::EPSILON * m.nrows().max(m.ncols()) as f64;
    sv.iter().filter(|&&s| s > tol).count()
}

/// ℓ^q norm, `q = ∞` giving the max modulus.
pub fn lq_norm(v: &[f64], q: f64) -> f64 {
    if q.is_infinite() {
        return v.iter().fold(0.0, |m, x| m.max(x.abs()));
    }
    if q == 1.0 {
        return v.iter().map(|x| x.abs()).sum();
    }
    if q == 2.0 {
        return v.iter().map(|x| x * x).sum::<f64>().sqrt();
    }
    let scale = v.iter().fold(0.0, |m: f64, x| m.max(x.abs()));
    if scale == 0.0 {
        return 0.0;
    }
    scale * v.iter().map(|x| (x.abs() / scale).powf(q)).sum::<f64>().powf(1.0 / q)
}

/// Hölder conjugate q' with 1/q + 1/q' = 1.
pub fn conjugate_exponent(q: f64) -> f64 {
    if q.is_infinite() {
        1.0
    } else if q == 1.0 {
        f64::INFINITY
    } else {
        q / (q - 1.0)
    }
}

/// JSON description of an operator.
///
/// ```json
/// {"kind": "dense-matrix", "matrix": [[1, 0], [0, 2], [1, 1]], "y_norm": "euclidean"}
/// {"kind": "lq-embedding", "dim": 12, "q": "inf"}
/// {"kind": "wiener-restriction", "intervals": [[0, 0.5]], "index_origin": -20, "dim": 41}
/// {"kind": "wiener-multiplication", "intervals": [[0, 0.25]], "index_origin": -5,
///  "dim": 11, "grid_size": 1024, "weight_g": "one"}
/// ```
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum OperatorConfig {
    DenseMatrix {
        matrix: Vec<Vec<f64>>,
        #[serde(default)]
        y_norm: NormTag,
        #[serde(default)]
        q: Option<QValue>,
    },
    LqEmbedding {
        dim: usize,
        q: QValue,
    },
    WienerRestriction {
        intervals: Vec<Interval>,
        #[serde(default)]
        index_origin: i64,
        dim: usize,
        #[serde(default = "default_grid_size")]
        grid_size: usize,
    },
    WienerMultiplication {
        intervals: Vec<Interval>,
        #[serde(default)]
        index_origin: i64,
        dim: usize,
        #[serde(default = "default_grid_size")]
        grid_size: usize,
        weight_g: WeightSpec,
    },
}

fn default_grid_size() -> usize {
    DEFAULT_GRID_SIZE
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormTag {
    #[default]
    Euclidean,
    Lq,
}

/// Exponent q given as a number or as `"inf"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum QValue {
    Number(f64),
    Text(String),
}

impl QValue {
    pub fn value(&self) -> Result<f64> {
        match self {
            QValue::Number(q) => Ok(*q),
            QValue::Text(s) if matches!(s.as_str(), "inf" | "infinity" | "Infinity") => Ok(f64::INFINITY),
            QValue::Text(s) => Err(Error::InvalidOperator(format!("cannot parse q = {s:?}"))),
        }
    }

    pub fn from_f64(q: f64) -> Self {
        if q.is_infinite() {
            QValue::Text("inf".into())
        } else {
            QValue::Number(q)
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightSpec {
    Tag(String),
    Samples(Vec<f64>),
}
