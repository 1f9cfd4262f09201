//! Sampled check of the Turán–Nazarov bound
//! `‖x‖₁ <= (14/|E|)^{n−1} sup_{t∈E} |Σ x_k e^{2πi f_k t}|`.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::certificates::wiener_gamma;
use crate::error::{Error, Result};
use crate::operator::{unit_phase, Interval};
use crate::seeding::job_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NazarovConfig {
    pub intervals: Vec<Interval>,
    pub n: usize,
    pub trials: usize,
    /// Inclusive range of integer frequencies.
    pub freq_range: (i64, i64),
    pub grid_size: usize,
    pub seed: u64,
}

impl NazarovConfig {
    /// `E = [0, measure)` with the default frequency range `[−30, 30]`.
    pub fn interval(measure: f64, n: usize, trials: usize, seed: u64) -> Self {
        Self {
            intervals: vec![Interval::new(0.0, measure)],
            n,
            trials,
            freq_range: (-30, 30),
            grid_size: 1024,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NazarovReport {
    pub measure: f64,
    pub n: usize,
    pub trials: usize,
    pub grid_size: usize,
    /// `(14/|E|)^{n−1}`.
    pub bound: f64,
    /// `(16e/(π|E|))^{n−1}`.
    pub nazarov_bound: f64,
    /// Largest observed `‖x‖₁ / sup_E |p|`, a lower estimate of the true constant.
    pub max_ratio: f64,
    pub min_ratio: f64,
    pub violations: usize,
    /// Samples with `sup_E |p| > ‖x‖₁`, which the triangle inequality forbids.
    pub upper_violations: usize,
    pub seed: u64,
}

impl NazarovReport {
    pub fn passed(&self) -> bool {
        self.violations == 0 && self.upper_violations == 0
    }
}

pub fn nazarov_check(cfg: &NazarovConfig) -> Result<NazarovReport> {
    let (lo, hi) = cfg.freq_range;
    if cfg.n == 0 {
        return Err(Error::InvalidParameter("n must be at least 1".into()));
    }
    if hi < lo || ((hi - lo + 1) as usize) < cfg.n {
        return Err(Error::InvalidParameter(format!(
            "frequency range [{lo}, {hi}] holds fewer than {} frequencies",
            cfg.n
        )));
    }
    let max_frequency = lo.unsigned_abs().max(hi.unsigned_abs());
    let required = 8 * max_frequency;
    if (cfg.grid_size as u64) < required {
        return Err(Error::GridTooCoarse {
            grid_size: cfg.grid_size,
            max_frequency,
            required,
        });
    }
    let measure: f64 = cfg.intervals.iter().map(Interval::length).sum();
    if !(measure > 0.0) {
        return Err(Error::InvalidParameter("E must have positive measure".into()));
    }
    let g = cfg.grid_size;
    let points: Vec<usize> = (0..g)
        .filter(|&j| {
            let t = j as f64 / g as f64;
            cfg.intervals.iter().any(|i| i.contains(t))
        })
        .collect();
    if points.is_empty() {
        return Err(Error::InvalidParameter("no grid point falls inside E".into()));
    }

    let ratios: Vec<(f64, bool)> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = job_rng(cfg.seed, &[trial as u64]);
            let span = (hi - lo + 1) as usize;
            let freqs: Vec<i64> = sample(&mut rng, span, cfg.n)
                .into_iter()
                .map(|i| lo + i as i64)
                .collect();
            let coeffs: Vec<f64> = (0..cfg.n)
                .map(|_| loop {
                    let v: f64 = rng.sample(StandardNormal);
                    if v != 0.0 {
                        break v;
                    }
                })
                .collect();
            let l1: f64 = coeffs.iter().map(|c| c.abs()).sum();
            let sup = points
                .iter()
                .map(|&j| {
                    let (re, im) = freqs.iter().zip(&coeffs).fold((0.0, 0.0), |(re, im), (&f, &c)| {
                        let (s, co) = unit_phase(f, j, g).sin_cos();
                        (re + c * co, im + c * s)
                    });
                    f64::hypot(re, im)
                })
                .fold(0.0, f64::max);
            (l1 / sup, sup > l1 * (1.0 + 1e-12))
        })
        .collect();

    let bound = wiener_gamma(measure, cfg.n);
    Ok(NazarovReport {
        measure,
        n: cfg.n,
        trials: cfg.trials,
        grid_size: g,
        bound,
        nazarov_bound: (16.0 * std::f64::consts::E / (std::f64::consts::PI * measure)).powi(cfg.n as i32 - 1),
        max_ratio: ratios.iter().map(|r| r.0).fold(0.0, f64::max),
        min_ratio: ratios.iter().map(|r| r.0).fold(f64::INFINITY, f64::min),
        violations: ratios.iter().filter(|r| !(r.0 <= bound)).count(),
        upper_violations: ratios.iter().filter(|r| r.1).count(),
        seed: cfg.seed,
    })
}
