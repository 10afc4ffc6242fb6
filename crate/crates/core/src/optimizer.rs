//! Hardware-aware choice of tree size and depth.
//!
//! A tree of `n` nodes verified `d` draft passes deep yields
//! `G(n, d) / (t(b·n) + d·c)` speedup, where `t` is the verify-time ratio
//! against a single token, `c` the draft-to-verify step ratio and `b` the batch
//! size. [`optimize`] scans the whole `(n, d)` grid.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::planner::{BoundedPlanner, PlanError};
use crate::tree::{AcceptanceVector, TreeTopology};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CostModelError {
    #[error("cost model needs at least {need} measurements, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("no measurement for n = 1; cannot normalise verify times")]
    MissingBaseline,
    #[error("measurements must have strictly increasing n (n = {0} repeats or is out of order)")]
    UnsortedSamples(usize),
    #[error("verify-time ratio decreases at n = {n}")]
    NonMonotone { n: usize },
    #[error("t(1) must be 1, got {0}")]
    BadBaseline(f64),
    #[error("invalid value: {0}")]
    InvalidValue(String),
    #[error("malformed cost CSV: {0}")]
    Csv(String),
}

/// Measured verify-time curve `t(n)` plus draft cost and batch size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostModel {
    samples: Vec<(usize, f64)>,
    c: f64,
    batch: usize,
}

impl CostModel {
    pub fn new(samples: Vec<(usize, f64)>, c: f64, batch: usize) -> Result<Self, CostModelError> {
        if samples.is_empty() {
            return Err(CostModelError::TooFew { need: 1, got: 0 });
        }
        if samples[0].0 != 1 {
            return Err(CostModelError::MissingBaseline);
        }
        if (samples[0].1 - 1.0).abs() > 1e-6 {
            return Err(CostModelError::BadBaseline(samples[0].1));
        }
        for w in samples.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(CostModelError::UnsortedSamples(w[1].0));
            }
            if w[1].1 < w[0].1 {
                return Err(CostModelError::NonMonotone { n: w[1].0 });
            }
        }
        if samples.iter().any(|s| !s.1.is_finite()) {
            return Err(CostModelError::InvalidValue("non-finite verify time".into()));
        }
        // c = 0 is allowed: it models free drafting
        if !c.is_finite() || c < 0.0 {
            return Err(CostModelError::InvalidValue(format!("draft ratio c = {c}")));
        }
        if batch == 0 {
            return Err(CostModelError::InvalidValue("batch size 0".into()));
        }
        Ok(CostModel { samples, c, batch })
    }

    /// `t ≡ 1` with draft ratio `c`.
    pub fn flat(c: f64) -> Self {
        CostModel::new(vec![(1, 1.0)], c, 1).expect("flat model is valid")
    }

    pub fn with_batch(mut self, batch: usize) -> Self {
        assert!(batch >= 1);
        self.batch = batch;
        self
    }

    pub fn samples(&self) -> &[(usize, f64)] {
        &self.samples
    }

    pub fn draft_ratio(&self) -> f64 {
        self.c
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    /// Piecewise-linear `t(n)`, constant below the first sample and extended
    /// with the last segment's slope above the last.
    pub fn t_of(&self, n: usize) -> f64 {
        let x = n as f64;
        let s = &self.samples;
        let (n0, t0) = s[0];
        if n <= n0 || s.len() == 1 {
            return if n <= n0 { t0 } else { s[s.len() - 1].1 };
        }
        for w in s.windows(2) {
            let ((a, ta), (b, tb)) = (w[0], w[1]);
            if n <= b {
                let frac = (x - a as f64) / (b - a) as f64;
                return ta + frac * (tb - ta);
            }
        }
        let ((a, ta), (b, tb)) = (s[s.len() - 2], s[s.len() - 1]);
        let slope = (tb - ta) / (b - a) as f64;
        tb + slope * (x - b as f64)
    }

    /// `G / (t(b·n) + d·c)`.
    pub fn speedup(&self, expected_tokens: f64, n: usize, d: usize) -> f64 {
        speedup(expected_tokens, n, d, self)
    }
}

pub fn t_of(model: &CostModel, n: usize) -> f64 {
    model.t_of(n)
}

pub fn speedup(expected_tokens: f64, n: usize, d: usize, model: &CostModel) -> f64 {
    expected_tokens / (model.t_of(model.batch * n) + d as f64 * model.c)
}

/// Cost model parsed from measurements, with any corrections applied.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedCostModel {
    pub model: CostModel,
    pub warnings: Vec<String>,
}

/// Pool-adjacent-violators fit of a nondecreasing sequence.
fn isotonic(values: &[f64]) -> Vec<f64> {
    let mut blocks: Vec<(f64, usize)> = Vec::new();
    for &v in values {
        blocks.push((v, 1));
        while blocks.len() > 1 {
            let (m2, c2) = blocks[blocks.len() - 1];
            let (m1, c1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let last = blocks.last_mut().unwrap();
            *last = ((m1 * c1 as f64 + m2 * c2 as f64) / (c1 + c2) as f64, c1 + c2);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, c)| std::iter::repeat_n(m, c))
        .collect()
}

/// Builds a cost model from `(n, seconds)` verify timings and the time of one
/// draft step. Rows may come in any order; a non-monotone curve is corrected by
/// isotonic regression and reported in `warnings`.
pub fn load_cost_model(
    rows: &[(usize, f64)],
    draft_seconds: f64,
    batch: usize,
) -> Result<LoadedCostModel, CostModelError> {
    if rows.len() < 2 {
        return Err(CostModelError::TooFew {
            need: 2,
            got: rows.len(),
        });
    }
    let mut rows = rows.to_vec();
    rows.sort_by_key(|r| r.0);
    for w in rows.windows(2) {
        if w[0].0 == w[1].0 {
            return Err(CostModelError::UnsortedSamples(w[1].0));
        }
    }
    if rows[0].0 != 1 {
        return Err(CostModelError::MissingBaseline);
    }
    for &(n, s) in &rows {
        if n == 0 || !s.is_finite() || s <= 0.0 {
            return Err(CostModelError::InvalidValue(format!("row n = {n}, seconds = {s}")));
        }
    }
    if !draft_seconds.is_finite() || draft_seconds < 0.0 {
        return Err(CostModelError::InvalidValue(format!("draft seconds = {draft_seconds}")));
    }
    let mut warnings = Vec::new();
    let secs: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let fitted = isotonic(&secs);
    if fitted != secs {
        let first_bad = secs
            .windows(2)
            .position(|w| w[1] < w[0])
            .map(|i| rows[i + 1].0)
            .unwrap_or(0);
        warnings.push(format!(
            "verify times decrease at n = {first_bad}; applied isotonic correction"
        ));
    }
    let base = fitted[0];
    let samples = rows.iter().zip(&fitted).map(|(r, s)| (r.0, s / base)).collect();
    let model = CostModel::new(samples, draft_seconds / base, batch)?;
    Ok(LoadedCostModel { model, warnings })
}

/// Parses a cost CSV with header `n,seconds`.
pub fn parse_cost_csv(text: &str) -> Result<Vec<(usize, f64)>, CostModelError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader
        .headers()
        .map_err(|e| CostModelError::Csv(e.to_string()))?
        .clone();
    if headers.iter().collect::<Vec<_>>() != ["n", "seconds"] {
        return Err(CostModelError::Csv(format!(
            "expected header `n,seconds`, got `{}`",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for rec in reader.deserialize::<(usize, f64)>() {
        rows.push(rec.map_err(|e| CostModelError::Csv(e.to_string()))?);
    }
    Ok(rows)
}

/// The speedup-maximising configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerResult {
    /// Tree size budget (equal to the size of `topology`).
    pub n: usize,
    /// Draft passes, i.e. the tree's depth below the root.
    pub d: usize,
    pub topology: TreeTopology,
    #[serde(rename = "G")]
    pub expected_tokens: f64,
    pub speedup: f64,
}

/// Speedups over the full `(n, d)` grid, backed by one bounded DP sweep.
#[derive(Debug, Clone)]
pub struct SpeedupGrid {
    planner: BoundedPlanner,
    model: CostModel,
    n_max: usize,
    d_max: usize,
}

impl SpeedupGrid {
    pub fn new(
        p: &AcceptanceVector,
        model: &CostModel,
        n_max: usize,
        d_max: usize,
        kmax: usize,
    ) -> Result<Self, PlanError> {
        if n_max == 0 || d_max == 0 {
            return Err(PlanError::ZeroBudget);
        }
        let planner = BoundedPlanner::new(n_max, d_max + 1, p, kmax)?;
        Ok(SpeedupGrid {
            planner,
            model: model.clone(),
            n_max,
            d_max,
        })
    }

    /// `G(n, d)` with `d` counted in draft passes.
    pub fn expected_tokens(&self, n: usize, d: usize) -> f64 {
        self.planner.value(n, d + 1)
    }

    pub fn speedup(&self, n: usize, d: usize) -> f64 {
        self.model.speedup(self.expected_tokens(n, d), n, d)
    }

    /// Best depth for a fixed size `n`, smallest on ties.
    pub fn best_for_size(&self, n: usize) -> (usize, f64) {
        let mut best = (1, self.speedup(n, 1));
        for d in 2..=self.d_max {
            let s = self.speedup(n, d);
            if s > best.1 {
                best = (d, s);
            }
        }
        best
    }

    pub fn result(&self, n: usize, d: usize) -> OptimizerResult {
        let plan = self.planner.plan(n, d + 1).expect("grid point within tables");
        OptimizerResult {
            n,
            d,
            expected_tokens: plan.value,
            speedup: self.speedup(n, d),
            topology: plan.topology,
        }
    }

    /// Grid argmax; ties go to smaller `n`, then smaller `d`.
    pub fn argmax(&self) -> OptimizerResult {
        let mut best = (1, 1, f64::NEG_INFINITY);
        for n in 1..=self.n_max {
            for d in 1..=self.d_max {
                let s = self.speedup(n, d);
                if s > best.2 {
                    best = (n, d, s);
                }
            }
        }
        self.result(best.0, best.1)
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn d_max(&self) -> usize {
        self.d_max
    }
}

/// Grid search for the `(n, d)` maximising speedup, with `kmax = |p|`.
pub fn optimize(
    p: &AcceptanceVector,
    model: &CostModel,
    n_max: usize,
    d_max: usize,
) -> Result<OptimizerResult, PlanError> {
    optimize_with_kmax(p, model, n_max, d_max, p.kmax())
}

pub fn optimize_with_kmax(
    p: &AcceptanceVector,
    model: &CostModel,
    n_max: usize,
    d_max: usize,
    kmax: usize,
) -> Result<OptimizerResult, PlanError> {
    Ok(SpeedupGrid::new(p, model, n_max, d_max, kmax)?.argmax())
}

/// Best configuration when the tree size is pinned to `n`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedSizeRow {
    pub n: usize,
    pub d: usize,
    #[serde(rename = "G")]
    pub expected_tokens: f64,
    pub speedup: f64,
}

pub fn fixed_size_rows(grid: &SpeedupGrid, sizes: &[usize]) -> Vec<FixedSizeRow> {
    sizes
        .iter()
        .filter(|&&n| n >= 1 && n <= grid.n_max())
        .map(|&n| {
            let (d, speedup) = grid.best_for_size(n);
            FixedSizeRow {
                n,
                d,
                expected_tokens: grid.expected_tokens(n, d),
                speedup,
            }
        })
        .collect()
}
