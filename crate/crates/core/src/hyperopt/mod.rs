//! Bayesian optimization of the pipeline's tunable settings.
//!
//! A Gaussian-process surrogate is refitted after every evaluation and the
//! next point maximizes an upper confidence bound over quasi-random
//! candidates.

mod gp;
mod halton;

use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{FeatureSequence, Trajectory};
use crate::error::{Error, Result};
use crate::evaluation::{match_points, MatchConfig};
use crate::pipeline::{run_trial, Hyperparams, PipelineConfig};

pub use gp::{GaussianProcess, GP_NOISE, LENGTH_SCALE_GRID};
pub use halton::Halton;

pub const UCB_KAPPA: f64 = 2.0;
pub const N_CANDIDATES: usize = 2048;
pub const N_INITIAL: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scale {
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dimension {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
    pub scale: Scale,
    pub integer: bool,
}

impl Dimension {
    pub fn linear(name: &str, lo: f64, hi: f64) -> Self {
        Self {
            name: name.to_string(),
            lo,
            hi,
            scale: Scale::Linear,
            integer: false,
        }
    }

    pub fn log(name: &str, lo: f64, hi: f64) -> Self {
        Self {
            scale: Scale::Log,
            ..Self::linear(name, lo, hi)
        }
    }

    pub fn integer(name: &str, lo: i64, hi: i64) -> Self {
        Self {
            integer: true,
            ..Self::linear(name, lo as f64, hi as f64)
        }
    }

    fn to_unit(&self, v: f64) -> f64 {
        match self.scale {
            Scale::Linear => (v - self.lo) / (self.hi - self.lo),
            Scale::Log => (v.ln() - self.lo.ln()) / (self.hi.ln() - self.lo.ln()),
        }
    }

    fn unit_to_value(&self, u: f64) -> f64 {
        let u = u.clamp(0.0, 1.0);
        let v = match self.scale {
            Scale::Linear => self.lo + u * (self.hi - self.lo),
            Scale::Log => (self.lo.ln() + u * (self.hi.ln() - self.lo.ln())).exp(),
        };
        let v = if self.integer { v.round() } else { v };
        v.clamp(self.lo, self.hi)
    }
}

/// Box of parameters; values are kept in natural units, integers rounded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    dims: Vec<Dimension>,
}

impl SearchSpace {
    pub fn new(dims: Vec<Dimension>) -> Result<Self> {
        if dims.is_empty() || dims.len() > halton::MAX_DIMS {
            return Err(Error::arg(format!(
                "search space needs 1 to {} dimensions",
                halton::MAX_DIMS
            )));
        }
        for d in &dims {
            if d.lo >= d.hi || !d.lo.is_finite() || !d.hi.is_finite() {
                return Err(Error::arg(format!("dimension '{}' needs lo < hi", d.name)));
            }
            if d.scale == Scale::Log && d.lo <= 0.0 {
                return Err(Error::arg(format!("log dimension '{}' needs lo > 0", d.name)));
            }
        }
        Ok(Self { dims })
    }

    /// Bounds for `(n1, n2, alpha1, alpha2, eps)`.
    pub fn pipeline_default() -> Self {
        Self::new(vec![
            Dimension::integer("n1", 50, 800),
            Dimension::integer("n2", 50, 800),
            Dimension::log("alpha1", 0.1, 200.0),
            Dimension::log("alpha2", 0.1, 200.0),
            Dimension::linear("eps", 5.0, 40.0),
        ])
        .expect("default bounds are valid")
    }

    pub fn dims(&self) -> &[Dimension] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    pub fn to_unit(&self, params: &[f64]) -> Vec<f64> {
        self.dims.iter().zip(params).map(|(d, v)| d.to_unit(*v)).collect()
    }

    pub fn from_unit(&self, unit: &[f64]) -> Vec<f64> {
        self.dims.iter().zip(unit).map(|(d, u)| d.unit_to_value(*u)).collect()
    }

    pub fn contains(&self, params: &[f64]) -> bool {
        params.len() == self.dims.len()
            && self
                .dims
                .iter()
                .zip(params)
                .all(|(d, v)| *v >= d.lo && *v <= d.hi && (!d.integer || v.fract() == 0.0))
    }
}

/// Reads `(n1, n2, alpha1, alpha2, eps)` from a pipeline-space point.
pub fn to_hyperparams(params: &[f64]) -> Result<Hyperparams> {
    if params.len() != 5 {
        return Err(Error::arg(format!("expected 5 parameters, got {}", params.len())));
    }
    Ok(Hyperparams {
        n1: params[0].round() as usize,
        n2: params[1].round() as usize,
        alpha1: params[2],
        alpha2: params[3],
        eps: params[4],
    })
}

/// Evaluations so far and the seed of the candidate sequence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoState {
    pub evaluated: Vec<(Vec<f64>, f64)>,
    pub seed: u64,
    pub iteration: usize,
    /// Length-scales of the last surrogate fit.
    #[serde(default)]
    pub length_scales: Vec<f64>,
}

impl BoState {
    pub fn new(seed: u64) -> Self {
        Self {
            evaluated: Vec::new(),
            seed,
            iteration: 0,
            length_scales: Vec::new(),
        }
    }

    pub fn record(&mut self, params: Vec<f64>, score: f64) {
        self.evaluated.push((params, score));
        self.iteration += 1;
    }
}

/// Next point to evaluate. Without evaluations this is the next point of
/// the seeded quasi-random sequence.
pub fn propose_next(state: &mut BoState, space: &SearchSpace) -> Vec<f64> {
    let halton = Halton::new(space.len(), state.seed);
    if state.evaluated.is_empty() {
        return space.from_unit(&halton.point(1 + state.iteration as u64));
    }
    let x: Vec<Vec<f64>> = state.evaluated.iter().map(|(p, _)| space.to_unit(p)).collect();
    let y: Vec<f64> = state.evaluated.iter().map(|(_, s)| *s).collect();
    let Some(gp) = GaussianProcess::fit(&x, &y) else {
        return space.from_unit(&halton.point(1 + state.iteration as u64));
    };
    state.length_scales = gp.length_scales().to_vec();
    // a fresh stretch of the sequence each round
    let base = 1 + (N_INITIAL + state.iteration * N_CANDIDATES) as u64;
    let candidates: Vec<Vec<f64>> = (0..N_CANDIDATES as u64)
        .map(|i| space.to_unit(&space.from_unit(&halton.point(base + i))))
        .collect();
    let ucb: Vec<f64> = candidates
        .par_iter()
        .map(|c| {
            let (m, s) = gp.predict_standardized(c);
            m + UCB_KAPPA * s
        })
        .collect();
    let mut best = 0;
    for (i, v) in ucb.iter().enumerate() {
        if *v > ucb[best] {
            best = i;
        }
    }
    space.from_unit(&candidates[best])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub params: Vec<f64>,
    pub score: f64,
    pub incumbent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub best_params: Vec<f64>,
    pub best_score: f64,
    pub trace: Vec<TraceRow>,
}

impl OptimizationResult {
    /// CSV with one row per evaluation.
    pub fn trace_csv(&self, space: &SearchSpace) -> String {
        let mut out = String::from("iteration");
        for d in space.dims() {
            out.push(',');
            out.push_str(&d.name);
        }
        out.push_str(",score,incumbent\n");
        for row in &self.trace {
            let _ = write!(out, "{}", row.iteration);
            for p in &row.params {
                let _ = write!(out, ",{p}");
            }
            let _ = writeln!(out, ",{},{}", row.score, row.incumbent);
        }
        out
    }
}

fn score_of(outcome: Result<f64>) -> f64 {
    match outcome {
        Ok(v) if v.is_finite() => v,
        _ => 0.0,
    }
}

fn build_result(evaluated: &[(Vec<f64>, f64)]) -> OptimizationResult {
    let mut trace = Vec::with_capacity(evaluated.len());
    let mut best = 0;
    for (i, (p, s)) in evaluated.iter().enumerate() {
        if *s > evaluated[best].1 {
            best = i;
        }
        trace.push(TraceRow {
            iteration: i + 1,
            params: p.clone(),
            score: *s,
            incumbent: evaluated[best].1,
        });
    }
    OptimizationResult {
        best_params: evaluated[best].0.clone(),
        best_score: evaluated[best].1,
        trace,
    }
}

/// Maximizes `objective` with `budget` evaluations: a quasi-random initial
/// design, then one surrogate-guided proposal at a time. A failing
/// evaluation scores 0.
pub fn optimize<F>(objective: F, space: &SearchSpace, budget: usize, seed: u64) -> Result<OptimizationResult>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if budget < N_INITIAL {
        return Err(Error::arg(format!("budget must be at least {N_INITIAL}, got {budget}")));
    }
    let halton = Halton::new(space.len(), seed);
    let initial: Vec<Vec<f64>> = (1..=N_INITIAL as u64).map(|i| space.from_unit(&halton.point(i))).collect();
    let scores: Vec<f64> = initial.par_iter().map(|p| score_of(objective(p))).collect();
    let mut state = BoState::new(seed);
    for (p, s) in initial.into_iter().zip(scores) {
        state.record(p, s);
    }
    while state.evaluated.len() < budget {
        let p = propose_next(&mut state, space);
        let s = score_of(objective(&p));
        state.record(p, s);
    }
    Ok(build_result(&state.evaluated))
}

/// Uniform random search in the unit-cube parametrization, as a baseline.
pub fn random_search<F>(objective: F, space: &SearchSpace, budget: usize, seed: u64) -> Result<OptimizationResult>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    if budget == 0 {
        return Err(Error::arg("budget must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points: Vec<Vec<f64>> = (0..budget)
        .map(|_| {
            let u: Vec<f64> = (0..space.len()).map(|_| rng.random::<f64>()).collect();
            space.from_unit(&u)
        })
        .collect();
    let scores: Vec<f64> = points.par_iter().map(|p| score_of(objective(p))).collect();
    let evaluated: Vec<(Vec<f64>, f64)> = points.into_iter().zip(scores).collect();
    Ok(build_result(&evaluated))
}

/// A trial with its ground-truth boundaries, for scoring configurations.
#[derive(Debug, Clone)]
pub struct ScoredTrial {
    pub trajectory: Trajectory,
    pub features: Option<FeatureSequence>,
    pub boundaries: Vec<usize>,
}

/// Mean F1 of the final points over `trials` under `cfg`.
pub fn mean_f1(trials: &[ScoredTrial], cfg: &PipelineConfig, delta: &MatchConfig) -> Result<f64> {
    if trials.is_empty() {
        return Err(Error::arg("no trials to score"));
    }
    let f1s: Vec<f64> = trials
        .par_iter()
        .map(|t| {
            let pts = run_trial(&t.trajectory, t.features.as_ref(), cfg)?;
            Ok(match_points(pts.points(), &t.boundaries, delta).f1)
        })
        .collect::<Result<_>>()?;
    Ok(f1s.iter().sum::<f64>() / f1s.len() as f64)
}

/// Objective over the default pipeline space: mean F1 with the point's
/// hyperparameters applied to `base`.
pub fn pipeline_objective<'a>(
    trials: &'a [ScoredTrial],
    base: &'a PipelineConfig,
    delta: MatchConfig,
) -> impl Fn(&[f64]) -> Result<f64> + Sync + 'a {
    move |p| {
        let cfg = base.clone().with_hyperparams(&to_hyperparams(p)?);
        mean_f1(trials, &cfg, &delta)
    }
}
