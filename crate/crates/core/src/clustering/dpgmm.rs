//! Truncated stick-breaking variational inference for a Dirichlet-process
//! mixture of diagonal Gaussians with Normal-Gamma priors.
//!
//! Coordinate ascent alternates a global step (sticks and component
//! posteriors from sufficient statistics) with a local step
//! (responsibilities). When the bound stalls, pairs of neighbouring
//! components are merged if that raises it, then iteration resumes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{Error, Result};

pub const VARIANCE_FLOOR: f64 = 1e-6;
pub const ACTIVE_WEIGHT: f64 = 1e-4;
pub const MODEL_VERSION: u32 = 1;
/// Prior pseudo-count on component means. Kept weak so that empty
/// components, whose means are then very uncertain, attract no mass.
const MEAN_PRIOR_STRENGTH: f64 = 1e-2;

/// At most this many k-means++ seeds start the fit. Singleton starts on
/// large data settle in poor optima.
const INIT_SEEDS: usize = 64;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DpGmmConfig {
    /// Maximum number of components.
    pub truncation: usize,
    /// Stick-breaking concentration.
    pub concentration: f64,
    pub max_iters: usize,
    /// Relative change of the bound that counts as converged.
    pub tol: f64,
    pub seed: u64,
    /// Prior component standard deviation per dimension. `None` uses the
    /// data's own spread.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior_scale: Option<f64>,
}

impl Default for DpGmmConfig {
    fn default() -> Self {
        Self {
            truncation: 20,
            concentration: 1.0,
            max_iters: 500,
            tol: 1e-6,
            seed: 0,
            prior_scale: None,
        }
    }
}

impl DpGmmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.truncation == 0 {
            return Err(Error::arg("truncation must be at least 1"));
        }
        if !(self.concentration > 0.0 && self.concentration.is_finite()) {
            return Err(Error::arg("concentration must be positive"));
        }
        if self.max_iters == 0 {
            return Err(Error::arg("max_iters must be at least 1"));
        }
        if !(self.tol > 0.0 && self.tol.is_finite()) {
            return Err(Error::arg("tol must be positive"));
        }
        if let Some(s) = self.prior_scale {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::arg("prior_scale must be positive"));
            }
        }
        Ok(())
    }
}

/// Posterior of one active component, enough to score new data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentPosterior {
    pub mean: Vec<f64>,
    pub beta: f64,
    pub shape: f64,
    pub rate: Vec<f64>,
    pub expected_log_weight: f64,
}

/// Fitted mixture. Component ids index the active components in stick order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DpGmmModel {
    pub version: u32,
    pub dim: usize,
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<Vec<f64>>,
    pub responsibilities: Vec<Vec<f64>>,
    pub elbo_trace: Vec<f64>,
    pub iterations: usize,
    pub components: Vec<ComponentPosterior>,
}

impl DpGmmModel {
    pub fn n_active(&self) -> usize {
        self.weights.len()
    }

    /// Argmax responsibility of each training datum.
    pub fn labels(&self) -> Vec<usize> {
        self.responsibilities.iter().map(|r| argmax(r)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let model: Self = serde_json::from_str(s)?;
        if model.version != MODEL_VERSION {
            return Err(Error::Format(format!(
                "unsupported model version {} (expected {MODEL_VERSION})",
                model.version
            )));
        }
        Ok(model)
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

struct Prior {
    beta: f64,
    shape: f64,
    rate: Vec<f64>,
    alpha: f64,
}

/// Sufficient statistics of the (centred) data under soft assignments.
#[derive(Clone)]
struct Stats {
    n: Vec<f64>,
    s1: Vec<Vec<f64>>,
    s2: Vec<Vec<f64>>,
}

impl Stats {
    fn from_resp(x: &[Vec<f64>], resp: &[Vec<f64>], k: usize, d: usize) -> Self {
        let mut n = vec![0.0; k];
        let mut s1 = vec![vec![0.0; d]; k];
        let mut s2 = vec![vec![0.0; d]; k];
        for (xi, ri) in x.iter().zip(resp) {
            for (c, &r) in ri.iter().enumerate() {
                if r == 0.0 {
                    continue;
                }
                n[c] += r;
                for j in 0..d {
                    s1[c][j] += r * xi[j];
                    s2[c][j] += r * xi[j] * xi[j];
                }
            }
        }
        Self { n, s1, s2 }
    }

    fn merge_into(&mut self, a: usize, b: usize) {
        self.n[a] += self.n[b];
        self.n[b] = 0.0;
        let (s1b, s2b) = (std::mem::take(&mut self.s1[b]), std::mem::take(&mut self.s2[b]));
        for j in 0..s1b.len() {
            self.s1[a][j] += s1b[j];
            self.s2[a][j] += s2b[j];
        }
        self.s1[b] = vec![0.0; s1b.len()];
        self.s2[b] = vec![0.0; s1b.len()];
    }
}

/// Variational posterior over sticks and component parameters.
#[derive(Clone)]
struct Globals {
    gamma1: Vec<f64>,
    gamma2: Vec<f64>,
    beta: Vec<f64>,
    mean: Vec<Vec<f64>>,
    shape: Vec<f64>,
    rate: Vec<Vec<f64>>,
    /// Scatter about the weighted mean, per component and dimension.
    scatter: Vec<Vec<f64>>,
    xbar: Vec<Vec<f64>>,
}

fn update_globals(stats: &Stats, prior: &Prior) -> Globals {
    let k = stats.n.len();
    let d = prior.rate.len();
    let mut tail = vec![0.0; k];
    let mut acc = 0.0;
    for c in (0..k).rev() {
        tail[c] = acc;
        acc += stats.n[c];
    }
    let mut g = Globals {
        gamma1: stats.n.iter().map(|n| 1.0 + n).collect(),
        gamma2: tail.iter().map(|t| prior.alpha + t).collect(),
        beta: Vec::with_capacity(k),
        mean: Vec::with_capacity(k),
        shape: Vec::with_capacity(k),
        rate: Vec::with_capacity(k),
        scatter: Vec::with_capacity(k),
        xbar: Vec::with_capacity(k),
    };
    for c in 0..k {
        let n = stats.n[c];
        let beta = prior.beta + n;
        let xbar: Vec<f64> = if n > 0.0 {
            stats.s1[c].iter().map(|s| s / n).collect()
        } else {
            vec![0.0; d]
        };
        let scatter: Vec<f64> = (0..d)
            .map(|j| (stats.s2[c][j] - n * xbar[j] * xbar[j]).max(0.0))
            .collect();
        // prior mean is zero because the data are centred
        let mean: Vec<f64> = xbar.iter().map(|x| n * x / beta).collect();
        let rate: Vec<f64> = (0..d)
            .map(|j| prior.rate[j] + 0.5 * scatter[j] + prior.beta * n * xbar[j] * xbar[j] / (2.0 * beta))
            .collect();
        g.beta.push(beta);
        g.mean.push(mean);
        g.shape.push(prior.shape + n / 2.0);
        g.rate.push(rate);
        g.scatter.push(scatter);
        g.xbar.push(xbar);
    }
    g
}

fn expected_log_weights(g: &Globals) -> Vec<f64> {
    let k = g.gamma1.len();
    let mut out = Vec::with_capacity(k);
    let mut acc = 0.0;
    for c in 0..k {
        if c + 1 == k {
            // last stick takes whatever is left
            out.push(acc);
        } else {
            let total = digamma(g.gamma1[c] + g.gamma2[c]);
            out.push(acc + digamma(g.gamma1[c]) - total);
            acc += digamma(g.gamma2[c]) - total;
        }
    }
    out
}

fn ln_beta(a: f64, b: f64) -> f64 {
    ln_gamma(a) + ln_gamma(b) - ln_gamma(a + b)
}

fn kl_beta(a: f64, b: f64, a0: f64, b0: f64) -> f64 {
    ln_beta(a0, b0) - ln_beta(a, b) + (a - a0) * digamma(a) + (b - b0) * digamma(b)
        + (a0 - a + b0 - b) * digamma(a + b)
}

fn kl_gamma(a: f64, b: f64, a0: f64, b0: f64) -> f64 {
    (a - a0) * digamma(a) - ln_gamma(a) + ln_gamma(a0) + a0 * (b.ln() - b0.ln()) + a * (b0 - b) / b
}

/// Bound without the responsibility entropy, which the caller tracks.
fn bound_without_entropy(stats: &Stats, g: &Globals, prior: &Prior) -> f64 {
    let k = stats.n.len();
    let d = prior.rate.len();
    let elw = expected_log_weights(g);
    let mut total = 0.0;
    for (c, &elw_c) in elw.iter().enumerate() {
        let n = stats.n[c];
        let a = g.shape[c];
        let beta = g.beta[c];
        let dg = digamma(a);
        for j in 0..d {
            let b = g.rate[c][j];
            let e_prec = a / b;
            let e_ln_prec = dg - b.ln();
            let dm = g.xbar[c][j] - g.mean[c][j];
            total += n * (0.5 * e_ln_prec - 0.5 * LN_2PI - 0.5 / beta)
                - 0.5 * e_prec * (g.scatter[c][j] + n * dm * dm);
            let ratio = prior.beta / beta;
            let m = g.mean[c][j];
            total -= kl_gamma(a, b, prior.shape, prior.rate[j])
                + 0.5 * (ratio - 1.0 - ratio.ln() + prior.beta * e_prec * m * m);
        }
        total += n * elw_c;
        if c + 1 < k {
            total -= kl_beta(g.gamma1[c], g.gamma2[c], 1.0, prior.alpha);
        }
    }
    total
}

fn entropy(resp: &[Vec<f64>]) -> f64 {
    resp.iter()
        .flat_map(|r| r.iter())
        .filter(|&&r| r > 0.0)
        .map(|&r| -r * r.ln())
        .sum()
}

/// Unnormalized log responsibilities of `x` for the listed components.
fn log_scores(x: &[f64], comps: &[usize], g: &Globals, elw: &[f64], out: &mut Vec<f64>) {
    out.clear();
    for &c in comps {
        let a = g.shape[c];
        let dg = digamma(a);
        let mut s = elw[c];
        for (j, xj) in x.iter().enumerate() {
            let b = g.rate[c][j];
            let diff = xj - g.mean[c][j];
            s += 0.5 * (dg - b.ln()) - 0.5 * LN_2PI - 0.5 * (1.0 / g.beta[c] + a / b * diff * diff);
        }
        out.push(s);
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

fn local_step(x: &[Vec<f64>], stats: &Stats, g: &Globals) -> Vec<Vec<f64>> {
    let k = g.beta.len();
    let elw = expected_log_weights(g);
    // Empty components all sit at the prior, so one of them stands for all.
    let occupied: Vec<usize> = (0..k).filter(|&c| stats.n[c] > 0.0).collect();
    let empty: Vec<usize> = (0..k).filter(|&c| stats.n[c] == 0.0).collect();
    let mut comps = occupied.clone();
    comps.extend(empty.first());
    let zero_weights = vec![0.0; k];
    let mut buf = Vec::with_capacity(comps.len());
    x.iter()
        .map(|xi| {
            log_scores(xi, &comps, g, &zero_weights, &mut buf);
            let mut scores = vec![0.0; k];
            for (&c, s) in occupied.iter().zip(&buf) {
                scores[c] = s + elw[c];
            }
            if let Some(shared) = buf.get(occupied.len()) {
                for &c in &empty {
                    scores[c] = shared + elw[c];
                }
            }
            softmax_in_place(&mut scores);
            scores
        })
        .collect()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// k-means++ seeding followed by one hard assignment, relabelled so that
/// component 0 is the largest.
fn initial_responsibilities(x: &[Vec<f64>], k: usize, seeds: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<usize> = vec![rng.random_range(0..n)];
    let mut d2: Vec<f64> = x.iter().map(|xi| sq_dist(xi, &x[centers[0]])).collect();
    while centers.len() < seeds.min(k).min(n) {
        let total: f64 = d2.iter().sum();
        if total <= 0.0 {
            break;
        }
        let mut target = rng.random_range(0.0..total);
        let mut pick = n - 1;
        for (i, w) in d2.iter().enumerate() {
            if target < *w {
                pick = i;
                break;
            }
            target -= w;
        }
        centers.push(pick);
        for (i, xi) in x.iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(xi, &x[pick]));
        }
    }
    let assign: Vec<usize> = x
        .iter()
        .map(|xi| {
            let mut best = 0;
            let mut best_d = f64::INFINITY;
            for (c, &ci) in centers.iter().enumerate() {
                let dd = sq_dist(xi, &x[ci]);
                if dd < best_d {
                    best_d = dd;
                    best = c;
                }
            }
            best
        })
        .collect();
    let mut counts = vec![0usize; centers.len()];
    for &a in &assign {
        counts[a] += 1;
    }
    let mut rank: Vec<usize> = (0..centers.len()).collect();
    rank.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
    let mut slot = vec![0; centers.len()];
    for (pos, &c) in rank.iter().enumerate() {
        slot[c] = pos;
    }
    assign
        .iter()
        .map(|&a| {
            let mut r = vec![0.0; k];
            r[slot[a]] = 1.0;
            r
        })
        .collect()
}

struct State {
    resp: Vec<Vec<f64>>,
    stats: Stats,
    globals: Globals,
    entropy: f64,
    elbo: f64,
}

impl State {
    fn new(x: &[Vec<f64>], resp: Vec<Vec<f64>>, prior: &Prior, k: usize) -> Self {
        let d = prior.rate.len();
        let stats = Stats::from_resp(x, &resp, k, d);
        let globals = update_globals(&stats, prior);
        let entropy = entropy(&resp);
        let elbo = bound_without_entropy(&stats, &globals, prior) + entropy;
        Self {
            resp,
            stats,
            globals,
            entropy,
            elbo,
        }
    }
}

/// Candidate pairs: each occupied component with its nearest occupied
/// neighbour, closest pairs first.
fn merge_candidates(state: &State) -> Vec<(usize, usize)> {
    let occupied: Vec<usize> = (0..state.stats.n.len()).filter(|&c| state.stats.n[c] > 1e-8).collect();
    let mut pairs: Vec<(f64, usize, usize)> = Vec::new();
    for &a in &occupied {
        let nearest = occupied
            .iter()
            .filter(|&&b| b != a)
            .map(|&b| (sq_dist(&state.globals.xbar[a], &state.globals.xbar[b]), b))
            .min_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)));
        if let Some((dist, b)) = nearest {
            let (lo, hi) = if a < b { (a, b) } else { (b, a) };
            pairs.push((dist, lo, hi));
        }
    }
    pairs.sort_by(|p, q| p.0.total_cmp(&q.0).then(p.1.cmp(&q.1)).then(p.2.cmp(&q.2)));
    pairs.dedup_by(|p, q| p.1 == q.1 && p.2 == q.2);
    pairs.into_iter().map(|(_, a, b)| (a, b)).collect()
}

fn merged_entropy_delta(resp: &[Vec<f64>], a: usize, b: usize) -> f64 {
    let h = |r: f64| if r > 0.0 { -r * r.ln() } else { 0.0 };
    resp.iter().map(|r| h(r[a] + r[b]) - h(r[a]) - h(r[b])).sum()
}

/// Greedily applies merges that raise the bound. Returns whether any did.
fn try_merges(state: &mut State, prior: &Prior) -> bool {
    let mut touched = vec![false; state.stats.n.len()];
    let mut merged = false;
    for (a, b) in merge_candidates(state) {
        if touched[a] || touched[b] {
            continue;
        }
        let mut stats = state.stats.clone();
        stats.merge_into(a, b);
        let globals = update_globals(&stats, prior);
        let entropy = state.entropy + merged_entropy_delta(&state.resp, a, b);
        let elbo = bound_without_entropy(&stats, &globals, prior) + entropy;
        if elbo > state.elbo {
            for r in &mut state.resp {
                r[a] += r[b];
                r[b] = 0.0;
            }
            state.stats = stats;
            state.globals = globals;
            state.entropy = entropy;
            state.elbo = elbo;
            touched[a] = true;
            touched[b] = true;
            merged = true;
        }
    }
    merged
}

/// Fits the mixture to `data` (rows are d-vectors).
pub fn fit_dpgmm(data: &[Vec<f64>], cfg: &DpGmmConfig) -> Result<DpGmmModel> {
    cfg.validate()?;
    if data.len() < 2 {
        return Err(Error::arg(format!("need at least 2 data points, got {}", data.len())));
    }
    let d = data[0].len();
    if d == 0 {
        return Err(Error::arg("data dimension must be at least 1"));
    }
    if data.iter().any(|r| r.len() != d) {
        return Err(Error::arg("data rows have inconsistent dimensions"));
    }
    if data.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::arg("data must be finite"));
    }
    let n = data.len() as f64;
    let centre: Vec<f64> = (0..d).map(|j| data.iter().map(|r| r[j]).sum::<f64>() / n).collect();
    let x: Vec<Vec<f64>> = data
        .iter()
        .map(|r| r.iter().zip(&centre).map(|(v, m)| v - m).collect())
        .collect();
    let spread: Vec<f64> = (0..d)
        .map(|j| (x.iter().map(|r| r[j] * r[j]).sum::<f64>() / n).max(VARIANCE_FLOOR))
        .collect();
    let (prior_var, prior_beta) = match cfg.prior_scale {
        None => (spread.clone(), MEAN_PRIOR_STRENGTH),
        Some(s) => {
            let v = (s * s).max(VARIANCE_FLOOR);
            let ratio = spread.iter().map(|e| v / e).sum::<f64>() / d as f64;
            (vec![v; d], ratio.clamp(1e-6, MEAN_PRIOR_STRENGTH))
        }
    };
    let prior = Prior {
        beta: prior_beta,
        shape: 1.0,
        rate: prior_var,
        alpha: cfg.concentration,
    };

    let k = cfg.truncation;
    let mut state = State::new(&x, initial_responsibilities(&x, k, INIT_SEEDS, cfg.seed), &prior, k);
    let mut trace = vec![state.elbo];
    let mut iterations = 0;
    while iterations < cfg.max_iters {
        iterations += 1;
        let resp = local_step(&x, &state.stats, &state.globals);
        state = State::new(&x, resp, &prior, k);
        let prev = *trace.last().expect("trace is never empty");
        trace.push(state.elbo);
        if (state.elbo - prev).abs() <= cfg.tol * prev.abs().max(1.0) {
            if try_merges(&mut state, &prior) {
                trace.push(state.elbo);
            } else {
                break;
            }
        }
    }

    let total: f64 = state.stats.n.iter().sum();
    let active: Vec<usize> = (0..k).filter(|&c| state.stats.n[c] / total >= ACTIVE_WEIGHT).collect();
    let elw = expected_log_weights(&state.globals);
    let g = &state.globals;
    let mut buf = Vec::new();
    let responsibilities: Vec<Vec<f64>> = x
        .iter()
        .map(|xi| {
            log_scores(xi, &active, g, &elw, &mut buf);
            softmax_in_place(&mut buf);
            buf.clone()
        })
        .collect();
    let active_mass: f64 = active.iter().map(|&c| state.stats.n[c]).sum();
    let weights = active.iter().map(|&c| state.stats.n[c] / active_mass).collect();
    let means = active
        .iter()
        .map(|&c| g.mean[c].iter().zip(&centre).map(|(m, o)| m + o).collect())
        .collect();
    let covariances = active
        .iter()
        .map(|&c| g.rate[c].iter().map(|b| (b / g.shape[c]).max(VARIANCE_FLOOR)).collect())
        .collect();
    let components = active
        .iter()
        .map(|&c| ComponentPosterior {
            mean: g.mean[c].iter().zip(&centre).map(|(m, o)| m + o).collect(),
            beta: g.beta[c],
            shape: g.shape[c],
            rate: g.rate[c].clone(),
            expected_log_weight: elw[c],
        })
        .collect();
    Ok(DpGmmModel {
        version: MODEL_VERSION,
        dim: d,
        weights,
        means,
        covariances,
        responsibilities,
        elbo_trace: trace,
        iterations,
        components,
    })
}

/// Argmax responsibility under the fitted posterior; ties go to the lower id.
pub fn predict_labels(model: &DpGmmModel, data: &[Vec<f64>]) -> Result<Vec<usize>> {
    if let Some(bad) = data.iter().find(|r| r.len() != model.dim) {
        return Err(Error::arg(format!(
            "data dimension {} does not match model dimension {}",
            bad.len(),
            model.dim
        )));
    }
    let pre: Vec<f64> = model
        .components
        .iter()
        .map(|c| {
            let dg = digamma(c.shape);
            c.expected_log_weight
                + c.rate
                    .iter()
                    .map(|b| 0.5 * (dg - b.ln()) - 0.5 * LN_2PI - 0.5 / c.beta)
                    .sum::<f64>()
        })
        .collect();
    Ok(data
        .iter()
        .map(|x| {
            let scores: Vec<f64> = model
                .components
                .iter()
                .zip(&pre)
                .map(|(c, p)| {
                    p - 0.5
                        * x.iter()
                            .zip(&c.mean)
                            .zip(&c.rate)
                            .map(|((xj, m), b)| c.shape / b * (xj - m) * (xj - m))
                            .sum::<f64>()
                })
                .collect();
            argmax(&scores)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    pub(crate) fn blobs(k: usize, per: usize, d: usize, sep: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut data = Vec::new();
        let mut truth = Vec::new();
        for c in 0..k {
            let mut centre = vec![0.0; d];
            centre[c % d] = sep * (1 + c / d) as f64;
            for _ in 0..per {
                data.push(
                    centre
                        .iter()
                        .map(|m| {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            m + z
                        })
                        .collect(),
                );
                truth.push(c);
            }
        }
        (data, truth)
    }

    fn agreement(labels: &[usize], truth: &[usize], k: usize) -> f64 {
        // best label permutation by majority vote per true class
        let mut hits = 0;
        for c in 0..k {
            let mut counts = std::collections::BTreeMap::new();
            for (l, t) in labels.iter().zip(truth) {
                if *t == c {
                    *counts.entry(*l).or_insert(0) += 1;
                }
            }
            hits += counts.values().max().copied().unwrap_or(0);
        }
        hits as f64 / truth.len() as f64
    }

    #[test]
    fn two_blobs_recovered() {
        let (data, truth) = blobs(2, 200, 4, 10.0, 5);
        let cfg = DpGmmConfig { truncation: 20, seed: 5, ..Default::default() };
        let model = fit_dpgmm(&data, &cfg).unwrap();
        assert_eq!(model.n_active(), 2);
        assert!(agreement(&model.labels(), &truth, 2) >= 0.99);
        assert!(model.elbo_trace.windows(2).all(|w| w[1] >= w[0] - 1e-6));
        let s: f64 = model.weights.iter().sum();
        assert!((s - 1.0).abs() < 1e-8);
        for r in &model.responsibilities {
            assert!((r.iter().sum::<f64>() - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn single_blob_gives_one_component() {
        let (data, _) = blobs(1, 150, 3, 0.0, 2);
        let model = fit_dpgmm(&data, &DpGmmConfig::default()).unwrap();
        assert_eq!(model.n_active(), 1);
    }

    #[test]
    fn identical_points_floor_the_covariance() {
        let data = vec![vec![3.0, -1.0]; 10];
        let model = fit_dpgmm(&data, &DpGmmConfig::default()).unwrap();
        assert_eq!(model.n_active(), 1);
        assert!(model.covariances[0].iter().all(|&v| v >= VARIANCE_FLOOR));
    }

    #[test]
    fn prediction_matches_training_argmax() {
        let (data, truth) = blobs(2, 100, 4, 10.0, 9);
        let model = fit_dpgmm(&data, &DpGmmConfig { seed: 9, ..Default::default() }).unwrap();
        assert_eq!(predict_labels(&model, &data).unwrap(), model.labels());
        let at_means = predict_labels(&model, &model.means).unwrap();
        assert_eq!(at_means, (0..model.n_active()).collect::<Vec<_>>());

        let (held_out, held_truth) = blobs(2, 100, 4, 10.0, 99);
        let pred = predict_labels(&model, &held_out).unwrap();
        assert!(agreement(&pred, &held_truth, 2) >= 0.99);
        let _ = truth;
        assert!(predict_labels(&model, &[vec![0.0; 3]]).is_err());
    }

    #[test]
    fn fixed_seed_is_bit_identical_and_round_trips() {
        let (data, _) = blobs(3, 50, 2, 10.0, 4);
        let cfg = DpGmmConfig { seed: 4, ..Default::default() };
        let a = fit_dpgmm(&data, &cfg).unwrap();
        let b = fit_dpgmm(&data, &cfg).unwrap();
        assert_eq!(a, b);
        let back = DpGmmModel::from_json(&a.to_json().unwrap()).unwrap();
        assert_eq!(a, back);
        let bumped = a.to_json().unwrap().replace("\"version\":1", "\"version\":7");
        assert!(DpGmmModel::from_json(&bumped).is_err());
    }

    #[test]
    fn one_dimensional_timestamps_with_prior_scale() {
        let data: Vec<Vec<f64>> = [100.0, 101.0, 99.0, 300.0, 302.0, 500.0, 498.0]
            .iter()
            .map(|&t| vec![t])
            .collect();
        let cfg = DpGmmConfig {
            truncation: 50,
            concentration: 3.7,
            prior_scale: Some(10.0),
            ..Default::default()
        };
        let model = fit_dpgmm(&data, &cfg).unwrap();
        let mut means: Vec<f64> = model.means.iter().map(|m| m[0].round()).collect();
        means.sort_by(f64::total_cmp);
        assert_eq!(means, vec![100.0, 301.0, 499.0]);
    }

    #[test]
    fn invalid_inputs_rejected() {
        let cfg = DpGmmConfig::default();
        assert!(fit_dpgmm(&[vec![1.0]], &cfg).is_err());
        assert!(fit_dpgmm(&[vec![1.0], vec![1.0, 2.0]], &cfg).is_err());
        assert!(fit_dpgmm(&[vec![], vec![]], &cfg).is_err());
        let bad = DpGmmConfig { concentration: 0.0, ..Default::default() };
        assert!(fit_dpgmm(&[vec![1.0], vec![2.0]], &bad).is_err());
    }
}
