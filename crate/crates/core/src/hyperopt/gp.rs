use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

/// Jitter added to the kernel diagonal.
pub const GP_NOISE: f64 = 1e-4;
/// Length-scale candidates per dimension (unit-cube inputs).
pub const LENGTH_SCALE_GRID: [f64; 7] = [0.05, 0.092466, 0.170998, 0.316228, 0.584804, 1.081484, 2.0];

fn matern52(r: f64) -> f64 {
    let s = 5f64.sqrt() * r;
    (1.0 + s + s * s / 3.0) * (-s).exp()
}

fn scaled_distance(a: &[f64], b: &[f64], ls: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .zip(ls)
        .map(|((x, y), l)| ((x - y) / l).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Gaussian-process regression on standardized targets with the signal
/// variance profiled out of the marginal likelihood.
pub struct GaussianProcess {
    x: Vec<Vec<f64>>,
    length_scales: Vec<f64>,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    signal_var: f64,
    y_mean: f64,
    y_std: f64,
}

struct Fit {
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    signal_var: f64,
    log_ml: f64,
}

fn fit_with(x: &[Vec<f64>], y: &DVector<f64>, ls: &[f64]) -> Option<Fit> {
    let n = x.len();
    let k = DMatrix::from_fn(n, n, |i, j| {
        matern52(scaled_distance(&x[i], &x[j], ls)) + if i == j { GP_NOISE } else { 0.0 }
    });
    let chol = k.cholesky()?;
    let alpha = chol.solve(y);
    let quad = y.dot(&alpha);
    let log_det: f64 = chol.l_dirty().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    let raw_var = quad / n as f64;
    // constant targets carry no scale information; keep sigma informative
    let signal_var = if raw_var > 1e-12 { raw_var } else { 1.0 };
    let log_ml = -0.5 * n as f64 * signal_var.ln() - 0.5 * log_det;
    Some(Fit {
        chol,
        alpha,
        signal_var,
        log_ml,
    })
}

fn grid(dims: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new()];
    for _ in 0..dims {
        out = out
            .into_iter()
            .flat_map(|p| {
                LENGTH_SCALE_GRID.iter().map(move |&l| {
                    let mut q = p.clone();
                    q.push(l);
                    q
                })
            })
            .collect();
    }
    out
}

impl GaussianProcess {
    /// Fits on unit-cube inputs, choosing per-dimension length-scales by
    /// maximum marginal likelihood over the full grid (first best wins).
    pub fn fit(x: &[Vec<f64>], y: &[f64]) -> Option<Self> {
        if x.is_empty() || x.len() != y.len() {
            return None;
        }
        let n = y.len() as f64;
        let y_mean = y.iter().sum::<f64>() / n;
        let sd = (y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / n).sqrt();
        let y_std = if sd > 1e-12 { sd } else { 1.0 };
        let ys = DVector::from_iterator(y.len(), y.iter().map(|v| (v - y_mean) / y_std));
        let candidates = grid(x[0].len());
        let scores: Vec<Option<f64>> = candidates
            .par_iter()
            .map(|ls| fit_with(x, &ys, ls).map(|f| f.log_ml))
            .collect();
        let mut best: Option<(usize, f64)> = None;
        for (i, s) in scores.iter().enumerate() {
            if let Some(s) = s {
                if best.is_none_or(|(_, b)| *s > b) {
                    best = Some((i, *s));
                }
            }
        }
        let (idx, _) = best?;
        let ls = candidates[idx].clone();
        let fit = fit_with(x, &ys, &ls)?;
        Some(Self {
            x: x.to_vec(),
            length_scales: ls,
            chol: fit.chol,
            alpha: fit.alpha,
            signal_var: fit.signal_var,
            y_mean,
            y_std,
        })
    }

    pub fn length_scales(&self) -> &[f64] {
        &self.length_scales
    }

    /// Posterior mean and standard deviation on the standardized scale.
    pub fn predict_standardized(&self, q: &[f64]) -> (f64, f64) {
        let k = DVector::from_iterator(
            self.x.len(),
            self.x.iter().map(|xi| matern52(scaled_distance(xi, q, &self.length_scales))),
        );
        let mean = k.dot(&self.alpha);
        let v = self.chol.solve(&k);
        let var = (1.0 - k.dot(&v)).max(0.0) * self.signal_var;
        (mean, var.sqrt())
    }

    /// Posterior mean and standard deviation in the original units.
    pub fn predict(&self, q: &[f64]) -> (f64, f64) {
        let (m, s) = self.predict_standardized(q);
        (self.y_mean + m * self.y_std, s * self.y_std)
    }
}
