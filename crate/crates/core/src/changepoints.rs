//! Critical-point detection on normalized profiles.
//!
//! The default detector follows wavelet ridge lines: local maxima of a Ricker
//! continuous wavelet transform are linked from the coarsest scale down to
//! the finest, and ridges that are long and strong enough mark a peak. A
//! fixed height/prominence detector is kept for comparison.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiles::{Profile, ProfileName};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CwtConfig {
    /// Ricker widths, strictly increasing.
    pub widths: Vec<f64>,
    pub min_snr: f64,
    /// Rows a ridge may skip before it is closed.
    pub gap_thresh: usize,
    pub min_ridge_length: usize,
}

impl Default for CwtConfig {
    fn default() -> Self {
        let widths: Vec<f64> = (1..=31).map(f64::from).collect();
        let min_ridge_length = widths.len().div_ceil(4);
        Self {
            widths,
            min_snr: 1.5,
            gap_thresh: 2,
            min_ridge_length,
        }
    }
}

impl CwtConfig {
    pub fn validate(&self) -> Result<()> {
        validate_widths(&self.widths)?;
        if !(self.min_snr > 0.0 && self.min_snr.is_finite()) {
            return Err(Error::arg("min_snr must be positive"));
        }
        if self.min_ridge_length == 0 {
            return Err(Error::arg("min_ridge_length must be at least 1"));
        }
        Ok(())
    }
}

fn validate_widths(widths: &[f64]) -> Result<()> {
    if widths.is_empty() {
        return Err(Error::arg("CWT widths must be non-empty"));
    }
    if widths.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(Error::arg("CWT widths must be positive"));
    }
    if widths.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::arg("CWT widths must be strictly increasing"));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdConfig {
    pub min_height: f64,
    pub min_prominence: f64,
    pub min_separation: usize,
}

impl Default for ThresholdConfig {
    fn default() -> Self {
        Self {
            min_height: 0.3,
            min_prominence: 0.1,
            min_separation: 15,
        }
    }
}

impl ThresholdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.min_height) || !(0.0..=1.0).contains(&self.min_prominence) {
            return Err(Error::arg("threshold height and prominence must lie in [0, 1]"));
        }
        if self.min_separation == 0 {
            return Err(Error::arg("min_separation must be at least 1"));
        }
        Ok(())
    }
}

/// Which detector turns a profile into critical points.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum PeakDetector {
    #[default]
    Cwt,
    Threshold(ThresholdConfig),
}

/// Odd-length Ricker (Mexican hat) kernel of width `a`, support `+-ceil(5a)`.
pub fn ricker_kernel(a: f64) -> Vec<f64> {
    let half = (5.0 * a).ceil() as isize;
    let amp = 2.0 / ((3.0 * a).sqrt() * std::f64::consts::PI.powf(0.25));
    (-half..=half)
        .map(|i| {
            let x2 = (i * i) as f64 / (a * a);
            amp * (1.0 - x2) * (-x2 / 2.0).exp()
        })
        .collect()
}

/// Reflects an out-of-range index back into `0..n` without repeating the edge sample.
fn mirror(i: isize, n: usize) -> usize {
    let n = n as isize;
    let mut i = i;
    if n == 1 {
        return 0;
    }
    loop {
        if i < 0 {
            i = -i;
        } else if i >= n {
            i = 2 * (n - 1) - i;
        } else {
            return i as usize;
        }
    }
}

#[derive(Clone, Copy)]
enum Padding {
    Zero,
    Mirror,
}

fn convolve_same(series: &[f64], kernel: &[f64], padding: Padding) -> Vec<f64> {
    let n = series.len() as isize;
    let half = (kernel.len() / 2) as isize;
    (0..n)
        .map(|t| {
            let mut acc = 0.0;
            for (k, w) in kernel.iter().enumerate() {
                // kernel is symmetric, so correlation equals convolution
                let i = t + k as isize - half;
                let v = match padding {
                    Padding::Zero if i < 0 || i >= n => 0.0,
                    Padding::Zero => series[i as usize],
                    Padding::Mirror => series[mirror(i, n as usize)],
                };
                acc += w * v;
            }
            acc
        })
        .collect()
}

fn cwt_padded(series: &[f64], widths: &[f64], padding: Padding) -> Result<Vec<Vec<f64>>> {
    if series.is_empty() {
        return Err(Error::arg("cannot transform an empty series"));
    }
    validate_widths(widths)?;
    Ok(widths
        .iter()
        .map(|&a| convolve_same(series, &ricker_kernel(a), padding))
        .collect())
}

/// Ricker CWT with zero padding; row `s` is the response at `widths[s]`.
pub fn cwt(series: &[f64], widths: &[f64]) -> Result<Vec<Vec<f64>>> {
    cwt_padded(series, widths, Padding::Zero)
}

fn local_maxima(row: &[f64]) -> Vec<usize> {
    (1..row.len().saturating_sub(1))
        .filter(|&i| row[i] > row[i - 1] && row[i] > row[i + 1])
        .collect()
}

#[derive(Debug, Clone)]
struct Ridge {
    /// (row, col) pairs from coarse to fine.
    points: Vec<(usize, usize)>,
    gap: usize,
}

impl Ridge {
    fn last_col(&self) -> usize {
        self.points.last().expect("ridge is never empty").1
    }
}

fn ridge_lines(matrix: &[Vec<f64>], widths: &[f64], gap_thresh: usize) -> Vec<Ridge> {
    let rows = matrix.len();
    let max_dist: Vec<usize> = widths.iter().map(|w| ((w / 4.0).ceil() as usize).max(1)).collect();
    let mut open: Vec<Ridge> = Vec::new();
    let mut closed: Vec<Ridge> = Vec::new();
    for row in (0..rows).rev() {
        for ridge in &mut open {
            ridge.gap += 1;
        }
        let mut taken = vec![false; open.len()];
        for col in local_maxima(&matrix[row]) {
            let nearest = open
                .iter()
                .enumerate()
                .filter(|(i, _)| !taken[*i])
                .map(|(i, r)| (r.last_col().abs_diff(col), i))
                .min();
            match nearest {
                Some((d, i)) if d <= max_dist[row] => {
                    taken[i] = true;
                    open[i].points.push((row, col));
                    open[i].gap = 0;
                }
                _ => {
                    taken.push(true);
                    open.push(Ridge {
                        points: vec![(row, col)],
                        gap: 0,
                    });
                }
            }
        }
        let (keep, done): (Vec<Ridge>, Vec<Ridge>) = open.into_iter().partition(|r| r.gap <= gap_thresh);
        closed.extend(done);
        open = keep;
    }
    closed.extend(open);
    closed
}

fn percentile(values: &mut [f64], q: f64) -> f64 {
    values.sort_by(f64::total_cmp);
    let pos = q / 100.0 * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    values[lo] + (values[hi] - values[lo]) * (pos - lo as f64)
}

/// Peak indices from CWT ridge lines, sorted and deduplicated.
///
/// The transform mirrors the series at its ends so that a non-zero baseline
/// does not create edge ridges. A ridge survives when it spans at least
/// `min_ridge_length` scales and its strongest response is at least
/// `min_snr` times the noise floor, the 95th percentile of the absolute
/// finest-scale response. Each ridge reports its finest-scale position.
pub fn find_peaks_cwt(series: &[f64], cfg: &CwtConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    if series.len() < 3 {
        return Ok(Vec::new());
    }
    let matrix = cwt_padded(series, &cfg.widths, Padding::Mirror)?;
    let mut finest: Vec<f64> = matrix[0].iter().map(|v| v.abs()).collect();
    let noise = percentile(&mut finest, 95.0).max(1e-12);
    let mut peaks: Vec<usize> = ridge_lines(&matrix, &cfg.widths, cfg.gap_thresh)
        .into_iter()
        .filter(|r| r.points.len() >= cfg.min_ridge_length)
        .filter(|r| {
            let strongest = r
                .points
                .iter()
                .map(|&(row, col)| matrix[row][col])
                .fold(f64::NEG_INFINITY, f64::max);
            strongest / noise >= cfg.min_snr
        })
        .map(|r| r.last_col())
        .collect();
    peaks.sort_unstable();
    peaks.dedup();
    Ok(peaks)
}

/// Local maxima, with flat tops reported at their (lower) midpoint.
fn plateau_maxima(x: &[f64]) -> Vec<usize> {
    let mut out = Vec::new();
    let n = x.len();
    let mut i = 1;
    while i + 1 < n {
        if x[i - 1] < x[i] {
            let mut j = i;
            while j + 1 < n && x[j + 1] == x[i] {
                j += 1;
            }
            if j + 1 < n && x[j + 1] < x[i] {
                out.push((i + j) / 2);
                i = j + 1;
                continue;
            }
        }
        i += 1;
    }
    out
}

/// Height of a peak above the higher of its two contour bases.
pub fn prominence(x: &[f64], peak: usize) -> f64 {
    let h = x[peak];
    let mut left_min = h;
    for &v in x[..peak].iter().rev() {
        if v > h {
            break;
        }
        left_min = left_min.min(v);
    }
    let mut right_min = h;
    for &v in &x[peak + 1..] {
        if v > h {
            break;
        }
        right_min = right_min.min(v);
    }
    h - left_min.max(right_min)
}

/// Local maxima passing height and prominence thresholds, thinned so that
/// kept peaks are at least `min_separation` apart (higher wins, ties to the
/// earlier index).
pub fn find_peaks_threshold(series: &[f64], cfg: &ThresholdConfig) -> Result<Vec<usize>> {
    cfg.validate()?;
    let candidates: Vec<usize> = plateau_maxima(series)
        .into_iter()
        .filter(|&i| series[i] >= cfg.min_height)
        .filter(|&i| prominence(series, i) >= cfg.min_prominence)
        .collect();
    let mut order = candidates.clone();
    order.sort_by(|&a, &b| series[b].total_cmp(&series[a]).then(a.cmp(&b)));
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| k.abs_diff(i) >= cfg.min_separation) {
            kept.push(i);
        }
    }
    kept.sort_unstable();
    Ok(kept)
}

pub fn detect_peaks(series: &[f64], detector: &PeakDetector, cwt_cfg: &CwtConfig) -> Result<Vec<usize>> {
    match detector {
        PeakDetector::Cwt => find_peaks_cwt(series, cwt_cfg),
        PeakDetector::Threshold(t) => find_peaks_threshold(series, t),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub frame: usize,
    pub source: ProfileName,
}

/// Critical points from all profiles; duplicates are kept.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CriticalPointSet {
    pub points: Vec<CriticalPoint>,
}

impl CriticalPointSet {
    pub fn frames(&self) -> Vec<usize> {
        self.points.iter().map(|p| p.frame).collect()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Union of per-profile peaks, converted to trial frame indices.
pub fn critical_points_from_profiles(profiles: &[Profile], cfg: &CwtConfig) -> Result<CriticalPointSet> {
    critical_points_with(profiles, &PeakDetector::Cwt, cfg)
}

pub fn critical_points_with(
    profiles: &[Profile],
    detector: &PeakDetector,
    cwt_cfg: &CwtConfig,
) -> Result<CriticalPointSet> {
    let mut points = Vec::new();
    for p in profiles {
        let offset = p.name.frame_offset();
        for i in detect_peaks(&p.values, detector, cwt_cfg)? {
            points.push(CriticalPoint {
                frame: i + offset,
                source: p.name,
            });
        }
    }
    points.sort_unstable();
    Ok(CriticalPointSet { points })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bump(len: usize, center: f64, sigma: f64) -> Vec<f64> {
        (0..len)
            .map(|t| (-((t as f64 - center) / sigma).powi(2) / 2.0).exp())
            .collect()
    }

    #[test]
    fn zero_series_gives_zero_matrix() {
        let m = cwt(&[0.0; 64], &[1.0, 2.0, 4.0]).unwrap();
        assert_eq!(m.len(), 3);
        assert!(m.iter().flatten().all(|v| *v == 0.0));
        assert!(cwt(&[], &[1.0]).is_err());
        assert!(cwt(&[1.0], &[2.0, 1.0]).is_err());
    }

    #[test]
    fn impulse_response_is_the_kernel() {
        let mut x = vec![0.0; 101];
        x[50] = 1.0;
        let widths = [2.0, 5.0];
        let m = cwt(&x, &widths).unwrap();
        for (row, &a) in m.iter().zip(&widths) {
            let k = ricker_kernel(a);
            let half = k.len() / 2;
            let reversed: Vec<f64> = k.iter().rev().copied().collect();
            for (j, kv) in reversed.iter().enumerate() {
                assert!((row[50 - half + j] - kv).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn gaussian_bump_response_peaks_at_the_matched_scale() {
        let sigma = 8.0;
        let x = bump(400, 200.0, sigma);
        let widths: Vec<f64> = (1..=40).map(f64::from).collect();
        let m = cwt(&x, &widths).unwrap();
        let argmax = |f: &dyn Fn(usize) -> f64| (0..widths.len()).max_by(|&a, &b| f(a).total_cmp(&f(b))).unwrap();
        let computed = argmax(&|s| m[s][200]);
        // Continuous response at the centre is proportional to
        // a^(5/2) / (sigma^2 + a^2)^(3/2), maximal at a = sqrt(5) sigma.
        let analytic = argmax(&|s| {
            let a = widths[s];
            a.powf(2.5) / (sigma * sigma + a * a).powf(1.5)
        });
        assert_eq!(computed, analytic, "width {} vs {}", widths[computed], widths[analytic]);
    }

    #[test]
    fn flat_series_has_no_cwt_peaks() {
        let cfg = CwtConfig::default();
        assert!(find_peaks_cwt(&[0.0; 200], &cfg).unwrap().is_empty());
        assert!(find_peaks_cwt(&[0.4; 200], &cfg).unwrap().is_empty());
    }

    #[test]
    fn threshold_examples() {
        let cfg = ThresholdConfig {
            min_height: 0.5,
            min_prominence: 0.0,
            min_separation: 1,
        };
        assert_eq!(find_peaks_threshold(&[0.0, 1.0, 0.0], &cfg).unwrap(), vec![1]);
        let ramp: Vec<f64> = (0..20).map(|i| i as f64 / 19.0).collect();
        assert!(find_peaks_threshold(&ramp, &cfg).unwrap().is_empty());
    }

    #[test]
    fn threshold_thinning_prefers_earlier_tie() {
        let mut x = vec![0.0; 30];
        x[10] = 1.0;
        x[13] = 1.0;
        let cfg = ThresholdConfig {
            min_height: 0.5,
            min_prominence: 0.1,
            min_separation: 10,
        };
        assert_eq!(find_peaks_threshold(&x, &cfg).unwrap(), vec![10]);
    }

    #[test]
    fn plateau_reports_midpoint() {
        assert_eq!(plateau_maxima(&[0.0, 1.0, 1.0, 1.0, 0.0]), vec![2]);
        assert_eq!(plateau_maxima(&[0.0, 1.0, 1.0, 2.0]), Vec::<usize>::new());
    }

    #[test]
    fn prominence_uses_higher_base() {
        let x = [0.0, 0.8, 0.3, 1.0, 0.1];
        assert!((prominence(&x, 1) - 0.5).abs() < 1e-12);
        assert!((prominence(&x, 3) - 0.9).abs() < 1e-12);
    }

    #[test]
    fn union_keeps_multiplicity() {
        let mut a = vec![0.0; 300];
        let mut b = vec![0.0; 300];
        for (t, v) in bump(300, 100.0, 6.0).into_iter().enumerate() {
            a[t] += v;
            b[t] += v;
        }
        for (t, v) in bump(300, 200.0, 6.0).into_iter().enumerate() {
            b[t] += v;
        }
        let cfg = CwtConfig::default();
        let profiles = [
            Profile { name: ProfileName::LTransVar, values: a.clone() },
            Profile { name: ProfileName::RTransVar, values: b },
        ];
        let set = critical_points_from_profiles(&profiles, &cfg).unwrap();
        assert_eq!(set.frames(), vec![100, 100, 200]);

        let single = critical_points_from_profiles(&profiles[..1], &cfg).unwrap();
        assert_eq!(single.frames(), find_peaks_cwt(&a, &cfg).unwrap());
    }

    #[test]
    fn distance_profiles_are_shifted_to_the_later_frame() {
        let profile = Profile { name: ProfileName::LTransDist, values: bump(300, 100.0, 6.0) };
        let set = critical_points_from_profiles(&[profile], &CwtConfig::default()).unwrap();
        assert_eq!(set.frames(), vec![101]);
    }

    fn two_bumps() -> Vec<f64> {
        let a = bump(500, 100.0, 6.0);
        let b = bump(500, 300.0, 6.0);
        a.iter().zip(&b).map(|(x, y)| x + y).collect()
    }

    // Argmax of each half after a 9-point moving average.
    fn smoothed_argmax_oracle(x: &[f64], ranges: &[(usize, usize)]) -> Vec<usize> {
        let n = x.len();
        let smooth: Vec<f64> = (0..n)
            .map(|t| {
                let lo = t.saturating_sub(4);
                let hi = (t + 4).min(n - 1);
                x[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64
            })
            .collect();
        ranges
            .iter()
            .map(|&(lo, hi)| (lo..hi).max_by(|&a, &b| smooth[a].total_cmp(&smooth[b])).unwrap())
            .collect()
    }

    #[test]
    fn two_bumps_give_two_peaks() {
        let x = two_bumps();
        let peaks = find_peaks_cwt(&x, &CwtConfig::default()).unwrap();
        let oracle = smoothed_argmax_oracle(&x, &[(0, 200), (200, 500)]);
        assert_eq!(peaks.len(), 2, "{peaks:?}");
        for (p, o) in peaks.iter().zip(&oracle) {
            assert!(p.abs_diff(*o) <= 5, "{peaks:?} vs {oracle:?}");
        }
    }

    #[test]
    fn noisy_bumps_keep_two_peaks() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, Normal};
        let clean = two_bumps();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(13);
        let noise = Normal::new(0.0, 0.05).unwrap();
        let x: Vec<f64> = clean.iter().map(|v| v + noise.sample(&mut rng)).collect();
        let cfg = CwtConfig { min_snr: 2.0, ..CwtConfig::default() };
        let peaks = find_peaks_cwt(&x, &cfg).unwrap();
        let oracle = smoothed_argmax_oracle(&clean, &[(0, 200), (200, 500)]);
        assert_eq!(peaks.len(), 2, "{peaks:?}");
        for (p, o) in peaks.iter().zip(&oracle) {
            assert!(p.abs_diff(*o) <= 8, "{peaks:?} vs {oracle:?}");
        }
    }

    fn brute_force_thinning(x: &[f64], cands: &[usize], sep: usize) -> Vec<usize> {
        // Repeatedly take the highest remaining (earliest on ties) and drop its neighbours.
        let mut left: Vec<usize> = cands.to_vec();
        let mut kept = Vec::new();
        while !left.is_empty() {
            let mut best = left[0];
            for &c in &left {
                if x[c] > x[best] || (x[c] == x[best] && c < best) {
                    best = c;
                }
            }
            kept.push(best);
            left.retain(|&c| c.abs_diff(best) >= sep);
        }
        kept.sort_unstable();
        kept
    }

    #[test]
    fn thinning_matches_brute_force() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..200 {
            let n = rng.random_range(5..80);
            let x: Vec<f64> = (0..n).map(|_| (rng.random_range(0..6) as f64) / 5.0).collect();
            let cfg = ThresholdConfig {
                min_height: 0.2,
                min_prominence: 0.1,
                min_separation: rng.random_range(1..12),
            };
            let cands: Vec<usize> = plateau_maxima(&x)
                .into_iter()
                .filter(|&i| x[i] >= cfg.min_height && prominence(&x, i) >= cfg.min_prominence)
                .collect();
            assert_eq!(
                find_peaks_threshold(&x, &cfg).unwrap(),
                brute_force_thinning(&x, &cands, cfg.min_separation)
            );
        }
    }

    #[test]
    fn detectors_are_scale_invariant_after_normalization() {
        let normalize = |v: &mut Vec<f64>| {
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            v.iter_mut().for_each(|x| *x = (*x - lo) / (hi - lo));
        };
        let mut x = two_bumps();
        let mut scaled: Vec<f64> = x.iter().map(|v| 3.7 * v + 2.0).collect();
        normalize(&mut x);
        normalize(&mut scaled);
        let cfg = CwtConfig::default();
        assert_eq!(find_peaks_cwt(&x, &cfg).unwrap(), find_peaks_cwt(&scaled, &cfg).unwrap());
        let t = ThresholdConfig::default();
        assert_eq!(find_peaks_threshold(&x, &t).unwrap(), find_peaks_threshold(&scaled, &t).unwrap());
    }
}
