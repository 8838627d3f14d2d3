//! Noise removal: a scalar random-walk Kalman filter for raw channels and
//! Savitzky-Golay smoothing for derived profiles.

use nalgebra::{DMatrix, DVector, Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::dataset::{ArmTrack, Trajectory};
use crate::error::{Error, Result};
use crate::profiles::rotation::nearest_rotation;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KalmanConfig {
    pub process_noise_cov: f64,
    pub measurement_noise_cov: f64,
    pub initial_estimate_cov: f64,
}

impl Default for KalmanConfig {
    fn default() -> Self {
        Self {
            process_noise_cov: 0.1,
            measurement_noise_cov: 0.05,
            initial_estimate_cov: 1.0,
        }
    }
}

impl KalmanConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = [self.process_noise_cov, self.measurement_noise_cov, self.initial_estimate_cov]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::arg("Kalman covariances must be finite and strictly positive"))
        }
    }
}

/// Constant-position Kalman filter; returns the filtered estimates.
///
/// The state starts at the first measurement with variance
/// `initial_estimate_cov` and every sample, including the first, is
/// assimilated.
pub fn kalman_smooth(series: &[f64], cfg: &KalmanConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let first = *series
        .first()
        .ok_or_else(|| Error::arg("cannot filter an empty series"))?;
    let (q, r) = (cfg.process_noise_cov, cfg.measurement_noise_cov);
    let mut x = first;
    let mut p = cfg.initial_estimate_cov;
    let mut out = Vec::with_capacity(series.len());
    for (t, &z) in series.iter().enumerate() {
        if t > 0 {
            p += q;
        }
        let gain = p / (p + r);
        x += gain * (z - x);
        p *= 1.0 - gain;
        out.push(x);
    }
    Ok(out)
}

fn kalman_vec3(seq: &[Vector3<f64>], cfg: &KalmanConfig) -> Result<Vec<Vector3<f64>>> {
    let mut out = vec![Vector3::zeros(); seq.len()];
    for c in 0..3 {
        let ch: Vec<f64> = seq.iter().map(|v| v[c]).collect();
        for (o, v) in out.iter_mut().zip(kalman_smooth(&ch, cfg)?) {
            o[c] = v;
        }
    }
    Ok(out)
}

/// Filters positions, velocities, gripper angles and the nine rotation
/// entries channel by channel; rotations are projected back onto SO(3).
pub fn kalman_track(track: &ArmTrack, cfg: &KalmanConfig) -> Result<ArmTrack> {
    let positions = kalman_vec3(track.positions(), cfg)?;
    let velocities = kalman_vec3(track.linear_velocities(), cfg)?;
    let grips = kalman_smooth(track.gripper_angles(), cfg)?;
    let mut rot = vec![Matrix3::zeros(); track.len()];
    for i in 0..3 {
        for j in 0..3 {
            let ch: Vec<f64> = track.rotations().iter().map(|r| r[(i, j)]).collect();
            for (m, v) in rot.iter_mut().zip(kalman_smooth(&ch, cfg)?) {
                m[(i, j)] = v;
            }
        }
    }
    let rotations = rot
        .iter()
        .map(|m| nearest_rotation(m).ok_or_else(|| Error::Data("non-finite rotation after filtering".into())))
        .collect::<Result<Vec<_>>>()?;
    Ok(ArmTrack::from_parts_unchecked(positions, rotations, velocities, grips))
}

pub fn kalman_trajectory(traj: &Trajectory, cfg: &KalmanConfig) -> Result<Trajectory> {
    use crate::dataset::ArmId;
    let left = kalman_track(traj.arm(ArmId::MasterLeft), cfg)?;
    let right = kalman_track(traj.arm(ArmId::MasterRight), cfg)?;
    Trajectory::new(traj.trial_id(), traj.rate_hz(), left, right)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SavGolConfig {
    pub window_length: usize,
    pub poly_order: usize,
}

impl SavGolConfig {
    pub fn new(window_length: usize, poly_order: usize) -> Result<Self> {
        let cfg = Self {
            window_length,
            poly_order,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_length < 3 || self.window_length.is_multiple_of(2) {
            return Err(Error::arg(format!(
                "Savitzky-Golay window must be odd and >= 3, got {}",
                self.window_length
            )));
        }
        if self.poly_order < 1 || self.poly_order >= self.window_length {
            return Err(Error::arg(format!(
                "polynomial order {} must be in 1..{}",
                self.poly_order, self.window_length
            )));
        }
        Ok(())
    }
}

/// Row `j` holds the weights that evaluate the least-squares polynomial fit
/// of a window at window position `j`.
fn savgol_weights(window: usize, order: usize) -> Result<DMatrix<f64>> {
    let half = (window / 2) as f64;
    // Scaled abscissa keeps the normal equations well conditioned.
    let x = |i: usize| (i as f64 - half) / half.max(1.0);
    let vander = DMatrix::from_fn(window, order + 1, |i, k| x(i).powi(k as i32));
    let pinv = vander
        .clone()
        .pseudo_inverse(1e-14)
        .map_err(|e| Error::arg(format!("Savitzky-Golay design is singular: {e}")))?;
    Ok(vander * pinv)
}

/// Savitzky-Golay smoothing.
///
/// Interior samples use the centred convolution. The first and last
/// `window_length / 2` samples are taken from the polynomial fitted to the
/// first (last) full window, so polynomials of degree `<= poly_order` are
/// reproduced exactly everywhere.
pub fn savgol_smooth(series: &[f64], cfg: &SavGolConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let w = cfg.window_length;
    let n = series.len();
    if n < w {
        return Err(Error::arg(format!(
            "series of length {n} is shorter than the window {w}"
        )));
    }
    let weights = savgol_weights(w, cfg.poly_order)?;
    let half = w / 2;
    let center = weights.row(half).transpose();
    let mut out = vec![0.0; n];
    for t in half..n - half {
        out[t] = center.dot(&DVector::from_column_slice(&series[t - half..t + half + 1]));
    }
    let head = DVector::from_column_slice(&series[..w]);
    let tail = DVector::from_column_slice(&series[n - w..]);
    for j in 0..half {
        out[j] = weights.row(j).transpose().dot(&head);
        out[n - w + half + 1 + j] = weights.row(half + 1 + j).transpose().dot(&tail);
    }
    Ok(out)
}
