//! Characteristic profiles of a trial: per-frame translation and rotation
//! step sizes (distance profiles) and windowed coordinate variance under
//! random reference frames (variance profiles), for both tools.

pub mod rotation;

use std::fmt;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{ArmId, ArmTrack, Trajectory};
use crate::error::{Error, Result};
use rotation::{euler_unchecked, quaternion_distance, rotation_to_quaternion, Quaternion};

pub use rotation::{rotation_to_euler, rotation_to_quaternion as to_quaternion};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProfileName {
    LTransDist,
    LRotDist,
    RTransDist,
    RRotDist,
    LTransVar,
    LRotVar,
    RTransVar,
    RRotVar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum VarianceKind {
    Translation,
    Rotation,
}

impl ProfileName {
    pub const ALL: [ProfileName; 8] = [
        ProfileName::LTransDist,
        ProfileName::LRotDist,
        ProfileName::RTransDist,
        ProfileName::RRotDist,
        ProfileName::LTransVar,
        ProfileName::LRotVar,
        ProfileName::RTransVar,
        ProfileName::RRotVar,
    ];

    pub fn arm(self) -> ArmId {
        use ProfileName::*;
        match self {
            LTransDist | LRotDist | LTransVar | LRotVar => ArmId::MasterLeft,
            _ => ArmId::MasterRight,
        }
    }

    pub fn is_distance(self) -> bool {
        use ProfileName::*;
        matches!(self, LTransDist | LRotDist | RTransDist | RRotDist)
    }

    pub fn is_rotation(self) -> bool {
        use ProfileName::*;
        matches!(self, LRotDist | RRotDist | LRotVar | RRotVar)
    }

    /// Frame index of profile sample 0. Distance samples belong to the later
    /// frame of each consecutive pair.
    pub fn frame_offset(self) -> usize {
        usize::from(self.is_distance())
    }

    fn of(arm: ArmId, distance: bool, rotation: bool) -> Self {
        use ProfileName::*;
        match (arm, distance, rotation) {
            (ArmId::MasterLeft, true, false) => LTransDist,
            (ArmId::MasterLeft, true, true) => LRotDist,
            (ArmId::MasterRight, true, false) => RTransDist,
            (ArmId::MasterRight, true, true) => RRotDist,
            (ArmId::MasterLeft, false, false) => LTransVar,
            (ArmId::MasterLeft, false, true) => LRotVar,
            (ArmId::MasterRight, false, false) => RTransVar,
            (ArmId::MasterRight, false, true) => RRotVar,
        }
    }
}

impl fmt::Display for ProfileName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub name: ProfileName,
    pub values: Vec<f64>,
}

/// Time-constant random reference frames.
#[derive(Debug, Clone, PartialEq)]
pub struct RandomFrameSet {
    pub rotations: Vec<Matrix3<f64>>,
    pub translations: Vec<Vector3<f64>>,
    pub seed: u64,
}

impl RandomFrameSet {
    pub fn len(&self) -> usize {
        self.rotations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rotations.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Matrix3<f64>, &Vector3<f64>)> {
        self.rotations.iter().zip(&self.translations)
    }
}

fn check_len(track: &ArmTrack) -> Result<()> {
    if track.len() < 2 {
        return Err(Error::arg("distance profiles need at least 2 frames"));
    }
    Ok(())
}

/// `values[t-1] = |p(t) - p(t-1)|`.
pub fn translation_distance_profile(track: &ArmTrack, arm: ArmId) -> Result<Profile> {
    check_len(track)?;
    let values = track
        .positions()
        .windows(2)
        .map(|w| (w[1] - w[0]).norm())
        .collect();
    Ok(Profile {
        name: ProfileName::of(arm, true, false),
        values,
    })
}

/// `values[t-1] = arccos(2 (Q(t).Q(t-1))^2 - 1)`.
pub fn rotation_distance_profile(track: &ArmTrack, arm: ArmId) -> Result<Profile> {
    check_len(track)?;
    let quats = track
        .rotations()
        .iter()
        .map(rotation_to_quaternion)
        .collect::<Result<Vec<Quaternion>>>()?;
    let values = quats
        .windows(2)
        .map(|w| quaternion_distance(&w[1], &w[0]))
        .collect();
    Ok(Profile {
        name: ProfileName::of(arm, true, true),
        values,
    })
}

/// Uniform rotations (Shoemake's unit-quaternion sampling) and translations
/// uniform in `[-scale, scale]^3`.
pub fn make_random_frames(n: usize, scale: f64, seed: u64) -> Result<RandomFrameSet> {
    if n < 2 {
        return Err(Error::arg(format!("need at least 2 random frames, got {n}")));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(Error::arg("translation scale must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rotations = Vec::with_capacity(n);
    let mut translations = Vec::with_capacity(n);
    let tau = std::f64::consts::TAU;
    for _ in 0..n {
        let (u1, u2, u3): (f64, f64, f64) = (rng.random(), rng.random(), rng.random());
        let (a, b) = ((1.0 - u1).sqrt(), u1.sqrt());
        let q = Quaternion::new(
            b * (tau * u3).cos(),
            a * (tau * u2).sin(),
            a * (tau * u2).cos(),
            b * (tau * u3).sin(),
        )?;
        rotations.push(q.to_rotation());
        translations.push(Vector3::from_fn(|_, _| rng.random_range(-scale..=scale)));
    }
    Ok(RandomFrameSet {
        rotations,
        translations,
        seed,
    })
}

/// Half the diagonal of the bounding box of both tools' positions.
pub fn translation_scale(traj: &Trajectory) -> f64 {
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for (_, arm) in traj.arms() {
        for p in arm.positions() {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
    }
    let d = (hi - lo).norm() / 2.0;
    if d > 0.0 && d.is_finite() {
        d
    } else {
        1.0
    }
}

/// Expresses a track in a new frame: `p' = R p + T`, `R' = R R(t)`.
pub fn transform_track(track: &ArmTrack, rotation: &Matrix3<f64>, translation: &Vector3<f64>) -> ArmTrack {
    let positions = track.positions().iter().map(|p| rotation * p + translation).collect();
    let rotations = track.rotations().iter().map(|r| rotation * r).collect();
    let velocities = track.linear_velocities().iter().map(|v| rotation * v).collect();
    ArmTrack::from_parts_unchecked(positions, rotations, velocities, track.gripper_angles().to_vec())
}

/// Sample variance over a centred window. Frames closer than half a window
/// to either end use the nearest complete window, so a steady trend gives a
/// flat profile right up to the edges.
pub(crate) fn windowed_variance(x: &[f64], window: usize) -> Vec<f64> {
    let half = window / 2;
    let n = x.len();
    let w = window as f64;
    (0..n)
        .map(|t| {
            let start = t.clamp(half, n - 1 - half) - half;
            let vals = &x[start..start + window];
            let mean = vals.iter().sum::<f64>() / w;
            vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (w - 1.0)
        })
        .collect()
}

/// Removes 2*pi jumps between consecutive samples of an angle sequence.
pub(crate) fn unwrap_angles(x: &mut [f64]) {
    let tau = std::f64::consts::TAU;
    let mut offset = 0.0;
    for i in 1..x.len() {
        let raw_prev = x[i - 1] - offset;
        let d = x[i] - raw_prev;
        offset += -tau * (d / tau).round();
        x[i] += offset;
    }
}

/// Windowed coordinate variance averaged over the random frames.
///
/// For each frame the track is transformed, the three coordinates
/// (positions, or unwrapped Z-Y-X Euler angles) are given a centred sliding
/// window variance, and the three variances are summed. The profile is the
/// mean over frames.
pub fn variance_profile(
    track: &ArmTrack,
    arm: ArmId,
    frames: &RandomFrameSet,
    window: usize,
    kind: VarianceKind,
) -> Result<Profile> {
    if window < 3 || window.is_multiple_of(2) {
        return Err(Error::arg(format!("variance window must be odd and >= 3, got {window}")));
    }
    if track.len() < window {
        return Err(Error::arg(format!(
            "track of length {} is shorter than the variance window {window}",
            track.len()
        )));
    }
    if frames.is_empty() {
        return Err(Error::arg("no random frames"));
    }
    let n = track.len();
    let mut acc = vec![0.0; n];
    let mut channel = vec![0.0; n];
    for (rot, trans) in frames.iter() {
        let moved = transform_track(track, rot, trans);
        let coords: Vec<Vector3<f64>> = match kind {
            VarianceKind::Translation => moved.positions().to_vec(),
            VarianceKind::Rotation => moved.rotations().iter().map(euler_unchecked).collect(),
        };
        for c in 0..3 {
            for (dst, v) in channel.iter_mut().zip(&coords) {
                *dst = v[c];
            }
            if kind == VarianceKind::Rotation {
                unwrap_angles(&mut channel);
            }
            for (a, v) in acc.iter_mut().zip(windowed_variance(&channel, window)) {
                *a += v;
            }
        }
    }
    let m = frames.len() as f64;
    Ok(Profile {
        name: ProfileName::of(arm, false, kind == VarianceKind::Rotation),
        values: acc.into_iter().map(|v| v / m).collect(),
    })
}

/// Min-max scaling to `[0, 1]`; constant profiles become all zeros.
pub fn normalize_profile(p: &Profile) -> Profile {
    let lo = p.values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = p.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    let values = if span > 0.0 && span.is_finite() {
        p.values.iter().map(|v| ((v - lo) / span).clamp(0.0, 1.0)).collect()
    } else {
        vec![0.0; p.values.len()]
    };
    Profile { name: p.name, values }
}

/// Raw (unnormalized) profiles of a trial, in `ProfileName::ALL` order.
pub fn build_profiles(traj: &Trajectory, frames: &RandomFrameSet, window: usize) -> Result<Vec<Profile>> {
    let mut dist = Vec::with_capacity(4);
    let mut var = Vec::with_capacity(4);
    for (id, track) in traj.arms() {
        dist.push(translation_distance_profile(track, id)?);
        dist.push(rotation_distance_profile(track, id)?);
        var.push(variance_profile(track, id, frames, window, VarianceKind::Translation)?);
        var.push(variance_profile(track, id, frames, window, VarianceKind::Rotation)?);
    }
    dist.extend(var);
    Ok(dist)
}
