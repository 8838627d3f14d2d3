//! Deterministic synthetic trials with known gesture boundaries.
//!
//! Each gesture moves both tools at a constant linear and angular velocity.
//! At every boundary the tools make a short transfer motion (a smooth burst
//! of translation and rotation) and the gripper changes level, so the
//! kinematic profiles carry a peak at each boundary. Visual features are
//! drawn from a Gaussian per gesture label.

use std::collections::BTreeMap;

use nalgebra::{Matrix3, Rotation3, Unit, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{ArmTrack, FeatureSequence, GestureSegment, Trajectory, Transcription, GESTURE_COUNT};
use crate::error::{Error, Result};

/// Parameters of a synthetic trial. Validated on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    n_gestures: usize,
    duration_range: (usize, usize),
    feature_dim: usize,
    window_len: usize,
    window_step: usize,
    position_noise: f64,
    rotation_noise: f64,
    feature_noise: f64,
    feature_separation: f64,
    motion_scale: f64,
    rate_hz: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_gestures: 5,
            duration_range: (90, 160),
            feature_dim: 16,
            window_len: 30,
            window_step: 5,
            position_noise: 1e-4,
            rotation_noise: 2e-3,
            feature_noise: 1.0,
            feature_separation: 5.0,
            motion_scale: 1.0,
            rate_hz: super::DEFAULT_RATE_HZ,
        }
    }
}

impl SyntheticSpec {
    /// `n_gestures` segments with durations drawn uniformly from
    /// `min_frames..=max_frames`.
    pub fn new(n_gestures: usize, min_frames: usize, max_frames: usize) -> Result<Self> {
        if n_gestures == 0 {
            return Err(Error::arg("n_gestures must be at least 1"));
        }
        if min_frames < 40 || max_frames < min_frames {
            return Err(Error::arg(format!(
                "duration range {min_frames}..={max_frames} invalid (min must be >= 40)"
            )));
        }
        Ok(Self {
            n_gestures,
            duration_range: (min_frames, max_frames),
            ..Self::default()
        })
    }

    pub fn with_noise(mut self, position: f64, rotation: f64, feature: f64) -> Result<Self> {
        if [position, rotation, feature].iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::arg("noise levels must be finite and non-negative"));
        }
        self.position_noise = position;
        self.rotation_noise = rotation;
        self.feature_noise = feature;
        Ok(self)
    }

    pub fn with_features(mut self, dim: usize, window_len: usize, window_step: usize) -> Result<Self> {
        if dim == 0 || window_step == 0 || window_len <= window_step {
            return Err(Error::arg("need dim >= 1 and window_len > window_step >= 1"));
        }
        self.feature_dim = dim;
        self.window_len = window_len;
        self.window_step = window_step;
        Ok(self)
    }

    /// Minimum distance between label means in units of the feature noise.
    pub fn with_feature_separation(mut self, sigmas: f64) -> Result<Self> {
        if !(sigmas >= 5.0 && sigmas.is_finite()) {
            return Err(Error::arg("feature separation must be at least 5 sigma"));
        }
        self.feature_separation = sigmas;
        Ok(self)
    }

    /// Scales all tool motion; `0.0` yields a stationary trial.
    pub fn with_motion_scale(mut self, scale: f64) -> Result<Self> {
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(Error::arg("motion scale must be finite and non-negative"));
        }
        self.motion_scale = scale;
        Ok(self)
    }

    pub fn n_gestures(&self) -> usize {
        self.n_gestures
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_dim
    }

    pub fn window_len(&self) -> usize {
        self.window_len
    }

    pub fn window_step(&self) -> usize {
        self.window_step
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }
}

/// Noise-free motion plan of one tool.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmPlan {
    pub origin: Vector3<f64>,
    pub base_rotation: Matrix3<f64>,
    /// Per-gesture linear velocity (metres/frame).
    pub velocities: Vec<Vector3<f64>>,
    /// Per-gesture angular velocity as axis * rate (radians/frame).
    pub angular_velocities: Vec<Vector3<f64>>,
    /// Per-boundary transfer displacement (metres).
    pub burst_displacements: Vec<Vector3<f64>>,
    /// Per-boundary reorientation as axis * angle (radians).
    pub burst_rotations: Vec<Vector3<f64>>,
    pub grip_levels: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticPlan {
    /// Start frame of each gesture; the first is 0.
    pub starts: Vec<usize>,
    pub total_len: usize,
    pub labels: Vec<u8>,
    pub arms: [ArmPlan; 2],
    /// Half-width of the boundary transfer motion, in frames.
    pub burst_half_width: f64,
    pub label_means: BTreeMap<u8, Vec<f64>>,
}

/// C2 step from 0 (x <= -1) to 1 (x >= 1).
pub(crate) fn smootherstep(x: f64) -> f64 {
    let u = ((x + 1.0) / 2.0).clamp(0.0, 1.0);
    u * u * u * (u * (u * 6.0 - 15.0) + 10.0)
}

fn smootherstep_slope(x: f64) -> f64 {
    if x <= -1.0 || x >= 1.0 {
        return 0.0;
    }
    let u = (x + 1.0) / 2.0;
    // d/dx = d/du * 1/2
    15.0 * u * u * (u - 1.0) * (u - 1.0)
}

fn exp_so3(v: &Vector3<f64>) -> Matrix3<f64> {
    *Rotation3::new(*v).matrix()
}

impl SyntheticPlan {
    fn gesture_len(&self, g: usize) -> usize {
        self.starts.get(g + 1).copied().unwrap_or(self.total_len) - self.starts[g]
    }

    fn elapsed(&self, g: usize, t: f64) -> f64 {
        (t - self.starts[g] as f64).clamp(0.0, self.gesture_len(g) as f64)
    }

    fn burst_phase(&self, b: usize, t: f64) -> f64 {
        (t - self.starts[b + 1] as f64) / self.burst_half_width
    }

    pub fn gesture_at(&self, t: usize) -> usize {
        self.starts.partition_point(|&s| s <= t) - 1
    }

    pub fn position(&self, arm: usize, t: f64) -> Vector3<f64> {
        let plan = &self.arms[arm];
        let mut p = plan.origin;
        for (g, v) in plan.velocities.iter().enumerate() {
            p += v * self.elapsed(g, t);
        }
        for (b, d) in plan.burst_displacements.iter().enumerate() {
            p += d * smootherstep(self.burst_phase(b, t));
        }
        p
    }

    /// `base * G_0 * B_0 * G_1 * B_1 * ... * G_last`.
    pub fn rotation(&self, arm: usize, t: f64) -> Matrix3<f64> {
        let plan = &self.arms[arm];
        let mut r = plan.base_rotation;
        for (g, w) in plan.angular_velocities.iter().enumerate() {
            r *= exp_so3(&(w * self.elapsed(g, t)));
            if let Some(theta) = plan.burst_rotations.get(g) {
                r *= exp_so3(&(theta * smootherstep(self.burst_phase(g, t))));
            }
        }
        r
    }

    /// Linear velocity in metres per frame.
    pub fn velocity(&self, arm: usize, t: usize) -> Vector3<f64> {
        let plan = &self.arms[arm];
        let mut v = plan.velocities[self.gesture_at(t)];
        for (b, d) in plan.burst_displacements.iter().enumerate() {
            v += d * smootherstep_slope(self.burst_phase(b, t as f64)) / self.burst_half_width;
        }
        v
    }

    pub fn grip(&self, arm: usize, t: f64) -> f64 {
        let levels = &self.arms[arm].grip_levels;
        let mut g = levels[0];
        for b in 0..levels.len() - 1 {
            g += (levels[b + 1] - levels[b]) * smootherstep(self.burst_phase(b, t));
        }
        g
    }

    pub fn boundaries(&self) -> Vec<usize> {
        self.starts[1..].to_vec()
    }
}

fn unit_vector(rng: &mut ChaCha8Rng) -> Vector3<f64> {
    loop {
        let v = Vector3::from_fn(|_, _| StandardNormal.sample(rng));
        let n: f64 = Vector3::norm(&v);
        if n > 1e-6 {
            return v / n;
        }
    }
}

fn random_rotation(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
    let axis = Unit::new_normalize(unit_vector(rng));
    *Rotation3::from_axis_angle(&axis, rng.random_range(0.0..std::f64::consts::PI)).matrix()
}

/// Draws the noise-free plan for `(spec, seed)`.
pub fn plan_trial(spec: &SyntheticSpec, seed: u64) -> SyntheticPlan {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = spec.n_gestures;
    let (lo, hi) = spec.duration_range;

    let mut starts = Vec::with_capacity(n);
    let mut t = 0;
    for _ in 0..n {
        starts.push(t);
        t += rng.random_range(lo..=hi);
    }
    let total_len = t;

    let mut labels: Vec<u8> = Vec::with_capacity(n);
    for _ in 0..n {
        loop {
            let l = rng.random_range(1..=GESTURE_COUNT);
            if labels.last() != Some(&l) {
                labels.push(l);
                break;
            }
        }
    }

    let k = spec.motion_scale;
    let arm_plan = |rng: &mut ChaCha8Rng| ArmPlan {
        origin: Vector3::new(rng.random_range(-0.05..0.05), rng.random_range(-0.05..0.05), 0.0),
        base_rotation: random_rotation(rng),
        velocities: (0..n)
            .map(|_| unit_vector(rng) * rng.random_range(3e-4..1e-3) * k)
            .collect(),
        angular_velocities: (0..n)
            .map(|_| unit_vector(rng) * rng.random_range(2e-3..8e-3) * k)
            .collect(),
        burst_displacements: (1..n)
            .map(|_| unit_vector(rng) * rng.random_range(0.025..0.04) * k)
            .collect(),
        burst_rotations: (1..n)
            .map(|_| unit_vector(rng) * rng.random_range(0.4..0.7) * k)
            .collect(),
        grip_levels: (0..n).map(|_| rng.random_range(0.0..1.0) * k).collect(),
    };
    let arms = [arm_plan(&mut rng), arm_plan(&mut rng)];

    let mut label_means = BTreeMap::new();
    // noise-free features still need distinct means
    let sigma = if spec.feature_noise > 0.0 { spec.feature_noise } else { 1.0 };
    let min_dist = spec.feature_separation * sigma;
    let mut unique: Vec<u8> = labels.clone();
    unique.sort_unstable();
    unique.dedup();
    for &label in &unique {
        let mean = loop {
            let cand: Vec<f64> = (0..spec.feature_dim)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * spec.feature_separation * sigma
                })
                .collect();
            let far = label_means.values().all(|m: &Vec<f64>| {
                m.iter().zip(&cand).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt() >= min_dist
            });
            if far {
                break cand;
            }
        };
        label_means.insert(label, mean);
    }

    SyntheticPlan {
        starts,
        total_len,
        labels,
        arms,
        burst_half_width: 6.0,
        label_means,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticTrial {
    pub trajectory: Trajectory,
    pub transcription: Transcription,
    pub features: FeatureSequence,
    pub plan: SyntheticPlan,
}

impl SyntheticTrial {
    pub fn into_parts(self) -> (Trajectory, Transcription, FeatureSequence) {
        (self.trajectory, self.transcription, self.features)
    }
}

/// Generates a labeled trial. Identical `(spec, seed)` give identical output.
pub fn synthesize_trial(spec: &SyntheticSpec, seed: u64) -> SyntheticTrial {
    let plan = plan_trial(spec, seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_5eed_5eed_5eed);
    let total = plan.total_len;

    let mut tracks = Vec::with_capacity(2);
    for arm in 0..2 {
        let mut positions = Vec::with_capacity(total);
        let mut rotations = Vec::with_capacity(total);
        let mut velocities = Vec::with_capacity(total);
        let mut grips = Vec::with_capacity(total);
        for t in 0..total {
            let tf = t as f64;
            let mut p = plan.position(arm, tf);
            let mut r = plan.rotation(arm, tf);
            if spec.position_noise > 0.0 {
                p += Vector3::from_fn(|_, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * spec.position_noise
                });
            }
            if spec.rotation_noise > 0.0 {
                let w = Vector3::from_fn(|_, _| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    z * spec.rotation_noise
                });
                r = exp_so3(&w) * r;
            }
            positions.push(p);
            rotations.push(r);
            velocities.push(plan.velocity(arm, t) * spec.rate_hz);
            grips.push(plan.grip(arm, tf));
        }
        tracks.push(ArmTrack::from_parts_unchecked(positions, rotations, velocities, grips));
    }
    let right = tracks.pop().expect("two arms");
    let left = tracks.pop().expect("two arms");
    let trajectory = Trajectory::new(format!("synthetic-{seed}"), spec.rate_hz, left, right)
        .expect("synthetic trajectory is valid");

    let segments = plan
        .starts
        .iter()
        .enumerate()
        .map(|(g, &start)| GestureSegment {
            start,
            end: plan.starts.get(g + 1).copied().unwrap_or(total) - 1,
            label: plan.labels[g],
        })
        .collect();
    let transcription = Transcription::new(segments).expect("synthetic transcription is valid");

    let mut anchors = Vec::new();
    let mut vectors = Vec::new();
    let mut start = 0;
    while start + spec.window_len <= total {
        let anchor = start + spec.window_len / 2;
        let mean = &plan.label_means[&plan.labels[plan.gesture_at(anchor)]];
        let v = mean
            .iter()
            .map(|m| {
                let z: f64 = StandardNormal.sample(&mut rng);
                m + z * spec.feature_noise
            })
            .collect();
        anchors.push(anchor);
        vectors.push(v);
        start += spec.window_step;
    }
    let features = FeatureSequence::new(anchors, vectors, spec.feature_dim)
        .expect("synthetic features are valid");

    SyntheticTrial {
        trajectory,
        transcription,
        features,
        plan,
    }
}
