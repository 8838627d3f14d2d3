//! Trial data: kinematic trajectories, gesture transcriptions and visual
//! feature sequences, with their on-disk text formats.
//!
//! Kinematic files carry 76 whitespace-separated columns per frame: four arm
//! blocks of 19 values each (position, row-major rotation, linear velocity,
//! angular velocity, gripper angle). Only the two master blocks are kept.

mod synthetic;

use std::fmt::Write as _;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::profiles::rotation::{is_rotation, nearest_rotation};

#[cfg(test)]
pub(crate) use synthetic::smootherstep;
pub use synthetic::{plan_trial, synthesize_trial, ArmPlan, SyntheticPlan, SyntheticSpec, SyntheticTrial};

pub const DEFAULT_RATE_HZ: f64 = 30.0;
pub const KINEMATIC_COLUMNS: usize = 76;
const BLOCK: usize = 19;
/// Largest Frobenius distance from SO(3) that rotation repair will accept.
pub const MAX_ROTATION_REPAIR: f64 = 0.1;
/// Orthonormality error below which a parsed rotation is kept unchanged.
const EXACT_ROTATION_TOL: f64 = 1e-12;
pub const GESTURE_COUNT: u8 = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ArmId {
    MasterLeft,
    MasterRight,
}

impl ArmId {
    pub const ALL: [ArmId; 2] = [ArmId::MasterLeft, ArmId::MasterRight];
}

/// One tool's time series, all sequences of equal length.
#[derive(Debug, Clone, PartialEq)]
pub struct ArmTrack {
    positions: Vec<Vector3<f64>>,
    rotations: Vec<Matrix3<f64>>,
    linear_velocities: Vec<Vector3<f64>>,
    gripper_angles: Vec<f64>,
}

impl ArmTrack {
    pub fn new(
        positions: Vec<Vector3<f64>>,
        rotations: Vec<Matrix3<f64>>,
        linear_velocities: Vec<Vector3<f64>>,
        gripper_angles: Vec<f64>,
    ) -> Result<Self> {
        let n = positions.len();
        if rotations.len() != n || linear_velocities.len() != n || gripper_angles.len() != n {
            return Err(Error::Data(format!(
                "arm track sequences differ in length ({}, {}, {}, {})",
                n,
                rotations.len(),
                linear_velocities.len(),
                gripper_angles.len()
            )));
        }
        if let Some(t) = rotations.iter().position(|r| !is_rotation(r, 1e-6)) {
            return Err(Error::Data(format!("rotation at frame {t} is not orthonormal")));
        }
        Ok(Self {
            positions,
            rotations,
            linear_velocities,
            gripper_angles,
        })
    }

    /// Track holding `positions` with identity rotations and zero velocity.
    pub fn from_positions(positions: Vec<Vector3<f64>>) -> Self {
        let n = positions.len();
        Self {
            positions,
            rotations: vec![Matrix3::identity(); n],
            linear_velocities: vec![Vector3::zeros(); n],
            gripper_angles: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vector3<f64>] {
        &self.positions
    }

    pub fn rotations(&self) -> &[Matrix3<f64>] {
        &self.rotations
    }

    pub fn linear_velocities(&self) -> &[Vector3<f64>] {
        &self.linear_velocities
    }

    pub fn gripper_angles(&self) -> &[f64] {
        &self.gripper_angles
    }

    pub(crate) fn from_parts_unchecked(
        positions: Vec<Vector3<f64>>,
        rotations: Vec<Matrix3<f64>>,
        linear_velocities: Vec<Vector3<f64>>,
        gripper_angles: Vec<f64>,
    ) -> Self {
        Self {
            positions,
            rotations,
            linear_velocities,
            gripper_angles,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    trial_id: String,
    rate_hz: f64,
    left: ArmTrack,
    right: ArmTrack,
}

impl Trajectory {
    pub fn new(trial_id: impl Into<String>, rate_hz: f64, left: ArmTrack, right: ArmTrack) -> Result<Self> {
        if !(rate_hz > 0.0 && rate_hz.is_finite()) {
            return Err(Error::arg(format!("rate_hz must be positive, got {rate_hz}")));
        }
        if left.len() != right.len() {
            return Err(Error::Data(format!(
                "arm tracks differ in length ({} vs {})",
                left.len(),
                right.len()
            )));
        }
        if left.len() < 2 {
            return Err(Error::Data("a trajectory needs at least 2 frames".into()));
        }
        Ok(Self {
            trial_id: trial_id.into(),
            rate_hz,
            left,
            right,
        })
    }

    pub fn trial_id(&self) -> &str {
        &self.trial_id
    }

    pub fn rate_hz(&self) -> f64 {
        self.rate_hz
    }

    pub fn len(&self) -> usize {
        self.left.len()
    }

    pub fn is_empty(&self) -> bool {
        self.left.is_empty()
    }

    pub fn arm(&self, id: ArmId) -> &ArmTrack {
        match id {
            ArmId::MasterLeft => &self.left,
            ArmId::MasterRight => &self.right,
        }
    }

    pub fn arms(&self) -> impl Iterator<Item = (ArmId, &ArmTrack)> {
        ArmId::ALL.into_iter().map(move |id| (id, self.arm(id)))
    }

    pub fn with_trial_id(mut self, trial_id: impl Into<String>) -> Self {
        self.trial_id = trial_id.into();
        self
    }
}

type ArmBlock = (Vector3<f64>, Matrix3<f64>, Vector3<f64>, f64);

fn parse_block(vals: &[f64], line: usize) -> Result<ArmBlock> {
    let pos = Vector3::new(vals[0], vals[1], vals[2]);
    let raw = Matrix3::from_row_slice(&vals[3..12]);
    let vel = Vector3::new(vals[12], vals[13], vals[14]);
    let grip = vals[18];
    if !raw.iter().all(|v| v.is_finite()) {
        return Err(Error::Parse {
            line,
            msg: "rotation matrix is not finite".into(),
        });
    }
    // already orthonormal to rounding: keep it, so parse(write(x)) is exact
    if is_rotation(&raw, EXACT_ROTATION_TOL) {
        return Ok((pos, raw, vel, grip));
    }
    let rot = nearest_rotation(&raw).ok_or_else(|| Error::Parse {
        line,
        msg: "rotation matrix is not finite".into(),
    })?;
    let dist = (raw - rot).norm();
    if dist > MAX_ROTATION_REPAIR {
        return Err(Error::Data(format!(
            "line {line}: rotation matrix is {dist:.3} (Frobenius) from the nearest rotation"
        )));
    }
    Ok((pos, rot, vel, grip))
}

/// Parses a 76-column kinematics file, keeping the two master-arm blocks.
pub fn parse_kinematics(raw_text: &str, rate_hz: f64) -> Result<Trajectory> {
    parse_kinematics_named("", raw_text, rate_hz)
}

pub fn parse_kinematics_named(trial_id: &str, raw_text: &str, rate_hz: f64) -> Result<Trajectory> {
    let mut left = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut right = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut vals = Vec::with_capacity(KINEMATIC_COLUMNS);
    for (i, text) in raw_text.lines().enumerate() {
        let line = i + 1;
        if text.trim().is_empty() {
            continue;
        }
        vals.clear();
        for tok in text.split_whitespace() {
            let v: f64 = tok.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("not a number: {tok:?}"),
            })?;
            vals.push(v);
        }
        if vals.len() != KINEMATIC_COLUMNS {
            return Err(Error::Parse {
                line,
                msg: format!("expected {KINEMATIC_COLUMNS} columns, found {}", vals.len()),
            });
        }
        for (block, dst) in [(0, &mut left), (1, &mut right)] {
            let (p, r, v, g) = parse_block(&vals[block * BLOCK..(block + 1) * BLOCK], line)?;
            dst.0.push(p);
            dst.1.push(r);
            dst.2.push(v);
            dst.3.push(g);
        }
    }
    if left.0.is_empty() {
        return Err(Error::Empty("no frames".into()));
    }
    let left = ArmTrack::new(left.0, left.1, left.2, left.3)?;
    let right = ArmTrack::new(right.0, right.1, right.2, right.3)?;
    Trajectory::new(trial_id, rate_hz, left, right)
}

/// Writes a trajectory back in the 76-column layout. Angular velocities and
/// the slave blocks are not retained on parse and are written as zeros.
pub fn write_kinematics(traj: &Trajectory) -> String {
    let mut out = String::new();
    for t in 0..traj.len() {
        let mut cols: Vec<f64> = Vec::with_capacity(KINEMATIC_COLUMNS);
        for id in ArmId::ALL {
            let arm = traj.arm(id);
            cols.extend(arm.positions[t].iter());
            let r = &arm.rotations[t];
            for row in 0..3 {
                cols.extend((0..3).map(|c| r[(row, c)]));
            }
            cols.extend(arm.linear_velocities[t].iter());
            cols.extend([0.0; 3]);
            cols.push(arm.gripper_angles[t]);
        }
        cols.resize(KINEMATIC_COLUMNS, 0.0);
        let line: Vec<String> = cols.iter().map(|v| format!("{v:e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    out
}

/// One labeled gesture interval, 0-based inclusive frames.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GestureSegment {
    pub start: usize,
    pub end: usize,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Transcription {
    segments: Vec<GestureSegment>,
}

impl Transcription {
    /// Sorts by start frame and validates ranges, overlaps and labels.
    pub fn new(mut segments: Vec<GestureSegment>) -> Result<Self> {
        segments.sort_by_key(|s| (s.start, s.end));
        for s in &segments {
            if s.start > s.end {
                return Err(Error::Validation(format!("reversed range {}..{}", s.start, s.end)));
            }
            if !(1..=GESTURE_COUNT).contains(&s.label) {
                return Err(Error::Validation(format!("unknown gesture label G{}", s.label)));
            }
        }
        for w in segments.windows(2) {
            if w[1].start <= w[0].end {
                return Err(Error::Validation(format!(
                    "segments overlap: {}..{} and {}..{}",
                    w[0].start, w[0].end, w[1].start, w[1].end
                )));
            }
        }
        Ok(Self { segments })
    }

    pub fn segments(&self) -> &[GestureSegment] {
        &self.segments
    }

    pub fn labels(&self) -> Vec<u8> {
        self.segments.iter().map(|s| s.label).collect()
    }

    /// Ground-truth segmentation points: the start frame of every segment
    /// after the first.
    pub fn boundaries(&self) -> Vec<usize> {
        self.segments.iter().skip(1).map(|s| s.start).collect()
    }

    /// Gesture label at `frame`, if it lies inside a segment.
    pub fn label_at(&self, frame: usize) -> Option<u8> {
        let i = self.segments.partition_point(|s| s.end < frame);
        self.segments
            .get(i)
            .filter(|s| s.start <= frame)
            .map(|s| s.label)
    }
}

/// Parses `"<start> <end> G<k>"` lines with 1-based inclusive frames.
pub fn parse_transcription(raw_text: &str) -> Result<Transcription> {
    let mut segments = Vec::new();
    for (i, text) in raw_text.lines().enumerate() {
        let line = i + 1;
        let toks: Vec<&str> = text.split_whitespace().collect();
        if toks.is_empty() {
            continue;
        }
        if toks.len() != 3 {
            return Err(Error::Parse {
                line,
                msg: format!("expected '<start> <end> G<k>', found {} fields", toks.len()),
            });
        }
        let frame = |tok: &str| -> Result<usize> {
            let v: usize = tok.parse().map_err(|_| Error::Parse {
                line,
                msg: format!("bad frame number {tok:?}"),
            })?;
            v.checked_sub(1).ok_or_else(|| Error::Parse {
                line,
                msg: "frames are 1-based".into(),
            })
        };
        let start = frame(toks[0])?;
        let end = frame(toks[1])?;
        let label = toks[2]
            .strip_prefix('G')
            .and_then(|k| k.parse::<u32>().ok())
            .ok_or_else(|| Error::Parse {
                line,
                msg: format!("bad gesture label {:?}", toks[2]),
            })?;
        let label = u8::try_from(label)
            .map_err(|_| Error::Validation(format!("unknown gesture label G{label}")))?;
        segments.push(GestureSegment { start, end, label });
    }
    Transcription::new(segments)
}

pub fn write_transcription(t: &Transcription) -> String {
    let mut out = String::new();
    for s in &t.segments {
        let _ = writeln!(out, "{} {} G{}", s.start + 1, s.end + 1, s.label);
    }
    out
}

/// Per-window visual feature vectors keyed by the window's centre frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSequence {
    anchors: Vec<usize>,
    vectors: Vec<Vec<f64>>,
    dim: usize,
}

impl FeatureSequence {
    pub fn new(anchors: Vec<usize>, vectors: Vec<Vec<f64>>, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Format("feature dimension must be positive".into()));
        }
        if anchors.len() != vectors.len() {
            return Err(Error::Format(format!(
                "{} anchors but {} vectors",
                anchors.len(),
                vectors.len()
            )));
        }
        if let Some(w) = anchors.windows(2).find(|w| w[1] <= w[0]) {
            return Err(Error::Format(format!(
                "anchors must be strictly increasing ({} then {})",
                w[0], w[1]
            )));
        }
        if let Some((i, v)) = vectors.iter().enumerate().find(|(_, v)| v.len() != dim) {
            return Err(Error::Format(format!(
                "row {i} has {} values, expected dim={dim}",
                v.len()
            )));
        }
        if vectors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Format("feature values must be finite".into()));
        }
        Ok(Self { anchors, vectors, dim })
    }

    pub fn empty(dim: usize) -> Self {
        Self {
            anchors: Vec::new(),
            vectors: Vec::new(),
            dim: dim.max(1),
        }
    }

    pub fn anchors(&self) -> &[usize] {
        &self.anchors
    }

    pub fn vectors(&self) -> &[Vec<f64>] {
        &self.vectors
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }
}

const FEATURE_MAGIC: &str = "FEAT v1";

/// Parses the `FEAT v1 dim=<d>` feature-file format.
pub fn parse_features(raw_bytes: &[u8]) -> Result<FeatureSequence> {
    let text = std::str::from_utf8(raw_bytes).map_err(|e| Error::Format(format!("not UTF-8: {e}")))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Format("missing 'FEAT v1 dim=<d>' header".into()))?;
    let dim = header
        .trim()
        .strip_prefix(FEATURE_MAGIC)
        .map(str::trim)
        .and_then(|rest| rest.strip_prefix("dim="))
        .and_then(|d| d.parse::<usize>().ok())
        .ok_or_else(|| Error::Format(format!("bad header {header:?}")))?;

    let mut anchors = Vec::new();
    let mut vectors = Vec::new();
    for (i, text) in lines {
        let line = i + 1;
        let mut toks = text.split_whitespace();
        let anchor = toks
            .next()
            .and_then(|t| t.parse::<usize>().ok())
            .ok_or_else(|| Error::Format(format!("line {line}: bad anchor frame")))?;
        let row = toks
            .map(|t| t.parse::<f64>())
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| Error::Format(format!("line {line}: non-numeric feature value")))?;
        if row.len() != dim {
            return Err(Error::Format(format!(
                "line {line}: {} values under dim={dim}",
                row.len()
            )));
        }
        if anchors.last().is_some_and(|&prev| anchor <= prev) {
            return Err(Error::Format(format!(
                "line {line}: anchor {anchor} is not strictly increasing"
            )));
        }
        anchors.push(anchor);
        vectors.push(row);
    }
    FeatureSequence::new(anchors, vectors, dim)
}

pub fn write_features(features: &FeatureSequence) -> String {
    let mut out = format!("{FEATURE_MAGIC} dim={}\n", features.dim);
    for (a, v) in features.anchors.iter().zip(&features.vectors) {
        let _ = write!(out, "{a}");
        for x in v {
            let _ = write!(out, " {x:e}");
        }
        out.push('\n');
    }
    out
}
