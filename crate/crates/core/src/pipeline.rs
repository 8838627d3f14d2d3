//! End-to-end segmentation of one trial.
//!
//! The kinematic branch filters the raw tracks, builds the eight profiles,
//! detects their peaks and clusters the union with a first DBSCAN layer.
//! The vision branch clusters feature windows, takes label changes as
//! critical points and clusters their timestamps again. A second DBSCAN
//! layer fuses both sets.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::changepoints::{critical_points_with, CriticalPointSet, CwtConfig, PeakDetector};
use crate::clustering::{cluster_frames, dbscan_1d, fit_dpgmm, DbscanConfig, DpGmmConfig, PointLabel};
use crate::dataset::{FeatureSequence, Trajectory};
use crate::error::{Error, Result};
use crate::filtering::{kalman_trajectory, savgol_smooth, KalmanConfig, SavGolConfig};
use crate::profiles::{build_profiles, make_random_frames, normalize_profile, translation_scale, Profile, ProfileName};

pub const REPORT_SCHEMA: &str = "report_v1";

/// Recording tasks with published tuned settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Suturing,
    NeedlePassing,
    KnotTying,
}

impl Task {
    pub const ALL: [Task; 3] = [Task::Suturing, Task::NeedlePassing, Task::KnotTying];

    pub fn as_str(self) -> &'static str {
        match self {
            Task::Suturing => "suturing",
            Task::NeedlePassing => "needle_passing",
            Task::KnotTying => "knot_tying",
        }
    }

    /// Tuned `(n1, n2, alpha1, alpha2, eps)` for the task.
    pub fn hyperparams(self) -> Hyperparams {
        let (n1, n2, alpha1, alpha2, eps) = match self {
            Task::Suturing => (768, 145, 9.437, 3.729, 28.0),
            Task::NeedlePassing => (545, 708, 183.5, 4.489, 15.49),
            Task::KnotTying => (658, 445, 157.8, 162.2, 31.76),
        };
        Hyperparams {
            n1,
            n2,
            alpha1,
            alpha2,
            eps,
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Task::ALL
            .into_iter()
            .find(|t| t.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown task '{s}'")))
    }
}

/// The tunable subset of the configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyperparams {
    pub n1: usize,
    pub n2: usize,
    pub alpha1: f64,
    pub alpha2: f64,
    pub eps: f64,
}

/// Savitzky-Golay settings per profile kind.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSmoothing {
    pub translation_distance: SavGolConfig,
    pub rotation_distance: SavGolConfig,
    pub translation_variance: SavGolConfig,
    pub rotation_variance: SavGolConfig,
}

impl Default for ProfileSmoothing {
    fn default() -> Self {
        let trans = SavGolConfig {
            window_length: 21,
            poly_order: 3,
        };
        let rot = SavGolConfig {
            window_length: 31,
            poly_order: 2,
        };
        Self {
            translation_distance: trans,
            rotation_distance: rot,
            translation_variance: trans,
            rotation_variance: rot,
        }
    }
}

impl ProfileSmoothing {
    pub fn for_profile(&self, name: ProfileName) -> &SavGolConfig {
        match (name.is_distance(), name.is_rotation()) {
            (true, false) => &self.translation_distance,
            (true, true) => &self.rotation_distance,
            (false, false) => &self.translation_variance,
            (false, true) => &self.rotation_variance,
        }
    }

    fn validate(&self) -> Result<()> {
        self.translation_distance.validate()?;
        self.rotation_distance.validate()?;
        self.translation_variance.validate()?;
        self.rotation_variance.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub kalman: KalmanConfig,
    pub savgol: ProfileSmoothing,
    pub cwt: CwtConfig,
    #[serde(default)]
    pub detector: PeakDetector,
    /// Number of random reference frames for the variance profiles.
    pub frames_n: usize,
    pub variance_window: usize,
    pub dbscan_l1: DbscanConfig,
    pub dbscan_l2: DbscanConfig,
    pub dpgmm_l1: DpGmmConfig,
    pub dpgmm_l2: DpGmmConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self::for_task(Task::Suturing)
    }
}

impl PipelineConfig {
    pub fn for_task(task: Task) -> Self {
        let base = Self {
            seed: 0,
            kalman: KalmanConfig::default(),
            savgol: ProfileSmoothing::default(),
            cwt: CwtConfig::default(),
            detector: PeakDetector::Cwt,
            frames_n: 20,
            variance_window: 31,
            dbscan_l1: DbscanConfig { eps: 28.0, minp: 3 },
            dbscan_l2: DbscanConfig { eps: 28.0, minp: 2 },
            dpgmm_l1: DpGmmConfig::default(),
            dpgmm_l2: DpGmmConfig {
                // timestamps: components a few frames wide
                prior_scale: Some(10.0),
                ..DpGmmConfig::default()
            },
        };
        base.with_hyperparams(&task.hyperparams()).with_seed(0)
    }

    /// Sets the master seed and the seeds derived from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.dpgmm_l1.seed = seed.wrapping_mul(2).wrapping_add(1);
        self.dpgmm_l2.seed = seed.wrapping_mul(2).wrapping_add(2);
        self
    }

    /// Applies tuned values; `eps` sets both DBSCAN layers.
    pub fn with_hyperparams(mut self, h: &Hyperparams) -> Self {
        self.dpgmm_l1.truncation = h.n1;
        self.dpgmm_l2.truncation = h.n2;
        self.dpgmm_l1.concentration = h.alpha1;
        self.dpgmm_l2.concentration = h.alpha2;
        self.dbscan_l1.eps = h.eps;
        self.dbscan_l2.eps = h.eps;
        self
    }

    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            n1: self.dpgmm_l1.truncation,
            n2: self.dpgmm_l2.truncation,
            alpha1: self.dpgmm_l1.concentration,
            alpha2: self.dpgmm_l2.concentration,
            eps: self.dbscan_l2.eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.kalman.validate()?;
        self.savgol.validate()?;
        self.cwt.validate()?;
        if let PeakDetector::Threshold(t) = &self.detector {
            t.validate()?;
        }
        if self.frames_n < 2 {
            return Err(Error::Config("frames_n must be at least 2".into()));
        }
        if self.variance_window < 3 || self.variance_window.is_multiple_of(2) {
            return Err(Error::Config("variance_window must be odd and at least 3".into()));
        }
        self.dbscan_l1.validate()?;
        self.dbscan_l2.validate()?;
        self.dpgmm_l1.validate()?;
        self.dpgmm_l2.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Provenance {
    KinematicDistance,
    KinematicVariance,
    Vision,
    Fused,
}

/// Strictly increasing frame indices, each tagged with where it came from.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct SegmentationPointSet {
    points: Vec<usize>,
    provenance: Vec<Provenance>,
}

impl SegmentationPointSet {
    pub fn new(points: Vec<usize>, provenance: Vec<Provenance>) -> Result<Self> {
        if points.len() != provenance.len() {
            return Err(Error::arg("points and provenance differ in length"));
        }
        if points.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::arg("segmentation points must be strictly increasing"));
        }
        Ok(Self { points, provenance })
    }

    /// Sorts, deduplicates and tags every point with one provenance.
    pub fn uniform(mut points: Vec<usize>, provenance: Provenance) -> Self {
        points.sort_unstable();
        points.dedup();
        let provenance = vec![provenance; points.len()];
        Self { points, provenance }
    }

    pub fn points(&self) -> &[usize] {
        &self.points
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// Filtered, normalized and smoothed profiles in `ProfileName::ALL` order.
pub fn smoothed_profiles(traj: &Trajectory, cfg: &PipelineConfig) -> Result<Vec<Profile>> {
    let filtered = kalman_trajectory(traj, &cfg.kalman)?;
    let frames = make_random_frames(cfg.frames_n, translation_scale(&filtered), cfg.seed)?;
    build_profiles(&filtered, &frames, cfg.variance_window)?
        .iter()
        .map(|p| {
            let norm = normalize_profile(p);
            let values = savgol_smooth(&norm.values, cfg.savgol.for_profile(p.name))?;
            Ok(Profile { name: p.name, values })
        })
        .collect()
}

struct KinematicBranch {
    profiles: Vec<Profile>,
    critical: CriticalPointSet,
    points: SegmentationPointSet,
}

fn kinematic_branch(traj: &Trajectory, cfg: &PipelineConfig) -> Result<KinematicBranch> {
    let profiles = smoothed_profiles(traj, cfg)?;
    let critical = critical_points_with(&profiles, &cfg.detector, &cfg.cwt)?;
    let points = if critical.is_empty() {
        SegmentationPointSet::default()
    } else {
        let frames = critical.frames();
        let values: Vec<f64> = frames.iter().map(|&f| f as f64).collect();
        let result = dbscan_1d(&values, &cfg.dbscan_l1)?;
        let mut members: Vec<Vec<usize>> = vec![Vec::new(); result.n_clusters];
        for (i, label) in result.labels.iter().enumerate() {
            if let PointLabel::Cluster(c) = label {
                members[*c].push(i);
            }
        }
        let mut tagged: Vec<(usize, Provenance)> = members
            .iter()
            .map(|idx| {
                let mut f: Vec<usize> = idx.iter().map(|&i| frames[i]).collect();
                f.sort_unstable();
                let k = f.len();
                let rep = if k % 2 == 1 {
                    f[k / 2]
                } else {
                    (f[k / 2 - 1] + f[k / 2]).div_ceil(2)
                };
                // majority source kind, distance on ties
                let dist = idx.iter().filter(|&&i| critical.points[i].source.is_distance()).count();
                let prov = if 2 * dist >= idx.len() {
                    Provenance::KinematicDistance
                } else {
                    Provenance::KinematicVariance
                };
                (rep, prov)
            })
            .collect();
        tagged.sort_unstable();
        tagged.dedup_by_key(|t| t.0);
        let (p, prov) = tagged.into_iter().unzip();
        SegmentationPointSet::new(p, prov)?
    };
    Ok(KinematicBranch {
        profiles,
        critical,
        points,
    })
}

/// Kinematic potential segmentation points of a trial.
pub fn kinematic_potential_points(traj: &Trajectory, cfg: &PipelineConfig) -> Result<SegmentationPointSet> {
    Ok(kinematic_branch(traj, cfg)?.points)
}

/// Anchors at which the first-layer cluster label changes; each change is
/// placed at the first window carrying the new label.
pub fn visual_critical_points(features: &FeatureSequence, cfg: &PipelineConfig) -> Result<Vec<usize>> {
    if features.len() < 2 {
        return Err(Error::arg(format!("need at least 2 feature windows, got {}", features.len())));
    }
    let model = fit_dpgmm(features.vectors(), &cfg.dpgmm_l1)?;
    let labels = model.labels();
    Ok(labels
        .windows(2)
        .zip(features.anchors().windows(2))
        .filter(|(l, _)| l[0] != l[1])
        .map(|(_, a)| a[1])
        .collect())
}

/// Vision potential segmentation points: label changes clustered by a
/// second mixture over their timestamps.
pub fn vision_potential_points(features: &FeatureSequence, cfg: &PipelineConfig) -> Result<SegmentationPointSet> {
    let critical = visual_critical_points(features, cfg)?;
    if critical.len() < 2 {
        return Ok(SegmentationPointSet::uniform(critical, Provenance::Vision));
    }
    let data: Vec<Vec<f64>> = critical.iter().map(|&a| vec![a as f64]).collect();
    let model = fit_dpgmm(&data, &cfg.dpgmm_l2)?;
    let points = model.means.iter().map(|m| m[0].round().max(0.0) as usize).collect();
    Ok(SegmentationPointSet::uniform(points, Provenance::Vision))
}

/// Second DBSCAN layer over the union of both branches; isolated points drop.
pub fn fuse(
    kin: &SegmentationPointSet,
    vis: &SegmentationPointSet,
    cfg: &PipelineConfig,
) -> Result<SegmentationPointSet> {
    let union: Vec<usize> = kin.points().iter().chain(vis.points()).copied().collect();
    Ok(SegmentationPointSet::uniform(
        cluster_frames(&union, &cfg.dbscan_l2)?,
        Provenance::Fused,
    ))
}

/// Every intermediate result of one trial.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub trial_id: String,
    pub trial_length: usize,
    pub profiles: Vec<Profile>,
    pub critical_points: CriticalPointSet,
    pub kinematic: SegmentationPointSet,
    pub vision: Option<SegmentationPointSet>,
    /// Fused points, or the kinematic points when no features were given.
    pub final_points: SegmentationPointSet,
}

/// Runs both branches concurrently and fuses them. Without features (or
/// with an empty sequence) the kinematic points are final.
pub fn run_trial_detailed(
    traj: &Trajectory,
    features: Option<&FeatureSequence>,
    cfg: &PipelineConfig,
) -> Result<TrialOutcome> {
    cfg.validate()?;
    let features = features.filter(|f| !f.is_empty());
    if let Some(f) = features {
        if let Some(&last) = f.anchors().last() {
            if last >= traj.len() {
                return Err(Error::Data(format!(
                    "feature anchor {last} lies beyond trial length {}",
                    traj.len()
                )));
            }
        }
    }
    let (kin, vis) = rayon::join(
        || kinematic_branch(traj, cfg),
        || features.map(|f| vision_potential_points(f, cfg)).transpose(),
    );
    let kin = kin?;
    let vis = vis?;
    let final_points = match &vis {
        Some(v) => fuse(&kin.points, v, cfg)?,
        None => kin.points.clone(),
    };
    Ok(TrialOutcome {
        trial_id: traj.trial_id().to_string(),
        trial_length: traj.len(),
        profiles: kin.profiles,
        critical_points: kin.critical,
        kinematic: kin.points,
        vision: vis,
        final_points,
    })
}

/// Final segmentation points of a trial.
pub fn run_trial(
    traj: &Trajectory,
    features: Option<&FeatureSequence>,
    cfg: &PipelineConfig,
) -> Result<SegmentationPointSet> {
    Ok(run_trial_detailed(traj, features, cfg)?.final_points)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageReport {
    pub points: Vec<usize>,
    pub provenance: Vec<Provenance>,
}

impl From<&SegmentationPointSet> for StageReport {
    fn from(s: &SegmentationPointSet) -> Self {
        Self {
            points: s.points().to_vec(),
            provenance: s.provenance().to_vec(),
        }
    }
}

/// Serializable per-trial report. Maps are ordered, so equal outcomes give
/// byte-identical JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialReport {
    pub schema: String,
    pub trial_id: String,
    pub trial_length: usize,
    pub seed: u64,
    pub stages: BTreeMap<String, StageReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profiles: Option<BTreeMap<String, Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<Vec<usize>>,
}

pub const STAGE_CRITICAL: &str = "critical_points";
pub const STAGE_KINEMATIC: &str = "kinematic";
pub const STAGE_VISION: &str = "vision";
pub const STAGE_FINAL: &str = "final";

impl TrialOutcome {
    pub fn to_report(&self, seed: u64, include_profiles: bool) -> TrialReport {
        let mut stages = BTreeMap::new();
        let critical = StageReport {
            points: self.critical_points.frames(),
            provenance: self
                .critical_points
                .points
                .iter()
                .map(|p| {
                    if p.source.is_distance() {
                        Provenance::KinematicDistance
                    } else {
                        Provenance::KinematicVariance
                    }
                })
                .collect(),
        };
        stages.insert(STAGE_CRITICAL.to_string(), critical);
        stages.insert(STAGE_KINEMATIC.to_string(), (&self.kinematic).into());
        if let Some(v) = &self.vision {
            stages.insert(STAGE_VISION.to_string(), v.into());
        }
        stages.insert(STAGE_FINAL.to_string(), (&self.final_points).into());
        let profiles = include_profiles.then(|| {
            self.profiles
                .iter()
                .map(|p| (p.name.to_string(), p.values.clone()))
                .collect()
        });
        TrialReport {
            schema: REPORT_SCHEMA.to_string(),
            trial_id: self.trial_id.clone(),
            trial_length: self.trial_length,
            seed,
            stages,
            profiles,
            ground_truth: None,
        }
    }
}

impl TrialReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let report: Self = serde_json::from_str(s).map_err(|e| Error::Format(format!("malformed report: {e}")))?;
        if report.schema != REPORT_SCHEMA {
            return Err(Error::Format(format!(
                "unsupported report schema '{}' (expected {REPORT_SCHEMA})",
                report.schema
            )));
        }
        Ok(report)
    }

    pub fn stage(&self, name: &str) -> Option<&StageReport> {
        self.stages.get(name)
    }
}
