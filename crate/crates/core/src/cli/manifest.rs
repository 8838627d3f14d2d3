use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use toml::{Table, Value};

use crate::dataset::{parse_features, parse_kinematics_named, parse_transcription, FeatureSequence, Trajectory, Transcription};
use crate::error::{Error, Result};
use crate::pipeline::{Hyperparams, PipelineConfig, Task};

pub const DEFAULT_RATE_HZ: f64 = 30.0;

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrial {
    id: Option<String>,
    kinematics: PathBuf,
    features: Option<PathBuf>,
    transcription: Option<PathBuf>,
    task: Option<Task>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawManifest {
    #[serde(default)]
    seed: u64,
    config: Option<PathBuf>,
    output_dir: Option<PathBuf>,
    rate_hz: Option<f64>,
    trials: Vec<RawTrial>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialEntry {
    pub id: String,
    pub kinematics: PathBuf,
    pub features: Option<PathBuf>,
    pub transcription: Option<PathBuf>,
    pub task: Option<Task>,
}

/// Trials to process plus where their settings and outputs live. Relative
/// paths are resolved against the manifest's directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunManifest {
    pub trials: Vec<TrialEntry>,
    pub config: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub rate_hz: f64,
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = read_text(path)?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let raw: RawManifest = toml::from_str(text).map_err(|e| Error::Config(format!("manifest: {e}")))?;
        let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };
        let rate_hz = raw.rate_hz.unwrap_or(DEFAULT_RATE_HZ);
        if !(rate_hz > 0.0 && rate_hz.is_finite()) {
            return Err(Error::Config(format!("manifest: rate_hz must be positive, got {rate_hz}")));
        }
        if raw.trials.is_empty() {
            return Err(Error::Config("manifest lists no trials".into()));
        }
        let mut ids = HashSet::new();
        let mut paths = HashSet::new();
        let mut trials = Vec::with_capacity(raw.trials.len());
        for t in raw.trials {
            let id = match t.id {
                Some(id) => id,
                None => t
                    .kinematics
                    .file_stem()
                    .map(|s| s.to_string_lossy().into_owned())
                    .ok_or_else(|| Error::Config("manifest: trial without id or file name".into()))?,
            };
            if id.is_empty() || id.contains(['/', '\\']) {
                return Err(Error::Config(format!("manifest: invalid trial id '{id}'")));
            }
            if !ids.insert(id.clone()) {
                return Err(Error::Config(format!("manifest: duplicate trial id '{id}'")));
            }
            let entry = TrialEntry {
                id,
                kinematics: resolve(t.kinematics),
                features: t.features.map(resolve),
                transcription: t.transcription.map(resolve),
                task: t.task,
            };
            for p in [Some(&entry.kinematics), entry.features.as_ref(), entry.transcription.as_ref()]
                .into_iter()
                .flatten()
            {
                if !paths.insert(p.clone()) {
                    return Err(Error::Config(format!("manifest: path {} listed twice", p.display())));
                }
            }
            trials.push(entry);
        }
        Ok(Self {
            trials,
            config: raw.config.map(resolve),
            output_dir: resolve(raw.output_dir.unwrap_or_else(|| PathBuf::from("out"))),
            seed: raw.seed,
            rate_hz,
        })
    }
}

/// Inputs of one trial, read from disk.
#[derive(Debug, Clone)]
pub struct LoadedTrial {
    pub trajectory: Trajectory,
    pub features: Option<FeatureSequence>,
    pub transcription: Option<Transcription>,
}

impl TrialEntry {
    pub fn load(&self, rate_hz: f64, with_features: bool) -> Result<LoadedTrial> {
        let trajectory = parse_kinematics_named(&self.id, &read_text(&self.kinematics)?, rate_hz)?;
        let features = match (&self.features, with_features) {
            (Some(p), true) => Some(parse_features(&fs::read(p).map_err(|e| Error::io(p, e))?)?),
            _ => None,
        };
        Ok(LoadedTrial {
            trajectory,
            features,
            transcription: self.load_transcription()?,
        })
    }

    pub fn load_transcription(&self) -> Result<Option<Transcription>> {
        self.transcription
            .as_ref()
            .map(|p| parse_transcription(&read_text(p)?))
            .transpose()
    }
}

fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Reads a configuration file. `task` picks a preset, a `[presets.<task>]`
/// table overrides its tuned values, and every other key replaces the
/// matching field of the result.
pub fn parse_config(text: &str) -> Result<PipelineConfig> {
    let cfg_err = |e: &dyn std::fmt::Display| Error::Config(e.to_string());
    let mut table: Table = text.parse().map_err(|e| cfg_err(&e))?;
    let task = match table.remove("task") {
        Some(Value::String(s)) => s.parse::<Task>()?,
        Some(other) => return Err(Error::Config(format!("task must be a string, got {other}"))),
        None => Task::Suturing,
    };
    let mut cfg = PipelineConfig::for_task(task);
    if let Some(presets) = table.remove("presets") {
        let Value::Table(mut presets) = presets else {
            return Err(Error::Config("presets must be a table".into()));
        };
        for name in presets.keys() {
            name.parse::<Task>()?;
        }
        if let Some(p) = presets.remove(task.as_str()) {
            let h: Hyperparams = p.try_into().map_err(|e| cfg_err(&e))?;
            cfg = cfg.with_hyperparams(&h);
        }
    }
    let Value::Table(mut base) = Value::try_from(&cfg).map_err(|e| cfg_err(&e))? else {
        unreachable!("a struct serializes to a table");
    };
    merge(&mut base, table);
    let cfg: PipelineConfig = Value::Table(base).try_into().map_err(|e| cfg_err(&e))?;
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<PipelineConfig> {
    parse_config(&read_text(path)?)
}

/// Complete configuration as TOML, readable by [`parse_config`].
pub fn config_to_toml(cfg: &PipelineConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::Config(e.to_string()))
}

/// Annotated default configuration with every task preset.
pub fn default_config_toml() -> String {
    let mut out = String::from("# task selects a preset from [presets]; other keys override single fields\ntask = \"suturing\"\n");
    let Ok(Value::Table(mut body)) = Value::try_from(PipelineConfig::default()) else {
        unreachable!("a struct serializes to a table");
    };
    // these come from the preset
    for (table, keys) in [
        ("dpgmm_l1", &["truncation", "concentration"][..]),
        ("dpgmm_l2", &["truncation", "concentration"]),
        ("dbscan_l1", &["eps"]),
        ("dbscan_l2", &["eps"]),
    ] {
        if let Some(Value::Table(t)) = body.get_mut(table) {
            for k in keys {
                t.remove(*k);
            }
        }
    }
    out.push_str(&toml::to_string(&body).expect("default config serializes"));
    for task in Task::ALL {
        let h = task.hyperparams();
        out.push_str(&format!(
            "\n[presets.{}]\nn1 = {}\nn2 = {}\nalpha1 = {:?}\nalpha2 = {:?}\neps = {:?}\n",
            task.as_str(),
            h.n1,
            h.n2,
            h.alpha1,
            h.alpha2,
            h.eps
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_resolves_relative_paths() {
        let text = r#"
            seed = 4
            output_dir = "reports"
            [[trials]]
            kinematics = "k/a.txt"
            features = "/abs/a.feat"
            task = "knot_tying"
        "#;
        let m = RunManifest::parse(text, Path::new("/data")).unwrap();
        assert_eq!(m.seed, 4);
        assert_eq!(m.output_dir, PathBuf::from("/data/reports"));
        assert_eq!(m.rate_hz, DEFAULT_RATE_HZ);
        let t = &m.trials[0];
        assert_eq!(t.id, "a");
        assert_eq!(t.kinematics, PathBuf::from("/data/k/a.txt"));
        assert_eq!(t.features, Some(PathBuf::from("/abs/a.feat")));
        assert_eq!(t.task, Some(Task::KnotTying));
    }

    #[test]
    fn manifest_rejects_repeats_and_unknown_keys() {
        let dup_path = "[[trials]]\nid = \"a\"\nkinematics = \"x\"\n[[trials]]\nid = \"b\"\nkinematics = \"x\"\n";
        assert!(matches!(RunManifest::parse(dup_path, Path::new(".")), Err(Error::Config(_))));
        let dup_id = "[[trials]]\nkinematics = \"a/x\"\n[[trials]]\nkinematics = \"b/x\"\n";
        assert!(RunManifest::parse(dup_id, Path::new(".")).is_err());
        assert!(RunManifest::parse("trials = []\n", Path::new(".")).is_err());
        assert!(RunManifest::parse("colour = 1\n[[trials]]\nkinematics = \"x\"\n", Path::new(".")).is_err());
    }

    #[test]
    fn config_layers_task_preset_and_overrides() {
        let cfg = parse_config("task = \"needle_passing\"\n").unwrap();
        assert_eq!(cfg, PipelineConfig::for_task(Task::NeedlePassing));

        let text = "task = \"knot_tying\"\n[presets.knot_tying]\nn1 = 10\nn2 = 12\nalpha1 = 1.5\nalpha2 = 2.5\neps = 9.0\n[presets.suturing]\nn1 = 1\nn2 = 1\nalpha1 = 1.0\nalpha2 = 1.0\neps = 1.0\n[dbscan_l1]\nminp = 4\n";
        let cfg = parse_config(text).unwrap();
        let h = cfg.hyperparams();
        assert_eq!((h.n1, h.n2, h.alpha1, h.alpha2, h.eps), (10, 12, 1.5, 2.5, 9.0));
        assert_eq!(cfg.dbscan_l1.minp, 4);
        assert_eq!(cfg.dbscan_l1.eps, 9.0);

        assert!(parse_config("task = \"juggling\"\n").is_err());
        assert!(parse_config("frames_n = 1\n").is_err());
        assert!(parse_config("[kalman]\nbogus = 1\n").is_err());
    }

    #[test]
    fn written_config_reads_back_identically() {
        let mut cfg = PipelineConfig::for_task(Task::KnotTying).with_seed(9);
        cfg.dpgmm_l1.concentration = 0.1 + 0.2;
        let back = parse_config(&config_to_toml(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
        let text = default_config_toml();
        assert_eq!(parse_config(&text).unwrap(), PipelineConfig::default());
        for task in Task::ALL {
            let text = text.replacen("task = \"suturing\"", &format!("task = \"{}\"", task.as_str()), 1);
            assert_eq!(parse_config(&text).unwrap().hyperparams(), task.hyperparams());
        }
    }
}
