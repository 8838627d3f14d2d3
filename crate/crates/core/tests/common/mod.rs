#![allow(dead_code)]

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use surgseg::dataset::{synthesize_trial, write_features, write_kinematics, write_transcription, SyntheticSpec};

/// Parameters of the synthetic trial for `seed`: 5 to 8 gestures.
pub fn trial_spec(seed: u64) -> SyntheticSpec {
    SyntheticSpec::new(5 + ((seed - 1) % 4) as usize, 90, 160).unwrap()
}

pub struct TrialFiles {
    pub with_features: bool,
    pub with_transcription: bool,
}

impl Default for TrialFiles {
    fn default() -> Self {
        Self {
            with_features: true,
            with_transcription: true,
        }
    }
}

/// Writes one synthetic trial per seed plus a manifest into `dir`.
pub fn write_synthetic_set(dir: &Path, seeds: &[u64], seed: u64, files: &TrialFiles) -> PathBuf {
    let rate = trial_spec(1).rate_hz();
    let mut manifest = format!("seed = {seed}\nrate_hz = {rate:?}\noutput_dir = \"out\"\n");
    for &s in seeds {
        let spec = trial_spec(s);
        let trial = synthesize_trial(&spec, s);
        let id = format!("trial_{s:02}");
        let kin = format!("{id}.kin.txt");
        fs::write(dir.join(&kin), write_kinematics(&trial.trajectory)).unwrap();
        let _ = write!(manifest, "\n[[trials]]\nid = \"{id}\"\nkinematics = \"{kin}\"\n");
        if files.with_features {
            let feat = format!("{id}.feat");
            fs::write(dir.join(&feat), write_features(&trial.features)).unwrap();
            let _ = writeln!(manifest, "features = \"{feat}\"");
        }
        if files.with_transcription {
            let tr = format!("{id}.gestures.txt");
            fs::write(dir.join(&tr), write_transcription(&trial.transcription)).unwrap();
            let _ = writeln!(manifest, "transcription = \"{tr}\"");
        }
    }
    let path = dir.join("manifest.toml");
    fs::write(&path, manifest).unwrap();
    path
}

pub fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_surgseg")
}

/// Runs the binary and returns its exit code and standard output.
pub fn surgseg(args: &[&str]) -> (i32, String) {
    let out = std::process::Command::new(bin()).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into_owned())
}
