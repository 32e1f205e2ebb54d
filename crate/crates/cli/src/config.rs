//! Run configuration as a flat `key = value` text file.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are an
//! error. Every key is optional; an empty file gives the defaults below.
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `seed` | 0 | base seed for scenarios, pretraining and CFL |
//! | `nodes` | 16 | microphone nodes per scenario |
//! | `room` | 4.7,3.4,2.4 | room size in meters |
//! | `t60` | 0.34 | reverberation time in seconds |
//! | `scenarios` | 20 | scenarios written by `simulate` |
//! | `utterances` | 16 | utterances per source and scenario |
//! | `utterance_s` | 10 | utterance length in seconds |
//! | `win_s` | 0.064 | STFT window |
//! | `hop_s` | 0.032 | STFT hop |
//! | `mels` | 128 | mel bands (the autoencoder needs 128) |
//! | `eps1` | 0.0134 | split when the mean-update norm is at most this |
//! | `eps2` | 0.005 | and the largest update norm at least this |
//! | `eps3` | 0.0007 | and the mean norm changed at most this since last round |
//! | `max_rounds` | 25 | communication rounds |
//! | `lr` | 0.1 | client learning rate |
//! | `recursive` | false | keep splitting after the first split |
//! | `lambda` | 0.5 | weight of the intra-cluster term in membership scores |
//! | `v` | 0,0.5,0.9 | membership thresholds for weighted fusion |
//! | `labeler_max_error` | 0.5 | error rate of the synthetic labeler at equal distances |
//! | `pretrain_segments` | 256 | pretraining corpus size |
//! | `pretrain_epochs` | 30 | pretraining epochs |
//! | `pretrain_lr` | 0.1 | pretraining learning rate |
//! | `out` | results | output directory |

use std::fmt::Write as _;
use std::path::PathBuf;

use asncfl_core::acoustics::{Position, DEFAULT_ROOM, DEFAULT_T60};
use asncfl_core::cfl::Thresholds;
use asncfl_core::features::{DEFAULT_HOP_S, DEFAULT_MELS, DEFAULT_WIN_S};
use asncfl_core::membership::DEFAULT_LAMBDA;

use crate::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub nodes: usize,
    pub room: Position,
    pub t60: f64,
    pub scenarios: usize,
    pub utterances: usize,
    pub utterance_s: f64,
    pub win_s: f64,
    pub hop_s: f64,
    pub mels: usize,
    pub thresholds: Thresholds,
    pub max_rounds: usize,
    pub lr: f64,
    pub recursive: bool,
    pub lambda: f64,
    pub v: Vec<f64>,
    pub labeler_max_error: f64,
    pub pretrain_segments: usize,
    pub pretrain_epochs: usize,
    pub pretrain_lr: f64,
    pub out: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            nodes: 16,
            room: DEFAULT_ROOM,
            t60: DEFAULT_T60,
            scenarios: 20,
            utterances: 16,
            utterance_s: 10.0,
            win_s: DEFAULT_WIN_S,
            hop_s: DEFAULT_HOP_S,
            mels: DEFAULT_MELS,
            thresholds: Thresholds::default(),
            max_rounds: 25,
            lr: 0.1,
            recursive: false,
            lambda: DEFAULT_LAMBDA,
            v: vec![0.0, 0.5, 0.9],
            labeler_max_error: 0.5,
            pretrain_segments: 256,
            pretrain_epochs: 30,
            pretrain_lr: 0.1,
            out: PathBuf::from("results"),
        }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Invalid(msg.into())
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.parse().map_err(|_| invalid(format!("{key}: cannot parse {v:?}")))
}

fn list(key: &str, v: &str) -> Result<Vec<f64>, CliError> {
    if v.is_empty() {
        return Ok(Vec::new());
    }
    v.split(',').map(|x| num(key, x.trim())).collect()
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut c = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| invalid(format!("line {}: expected key = value", n + 1)))?;
            c.set(key.trim(), value.trim())?;
        }
        c.validate()?;
        Ok(c)
    }

    /// Sets one key from its text form.
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        match key {
            "seed" => self.seed = num(key, v)?,
            "nodes" => self.nodes = num(key, v)?,
            "room" => {
                let r = list(key, v)?;
                self.room = r.try_into().map_err(|_| invalid("room: expected three numbers"))?;
            }
            "t60" => self.t60 = num(key, v)?,
            "scenarios" => self.scenarios = num(key, v)?,
            "utterances" => self.utterances = num(key, v)?,
            "utterance_s" => self.utterance_s = num(key, v)?,
            "win_s" => self.win_s = num(key, v)?,
            "hop_s" => self.hop_s = num(key, v)?,
            "mels" => self.mels = num(key, v)?,
            "eps1" => self.thresholds.eps1 = num(key, v)?,
            "eps2" => self.thresholds.eps2 = num(key, v)?,
            "eps3" => self.thresholds.eps3 = num(key, v)?,
            "max_rounds" => self.max_rounds = num(key, v)?,
            "lr" => self.lr = num(key, v)?,
            "recursive" => self.recursive = num(key, v)?,
            "lambda" => self.lambda = num(key, v)?,
            "v" => self.v = list(key, v)?,
            "labeler_max_error" => self.labeler_max_error = num(key, v)?,
            "pretrain_segments" => self.pretrain_segments = num(key, v)?,
            "pretrain_epochs" => self.pretrain_epochs = num(key, v)?,
            "pretrain_lr" => self.pretrain_lr = num(key, v)?,
            "out" => self.out = PathBuf::from(v),
            _ => return Err(invalid(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let t = &self.thresholds;
        let mut s = String::new();
        let mut put = |k: &str, v: String| writeln!(s, "{k} = {v}").expect("string write");
        put("seed", self.seed.to_string());
        put("nodes", self.nodes.to_string());
        put("room", join(&self.room));
        put("t60", self.t60.to_string());
        put("scenarios", self.scenarios.to_string());
        put("utterances", self.utterances.to_string());
        put("utterance_s", self.utterance_s.to_string());
        put("win_s", self.win_s.to_string());
        put("hop_s", self.hop_s.to_string());
        put("mels", self.mels.to_string());
        put("eps1", t.eps1.to_string());
        put("eps2", t.eps2.to_string());
        put("eps3", t.eps3.to_string());
        put("max_rounds", self.max_rounds.to_string());
        put("lr", self.lr.to_string());
        put("recursive", self.recursive.to_string());
        put("lambda", self.lambda.to_string());
        put("v", join(&self.v));
        put("labeler_max_error", self.labeler_max_error.to_string());
        put("pretrain_segments", self.pretrain_segments.to_string());
        put("pretrain_epochs", self.pretrain_epochs.to_string());
        put("pretrain_lr", self.pretrain_lr.to_string());
        put("out", self.out.display().to_string());
        s
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let t = &self.thresholds;
        let finite_nonneg = |x: f64| x.is_finite() && x >= 0.0;
        if ![t.eps1, t.eps2, t.eps3].into_iter().all(finite_nonneg) {
            return Err(invalid("thresholds must be finite and >= 0"));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(invalid("lambda must lie in [0, 1]"));
        }
        if self.v.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(invalid("every v must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.labeler_max_error) {
            return Err(invalid("labeler_max_error must lie in [0, 1]"));
        }
        if !(finite_nonneg(self.lr) && finite_nonneg(self.pretrain_lr)) {
            return Err(invalid("learning rates must be finite and >= 0"));
        }
        if self.nodes < 2 || self.utterances == 0 || self.scenarios == 0 {
            return Err(invalid("nodes >= 2, utterances >= 1 and scenarios >= 1 are required"));
        }
        if !(self.utterance_s > 0.0 && self.win_s > 0.0 && self.hop_s > 0.0 && self.t60 > 0.0) {
            return Err(invalid("durations must be positive"));
        }
        if self.room.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(invalid("room dimensions must be positive"));
        }
        if self.mels != DEFAULT_MELS {
            return Err(invalid(format!("the autoencoder takes {DEFAULT_MELS} mel bands")));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let c = RunConfig::parse("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.thresholds.eps1, 0.0134);
        assert_eq!(c.thresholds.eps2, 0.005);
        assert_eq!(c.thresholds.eps3, 0.0007);
        assert_eq!((c.max_rounds, c.lr, c.lambda, c.nodes), (25, 0.1, 0.5, 16));
    }

    #[test]
    fn round_trip() {
        let text = "# tuned\nseed = 7\nroom = 5,4,3\nv = 0.25\nrecursive = true\neps2=0.01\nout = /tmp/x y\n";
        let c = RunConfig::parse(text).unwrap();
        assert_eq!(c.seed, 7);
        assert_eq!(c.room, [5.0, 4.0, 3.0]);
        assert_eq!(c.v, vec![0.25]);
        assert!(c.recursive);
        assert_eq!(c.out, PathBuf::from("/tmp/x y"));
        let again = RunConfig::parse(&c.to_text()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.to_text(), c.to_text());
        let none = RunConfig::parse("v =").unwrap();
        assert!(none.v.is_empty());
        assert_eq!(RunConfig::parse(&none.to_text()).unwrap(), none);
    }

    #[test]
    fn rejects_bad_input() {
        for bad in [
            "nope = 1",
            "seed",
            "seed = x",
            "lambda = 1.5",
            "eps1 = -1",
            "v = 0.5, 2",
            "room = 1,2",
            "mels = 40",
            "nodes = 1",
            "lr = NaN",
        ] {
            assert!(matches!(RunConfig::parse(bad), Err(CliError::Invalid(_))), "{bad}");
        }
    }
}
