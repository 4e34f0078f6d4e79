//! `key = value` configs with `[params]` section.
//!
//! ```text
//! experiment = equidistribute
//! measure_path = builtin:sl2-dense
//! seed = 1
//! output_dir = out/sl2
//!
//! [params]
//! n = 30
//! samples = 100000
//! ```

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Experiment {
    Equidistribute,
    Lyapunov,
    FourierScan,
    DiophVerify,
    Flatten,
    Specgap,
    AlgebraInfo,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::Equidistribute,
        Experiment::Lyapunov,
        Experiment::FourierScan,
        Experiment::DiophVerify,
        Experiment::Flatten,
        Experiment::Specgap,
        Experiment::AlgebraInfo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::Equidistribute => "equidistribute",
            Experiment::Lyapunov => "lyapunov",
            Experiment::FourierScan => "fourier-scan",
            Experiment::DiophVerify => "dioph-verify",
            Experiment::Flatten => "flatten",
            Experiment::Specgap => "specgap",
            Experiment::AlgebraInfo => "algebra-info",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Experiment {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self, CliError> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Experiment::ALL.iter().map(|e| e.as_str()).collect();
                CliError::Config(format!("unknown experiment {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

/// Keys as read, before required fields are checked.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RawConfig {
    pub top: BTreeMap<String, String>,
    pub params: BTreeMap<String, String>,
}

const TOP_KEYS: [&str; 4] = ["experiment", "measure_path", "seed", "output_dir"];

impl RawConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut raw = RawConfig::default();
        let mut in_params = false;
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                if name.trim() != "params" {
                    return Err(CliError::Config(format!("line {}: unknown section [{}]", no + 1, name.trim())));
                }
                in_params = true;
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", no + 1)))?;
            let (k, v) = (k.trim().to_string(), v.trim().to_string());
            if k.is_empty() {
                return Err(CliError::Config(format!("line {}: empty key", no + 1)));
            }
            let target = if in_params {
                &mut raw.params
            } else {
                if !TOP_KEYS.contains(&k.as_str()) {
                    return Err(CliError::Config(format!("line {}: unknown key {k:?}", no + 1)));
                }
                &mut raw.top
            };
            if target.insert(k.clone(), v).is_some() {
                return Err(CliError::Config(format!("line {}: duplicate key {k:?}", no + 1)));
            }
        }
        Ok(raw)
    }

    /// `other` wins on every key it sets.
    pub fn overlay(mut self, other: RawConfig) -> RawConfig {
        self.top.extend(other.top);
        self.params.extend(other.params);
        self
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub measure_path: String,
    pub seed: u64,
    pub output_dir: String,
    pub params: BTreeMap<String, String>,
}

impl ExperimentConfig {
    pub fn from_raw(raw: RawConfig) -> Result<Self, CliError> {
        let get = |k: &str| {
            raw.top
                .get(k)
                .cloned()
                .ok_or_else(|| CliError::Config(format!("missing key {k:?}")))
        };
        let seed = get("seed")?;
        Ok(ExperimentConfig {
            experiment: get("experiment")?.parse()?,
            measure_path: get("measure_path")?,
            seed: seed
                .parse()
                .map_err(|_| CliError::Config(format!("seed must be a 64-bit unsigned integer, got {seed:?}")))?,
            output_dir: get("output_dir")?,
            params: raw.params,
        })
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        Self::from_raw(RawConfig::parse(text)?)
    }

    pub fn to_raw(&self) -> RawConfig {
        let mut top = BTreeMap::new();
        top.insert("experiment".into(), self.experiment.to_string());
        top.insert("measure_path".into(), self.measure_path.clone());
        top.insert("seed".into(), self.seed.to_string());
        top.insert("output_dir".into(), self.output_dir.clone());
        RawConfig { top, params: self.params.clone() }
    }

    /// Canonical text: top-level keys in fixed order, params sorted.
    pub fn serialize(&self) -> String {
        let mut s = format!(
            "experiment = {}\nmeasure_path = {}\nseed = {}\noutput_dir = {}\n",
            self.experiment, self.measure_path, self.seed, self.output_dir
        );
        if !self.params.is_empty() {
            s.push_str("\n[params]\n");
            for (k, v) in &self.params {
                s.push_str(&format!("{k} = {v}\n"));
            }
        }
        s
    }
}

/// Typed access to `[params]`, rejecting keys nobody asked for.
pub struct Params<'a> {
    map: &'a BTreeMap<String, String>,
    seen: BTreeSet<&'static str>,
}

impl<'a> Params<'a> {
    pub fn new(map: &'a BTreeMap<String, String>) -> Self {
        Params { map, seen: BTreeSet::new() }
    }

    fn raw(&mut self, key: &'static str) -> Option<&'a str> {
        self.seen.insert(key);
        self.map.get(key).map(String::as_str)
    }

    fn bad(key: &str, v: &str, what: &str) -> CliError {
        CliError::Config(format!("param {key}: expected {what}, got {v:?}"))
    }

    pub fn string(&mut self, key: &'static str, default: &str) -> String {
        self.raw(key).unwrap_or(default).to_string()
    }

    pub fn opt_string(&mut self, key: &'static str) -> Option<String> {
        self.raw(key).map(str::to_string)
    }

    pub fn usize(&mut self, key: &'static str, default: usize) -> Result<usize, CliError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| Self::bad(key, v, "a nonnegative integer")),
        }
    }

    pub fn f64(&mut self, key: &'static str, default: f64) -> Result<f64, CliError> {
        match self.raw(key) {
            None => Ok(default),
            Some(v) => self.parse_f64(key, v),
        }
    }

    pub fn opt_f64(&mut self, key: &'static str) -> Result<Option<f64>, CliError> {
        match self.raw(key) {
            None => Ok(None),
            Some(v) => self.parse_f64(key, v).map(Some),
        }
    }

    fn parse_f64(&self, key: &str, v: &str) -> Result<f64, CliError> {
        let x: f64 = v.parse().map_err(|_| Self::bad(key, v, "a number"))?;
        if x.is_finite() {
            Ok(x)
        } else {
            Err(Self::bad(key, v, "a finite number"))
        }
    }

    pub fn bool(&mut self, key: &'static str, default: bool) -> Result<bool, CliError> {
        match self.raw(key) {
            None => Ok(default),
            Some("true") => Ok(true),
            Some("false") => Ok(false),
            Some(v) => Err(Self::bad(key, v, "true or false")),
        }
    }

    pub fn list<T: FromStr>(&mut self, key: &'static str, default: &str) -> Result<Vec<T>, CliError> {
        let v = self.raw(key).unwrap_or(default);
        v.split(',')
            .map(|s| s.trim().parse::<T>().map_err(|_| Self::bad(key, v, "a comma-separated list")))
            .collect()
    }

    /// Fails on any key no accessor read.
    pub fn finish(self) -> Result<(), CliError> {
        match self.map.keys().find(|k| !self.seen.contains(k.as_str())) {
            Some(k) => Err(CliError::Config(format!("unknown param {k:?}"))),
            None => Ok(()),
        }
    }
}
