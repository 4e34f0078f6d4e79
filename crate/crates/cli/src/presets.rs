//! Built-in measures and the shipped experiment presets.

use std::collections::BTreeMap;

use torwalk_core::fixtures;
use torwalk_core::{FiniteMeasure, IntMatrix};

use crate::config::{Experiment, ExperimentConfig};
use crate::CliError;

pub const PRESET_NAMES: [&str; 4] = ["sl2-dense", "sl2-rational-start", "nonproximal-block", "specgap-sweep"];
pub const BUILTIN_MEASURES: [&str; 4] = ["sl2-dense", "nonproximal-block", "orthogonal", "cat-map"];
pub const BUILTIN_PREFIX: &str = "builtin:";

pub fn builtin_measure(name: &str) -> Option<FiniteMeasure<IntMatrix>> {
    match name {
        "sl2-dense" => Some(fixtures::sl2_dense()),
        "nonproximal-block" => Some(fixtures::nonproximal_block()),
        "orthogonal" => Some(fixtures::orthogonal()),
        "cat-map" => Some(fixtures::cat_map()),
        _ => None,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Preset {
    pub name: &'static str,
    pub config: ExperimentConfig,
}

impl Preset {
    pub fn measure(&self) -> FiniteMeasure<IntMatrix> {
        let name = self.config.measure_path.strip_prefix(BUILTIN_PREFIX).expect("presets use builtin measures");
        builtin_measure(name).expect("known builtin")
    }
}

fn params(pairs: &[(&str, &str)]) -> BTreeMap<String, String> {
    pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect()
}

pub fn preset(name: &str) -> Result<Preset, CliError> {
    let (name, experiment, measure, p) = match name {
        "sl2-dense" => (
            "sl2-dense",
            Experiment::Equidistribute,
            "sl2-dense",
            params(&[("n", "30"), ("samples", "100000"), ("x0", "golden-sqrt2"), ("radius", "3")]),
        ),
        "sl2-rational-start" => (
            "sl2-rational-start",
            Experiment::DiophVerify,
            "sl2-dense",
            params(&[("x0", "1/5,2/5"), ("a", "5,0"), ("t", "0.4"), ("ns", "1,5,10,20,40")]),
        ),
        "nonproximal-block" => (
            "nonproximal-block",
            Experiment::AlgebraInfo,
            "nonproximal-block",
            params(&[("n", "60"), ("samples", "200")]),
        ),
        "specgap-sweep" => (
            "specgap-sweep",
            Experiment::Specgap,
            "sl2-dense",
            params(&[("primes", "5,7,11,13")]),
        ),
        other => {
            return Err(CliError::Config(format!(
                "unknown preset {other:?}; available: {}",
                PRESET_NAMES.join(", ")
            )))
        }
    };
    Ok(Preset {
        name,
        config: ExperimentConfig {
            experiment,
            measure_path: format!("{BUILTIN_PREFIX}{measure}"),
            seed: 1,
            output_dir: format!("torwalk-out/{name}"),
            params: p,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preset_shapes() {
        let p = preset("sl2-dense").unwrap();
        let mu = p.measure();
        assert_eq!(mu.len(), 4);
        assert!(mu.atoms().all(|(_, w)| w.to_string() == "1/4"));
        assert_eq!(preset("nonproximal-block").unwrap().measure().dim(), 4);
        for name in PRESET_NAMES {
            assert_eq!(preset(name).unwrap().name, name);
        }
    }

    #[test]
    fn unknown_preset_lists_names() {
        let err = preset("sl3").unwrap_err().to_string();
        for name in PRESET_NAMES {
            assert!(err.contains(name), "{err}");
        }
    }
}
