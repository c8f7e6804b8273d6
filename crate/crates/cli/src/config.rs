//! Run configurations: defaults, presets and JSON overrides.

use crate::error::{CliError, CliResult};
use crate::manifest::sha256_hex;
use clap::ValueEnum;
use eqps::comparators::{AnalysisConfig, Method};
use eqps::data::ColumnMap;
use eqps::hierarchy::McmcConfig;
use eqps::simulation::{
    CaseStudyConfig, CurveConfig, GridConfig, SampleSizeConfig, ScenarioConfig,
};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum)]
pub enum Preset {
    /// 100 subjects per arm and source, 4 × 5,000 MCMC iterations.
    #[default]
    Desk,
    /// 500 subjects per arm and source, 5 × 41,000 MCMC iterations.
    Paper,
}

pub trait RunConfig: Serialize + DeserializeOwned + Default {
    fn paper_preset(&mut self);
    fn seed_mut(&mut self) -> &mut u64;
    fn check(&self) -> eqps::Result<()>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalyzeConfig {
    pub analysis: AnalysisConfig,
    pub columns: ColumnMap,
    pub methods: Vec<Method>,
    pub seed: u64,
}

impl Default for AnalyzeConfig {
    fn default() -> Self {
        Self {
            analysis: AnalysisConfig::default(),
            columns: ColumnMap::default(),
            methods: vec![Method::Eqps],
            seed: 20_240_605,
        }
    }
}

impl RunConfig for AnalyzeConfig {
    fn paper_preset(&mut self) {
        self.analysis.mcmc = McmcConfig::paper();
    }
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
    fn check(&self) -> eqps::Result<()> {
        self.analysis.validate()
    }
}

impl RunConfig for GridConfig {
    fn paper_preset(&mut self) {
        self.base = ScenarioConfig::paper();
        self.analysis.mcmc = McmcConfig::paper();
    }
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
    fn check(&self) -> eqps::Result<()> {
        self.validate()
    }
}

impl RunConfig for CurveConfig {
    fn paper_preset(&mut self) {
        self.base = ScenarioConfig::paper();
        self.analysis.mcmc = McmcConfig::paper();
    }
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
    fn check(&self) -> eqps::Result<()> {
        self.validate()
    }
}

/// Required sample sizes at several heterogeneity levels, each method
/// against no borrowing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SampleSizeRun {
    pub search: SampleSizeConfig,
    /// Treatment log-odds offsets applied to both borrowed sources.
    pub heterogeneity: Vec<f64>,
    pub methods: Vec<Method>,
}

impl Default for SampleSizeRun {
    fn default() -> Self {
        Self {
            search: SampleSizeConfig::default(),
            heterogeneity: vec![0.0, 0.2, 0.4],
            methods: vec![Method::Eqps, Method::Map, Method::PsMap, Method::EbRmap],
        }
    }
}

impl RunConfig for SampleSizeRun {
    fn paper_preset(&mut self) {
        self.search.base = ScenarioConfig::paper();
        self.search.analysis.mcmc = McmcConfig::paper();
        self.search.n_max = 1_280;
    }
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.search.seed
    }
    fn check(&self) -> eqps::Result<()> {
        if self.heterogeneity.is_empty() || self.methods.is_empty() {
            return Err(eqps::Error::Config(
                "sample-size run needs heterogeneity levels and methods".into(),
            ));
        }
        self.search.validate()
    }
}

impl RunConfig for CaseStudyConfig {
    fn paper_preset(&mut self) {
        self.analysis.mcmc = McmcConfig::paper();
    }
    fn seed_mut(&mut self) -> &mut u64 {
        &mut self.seed
    }
    fn check(&self) -> eqps::Result<()> {
        self.analysis.validate()
    }
}

/// Overlays `patch` onto `base`. Objects merge key by key; anything else is
/// replaced. A key absent from `base` is a schema error.
fn merge(base: &mut Value, patch: Value, path: &str) -> CliResult<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let here = if path.is_empty() {
                    k.clone()
                } else {
                    format!("{path}.{k}")
                };
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v, &here)?,
                    None => return Err(CliError::Input(format!("unknown config key '{here}'"))),
                }
            }
            Ok(())
        }
        (slot, v) => {
            *slot = v;
            Ok(())
        }
    }
}

pub struct Loaded<T> {
    pub config: T,
    /// Hash of the file bytes, if a file was given.
    pub file_hash: Option<String>,
}

pub fn load<T: RunConfig>(preset: Preset, file: Option<&Path>) -> CliResult<Loaded<T>> {
    let mut base = T::default();
    if preset == Preset::Paper {
        base.paper_preset();
    }
    let mut value = serde_json::to_value(&base)?;
    let mut file_hash = None;
    if let Some(path) = file {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Input(format!("cannot read {}: {e}", path.display())))?;
        file_hash = Some(sha256_hex(&bytes));
        let patch: Value = serde_json::from_slice(&bytes)
            .map_err(|e| CliError::Input(format!("{} is not valid JSON: {e}", path.display())))?;
        if !patch.is_object() {
            return Err(CliError::Input(format!(
                "{} must hold a JSON object",
                path.display()
            )));
        }
        merge(&mut value, patch, "")?;
    }
    let config: T =
        serde_json::from_value(value).map_err(|e| CliError::Input(format!("config: {e}")))?;
    Ok(Loaded { config, file_hash })
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn merge_overrides_nested_keys_only() {
        let mut base = json!({"a": 1, "b": {"c": 2, "d": [1, 2]}});
        merge(&mut base, json!({"b": {"d": [5]}}), "").unwrap();
        assert_eq!(base, json!({"a": 1, "b": {"c": 2, "d": [5]}}));
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_path() {
        let mut base = json!({"a": {"b": 1}});
        let err = merge(&mut base, json!({"a": {"typo": 1}}), "").unwrap_err();
        assert!(err.to_string().contains("a.typo"));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn presets_differ_in_scale() {
        let desk: Loaded<GridConfig> = load(Preset::Desk, None).unwrap();
        let paper: Loaded<GridConfig> = load(Preset::Paper, None).unwrap();
        assert_eq!(desk.config.base.n_current, 100);
        assert_eq!(paper.config.base.n_current, 500);
        assert_eq!(paper.config.analysis.mcmc.iterations, 41_000);
    }

    #[test]
    fn every_default_round_trips() {
        fn rt<T: RunConfig + PartialEq + std::fmt::Debug>() {
            let d = T::default();
            let back: T = serde_json::from_value(serde_json::to_value(&d).unwrap()).unwrap();
            assert_eq!(back, d);
            d.check().unwrap();
        }
        rt::<AnalyzeConfig>();
        rt::<GridConfig>();
        rt::<CurveConfig>();
        rt::<SampleSizeRun>();
        rt::<CaseStudyConfig>();
    }
}
