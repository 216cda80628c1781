//! Layered run configuration.
//!
//! Layers, later wins: built-in defaults, the scenario preset, the config
//! file, command-line overrides. The file format is TOML restricted to
//! dotted keys, one per line:
//!
//! ```text
//! # comment
//! synth.scenario = "fig3"
//! synth.seed = 7
//! imaging.threshold = 120.0
//! linking.r_static = 0.03
//! paths.out = "runs/fig3"
//! ```
//!
//! `[section]` headers are accepted as well. Unknown keys are errors.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use super::PipelineError;
use crate::clustering::NcutParams;
use crate::imaging::BackgroundParams;
use crate::reconstruction::MatchParams;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Built-in scenario name or a ground-truth CSV; unset for recorded input.
    pub scenario: Option<String>,
    pub seed: u64,
    pub frames: Option<u32>,
    pub targets: Option<u32>,
    pub noise_sigma: Option<f64>,
    /// Also the blur used to derive default link radii for recorded input.
    pub gaussian_sigma_px: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            scenario: None,
            seed: 0,
            frames: None,
            targets: None,
            noise_sigma: None,
            gaussian_sigma_px: 1.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImagingConfig {
    pub window_frames: usize,
    pub threshold: f64,
    pub denoise_radius: u32,
    pub min_component_px: usize,
    /// Subtract the empty-scene plate instead of the sliding median.
    pub use_background_plate: bool,
}

impl Default for ImagingConfig {
    fn default() -> Self {
        let p = BackgroundParams::default();
        Self {
            window_frames: p.window_frames,
            threshold: p.threshold,
            denoise_radius: p.denoise_radius,
            min_component_px: p.min_component_px,
            use_background_plate: false,
        }
    }
}

impl ImagingConfig {
    pub fn params(&self) -> BackgroundParams {
        BackgroundParams {
            window_frames: self.window_frames,
            threshold: self.threshold,
            denoise_radius: self.denoise_radius,
            min_component_px: self.min_component_px,
        }
    }
}

/// Unset radii are derived from the blur radius at the cloud centroid.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LinkingConfig {
    pub r_static: Option<f64>,
    pub r_dynamic: Option<f64>,
    pub sigma_w: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationConfig {
    /// Defaults to 3x the blur radius.
    pub match_radius: Option<f64>,
    /// Image distance below which two targets occlude each other; defaults
    /// to one blob diameter plus a pixel.
    pub occlusion_px: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub out: PathBuf,
    /// Recorded input, used when no scenario is set.
    pub images: Option<PathBuf>,
    pub rig: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub background: Option<PathBuf>,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            out: PathBuf::from("out"),
            images: None,
            rig: None,
            ground_truth: None,
            background: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub synth: SynthConfig,
    pub imaging: ImagingConfig,
    pub matching: MatchParams,
    pub linking: LinkingConfig,
    pub ncut: NcutParams,
    pub evaluation: EvaluationConfig,
    pub paths: PathsConfig,
}

/// Scenario-specific defaults, applied under the config file.
fn preset(scenario: &str) -> &'static str {
    match scenario {
        // one frame leaves nothing to take a median over
        "fig1a" | "fig1b" | "fig1c" => "imaging.use_background_plate = true",
        _ => "",
    }
}

fn merge(base: &mut Table, overlay: Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn set_dotted(table: &mut Table, key: &str, value: Value) -> Result<(), PipelineError> {
    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().filter(|s| !s.is_empty()).ok_or_else(|| PipelineError::Config(format!("bad key {key:?}")))?;
    let mut t = table;
    for p in parts {
        t = t
            .entry(p)
            .or_insert_with(|| Value::Table(Table::new()))
            .as_table_mut()
            .ok_or_else(|| PipelineError::Config(format!("{key}: {p} is not a section")))?;
    }
    t.insert(last.to_string(), value);
    Ok(())
}

fn get_dotted<'a>(table: &'a Table, key: &str) -> Option<&'a Value> {
    let (section, k) = key.split_once('.')?;
    table.get(section)?.as_table()?.get(k)
}

fn parse_table(text: &str, what: &str) -> Result<Table, PipelineError> {
    text.parse::<Table>().map_err(|e| PipelineError::Config(format!("{what}: {e}")))
}

/// Parses `section.key=value`. The value is read as a TOML literal, falling
/// back to a plain string.
pub fn parse_override(s: &str) -> Result<(String, Value), PipelineError> {
    let (k, v) = s
        .split_once('=')
        .ok_or_else(|| PipelineError::Config(format!("override {s:?} is not key=value")))?;
    let v = v.trim();
    let value = parse_table(&format!("v = {v}"), "override")
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(v.to_string()));
    Ok((k.trim().to_string(), value))
}

impl PipelineConfig {
    /// Layers defaults, the preset of the effective scenario, `file` and
    /// `overrides` (dotted keys).
    pub fn resolve(file: Option<&str>, overrides: &[(String, Value)]) -> Result<Self, PipelineError> {
        let file = file.map(|t| parse_table(t, "config file")).transpose()?.unwrap_or_default();
        let mut cli = Table::new();
        for (k, v) in overrides {
            set_dotted(&mut cli, k, v.clone())?;
        }
        let scenario = get_dotted(&cli, "synth.scenario")
            .or_else(|| get_dotted(&file, "synth.scenario"))
            .and_then(Value::as_str)
            .map(str::to_string);
        let mut table = Table::try_from(Self::default()).map_err(|e| PipelineError::Config(e.to_string()))?;
        if let Some(s) = &scenario {
            merge(&mut table, parse_table(preset(s), "preset")?);
        }
        merge(&mut table, file);
        merge(&mut table, cli);
        let cfg: Self = Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| PipelineError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), PipelineError> {
        let cfg = |e: &dyn std::fmt::Display| PipelineError::Config(e.to_string());
        self.imaging.params().validate().map_err(|e| cfg(&e))?;
        self.matching.validate().map_err(|e| cfg(&e))?;
        self.ncut.validate().map_err(|e| cfg(&e))?;
        let positive = [
            ("synth.gaussian_sigma_px", Some(self.synth.gaussian_sigma_px)),
            ("linking.r_static", self.linking.r_static),
            ("linking.r_dynamic", self.linking.r_dynamic),
            ("linking.sigma_w", self.linking.sigma_w),
            ("evaluation.match_radius", self.evaluation.match_radius),
            ("evaluation.occlusion_px", self.evaluation.occlusion_px),
        ];
        for (name, v) in positive {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(PipelineError::Config(format!("{name} must be > 0, got {v}")));
                }
            }
        }
        if self.synth.frames == Some(0) || self.synth.targets == Some(0) {
            return Err(PipelineError::Config("synth.frames and synth.targets must be >= 1".into()));
        }
        if self.synth.noise_sigma.is_some_and(|n| !(n >= 0.0)) {
            return Err(PipelineError::Config("synth.noise_sigma must be >= 0".into()));
        }
        Ok(())
    }

    /// Every set key as one `section.key = value` line, sorted.
    pub fn to_flat_string(&self) -> Result<String, PipelineError> {
        let table = Table::try_from(self).map_err(|e| PipelineError::Config(e.to_string()))?;
        let mut out = String::new();
        for (section, v) in &table {
            if let Value::Table(t) = v {
                for (k, v) in t {
                    out.push_str(&format!("{section}.{k} = {v}\n"));
                }
            }
        }
        Ok(out)
    }
}
