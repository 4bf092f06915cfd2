//! Run configuration: a flat `key = value` text format under `[section]`
//! headers, with every default baked in. Parsing starts from the default
//! configuration and applies overrides, so a partial file is valid;
//! unknown sections or keys are errors rather than silent typos.

use std::path::PathBuf;

use crate::error::{Error, Result};
use crate::pipeline::PipelineConfig;
use crate::predictor::{DecodeMode, LossMode, OraclePredictorConfig, PredictorConfig};
use crate::scene::NoiseConfig;

/// Full configuration for the batch commands.
#[derive(Clone, Debug)]
pub struct RunConfig {
    /// Mesh files (PLY) the run draws objects from.
    pub meshes: Vec<PathBuf>,
    /// Views rendered per mesh by dataset generation.
    pub views: usize,
    /// Master seed; per-view and per-stage seeds derive from it.
    pub seed: u64,
    /// Output directory for datasets, checkpoints, and reports.
    pub output: PathBuf,
    /// Worker threads (0 = all cores).
    pub workers: usize,
    pub camera_width: usize,
    pub camera_height: usize,
    /// Tuples sampled per view when building training data.
    pub train_tuples: usize,
    /// Per-category symmetry overrides: (category, axis) with axis one of
    /// `x`, `y`, `z`, or `none`.
    pub symmetry: Vec<(String, String)>,
    pub noise: NoiseConfig,
    pub oracle: OraclePredictorConfig,
    pub predictor: PredictorConfig,
    pub pipeline: PipelineConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            meshes: Vec::new(),
            views: 10,
            seed: 0,
            output: PathBuf::from("out"),
            workers: 0,
            camera_width: 160,
            camera_height: 160,
            train_tuples: 64,
            symmetry: Vec::new(),
            noise: NoiseConfig::default(),
            oracle: OraclePredictorConfig::default(),
            predictor: PredictorConfig::default(),
            pipeline: PipelineConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.views == 0 {
            return Err(Error::InvalidConfig("views must be >= 1".into()));
        }
        if self.camera_width < 8 || self.camera_height < 8 {
            return Err(Error::InvalidConfig(
                "camera needs at least 8x8 pixels".into(),
            ));
        }
        self.predictor.validate()?;
        self.pipeline.validate()
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parses overrides on top of the defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        let mut section = String::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name.strip_suffix(']').ok_or_else(|| {
                    Error::InvalidConfig(format!("line {}: unterminated section", lineno + 1))
                })?;
                section = name.trim().to_string();
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key = value", lineno + 1))
            })?;
            cfg.apply(&section, key.trim(), value.trim())
                .map_err(|e| Error::InvalidConfig(format!("line {}: {e}", lineno + 1)))?;
        }
        Ok(cfg)
    }

    fn apply(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let unknown = || {
            Err(Error::InvalidConfig(format!(
                "unknown key [{section}] {key}"
            )))
        };
        match section {
            "run" => match key {
                "meshes" => {
                    self.meshes = value
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(PathBuf::from)
                        .collect();
                }
                "views" => self.views = num(value)?,
                "seed" => self.seed = num(value)?,
                "output" => self.output = PathBuf::from(value),
                "workers" => self.workers = num(value)?,
                _ => return unknown(),
            },
            "camera" => match key {
                "width" => self.camera_width = num(value)?,
                "height" => self.camera_height = num(value)?,
                _ => return unknown(),
            },
            "noise" => match key {
                "clutter_fraction" => self.noise.clutter_fraction = num(value)?,
                "depth_jitter_sigma" => self.noise.depth_jitter_sigma = num(value)?,
                "mask_dilation_px" => self.noise.mask_dilation_px = num(value)?,
                "seed" => self.noise.seed = num(value)?,
                _ => return unknown(),
            },
            "tuples" => match key {
                "count" => self.pipeline.tuple_count = num(value)?,
                "size" => self.pipeline.tuple_size = num(value)?,
                "train_count" => self.train_tuples = num(value)?,
                "descriptor_radius" => self.pipeline.descriptor.radius = num(value)?,
                "descriptor_bins" => self.pipeline.descriptor.bins = num(value)?,
                _ => return unknown(),
            },
            "oracle" => match key {
                "coord_noise_sigma" => self.oracle.coord_noise_sigma = num(value)?,
                "collision_rate" => self.oracle.collision_rate = num(value)?,
                "scale_noise_sigma" => self.oracle.scale_noise_sigma = num(value)?,
                "bins" => self.oracle.bins = num(value)?,
                "seed" => self.oracle.seed = num(value)?,
                _ => return unknown(),
            },
            "predictor" => match key {
                "hidden_width" => self.predictor.hidden_width = num(value)?,
                "hidden_layers" => self.predictor.hidden_layers = num(value)?,
                "bins" => self.predictor.bins = num(value)?,
                "learning_rate" => self.predictor.learning_rate = num(value)?,
                "epochs" => self.predictor.epochs = num(value)?,
                "lr_halving_period" => self.predictor.lr_halving_period = num(value)?,
                "batch_size" => self.predictor.batch_size = num(value)?,
                "seed" => self.predictor.seed = num(value)?,
                "loss" => {
                    self.predictor.loss = match value {
                        "mse" => LossMode::Mse,
                        "cross_entropy" => LossMode::CrossEntropy,
                        other => {
                            return Err(Error::InvalidConfig(format!(
                                "loss must be mse or cross_entropy, got {other}"
                            )))
                        }
                    }
                }
                _ => return unknown(),
            },
            "symmetry" => {
                if !matches!(value, "x" | "y" | "z" | "none") {
                    return Err(Error::InvalidConfig(format!(
                        "symmetry axis must be x, y, z, or none, got {value}"
                    )));
                }
                self.symmetry.retain(|(name, _)| name != key);
                self.symmetry.push((key.to_string(), value.to_string()));
            }
            "filter" => match key {
                "enabled" => self.pipeline.filter_enabled = flag(value)?,
                "tau" => self.pipeline.filter.tau = num(value)?,
                "eta" => self.pipeline.filter.eta = num(value)?,
                "sigma_samples" => self.pipeline.filter.sigma_samples = num(value)?,
                "theta_samples" => self.pipeline.filter.theta_samples = num(value)?,
                _ => return unknown(),
            },
            "vote" => match key {
                "voxel" => self.pipeline.voxel = num(value)?,
                "orientation_resolution_deg" => {
                    self.pipeline.orientation_resolution_deg = num(value)?
                }
                "second_center_pass" => self.pipeline.second_center_pass = flag(value)?,
                "vote_right_cone" => self.pipeline.vote_right_cone = flag(value)?,
                "decode" => {
                    self.pipeline.decode = if value == "expectation" {
                        DecodeMode::Expectation
                    } else if let Some(seed) = value.strip_prefix("sample:") {
                        DecodeMode::Sample(num(seed)?)
                    } else {
                        return Err(Error::InvalidConfig(format!(
                            "decode must be expectation or sample:<seed>, got {value}"
                        )));
                    }
                }
                _ => return unknown(),
            },
            "refine" => match key {
                "enabled" => self.pipeline.refine_enabled = flag(value)?,
                "learning_rate" => self.pipeline.refine.learning_rate = num(value)?,
                "iterations" => self.pipeline.refine.iterations = num(value)?,
                _ => return unknown(),
            },
            other => {
                return Err(Error::InvalidConfig(format!("unknown section [{other}]")));
            }
        }
        Ok(())
    }

    /// Canonical text form containing every key; `parse(dump())` is the
    /// identity.
    pub fn dump(&self) -> String {
        let meshes = self
            .meshes
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(",");
        let loss = match self.predictor.loss {
            LossMode::Mse => "mse",
            LossMode::CrossEntropy => "cross_entropy",
        };
        let decode = match self.pipeline.decode {
            DecodeMode::Expectation => "expectation".to_string(),
            DecodeMode::Sample(seed) => format!("sample:{seed}"),
        };
        let mut symmetry = String::new();
        if !self.symmetry.is_empty() {
            symmetry.push_str("\n[symmetry]\n");
            for (name, axis) in &self.symmetry {
                symmetry.push_str(&format!("{name} = {axis}\n"));
            }
        }
        format!(
            "[run]\n\
             meshes = {meshes}\n\
             views = {}\n\
             seed = {}\n\
             output = {}\n\
             workers = {}\n\
             \n[camera]\n\
             width = {}\n\
             height = {}\n\
             \n[noise]\n\
             clutter_fraction = {}\n\
             depth_jitter_sigma = {}\n\
             mask_dilation_px = {}\n\
             seed = {}\n\
             \n[tuples]\n\
             count = {}\n\
             size = {}\n\
             train_count = {}\n\
             descriptor_radius = {}\n\
             descriptor_bins = {}\n\
             \n[oracle]\n\
             coord_noise_sigma = {}\n\
             collision_rate = {}\n\
             scale_noise_sigma = {}\n\
             bins = {}\n\
             seed = {}\n\
             \n[predictor]\n\
             hidden_width = {}\n\
             hidden_layers = {}\n\
             bins = {}\n\
             learning_rate = {}\n\
             epochs = {}\n\
             lr_halving_period = {}\n\
             batch_size = {}\n\
             seed = {}\n\
             loss = {loss}\n\
             \n[filter]\n\
             enabled = {}\n\
             tau = {}\n\
             eta = {}\n\
             sigma_samples = {}\n\
             theta_samples = {}\n\
             \n[vote]\n\
             voxel = {}\n\
             orientation_resolution_deg = {}\n\
             second_center_pass = {}\n\
             vote_right_cone = {}\n\
             decode = {decode}\n\
             \n[refine]\n\
             enabled = {}\n\
             learning_rate = {}\n\
             iterations = {}\n\
             {symmetry}",
            self.views,
            self.seed,
            self.output.display(),
            self.workers,
            self.camera_width,
            self.camera_height,
            self.noise.clutter_fraction,
            self.noise.depth_jitter_sigma,
            self.noise.mask_dilation_px,
            self.noise.seed,
            self.pipeline.tuple_count,
            self.pipeline.tuple_size,
            self.train_tuples,
            self.pipeline.descriptor.radius,
            self.pipeline.descriptor.bins,
            self.oracle.coord_noise_sigma,
            self.oracle.collision_rate,
            self.oracle.scale_noise_sigma,
            self.oracle.bins,
            self.oracle.seed,
            self.predictor.hidden_width,
            self.predictor.hidden_layers,
            self.predictor.bins,
            self.predictor.learning_rate,
            self.predictor.epochs,
            self.predictor.lr_halving_period,
            self.predictor.batch_size,
            self.predictor.seed,
            self.pipeline.filter_enabled,
            self.pipeline.filter.tau,
            self.pipeline.filter.eta,
            self.pipeline.filter.sigma_samples,
            self.pipeline.filter.theta_samples,
            self.pipeline.voxel,
            self.pipeline.orientation_resolution_deg,
            self.pipeline.second_center_pass,
            self.pipeline.vote_right_cone,
            self.pipeline.refine_enabled,
            self.pipeline.refine.learning_rate,
            self.pipeline.refine.iterations,
        )
    }
}

fn num<T: std::str::FromStr>(value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| Error::InvalidConfig(format!("bad value {value:?}: {e}")))
}

fn flag(value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        other => Err(Error::InvalidConfig(format!(
            "expected a boolean, got {other:?}"
        ))),
    }
}
