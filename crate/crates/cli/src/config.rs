//! Run configuration: `key = value` text files plus flag overrides.

use std::fmt::Write as _;

use radial_threat::featurize::{AugmentConfig, FeatureConfig, FeatureVariant};
use radial_threat::network::model::ModelSpec;
use radial_threat::network::ScalingCoefficients;
use radial_threat::simulate::{ClassMap, SimConfig};
use radial_threat::train::TrainConfig;
use radial_threat::vmd::VmdConfig;

use crate::CliError;

/// Every tunable of the pipeline. One `seed` drives simulation, the
/// train/test split, feature augmentation, initialisation and shuffling.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub sim: SimConfig,
    pub split_ratio: (u32, u32),
    pub variant: FeatureVariant,
    pub features: FeatureConfig,
    pub train: TrainConfig,
    pub scaling: ScalingCoefficients,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sim: SimConfig::default(),
            split_ratio: (4, 1),
            variant: FeatureVariant::StffAug,
            features: FeatureConfig::default(),
            train: TrainConfig::default(),
            scaling: ScalingCoefficients::IDENTITY,
        }
    }
}

/// Every recognised key, in echo order.
#[cfg(test)]
pub const KEYS: &[&str] = &[
    "seed",
    "n_per_class",
    "alarm_max_m",
    "tracking_max_m",
    "noise_floor",
    "amplitude_jitter",
    "split_ratio",
    "variant",
    "resolution",
    "window",
    "hop",
    "vmd.k",
    "vmd.alpha",
    "vmd.tau",
    "vmd.tol",
    "vmd.max_iters",
    "vmd.rho_min",
    "aug_copies",
    "epochs",
    "batch_size",
    "lr_start",
    "lr_end",
    "momentum",
    "weight_decay",
    "depth",
    "width",
    "res_scale",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::Config(format!("invalid value {value:?} for key {key}")))
}

impl RunConfig {
    /// Sets one key; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        match key {
            "seed" => self.seed = parse(key, v)?,
            "n_per_class" => self.sim.n_per_class = parse(key, v)?,
            "alarm_max_m" => self.sim.class_map.alarm_max_m = parse(key, v)?,
            "tracking_max_m" => self.sim.class_map.tracking_max_m = parse(key, v)?,
            "noise_floor" => self.sim.noise_floor = parse(key, v)?,
            "amplitude_jitter" => self.sim.amplitude_jitter = parse(key, v)?,
            "split_ratio" => {
                let (a, b) = v
                    .split_once(':')
                    .ok_or_else(|| CliError::Config(format!("split_ratio must be a:b, got {v:?}")))?;
                self.split_ratio = (parse(key, a)?, parse(key, b)?);
            }
            "variant" => self.variant = v.parse().map_err(|e| CliError::Config(format!("{e}")))?,
            "resolution" => self.features.resolution = parse(key, v)?,
            "window" => self.features.window = parse(key, v)?,
            "hop" => self.features.hop = parse(key, v)?,
            "vmd.k" => self.features.vmd.n_modes = parse(key, v)?,
            "vmd.alpha" => self.features.vmd.alpha = parse(key, v)?,
            "vmd.tau" => self.features.vmd.tau = parse(key, v)?,
            "vmd.tol" => self.features.vmd.tolerance = parse(key, v)?,
            "vmd.max_iters" => self.features.vmd.max_iters = parse(key, v)?,
            "vmd.rho_min" => self.features.vmd.rho_min = parse(key, v)?,
            "aug_copies" => self.features.augment.copies = parse(key, v)?,
            "epochs" => self.train.epochs = parse(key, v)?,
            "batch_size" => self.train.batch_size = parse(key, v)?,
            "lr_start" => self.train.lr_start = parse(key, v)?,
            "lr_end" => self.train.lr_end = parse(key, v)?,
            "momentum" => self.train.momentum = parse(key, v)?,
            "weight_decay" => self.train.weight_decay = parse(key, v)?,
            "depth" => self.scaling.depth = parse(key, v)?,
            "width" => self.scaling.width = parse(key, v)?,
            "res_scale" => self.scaling.resolution = parse(key, v)?,
            _ => return Err(CliError::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Applies a `key = value` file; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), CliError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", n + 1)))?;
            self.set(k.trim(), v)?;
        }
        Ok(())
    }

    /// Propagates the run seed and checks every section.
    pub fn finalize(&mut self) -> Result<(), CliError> {
        self.sim.seed = self.seed;
        self.features.seed = self.seed;
        self.train.seed = self.seed;
        let cfg_err = |e: String| CliError::Config(e);
        self.sim.class_map.validate().map_err(|e| cfg_err(e.to_string()))?;
        self.features.validate().map_err(|e| cfg_err(e.to_string()))?;
        self.train.validate().map_err(|e| cfg_err(e.to_string()))?;
        self.scaling.validate().map_err(|e| cfg_err(e.to_string()))?;
        if self.split_ratio.0 == 0 || self.split_ratio.1 == 0 {
            return Err(cfg_err("split_ratio parts must be positive".into()));
        }
        if !(self.sim.noise_floor >= 0.0) {
            return Err(cfg_err("noise_floor must be >= 0".into()));
        }
        self.model_spec().validate().map_err(|e| cfg_err(e.to_string()))?;
        Ok(())
    }

    pub fn model_spec(&self) -> ModelSpec {
        ModelSpec {
            base_resolution: self.features.resolution,
            scaling: self.scaling,
            ..ModelSpec::default()
        }
    }

    /// Feature settings with the resolution the scaled model expects.
    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            resolution: self.model_spec().resolution(),
            ..self.features.clone()
        }
    }

    /// Effective configuration in the same `key = value` format.
    pub fn to_text(&self) -> String {
        let s = &self.sim;
        let f = &self.features;
        let v: &VmdConfig = &f.vmd;
        let a: &AugmentConfig = &f.augment;
        let t = &self.train;
        let c: &ClassMap = &s.class_map;
        let mut out = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(out, "{k} = {v}");
        };
        put("seed", self.seed.to_string());
        put("n_per_class", s.n_per_class.to_string());
        put("alarm_max_m", c.alarm_max_m.to_string());
        put("tracking_max_m", c.tracking_max_m.to_string());
        put("noise_floor", s.noise_floor.to_string());
        put("amplitude_jitter", s.amplitude_jitter.to_string());
        put("split_ratio", format!("{}:{}", self.split_ratio.0, self.split_ratio.1));
        put("variant", self.variant.to_string());
        put("resolution", f.resolution.to_string());
        put("window", f.window.to_string());
        put("hop", f.hop.to_string());
        put("vmd.k", v.n_modes.to_string());
        put("vmd.alpha", v.alpha.to_string());
        put("vmd.tau", v.tau.to_string());
        put("vmd.tol", v.tolerance.to_string());
        put("vmd.max_iters", v.max_iters.to_string());
        put("vmd.rho_min", v.rho_min.to_string());
        put("aug_copies", a.copies.to_string());
        put("epochs", t.epochs.to_string());
        put("batch_size", t.batch_size.to_string());
        put("lr_start", t.lr_start.to_string());
        put("lr_end", t.lr_end.to_string());
        put("momentum", t.momentum.to_string());
        put("weight_decay", t.weight_decay.to_string());
        put("depth", self.scaling.depth.to_string());
        put("width", self.scaling.width.to_string());
        put("res_scale", self.scaling.resolution.to_string());
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn echo_round_trips_and_covers_every_key() {
        let mut c = RunConfig::default();
        c.apply_text("seed = 9\nvariant = tff # comment\nepochs=3\nsplit_ratio = 3:2\n").unwrap();
        let text = c.to_text();
        let mut back = RunConfig::default();
        back.apply_text(&text).unwrap();
        assert_eq!(back, c);
        assert_eq!(text.lines().count(), KEYS.len());
        for k in KEYS {
            assert!(text.contains(&format!("{k} = ")), "{k}");
        }
    }

    #[test]
    fn unknown_key_rejected() {
        let err = RunConfig::default().apply_text("learning_rate = 0.1").unwrap_err();
        assert!(matches!(err, CliError::Config(_)));
    }
}
