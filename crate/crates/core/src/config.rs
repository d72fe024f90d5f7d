//! Generator configuration.
//!
//! Serialized as TOML. Every section and field has a default, so a config
//! file only needs the values it changes; unknown keys are rejected.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::labels::{Connectivity, LabelBandConfig};
use crate::volume::Dims;

/// Closed interval `[min, max]`, written as a two-element array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval(pub f64, pub f64);

impl Interval {
    pub fn min(&self) -> f64 {
        self.0
    }

    pub fn max(&self) -> f64 {
        self.1
    }

    pub fn contains(&self, v: f64) -> bool {
        v >= self.0 && v <= self.1
    }

    fn check(&self, name: &str) -> Result<()> {
        if !self.0.is_finite() || !self.1.is_finite() || self.0 > self.1 {
            return Err(Error::config(format!(
                "{name}: expected finite [min, max] with min <= max, got [{}, {}]",
                self.0, self.1
            )));
        }
        Ok(())
    }
}

/// Inclusive integer interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CountRange(pub u32, pub u32);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    /// Output grid `[nx, ny, nz]`.
    pub dims: [usize; 3],
    /// Written as a TOML integer when it fits in `i64`, else as a decimal string.
    #[serde(with = "seed_repr")]
    pub seed: u64,
    pub shape: ShapeConfig,
    pub deform: DeformConfig,
    pub intensity: IntensityParams,
    pub labels: LabelBandConfig,
    pub augment: AugmentConfig,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            dims: [128, 128, 128],
            seed: 0,
            shape: ShapeConfig::default(),
            deform: DeformConfig::default(),
            intensity: IntensityParams::default(),
            labels: LabelBandConfig::default(),
            augment: AugmentConfig::default(),
        }
    }
}

mod seed_repr {
    use serde::{de, Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &u64, s: S) -> Result<S::Ok, S::Error> {
        match i64::try_from(*v) {
            Ok(i) => i.serialize(s),
            Err(_) => v.to_string().serialize(s),
        }
    }

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Int(u64),
        Text(String),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<u64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Int(v) => Ok(v),
            Repr::Text(t) => t.trim().parse().map_err(de::Error::custom),
        }
    }
}

/// Sampling ranges for the head geometry. Lengths are in voxels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShapeConfig {
    pub outer_semiaxes: Interval,
    pub shell_thickness: Interval,
    /// Brain semi-axes as a fraction of the cavity semi-axes.
    pub brain_scale: Interval,
    /// Extra factor on the brain z semi-axis.
    pub brain_z_scale: Interval,
    /// Brain center offset, as a fraction of each cavity semi-axis.
    pub brain_center_jitter: f64,
    pub artifact_count: CountRange,
    pub artifact_semiaxes: Interval,
    /// Probability that an artifact is a hole rather than a blob.
    pub hole_probability: f64,
    /// Rejection-sampling cap for a feasible geometry.
    pub max_attempts: u32,
}

impl Default for ShapeConfig {
    fn default() -> Self {
        Self {
            outer_semiaxes: Interval(38.0, 56.0),
            shell_thickness: Interval(4.0, 10.0),
            brain_scale: Interval(0.55, 0.9),
            brain_z_scale: Interval(0.6, 0.9),
            brain_center_jitter: 0.1,
            artifact_count: CountRange(0, 4),
            artifact_semiaxes: Interval(2.0, 8.0),
            hole_probability: 0.5,
            max_attempts: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DeformConfig {
    /// Pitch of the coarse noise lattice, voxels.
    pub control_spacing: usize,
    /// Per-sample amplitude range, voxels.
    pub max_disp: Interval,
}

impl Default for DeformConfig {
    fn default() -> Self {
        Self {
            control_spacing: 16,
            max_disp: Interval(0.0, 8.0),
        }
    }
}

/// Intensity model parameters: per-region mean and std ranges and part counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntensityParams {
    pub inner_mean_range: Interval,
    pub inner_std_range: Interval,
    pub inner_parts: u32,
    pub outer_mean_range: Interval,
    pub outer_std_range: Interval,
    pub outer_parts: u32,
    pub small_mean: f64,
    pub small_std: f64,
    pub background_mean: f64,
    pub background_std: f64,
}

impl Default for IntensityParams {
    fn default() -> Self {
        Self {
            inner_mean_range: Interval(0.4, 1.0),
            inner_std_range: Interval(0.0, 0.4),
            inner_parts: 4,
            outer_mean_range: Interval(0.4, 1.0),
            outer_std_range: Interval(0.0, 0.4),
            outer_parts: 4,
            small_mean: 1.0,
            small_std: 0.4,
            background_mean: 0.1,
            background_std: 0.1,
        }
    }
}

impl IntensityParams {
    pub fn validate(&self) -> Result<()> {
        self.inner_mean_range.check("intensity.inner_mean_range")?;
        self.inner_std_range.check("intensity.inner_std_range")?;
        self.outer_mean_range.check("intensity.outer_mean_range")?;
        self.outer_std_range.check("intensity.outer_std_range")?;
        if self.inner_std_range.min() < 0.0 || self.outer_std_range.min() < 0.0 {
            return Err(Error::config("intensity std ranges must be non-negative"));
        }
        if !(1..=255).contains(&self.inner_parts) || !(1..=255).contains(&self.outer_parts) {
            return Err(Error::config("intensity parts must be in 1..=255"));
        }
        if !(self.small_std >= 0.0) || !(self.background_std >= 0.0) {
            return Err(Error::config("intensity stds must be non-negative"));
        }
        if !self.small_mean.is_finite() || !self.background_mean.is_finite() {
            return Err(Error::config("intensity means must be finite"));
        }
        Ok(())
    }
}

/// Per-sample spatial augmentation, applied identically to image and labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Flip probability for x, y and z.
    pub flip_probability: [f64; 3],
    /// Random quarter turns about z (needs nx == ny).
    pub rotate_z: bool,
    /// Translation drawn uniformly from `[-translate_max, translate_max]` per axis.
    pub translate_max: u32,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            flip_probability: [0.5; 3],
            rotate_z: true,
            translate_max: 8,
        }
    }
}

impl GeneratorConfig {
    pub fn grid(&self) -> Result<Dims> {
        Dims::new(self.dims[0], self.dims[1], self.dims[2])
            .map_err(|_| Error::config(format!("dims must be positive, got {:?}", self.dims)))
    }

    pub fn validate(&self) -> Result<()> {
        let dims = self.grid()?;
        let s = &self.shape;
        s.outer_semiaxes.check("shape.outer_semiaxes")?;
        s.shell_thickness.check("shape.shell_thickness")?;
        s.brain_scale.check("shape.brain_scale")?;
        s.brain_z_scale.check("shape.brain_z_scale")?;
        s.artifact_semiaxes.check("shape.artifact_semiaxes")?;
        if s.outer_semiaxes.min() <= 0.0 || s.shell_thickness.min() < 0.0 {
            return Err(Error::config("shape: outer semi-axes must be positive"));
        }
        if s.outer_semiaxes.min() <= s.shell_thickness.max() {
            return Err(Error::config(
                "shape: shell thickness can consume the whole outer ellipsoid (empty cavity)",
            ));
        }
        if s.brain_scale.min() <= 0.0 || s.brain_scale.max() >= 1.0 {
            return Err(Error::config(format!(
                "shape.brain_scale must lie in (0, 1) so the brain fits the cavity, got [{}, {}]",
                s.brain_scale.min(),
                s.brain_scale.max()
            )));
        }
        if s.brain_z_scale.min() <= 0.0 || s.brain_z_scale.max() > 1.0 {
            return Err(Error::config("shape.brain_z_scale must lie in (0, 1]"));
        }
        if !(0.0..1.0).contains(&s.brain_center_jitter) {
            return Err(Error::config("shape.brain_center_jitter must lie in [0, 1)"));
        }
        if s.artifact_count.0 > s.artifact_count.1 {
            return Err(Error::config("shape.artifact_count: min > max"));
        }
        if s.artifact_count.1 > 1000 {
            return Err(Error::config("shape.artifact_count: at most 1000 artifacts"));
        }
        if s.artifact_semiaxes.min() <= 0.0 {
            return Err(Error::config("shape.artifact_semiaxes must be positive"));
        }
        if !(0.0..=1.0).contains(&s.hole_probability) {
            return Err(Error::config("shape.hole_probability must lie in [0, 1]"));
        }
        if s.max_attempts == 0 {
            return Err(Error::config("shape.max_attempts must be >= 1"));
        }
        let half = dims.center();
        if half.iter().any(|&h| s.outer_semiaxes.max() > h) {
            return Err(Error::config(format!(
                "shape.outer_semiaxes max {} does not fit dims {:?}",
                s.outer_semiaxes.max(),
                self.dims
            )));
        }

        self.deform.max_disp.check("deform.max_disp")?;
        if self.deform.control_spacing < 2 {
            return Err(Error::config("deform.control_spacing must be >= 2"));
        }
        if self.deform.max_disp.min() < 0.0 {
            return Err(Error::config("deform.max_disp must be non-negative"));
        }

        self.intensity.validate()?;

        if self.labels.band_thickness < 1 {
            return Err(Error::config("labels.band_thickness must be >= 1"));
        }
        let _: Connectivity = self.labels.connectivity;

        if self
            .augment
            .flip_probability
            .iter()
            .any(|p| !(0.0..=1.0).contains(p))
        {
            return Err(Error::config("augment.flip_probability entries must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: GeneratorConfig =
            toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    /// SHA-256 of the canonical TOML form, lowercase hex.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml_string().as_bytes()))
    }
}
