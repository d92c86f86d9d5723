use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::BACKGROUND_SIZE;
use crate::imageops::MIN_SCALE_PX;

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("invalid config JSON: {0}")]
    Json(String),
    #[error("size_range is required: set the smallest and largest sign size (px) the detector must handle")]
    MissingSizeRange,
    #[error("{field}: {reason}")]
    Invalid { field: &'static str, reason: String },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        field,
        reason: reason.into(),
    }
}

/// Every knob of sample generation. Unknown keys are rejected when parsing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    /// Number of samples `N`.
    pub n_samples: u64,
    /// Contrast gain applied to the background and the templates.
    pub gain_range: [f64; 2],
    /// Brightness offset applied to the background.
    pub offset_range: [f64; 2],
    /// Allowed sign counts per sample, drawn uniformly.
    pub count_support: Vec<u32>,
    /// Chance that a sign is stacked below its predecessor.
    pub stack_p1: f64,
    /// Chance that a stacked pair grows to three.
    pub stack_p2: f64,
    /// Rotation in degrees.
    pub rotation_range: [f64; 2],
    /// Smallest and largest on-image sign size in pixels. Required.
    pub size_range: Option<[u32; 2]>,
    /// Corner displacement as a fraction of the side length.
    pub perspective_p: f64,
    /// Noise amplitude in intensity levels.
    pub jitter_amplitude: f64,
    /// Border fade width as a fraction of the sign size.
    pub fade_frac: f64,
    /// Subtracted from the local background mean before it is added to a sign.
    pub brightness_constant: f64,
    /// Upper bound coefficient for the final blur sigma.
    pub blur_max_coeff: f64,
    /// Multiply the blur bound by (largest placed sign / max size).
    pub blur_relative_to_size: bool,
    /// Gap below a stacked sign, as a fraction of the upper sign height.
    pub stack_gap_frac: f64,
    /// Position draws per sign group before it is dropped.
    pub placement_attempts: u32,
    pub master_seed: u64,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            n_samples: 0,
            gain_range: [0.75, 1.25],
            offset_range: [-120.0, 120.0],
            count_support: vec![1, 2, 3, 4, 5],
            stack_p1: 0.40,
            stack_p2: 0.50,
            rotation_range: [-10.0, 10.0],
            size_range: None,
            perspective_p: 0.1,
            jitter_amplitude: 8.0,
            fade_frac: 0.08,
            brightness_constant: 128.0,
            blur_max_coeff: 7.0,
            blur_relative_to_size: true,
            stack_gap_frac: 0.1,
            placement_attempts: 100,
            master_seed: 0,
        }
    }
}

impl GenerationConfig {
    pub fn with_size_range(min_size: u32, max_size: u32) -> Self {
        Self {
            size_range: Some([min_size, max_size]),
            ..Self::default()
        }
    }

    /// Weaker photometric augmentation: blur sigma in `U(0, 2)` and
    /// brightness offset in `U(-40, 40)`.
    pub fn baseline_preset(min_size: u32, max_size: u32) -> Self {
        Self {
            offset_range: [-40.0, 40.0],
            blur_max_coeff: 2.0,
            blur_relative_to_size: false,
            ..Self::with_size_range(min_size, max_size)
        }
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self, ConfigError> {
        let config: Self = serde_json::from_slice(bytes).map_err(|e| ConfigError::Json(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// `(min_size, max_size)`; errors when the operating range is unset.
    pub fn sizes(&self) -> Result<(u32, u32), ConfigError> {
        self.size_range
            .map(|[lo, hi]| (lo, hi))
            .ok_or(ConfigError::MissingSizeRange)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let ordered = |field, [lo, hi]: [f64; 2]| {
            if lo.is_finite() && hi.is_finite() && lo <= hi {
                Ok(())
            } else {
                Err(invalid(field, format!("expected finite lo <= hi, got [{lo}, {hi}]")))
            }
        };
        let unit = |field, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(invalid(field, format!("{p} is not a probability")))
            }
        };
        ordered("gain_range", self.gain_range)?;
        if self.gain_range[0] <= 0.0 {
            return Err(invalid("gain_range", "gains must be positive"));
        }
        ordered("offset_range", self.offset_range)?;
        ordered("rotation_range", self.rotation_range)?;
        if self.count_support.is_empty() || self.count_support.iter().any(|&c| !(1..=5).contains(&c)) {
            return Err(invalid("count_support", "counts must be non-empty and within 1..=5"));
        }
        unit("stack_p1", self.stack_p1)?;
        unit("stack_p2", self.stack_p2)?;
        let (lo, hi) = self.sizes()?;
        if (lo as f64) < MIN_SCALE_PX || lo > hi || hi > BACKGROUND_SIZE {
            return Err(invalid(
                "size_range",
                format!("need {MIN_SCALE_PX} <= min <= max <= {BACKGROUND_SIZE}, got [{lo}, {hi}]"),
            ));
        }
        if !(0.0..0.5).contains(&self.perspective_p) {
            return Err(invalid("perspective_p", "must lie in [0, 0.5)"));
        }
        if !(0.0..0.5).contains(&self.fade_frac) {
            return Err(invalid("fade_frac", "must lie in [0, 0.5)"));
        }
        if !(self.jitter_amplitude >= 0.0) {
            return Err(invalid("jitter_amplitude", "must be >= 0"));
        }
        if !(self.blur_max_coeff >= 0.0) {
            return Err(invalid("blur_max_coeff", "must be >= 0"));
        }
        if !(0.0..=255.0).contains(&self.brightness_constant) {
            return Err(invalid("brightness_constant", "must lie in [0, 255]"));
        }
        if !(self.stack_gap_frac >= 0.0) {
            return Err(invalid("stack_gap_frac", "must be >= 0"));
        }
        if self.placement_attempts == 0 {
            return Err(invalid("placement_attempts", "must be positive"));
        }
        Ok(())
    }
}
