//! Flow configuration: fabric technology parameters, scheduler and placer knobs.
//!
//! Every struct deserializes from a `key = value` file (TOML syntax) with all
//! fields optional; missing keys fall back to the defaults below.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Microseconds. All fabric timing is integral.
pub type Micros = u64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("config field `{0}` must be positive")]
    NotPositive(&'static str),
    #[error("well capacity must be at least 2 (got {0})")]
    CapacityTooSmall(usize),
    #[error("`{field}` = {value} us is not a multiple of move_delay = {move_delay} us")]
    NotTickAligned {
        field: &'static str,
        value: Micros,
        move_delay: Micros,
    },
    #[error("alpha_set must be non-empty with every alpha in (0, 1]")]
    BadAlphaSet,
    #[error("invalid config file: {0}")]
    Parse(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FabricConfig {
    pub template_rows: usize,
    pub template_cols: usize,
    /// The ULB is `ulb_n` x `ulb_n` templates.
    pub ulb_n: usize,
    pub well_capacity: usize,
    pub move_delay: Micros,
    pub one_qubit_delay: Micros,
    pub two_qubit_delay: Micros,
}

impl Default for FabricConfig {
    fn default() -> Self {
        Self {
            template_rows: 11,
            template_cols: 11,
            ulb_n: 1,
            well_capacity: 5,
            move_delay: 10,
            one_qubit_delay: 50,
            two_qubit_delay: 100,
        }
    }
}

impl FabricConfig {
    pub fn with_ulb_n(mut self, n: usize) -> Self {
        self.ulb_n = n;
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            ("template_rows", self.template_rows as u64),
            ("template_cols", self.template_cols as u64),
            ("ulb_n", self.ulb_n as u64),
            ("well_capacity", self.well_capacity as u64),
            ("move_delay", self.move_delay),
            ("one_qubit_delay", self.one_qubit_delay),
            ("two_qubit_delay", self.two_qubit_delay),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(ConfigError::NotPositive(name));
            }
        }
        if self.well_capacity < 2 {
            return Err(ConfigError::CapacityTooSmall(self.well_capacity));
        }
        for (field, value) in [
            ("one_qubit_delay", self.one_qubit_delay),
            ("two_qubit_delay", self.two_qubit_delay),
        ] {
            if value % self.move_delay != 0 {
                return Err(ConfigError::NotTickAligned {
                    field,
                    value,
                    move_delay: self.move_delay,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SchedulerConfig {
    /// Global per-level cap. `None` means "number of interaction wells".
    pub n_max: Option<usize>,
    /// Multipliers applied to the widest ASAP level to enumerate caps.
    pub alpha_set: Vec<f64>,
    /// Finite stand-in for the priority of a zero-slack instruction.
    pub m_sat: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        Self {
            n_max: None,
            alpha_set: vec![1.0, 0.8, 0.6, 0.4, 0.2],
            m_sat: 1e6,
        }
    }
}

impl SchedulerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.alpha_set.is_empty() || self.alpha_set.iter().any(|a| !(*a > 0.0 && *a <= 1.0)) {
            return Err(ConfigError::BadAlphaSet);
        }
        if self.n_max == Some(0) {
            return Err(ConfigError::NotPositive("n_max"));
        }
        if !(self.m_sat > 0.0) {
            return Err(ConfigError::NotPositive("m_sat"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlacerConfig {
    /// Net-weight saturation value.
    pub m_max: f64,
    /// Weight of the first round of pseudo-net anchors.
    pub pseudo_net_base: f64,
    /// Geometric growth of the anchor weight per global iteration.
    pub pseudo_net_growth: f64,
    pub cg_tolerance: f64,
    pub max_global_iters: usize,
    /// Re-run the scheduler once this many instructions are pending deferral.
    pub defer_batch_count: usize,
    /// ... or once their summed lateness (us) reaches this value.
    pub defer_batch_slack: f64,
    /// Deferral may grow the schedule to at most this multiple of its initial length.
    pub horizon_factor: usize,
    /// Seed for the symmetry-breaking jitter of the initial coordinates.
    pub seed: u64,
}

impl Default for PlacerConfig {
    fn default() -> Self {
        Self {
            m_max: 100.0,
            pseudo_net_base: 0.05,
            pseudo_net_growth: 1.5,
            cg_tolerance: 1e-6,
            max_global_iters: 50,
            defer_batch_count: 1,
            defer_batch_slack: f64::INFINITY,
            horizon_factor: 4,
            seed: 0,
        }
    }
}

impl PlacerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [
            ("m_max", self.m_max),
            ("pseudo_net_base", self.pseudo_net_base),
            ("pseudo_net_growth", self.pseudo_net_growth),
            ("cg_tolerance", self.cg_tolerance),
            ("defer_batch_slack", self.defer_batch_slack),
        ] {
            if !(v > 0.0) {
                return Err(ConfigError::NotPositive(name));
            }
        }
        if self.max_global_iters == 0 {
            return Err(ConfigError::NotPositive("max_global_iters"));
        }
        if self.defer_batch_count == 0 {
            return Err(ConfigError::NotPositive("defer_batch_count"));
        }
        if self.horizon_factor == 0 {
            return Err(ConfigError::NotPositive("horizon_factor"));
        }
        Ok(())
    }
}

/// Everything one mapping run needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FlowConfig {
    pub fabric: FabricConfig,
    pub scheduler: SchedulerConfig,
    pub placer: PlacerConfig,
    /// Carry only the default schedule candidate through placement and routing.
    pub fast: bool,
}

impl FlowConfig {
    /// Parse a config file. Unknown keys are rejected so typos surface.
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: FlowConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.fabric.validate()?;
        self.scheduler.validate()?;
        self.placer.validate()
    }

    pub fn with_ulb_n(mut self, n: usize) -> Self {
        self.fabric.ulb_n = n;
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_technology_parameters() {
        let f = FabricConfig::default();
        assert_eq!(f.well_capacity, 5);
        assert_eq!((f.move_delay, f.one_qubit_delay, f.two_qubit_delay), (10, 50, 100));
        assert_eq!((f.template_rows, f.template_cols), (11, 11));
        assert!(FlowConfig::default().validate().is_ok());
    }

    #[test]
    fn capacity_below_two_rejected() {
        let f = FabricConfig { well_capacity: 1, ..Default::default() };
        assert_eq!(f.validate(), Err(ConfigError::CapacityTooSmall(1)));
    }

    #[test]
    fn misaligned_delay_rejected() {
        let f = FabricConfig { one_qubit_delay: 55, ..Default::default() };
        assert!(matches!(f.validate(), Err(ConfigError::NotTickAligned { .. })));
    }

    #[test]
    fn partial_file_overrides_defaults() {
        let cfg = FlowConfig::from_toml(
            "fast = true\n[fabric]\nulb_n = 3\nmove_delay = 5\n[scheduler]\nalpha_set = [1.0, 0.5]\n",
        )
        .unwrap();
        assert!(cfg.fast);
        assert_eq!(cfg.fabric.ulb_n, 3);
        assert_eq!(cfg.fabric.move_delay, 5);
        assert_eq!(cfg.fabric.well_capacity, 5);
        assert_eq!(cfg.scheduler.alpha_set, vec![1.0, 0.5]);
    }

    #[test]
    fn bad_alpha_rejected() {
        let cfg = FlowConfig::from_toml("[scheduler]\nalpha_set = [1.5]\n");
        assert_eq!(cfg, Err(ConfigError::BadAlphaSet));
    }
}
