use crate::error::{Error, Result};

/// log(p / (1 - p)).
#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

/// Inverse of [`logit`].
#[inline]
pub fn probability(log_odds: f32) -> f64 {
    1.0 / (1.0 + (-(log_odds as f64)).exp())
}

/// Sensor model, clamping bounds and classification thresholds.
///
/// `log_hit`, `log_miss`, `clamp_*` and `prior` are log-odds; `t_free` and
/// `t_occ` are probabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OccupancyConfig {
    pub log_hit: f32,
    pub log_miss: f32,
    pub clamp_min: f32,
    pub clamp_max: f32,
    pub t_free: f32,
    pub t_occ: f32,
    pub prior: f32,
}

impl Default for OccupancyConfig {
    fn default() -> Self {
        Self::from_probabilities(0.7, 0.4, 0.12, 0.97, 0.5, 0.5)
    }
}

impl OccupancyConfig {
    pub fn from_probabilities(
        p_hit: f64,
        p_miss: f64,
        p_clamp_min: f64,
        p_clamp_max: f64,
        t_free: f64,
        t_occ: f64,
    ) -> Self {
        Self {
            log_hit: logit(p_hit) as f32,
            log_miss: logit(p_miss) as f32,
            clamp_min: logit(p_clamp_min) as f32,
            clamp_max: logit(p_clamp_max) as f32,
            t_free: t_free as f32,
            t_occ: t_occ as f32,
            prior: 0.0,
        }
    }

    pub fn with_thresholds(mut self, t_free: f32, t_occ: f32) -> Self {
        self.t_free = t_free;
        self.t_occ = t_occ;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.log_hit,
            self.log_miss,
            self.clamp_min,
            self.clamp_max,
            self.t_free,
            self.t_occ,
            self.prior,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("all parameters must be finite".into()));
        }
        if !(self.log_hit > 0.0 && self.log_miss < 0.0) {
            return Err(Error::InvalidConfig(format!(
                "need log_hit > 0 > log_miss, got {} and {}",
                self.log_hit, self.log_miss
            )));
        }
        if !(self.clamp_min <= self.prior && self.prior <= self.clamp_max) {
            return Err(Error::InvalidConfig(format!(
                "need clamp_min <= prior <= clamp_max, got {} <= {} <= {}",
                self.clamp_min, self.prior, self.clamp_max
            )));
        }
        if !(0.0 < self.t_free && self.t_free <= self.t_occ && self.t_occ < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "need 0 < t_free <= t_occ < 1, got {} and {}",
                self.t_free, self.t_occ
            )));
        }
        let th = self.thresholds();
        if th.free_below < self.clamp_min {
            log::warn!(
                "free threshold {} lies below clamp_min {}: no node can ever be classified free",
                self.t_free,
                self.clamp_min
            );
        }
        if th.occupied_above >= self.clamp_max {
            log::warn!(
                "occupied threshold {} is not below clamp_max {}: no node can ever be classified occupied",
                self.t_occ,
                self.clamp_max
            );
        }
        Ok(())
    }

    #[inline]
    pub fn clamp(&self, v: f32) -> f32 {
        v.clamp(self.clamp_min, self.clamp_max)
    }

    pub(crate) fn thresholds(&self) -> Thresholds {
        Thresholds {
            free_below: logit(self.t_free as f64) as f32,
            occupied_above: logit(self.t_occ as f64) as f32,
        }
    }
}

/// Probability thresholds converted once to log-odds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct Thresholds {
    pub free_below: f32,
    pub occupied_above: f32,
}

impl Thresholds {
    #[inline]
    pub fn classify(&self, v: f32) -> NodeState {
        if v > self.occupied_above {
            NodeState::Occupied
        } else if v < self.free_below {
            NodeState::Free
        } else {
            NodeState::Unknown
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum NodeState {
    Occupied,
    Free,
    Unknown,
}

impl NodeState {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeState::Occupied => "occupied",
            NodeState::Free => "free",
            NodeState::Unknown => "unknown",
        }
    }
}

impl std::fmt::Display for NodeState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Color {
    pub r: u8,
    pub g: u8,
    pub b: u8,
}

impl Color {
    pub const fn new(r: u8, g: u8, b: u8) -> Self {
        Self { r, g, b }
    }

    #[inline]
    pub(crate) fn rgb_bits(self) -> u32 {
        self.r as u32 | (self.g as u32) << 8 | (self.b as u32) << 16
    }

    #[inline]
    pub(crate) fn from_bits(bits: u32) -> Self {
        Self::new(bits as u8, (bits >> 8) as u8, (bits >> 16) as u8)
    }
}
