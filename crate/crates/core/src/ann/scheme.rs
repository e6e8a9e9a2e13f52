use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Equidistant depth classes over `[tau_min, tau_max]`.
///
/// Class `c` covers `[tau_min + c·w, tau_min + (c+1)·w)`; a depth exactly on
/// an interior edge belongs to the higher class and the top class is closed
/// at `tau_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassScheme {
    pub tau_min: f64,
    pub tau_max: f64,
    pub n_classes: usize,
}

impl ClassScheme {
    pub fn new(tau_min: f64, tau_max: f64, n_classes: usize) -> Result<Self> {
        let s = Self { tau_min, tau_max, n_classes };
        s.validate()?;
        Ok(s)
    }

    /// Eight classes on [0, 0.2].
    pub fn intensity() -> Self {
        Self { tau_min: 0.0, tau_max: 0.2, n_classes: 8 }
    }

    /// Ten classes on [0, 0.5].
    pub fn probability() -> Self {
        Self { tau_min: 0.0, tau_max: 0.5, n_classes: 10 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau_min.is_finite() && self.tau_max.is_finite() && self.tau_min < self.tau_max) {
            return Err(Error::InvalidParams(format!("class range [{}, {}] is empty", self.tau_min, self.tau_max)));
        }
        if self.n_classes < 2 {
            return Err(Error::InvalidParams(format!("need at least 2 classes, got {}", self.n_classes)));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        (self.tau_max - self.tau_min) / self.n_classes as f64
    }

    /// Lower edge of class `c` (`c = n_classes` gives `tau_max`).
    pub fn edge(&self, c: usize) -> f64 {
        if c == self.n_classes {
            self.tau_max
        } else {
            self.tau_min + c as f64 * self.width()
        }
    }

    pub fn midpoint(&self, c: usize) -> f64 {
        0.5 * (self.edge(c) + self.edge(c + 1))
    }

    /// Class containing `tau`, or `None` outside `[tau_min, tau_max]`.
    pub fn class_of(&self, tau: f64) -> Option<usize> {
        if !(tau >= self.tau_min && tau <= self.tau_max) {
            return None;
        }
        let top = self.n_classes - 1;
        let mut c = (((tau - self.tau_min) / self.width()).floor() as usize).min(top);
        // the division can land one class off next to an edge
        while c < top && tau >= self.edge(c + 1) {
            c += 1;
        }
        while c > 0 && tau < self.edge(c) {
            c -= 1;
        }
        Some(c)
    }

    /// Inclusive `tau_min:tau_max` notation used on the command line.
    pub fn parse_range(text: &str, n_classes: usize) -> Result<Self> {
        let (a, b) = text
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("expected MIN:MAX, got {text:?}")))?;
        let parse = |s: &str| s.trim().parse::<f64>().map_err(|e| Error::Parse(format!("{s:?}: {e}")));
        Self::new(parse(a)?, parse(b)?, n_classes)
    }
}
