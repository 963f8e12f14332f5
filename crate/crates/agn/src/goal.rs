//! Attack goals and success thresholds.

use serde::{Deserialize, Serialize};

use crate::error::{AgnError, Result};

pub const DEFAULT_DODGE_THRESHOLD: f64 = 0.01;
pub const DEFAULT_IMPERSONATE_THRESHOLD: f64 = 0.92;

/// Mean-probability stop thresholds used when attacking a multi-image set.
pub const MULTI_IMAGE_DODGE_MEAN: f64 = 0.005;
pub const MULTI_IMAGE_IMPERSONATE_MEAN: f64 = 0.990;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttackMode {
    Dodge,
    Impersonate,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttackGoal {
    pub mode: AttackMode,
    /// Required iff impersonating.
    pub target_class: Option<usize>,
    pub dodge_threshold: f64,
    pub impersonate_threshold: f64,
}

impl AttackGoal {
    pub fn dodge() -> Self {
        Self {
            mode: AttackMode::Dodge,
            target_class: None,
            dodge_threshold: DEFAULT_DODGE_THRESHOLD,
            impersonate_threshold: DEFAULT_IMPERSONATE_THRESHOLD,
        }
    }

    pub fn impersonate(target_class: usize) -> Self {
        Self {
            mode: AttackMode::Impersonate,
            target_class: Some(target_class),
            dodge_threshold: DEFAULT_DODGE_THRESHOLD,
            impersonate_threshold: DEFAULT_IMPERSONATE_THRESHOLD,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dodge_threshold)
            || self.dodge_threshold <= 0.0
            || !(0.0..1.0).contains(&self.impersonate_threshold)
            || self.impersonate_threshold <= 0.0
        {
            return Err(AgnError::InvalidValue(
                "attack thresholds must lie in (0,1)".into(),
            ));
        }
        match self.mode {
            AttackMode::Impersonate if self.target_class.is_none() => Err(AgnError::InvalidValue(
                "impersonation requires a target class".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn target(&self) -> Result<usize> {
        self.target_class.ok_or_else(|| {
            AgnError::InvalidValue("impersonation requires a target class".into())
        })
    }
}
