//! Flat `key = value` configuration file (TOML syntax, no tables).
//!
//! Precedence is flags > file > built-ins; [`Settings::overlay`] applies one
//! layer on top of another.

use std::path::Path;

use serde::Deserialize;

use crate::error::{Error, Result};
use crate::facegeom::{BlendWeights, DEFAULT_TOP_M};
use crate::io::read_text;
use crate::types::{Epsilon, SolverConfig};

/// Environment variable naming a default config file.
pub const CONFIG_ENV: &str = "GWKIT_CONFIG";

/// Every recognised key; `None` means "not set at this layer".
#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    pub epsilon: Option<f64>,
    /// Multiplier of the mean cost when no absolute epsilon is given.
    pub epsilon_rel: Option<f64>,
    pub max_outer: Option<usize>,
    pub max_sinkhorn: Option<usize>,
    pub tol: Option<f64>,
    pub log_domain: Option<bool>,
    pub top_m: Option<usize>,
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub lambdas: Option<Vec<f64>>,
    pub jobs: Option<usize>,
}

impl Settings {
    /// Fields set in `top` replace those in `self`.
    /// `epsilon` and `epsilon_rel` are one setting: either in `top` clears both
    /// below.
    pub fn overlay(self, top: Settings) -> Settings {
        let (epsilon, epsilon_rel) = if top.epsilon.is_some() || top.epsilon_rel.is_some() {
            (top.epsilon, top.epsilon_rel)
        } else {
            (self.epsilon, self.epsilon_rel)
        };
        Settings {
            epsilon,
            epsilon_rel,
            max_outer: top.max_outer.or(self.max_outer),
            max_sinkhorn: top.max_sinkhorn.or(self.max_sinkhorn),
            tol: top.tol.or(self.tol),
            log_domain: top.log_domain.or(self.log_domain),
            top_m: top.top_m.or(self.top_m),
            alpha: top.alpha.or(self.alpha),
            beta: top.beta.or(self.beta),
            lambdas: top.lambdas.or(self.lambdas),
            jobs: top.jobs.or(self.jobs),
        }
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        let base = SolverConfig::default();
        let epsilon = match (self.epsilon, self.epsilon_rel) {
            (Some(e), _) => Epsilon::Absolute(e),
            (None, Some(r)) => Epsilon::RelativeToMeanCost(r),
            (None, None) => base.epsilon,
        };
        let cfg = SolverConfig {
            epsilon,
            max_outer_iters: self.max_outer.unwrap_or(base.max_outer_iters),
            max_sinkhorn_iters: self.max_sinkhorn.unwrap_or(base.max_sinkhorn_iters),
            marginal_tol: self.tol.unwrap_or(base.marginal_tol),
            log_domain: self.log_domain.unwrap_or(base.log_domain),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn top_m(&self) -> Result<usize> {
        match self.top_m.unwrap_or(DEFAULT_TOP_M) {
            0 => Err(Error::Config("top_m must be at least 1".into())),
            m => Ok(m),
        }
    }

    /// Blend weights for `m` candidates: explicit values where given,
    /// otherwise `alpha = beta = 0.5` and uniform lambdas.
    pub fn blend_weights(&self, m: usize) -> Result<BlendWeights> {
        let d = BlendWeights::uniform(m);
        let w = BlendWeights {
            alpha: self.alpha.unwrap_or(d.alpha),
            beta: self.beta.unwrap_or(d.beta),
            lambdas: self.lambdas.clone().unwrap_or(d.lambdas),
        };
        w.validate()?;
        Ok(w)
    }

    pub fn jobs(&self) -> usize {
        self.jobs.unwrap_or(1).max(1)
    }
}

pub fn parse_config(text: &str) -> Result<Settings> {
    toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
}

pub fn load_config(path: impl AsRef<Path>) -> Result<Settings> {
    parse_config(&read_text(path.as_ref())?)
}
