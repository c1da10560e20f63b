//! Plain `key=value` run manifests.
//!
//! One entry per line, in insertion order. Blank lines and lines starting
//! with `#` are ignored on parsing. Values run to the end of the line.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::{SystemTime, UNIX_EPOCH};

use crate::error::{Error, Result};
use crate::flow::FlowParams;
use crate::nltv::NlParams;
use crate::sim::{SimMode, SimParams};
use crate::solver::SolverConfig;

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunManifest {
    entries: Vec<(String, String)>,
}

impl RunManifest {
    /// Starts a manifest with `command`, `tool_version` and `timestamp`.
    pub fn new(command: &str) -> Self {
        let mut m = Self::default();
        m.set("command", command);
        m.set("tool_version", TOOL_VERSION);
        m.set("timestamp", timestamp());
        m
    }

    /// Replaces an existing key in place or appends a new one.
    pub fn set(&mut self, key: &str, value: impl ToString) {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key)
            .ok_or_else(|| Error::Manifest(format!("missing key {key:?}")))
    }

    pub fn parse_value<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self.require(key)?;
        raw.parse()
            .map_err(|_| Error::Manifest(format!("bad value {raw:?} for {key:?}")))
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Manifest(format!("line {}: expected key=value", n + 1)))?;
            let k = k.trim();
            if k.is_empty() {
                return Err(Error::Manifest(format!("line {}: empty key", n + 1)));
            }
            m.set(k, v);
        }
        Ok(m)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_string()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text)
    }

    pub fn put_solver_config(&mut self, cfg: &SolverConfig) {
        match cfg.delta {
            Some(d) => self.set("solver.delta", d),
            None => self.set("solver.delta", "auto"),
        }
        self.set("solver.lambda0", cfg.lambda0);
        self.set("solver.lambda_growth", cfg.lambda_growth);
        self.set("solver.lambda_max", cfg.lambda_max);
        self.set("solver.outer_iters", cfg.outer_iters);
        self.set("solver.inner_iters", cfg.inner_iters);
        self.set("solver.inner_tol", cfg.inner_tol);
        self.set("solver.outer_tol", cfg.outer_tol);
        self.set("flow.pyramid_levels", cfg.flow.pyramid_levels);
        self.set("flow.window_radius", cfg.flow.window_radius);
        self.set("flow.iterations_per_level", cfg.flow.iterations_per_level);
        self.set("flow.min_eigen_threshold", cfg.flow.min_eigen_threshold);
        self.set("flow.translation_prior", cfg.flow.translation_prior);
        self.set("nl.patch_radius", cfg.nl.patch_radius);
        self.set("nl.search_radius", cfg.nl.search_radius);
        self.set("nl.neighbors_kept", cfg.nl.neighbors_kept);
        self.set("nl.h", cfg.nl.h);
        self.set("nl.sqrt_epsilon", cfg.nl.sqrt_epsilon);
    }

    pub fn solver_config(&self) -> Result<SolverConfig> {
        let delta = match self.require("solver.delta")? {
            "auto" => None,
            _ => Some(self.parse_value("solver.delta")?),
        };
        let cfg = SolverConfig {
            delta,
            lambda0: self.parse_value("solver.lambda0")?,
            lambda_growth: self.parse_value("solver.lambda_growth")?,
            lambda_max: self.parse_value("solver.lambda_max")?,
            outer_iters: self.parse_value("solver.outer_iters")?,
            inner_iters: self.parse_value("solver.inner_iters")?,
            inner_tol: self.parse_value("solver.inner_tol")?,
            outer_tol: self.parse_value("solver.outer_tol")?,
            flow: FlowParams {
                pyramid_levels: self.parse_value("flow.pyramid_levels")?,
                window_radius: self.parse_value("flow.window_radius")?,
                iterations_per_level: self.parse_value("flow.iterations_per_level")?,
                min_eigen_threshold: self.parse_value("flow.min_eigen_threshold")?,
                translation_prior: self.parse_value("flow.translation_prior")?,
            },
            nl: NlParams {
                patch_radius: self.parse_value("nl.patch_radius")?,
                search_radius: self.parse_value("nl.search_radius")?,
                neighbors_kept: self.parse_value("nl.neighbors_kept")?,
                h: self.parse_value("nl.h")?,
                sqrt_epsilon: self.parse_value("nl.sqrt_epsilon")?,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn put_sim_params(&mut self, p: &SimParams) {
        self.set("sim.amplitude", p.amplitude);
        self.set("sim.wavelength", p.wavelength);
        self.set("sim.seed", p.phase_seed);
        self.set("sim.noise_sigma", p.noise_sigma);
        self.set("sim.frames", p.frames);
        self.set("sim.mode", p.mode.as_str());
    }

    pub fn sim_params(&self) -> Result<SimParams> {
        let p = SimParams {
            amplitude: self.parse_value("sim.amplitude")?,
            wavelength: self.parse_value("sim.wavelength")?,
            phase_seed: self.parse_value("sim.seed")?,
            noise_sigma: self.parse_value("sim.noise_sigma")?,
            frames: self.parse_value("sim.frames")?,
            mode: self.parse_value::<SimMode>("sim.mode")?,
        };
        p.validate()?;
        Ok(p)
    }
}

impl fmt::Display for RunManifest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in &self.entries {
            writeln!(f, "{k}={v}")?;
        }
        Ok(())
    }
}

/// Seconds since the Unix epoch, or `SOURCE_DATE_EPOCH` when it is set so
/// that reruns can produce identical files.
pub fn timestamp() -> u64 {
    if let Some(t) = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|v| v.trim().parse().ok())
    {
        return t;
    }
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let mut m = RunManifest::default();
        m.set("command", "restore");
        m.set("input", "/tmp/a b=c");
        m.set("command", "simulate");
        let text = m.to_string();
        assert_eq!(text, "command=simulate\ninput=/tmp/a b=c\n");
        assert_eq!(RunManifest::parse(&format!("# note\n\n{text}")).unwrap(), m);
        assert!(RunManifest::parse("novalue\n").is_err());
        assert!(RunManifest::parse("=x\n").is_err());
    }

    #[test]
    fn config_round_trips() {
        let mut m = RunManifest::new("restore");
        let mut cfg = SolverConfig::default();
        m.put_solver_config(&cfg);
        assert_eq!(m.solver_config().unwrap(), cfg);
        cfg.delta = Some(0.0123);
        cfg.nl.h = 0.07;
        cfg.flow.window_radius = 6;
        m.put_solver_config(&cfg);
        assert_eq!(m.solver_config().unwrap(), cfg);

        let p = SimParams {
            mode: SimMode::SmoothRandom,
            phase_seed: 99,
            ..SimParams::default()
        };
        m.put_sim_params(&p);
        assert_eq!(m.sim_params().unwrap(), p);
        assert_eq!(m.get("tool_version"), Some(TOOL_VERSION));

        m.set("solver.lambda0", "abc");
        assert!(m.solver_config().is_err());
    }
}
