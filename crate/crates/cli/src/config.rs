//! Experiment configuration: a single TOML file describing the kernel,
//! potential, domain, temperature schedule, chain settings, and analysis
//! settings.  Loading validates everything up front and reports problems
//! with full field paths.

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use plab_core::grid::Grid;
use plab_core::kernels::{
    make_gaussian_kernel, make_matern_kernel, make_quadratic_potential, zero_kernel, KernelSpec,
    PotentialSpec,
};

/// Raw on-disk schema.  Unknown keys are rejected so typos surface as
/// errors rather than as silently ignored settings.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kernel: KernelSection,
    pub potential: PotentialSection,
    pub domain: DomainSection,
    pub temperature: TemperatureSection,
    #[serde(default)]
    pub chains: ChainsSection,
    #[serde(default)]
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub output: OutputSection,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    /// One of `gaussian`, `matern`, `zero`.
    pub name: String,
    #[serde(default = "one")]
    pub amplitude: f64,
    #[serde(default = "one")]
    pub width: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialSection {
    /// Only `quadratic` is available from configuration files.
    pub name: String,
    #[serde(default = "one")]
    pub stiffness: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSection {
    pub dimension: usize,
    /// Half-width L of the centered box [-L, L]^d.
    pub half_width: f64,
    /// Grid nodes per axis.
    pub points_per_axis: usize,
}

/// Temperature schedule: either an explicit list of theta values, or an
/// (N, s) sweep with beta = N^{-s} and theta = N^{1-s}.  Exactly one of the
/// two forms must be present.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct TemperatureSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub theta_values: Option<Vec<f64>>,
    /// Particle count used when sampling under an explicit theta list
    /// (beta = theta / N).
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_particles: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_values: Option<Vec<usize>>,
    /// Scaling exponent: beta = N^{-s}.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    /// The local-Poisson regime needs 1/2 < s < 1; out-of-regime sweeps are
    /// useful as contrast experiments but must be requested explicitly.
    #[serde(default)]
    pub allow_out_of_regime: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChainsSection {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_chains")]
    pub chains: usize,
    #[serde(default = "default_burn_in")]
    pub burn_in_sweeps: usize,
    #[serde(default = "one_usize")]
    pub thinning_sweeps: usize,
    #[serde(default = "default_samples")]
    pub samples_per_chain: usize,
}

impl Default for ChainsSection {
    fn default() -> Self {
        ChainsSection {
            seed: 0,
            chains: default_chains(),
            burn_in_sweeps: default_burn_in(),
            thinning_sweeps: 1,
            samples_per_chain: default_samples(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    /// Recentering point for the local process; must be inside the box.
    #[serde(default)]
    pub x_star: Option<Vec<f64>>,
    /// Rescaled window side lengths to report count laws on.
    #[serde(default = "default_windows")]
    pub window_sides: Vec<f64>,
    /// The window side whose total-variation trend gates sweep verdicts.
    #[serde(default = "two")]
    pub gate_side: f64,
    /// Deviation thresholds for the concentration check.
    #[serde(default = "default_epsilons")]
    pub epsilon_values: Vec<f64>,
    /// Test points for the field checks; each must be inside the box.
    #[serde(default)]
    pub y_points: Option<Vec<Vec<f64>>>,
    /// Correlation orders to estimate (subset of {1, 2, 3}).
    #[serde(default = "default_orders")]
    pub k_orders: Vec<usize>,
    #[serde(default = "default_bins")]
    pub correlation_bins: usize,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        AnalysisSection {
            x_star: None,
            window_sides: default_windows(),
            gate_side: 2.0,
            epsilon_values: default_epsilons(),
            y_points: None,
            k_orders: default_orders(),
            correlation_bins: default_bins(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub directory: String,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { directory: default_out_dir() }
    }
}

fn one() -> f64 {
    1.0
}
fn two() -> f64 {
    2.0
}
fn one_usize() -> usize {
    1
}
fn default_chains() -> usize {
    4
}
fn default_burn_in() -> usize {
    200
}
fn default_samples() -> usize {
    250
}
fn default_windows() -> Vec<f64> {
    vec![1.0, 2.0, 4.0]
}
fn default_epsilons() -> Vec<f64> {
    vec![0.06, 0.12]
}
fn default_orders() -> Vec<usize> {
    vec![1, 2]
}
fn default_bins() -> usize {
    4
}
fn default_out_dir() -> String {
    "runs/out".into()
}

/// One solver/sampler work item of the temperature schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WorkItem {
    /// Explicit theta; `n` is present when sampling was configured.
    Theta { theta: f64, n: Option<usize> },
    /// Sweep entry: N with beta = N^{-s}.
    SweepPoint { n: usize, s: f64 },
}

impl WorkItem {
    pub fn theta(&self) -> f64 {
        match *self {
            WorkItem::Theta { theta, .. } => theta,
            WorkItem::SweepPoint { n, s } => (n as f64).powf(1.0 - s),
        }
    }

    /// Particle count and inverse temperature for sampling, if defined.
    pub fn chain_shape(&self) -> Option<(usize, f64)> {
        match *self {
            WorkItem::Theta { theta, n } => n.map(|n| (n, theta / n as f64)),
            WorkItem::SweepPoint { n, s } => Some((n, (n as f64).powf(-s))),
        }
    }

    /// Stable filename fragment, e.g. `theta_100` or `n_500`.
    pub fn label(&self) -> String {
        match *self {
            WorkItem::Theta { theta, .. } => format!("theta_{theta}").replace('.', "p"),
            WorkItem::SweepPoint { n, .. } => format!("n_{n}"),
        }
    }
}

/// A validated experiment: constructed objects plus the schedule.
pub struct Experiment {
    pub config: ExperimentConfig,
    /// SHA-256 of the effective config serialization.
    pub config_hash: String,
    pub kernel: KernelSpec,
    pub potential: PotentialSpec,
    pub grid: Grid,
    pub items: Vec<WorkItem>,
    /// Present in sweep mode: the scaling exponent.
    pub sweep_exponent: Option<f64>,
    /// True when s lies in the local-Poisson regime (1/2, 1).
    pub in_regime: bool,
    /// Warnings produced during validation (e.g. out-of-regime notice).
    pub warnings: Vec<String>,
    pub x_star: Vec<f64>,
    pub y_points: Vec<Vec<f64>>,
}

impl ExperimentConfig {
    pub fn from_path(path: &std::path::Path) -> Result<ExperimentConfig> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        ExperimentConfig::from_str(&text)
    }

    pub fn from_str(text: &str) -> Result<ExperimentConfig> {
        // toml's deserializer reports the full key path of schema errors.
        toml::from_str(text).map_err(|e| anyhow!("config schema violation: {e}"))
    }

    /// Canonical serialization used for hashing and for the recorded copy.
    pub fn canonical_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).context("config serialization failed")
    }

    pub fn validate(self) -> Result<Experiment> {
        let mut warnings = Vec::new();
        let d = self.domain.dimension;
        if d == 0 || d > 3 {
            bail!("domain.dimension: must be 1, 2, or 3");
        }
        if !(self.domain.half_width.is_finite() && self.domain.half_width > 0.0) {
            bail!("domain.half_width: must be positive and finite");
        }
        if self.domain.points_per_axis < 2 {
            bail!("domain.points_per_axis: must be at least 2");
        }
        let grid = Grid::new(d, self.domain.half_width, self.domain.points_per_axis)
            .map_err(|e| anyhow!("domain: {e}"))?;

        let kernel = match self.kernel.name.as_str() {
            "gaussian" => make_gaussian_kernel(d, self.kernel.amplitude, self.kernel.width)
                .map_err(|e| anyhow!("kernel: {e}"))?,
            "matern" => make_matern_kernel(d, self.kernel.amplitude, self.kernel.width)
                .map_err(|e| anyhow!("kernel: {e}"))?,
            "zero" => zero_kernel(d),
            other => bail!("kernel.name: unknown kernel '{other}' (expected gaussian, matern, or zero)"),
        };
        let potential = match self.potential.name.as_str() {
            "quadratic" => make_quadratic_potential(d, self.potential.stiffness)
                .map_err(|e| anyhow!("potential: {e}"))?,
            other => bail!("potential.name: unknown potential '{other}' (expected quadratic)"),
        };

        // Temperature schedule: exactly one of the two forms.
        let t = &self.temperature;
        let mut items = Vec::new();
        let mut sweep_exponent = None;
        let mut in_regime = true;
        match (&t.theta_values, &t.n_values) {
            (Some(_), Some(_)) => bail!(
                "temperature: theta_values and n_values are mutually exclusive; give one schedule"
            ),
            (None, None) => bail!(
                "temperature: one of theta_values or (n_values, s) is required"
            ),
            (Some(thetas), None) => {
                if t.s.is_some() {
                    bail!("temperature.s: only meaningful with n_values");
                }
                if thetas.is_empty() {
                    bail!("temperature.theta_values: must not be empty");
                }
                for &theta in thetas {
                    if !(theta.is_finite() && theta > 0.0) {
                        bail!("temperature.theta_values: entries must be positive and finite");
                    }
                    items.push(WorkItem::Theta { theta, n: t.n_particles });
                }
                if let Some(n) = t.n_particles {
                    if n == 0 {
                        bail!("temperature.n_particles: must be positive");
                    }
                }
            }
            (None, Some(ns)) => {
                let s = t
                    .s
                    .ok_or_else(|| anyhow!("temperature.s: required with n_values"))?;
                if !(s.is_finite() && s > 0.0 && s < 1.0) {
                    bail!("temperature.s: must lie in (0, 1) so theta grows with N");
                }
                if t.n_particles.is_some() {
                    bail!("temperature.n_particles: only meaningful with theta_values");
                }
                if ns.len() < 2 {
                    bail!("temperature.n_values: need at least two sweep points");
                }
                if ns.windows(2).any(|w| w[0] >= w[1]) {
                    bail!("temperature.n_values: must be strictly increasing");
                }
                in_regime = s > 0.5 && s < 1.0;
                if !in_regime {
                    if !t.allow_out_of_regime {
                        bail!(
                            "temperature.s = {s} is outside the local-Poisson regime (1/2, 1); \
                             set temperature.allow_out_of_regime = true to run it as a contrast \
                             experiment"
                        );
                    }
                    warnings.push(format!(
                        "temperature.s = {s} is outside the local-Poisson regime (1/2, 1); \
                         running as a contrast experiment"
                    ));
                }
                sweep_exponent = Some(s);
                for &n in ns {
                    items.push(WorkItem::SweepPoint { n, s });
                }
            }
        }

        // Analysis geometry.
        let x_star = self
            .analysis
            .x_star
            .clone()
            .unwrap_or_else(|| vec![0.0; d]);
        if x_star.len() != d {
            bail!("analysis.x_star: expected {d} coordinates, got {}", x_star.len());
        }
        if !grid.contains(&x_star) {
            bail!("analysis.x_star: must lie inside the box");
        }
        let y_points = self
            .analysis
            .y_points
            .clone()
            .unwrap_or_else(|| vec![vec![0.0; d]]);
        for (i, y) in y_points.iter().enumerate() {
            if y.len() != d {
                bail!("analysis.y_points[{i}]: expected {d} coordinates, got {}", y.len());
            }
            if !grid.contains(y) {
                bail!("analysis.y_points[{i}]: must lie inside the box");
            }
        }
        if self.analysis.window_sides.is_empty() {
            bail!("analysis.window_sides: must not be empty");
        }
        if self
            .analysis
            .window_sides
            .iter()
            .chain(std::iter::once(&self.analysis.gate_side))
            .any(|&w| !(w.is_finite() && w > 0.0))
        {
            bail!("analysis.window_sides / analysis.gate_side: sides must be positive");
        }
        for &k in &self.analysis.k_orders {
            if !(1..=3).contains(&k) {
                bail!("analysis.k_orders: orders must be 1, 2, or 3");
            }
        }
        if self.analysis.correlation_bins == 0 {
            bail!("analysis.correlation_bins: must be at least 1");
        }
        for &eps in &self.analysis.epsilon_values {
            if !(eps.is_finite() && eps > 0.0) {
                bail!("analysis.epsilon_values: entries must be positive");
            }
        }
        if self.chains.chains == 0 || self.chains.samples_per_chain == 0 {
            bail!("chains: chains and samples_per_chain must be positive");
        }
        if self.chains.thinning_sweeps == 0 {
            bail!("chains.thinning_sweeps: must be at least 1");
        }

        let config_hash = hash_config(&self)?;
        Ok(Experiment {
            config: self,
            config_hash,
            kernel,
            potential,
            grid,
            items,
            sweep_exponent,
            in_regime,
            warnings,
            x_star,
            y_points,
        })
    }
}

/// SHA-256 over the canonical serialization, so reformatting the file does
/// not change the hash but any effective setting does.
pub fn hash_config(config: &ExperimentConfig) -> Result<String> {
    let canonical = config.canonical_toml()?;
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    Ok(format!("{:x}", hasher.finalize()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> String {
        r#"
            [kernel]
            name = "gaussian"

            [potential]
            name = "quadratic"

            [domain]
            dimension = 1
            half_width = 2.0
            points_per_axis = 128

            [temperature]
            theta_values = [10.0]
        "#
        .to_string()
    }

    #[test]
    fn minimal_config_loads_with_defaults() {
        let exp = ExperimentConfig::from_str(&minimal()).unwrap().validate().unwrap();
        assert_eq!(exp.items.len(), 1);
        assert!((exp.items[0].theta() - 10.0).abs() < 1e-15);
        assert!(exp.items[0].chain_shape().is_none());
        assert_eq!(exp.config.chains.chains, 4);
        assert!(exp.in_regime);
        assert_eq!(exp.x_star, vec![0.0]);
    }

    #[test]
    fn missing_kernel_names_the_field() {
        let text = minimal().replace("[kernel]", "[kernel_typo]");
        let err = ExperimentConfig::from_str(&text).unwrap_err().to_string();
        assert!(err.contains("kernel"), "error was: {err}");
    }

    #[test]
    fn out_of_regime_needs_the_flag() {
        let sweep = minimal().replace(
            "theta_values = [10.0]",
            "n_values = [100, 200]\ns = 0.3",
        );
        let err = match ExperimentConfig::from_str(&sweep).unwrap().validate() {
            Ok(_) => panic!("out-of-regime config was accepted without the flag"),
            Err(e) => e.to_string(),
        };
        assert!(err.contains("allow_out_of_regime"), "error was: {err}");

        let allowed = sweep.replace("s = 0.3", "s = 0.3\nallow_out_of_regime = true");
        let exp = ExperimentConfig::from_str(&allowed).unwrap().validate().unwrap();
        assert!(!exp.in_regime);
        assert_eq!(exp.warnings.len(), 1);
        // beta = N^{-s} and theta = N beta stay consistent by construction.
        let (n, beta) = exp.items[0].chain_shape().unwrap();
        assert_eq!(n, 100);
        assert!((exp.items[0].theta() - n as f64 * beta).abs() < 1e-12);
    }

    #[test]
    fn schedule_forms_are_mutually_exclusive() {
        let both = minimal().replace(
            "theta_values = [10.0]",
            "theta_values = [10.0]\nn_values = [100, 200]\ns = 0.75",
        );
        assert!(ExperimentConfig::from_str(&both).unwrap().validate().is_err());
        let neither = minimal().replace("theta_values = [10.0]", "");
        assert!(ExperimentConfig::from_str(&neither).unwrap().validate().is_err());
    }

    #[test]
    fn hash_tracks_effective_settings_not_formatting() {
        let a = ExperimentConfig::from_str(&minimal()).unwrap();
        let reformatted = minimal().replace("            ", "\t");
        let b = ExperimentConfig::from_str(&reformatted).unwrap();
        assert_eq!(hash_config(&a).unwrap(), hash_config(&b).unwrap());

        let changed = minimal().replace("half_width = 2.0", "half_width = 2.5");
        let c = ExperimentConfig::from_str(&changed).unwrap();
        assert_ne!(hash_config(&a).unwrap(), hash_config(&c).unwrap());
    }

    #[test]
    fn unknown_keys_are_rejected_with_their_path() {
        let text = minimal().replace("name = \"gaussian\"", "name = \"gaussian\"\nwdith = 2.0");
        let err = ExperimentConfig::from_str(&text).unwrap_err().to_string();
        assert!(err.contains("wdith"), "error was: {err}");
    }
}
