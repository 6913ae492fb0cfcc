//! Artifact files and the run manifest.
//!
//! Every subcommand writes its outputs through a [`Workspace`], which
//! records each artifact's SHA-256 in `manifest.json` together with the
//! config hash, the code version, and the subcommands executed so far.
//! `reproduce` replays that manifest and byte-compares the results.
//!
//! File formats:
//! * densities: JSON record `{dimension, half_width, points_per_axis,
//!   values}` plus a CSV export with one coordinate column per axis and a
//!   final `value` column;
//! * sample dumps: CSV, one row per retained configuration —
//!   `chain, sweep, n, d` followed by the `n*d` coordinates row-major;
//! * reports: JSON objects embedding the config hash and version, plus a
//!   flat CSV with columns `n, beta, window, statistic, value, stderr`.
//!
//! All floating-point values are written in shortest round-trip form, so
//! identical runs produce identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use plab_core::fields::DensityField;
use plab_core::kernels::{KernelSpec, PotentialSpec};
use plab_core::sampler::ParticleConfiguration;

pub const MANIFEST_NAME: &str = "manifest.json";
pub const CONFIG_COPY_NAME: &str = "config.toml";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config_hash: String,
    pub version: String,
    /// Subcommands executed into this directory, in order.
    pub subcommands: Vec<String>,
    /// Relative artifact path -> SHA-256 of its bytes.
    pub artifacts: BTreeMap<String, String>,
}

/// An output directory with staleness protection: all artifacts in one
/// directory must come from one config.
pub struct Workspace {
    root: PathBuf,
    manifest: Manifest,
}

impl Workspace {
    /// Open (or create) a run directory for the given config hash.  A
    /// directory already holding artifacts from a different config is
    /// refused.
    pub fn open(root: &Path, config_hash: &str, canonical_config: &str) -> Result<Workspace> {
        fs::create_dir_all(root)
            .with_context(|| format!("cannot create output directory {}", root.display()))?;
        let manifest_path = root.join(MANIFEST_NAME);
        let manifest = if manifest_path.exists() {
            let text = fs::read_to_string(&manifest_path)
                .with_context(|| format!("cannot read {}", manifest_path.display()))?;
            let manifest: Manifest =
                serde_json::from_str(&text).context("manifest.json is not valid")?;
            if manifest.config_hash != config_hash {
                bail!(
                    "stale output directory: {} holds artifacts for config hash {} but the \
                     current config hashes to {}; use a fresh --out directory or restore the \
                     original config",
                    root.display(),
                    manifest.config_hash,
                    config_hash
                );
            }
            manifest
        } else {
            Manifest {
                config_hash: config_hash.to_string(),
                version: env!("CARGO_PKG_VERSION").to_string(),
                subcommands: Vec::new(),
                artifacts: BTreeMap::new(),
            }
        };
        let mut ws = Workspace { root: root.to_path_buf(), manifest };
        // The effective config is itself an artifact: reproduce runs from it.
        ws.write_text(CONFIG_COPY_NAME, canonical_config)?;
        Ok(ws)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn begin_subcommand(&mut self, name: &str) {
        self.manifest.subcommands.push(name.to_string());
    }

    pub fn write_text(&mut self, rel: &str, text: &str) -> Result<()> {
        let path = self.root.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, text.as_bytes())
            .with_context(|| format!("cannot write {}", path.display()))?;
        self.manifest
            .artifacts
            .insert(rel.to_string(), sha256_bytes(text.as_bytes()));
        Ok(())
    }

    pub fn write_json<T: Serialize>(&mut self, rel: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value).context("JSON serialization")?;
        text.push('\n');
        self.write_text(rel, &text)
    }

    /// Persist the manifest.  Call once per subcommand, after its writes.
    pub fn finish(&self) -> Result<()> {
        let mut text =
            serde_json::to_string_pretty(&self.manifest).context("manifest serialization")?;
        text.push('\n');
        fs::write(self.root.join(MANIFEST_NAME), text.as_bytes())
            .with_context(|| format!("cannot write manifest in {}", self.root.display()))?;
        Ok(())
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&path)
        .map_err(|_| anyhow!("missing manifest: {} (run a subcommand first)", path.display()))?;
    serde_json::from_str(&text).context("manifest.json is not valid")
}

pub fn sha256_bytes(bytes: &[u8]) -> String {
    let mut hasher = Sha256::new();
    hasher.update(bytes);
    format!("{:x}", hasher.finalize())
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes =
        fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(sha256_bytes(&bytes))
}

/// Shortest round-trip decimal form; parsing it back recovers the exact bits.
pub fn format_f64(v: f64) -> String {
    format!("{v:?}")
}

// ---------------------------------------------------------------------
// Densities
// ---------------------------------------------------------------------

pub fn density_csv(density: &DensityField) -> String {
    let grid = density.grid();
    let d = grid.dimension();
    let mut out = String::new();
    for a in 0..d {
        out.push_str(&format!("x{a},"));
    }
    out.push_str("value\n");
    let mut coords = vec![0.0; d];
    for i in 0..grid.node_count() {
        grid.node_coords(i, &mut coords);
        for c in &coords {
            out.push_str(&format_f64(*c));
            out.push(',');
        }
        out.push_str(&format_f64(density.value(i)));
        out.push('\n');
    }
    out
}

// ---------------------------------------------------------------------
// Sample dumps
// ---------------------------------------------------------------------

/// One retained configuration per row: `chain, sweep, n, d, coords...`.
pub fn samples_csv(
    samples: &[ParticleConfiguration],
    samples_per_chain: usize,
    burn_in_sweeps: usize,
    thinning_sweeps: usize,
) -> String {
    let mut out = String::from("chain,sweep,n,d,coords\n");
    for (idx, sample) in samples.iter().enumerate() {
        let chain = idx / samples_per_chain;
        let sweep = burn_in_sweeps + ((idx % samples_per_chain) + 1) * thinning_sweeps;
        out.push_str(&format!(
            "{chain},{sweep},{},{}",
            sample.n_particles(),
            sample.dimension()
        ));
        for v in sample.positions() {
            out.push(',');
            out.push_str(&format_f64(*v));
        }
        out.push('\n');
    }
    out
}

/// Parse a sample dump back into configurations (interaction caches are
/// recomputed from the kernel and potential).
pub fn parse_samples_csv(
    text: &str,
    kernel: &KernelSpec,
    potential: &PotentialSpec,
) -> Result<Vec<ParticleConfiguration>> {
    let mut samples = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 {
            if !line.starts_with("chain,sweep,n,d") {
                bail!("sample dump has an unexpected header: {line}");
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() < 4 {
            bail!("sample dump line {} is truncated", lineno + 1);
        }
        let n: usize = fields[2]
            .parse()
            .with_context(|| format!("line {}: bad particle count", lineno + 1))?;
        let d: usize = fields[3]
            .parse()
            .with_context(|| format!("line {}: bad dimension", lineno + 1))?;
        if fields.len() != 4 + n * d {
            bail!(
                "sample dump line {}: expected {} coordinates, found {}",
                lineno + 1,
                n * d,
                fields.len() - 4
            );
        }
        let coords: Vec<f64> = fields[4..]
            .iter()
            .map(|f| f.parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .with_context(|| format!("line {}: bad coordinate", lineno + 1))?;
        samples.push(
            ParticleConfiguration::new(d, coords, kernel, potential)
                .map_err(|e| anyhow!("line {}: {e}", lineno + 1))?,
        );
    }
    Ok(samples)
}

// ---------------------------------------------------------------------
// Test reports
// ---------------------------------------------------------------------

/// One statistical or identity check, in the shape shared by all report
/// files.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TestReport {
    pub name: String,
    pub parameters: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub statistic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bound: Option<f64>,
    pub verdict: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportFile {
    pub config_hash: String,
    pub version: String,
    pub reports: Vec<TestReport>,
}

/// A row of the flat plotting CSV: `n, beta, window, statistic, value,
/// stderr` (empty fields where a column does not apply).
#[derive(Debug, Clone)]
pub struct CsvRow {
    pub n: Option<usize>,
    pub beta: Option<f64>,
    pub window: Option<f64>,
    pub statistic: String,
    pub value: f64,
    pub stderr: Option<f64>,
}

pub fn reports_csv(rows: &[CsvRow]) -> String {
    let mut out = String::from("n,beta,window,statistic,value,stderr\n");
    for row in rows {
        if let Some(n) = row.n {
            out.push_str(&n.to_string());
        }
        out.push(',');
        if let Some(beta) = row.beta {
            out.push_str(&format_f64(beta));
        }
        out.push(',');
        if let Some(window) = row.window {
            out.push_str(&format_f64(window));
        }
        out.push(',');
        out.push_str(&row.statistic);
        out.push(',');
        out.push_str(&format_f64(row.value));
        out.push(',');
        if let Some(se) = row.stderr {
            out.push_str(&format_f64(se));
        }
        out.push('\n');
    }
    out
}
