//! Run configuration: a TOML document naming the coefficient triples, grids, probes and
//! experiment parameters of a run.

use crate::recovery::HolderConfig;
use crate::{CoefficientTriple, Domain, Error, Result};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::path::{Path, PathBuf};

/// Registry ids (or `grid:path` entries) of the three coefficients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TripleSpec {
    pub metric: String,
    #[serde(default = "zero")]
    pub covector: String,
    #[serde(default = "zero")]
    pub potential: String,
}

fn zero() -> String {
    "zero".into()
}

impl Default for TripleSpec {
    fn default() -> Self {
        Self { metric: "euclid".into(), covector: zero(), potential: zero() }
    }
}

impl TripleSpec {
    pub fn resolve(&self, domain: &DomainConfig) -> Result<CoefficientTriple> {
        let mut t = CoefficientTriple::from_ids(&self.metric, &self.covector, &self.potential)?;
        t.domain = domain.domain()?;
        Ok(t)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DomainConfig {
    pub boundary_radius: f64,
    /// Radius of the extended disk `Ω₁` carrying probe sources and inflow grids.
    pub extended_radius: f64,
}

impl Default for DomainConfig {
    fn default() -> Self {
        let d = Domain::default();
        Self { boundary_radius: d.boundary_radius, extended_radius: d.extended_radius }
    }
}

impl DomainConfig {
    pub fn domain(&self) -> Result<Domain> {
        Domain::new(self.boundary_radius, self.extended_radius)
    }
}

/// Inflow grid, image grid and ray-step parameters of the ray transforms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RayGridConfig {
    pub n_alpha: usize,
    pub n_beta: usize,
    pub delta_beta: f64,
    pub step: f64,
    pub image_n: usize,
    pub max_iter: usize,
}

impl Default for RayGridConfig {
    fn default() -> Self {
        Self { n_alpha: 64, n_beta: 32, delta_beta: 0.02, step: 2e-3, image_n: 48, max_iter: 200 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub n_r: usize,
    pub n_theta: usize,
    pub r_min: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self { n_r: 128, n_theta: 256, r_min: 0.4 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeKind {
    Local,
    Global,
}

/// A single probe. Local probes sit at boundary angle `alpha0` with tangential frequency
/// `omega_t`; global probes launch from `z0` on `∂Ω₁` with covector `omega0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSpec {
    pub kind: ProbeKind,
    pub lambda: f64,
    pub alpha0: f64,
    pub omega_t: f64,
    pub z0: [f64; 2],
    pub omega0: [f64; 2],
    pub t_end: Option<f64>,
}

impl Default for ProbeSpec {
    fn default() -> Self {
        Self { kind: ProbeKind::Local, lambda: 32.0, alpha0: 0.0, omega_t: 0.0, z0: [-1.15, 0.0], omega0: [1.0, 0.0], t_end: None }
    }
}

impl ProbeSpec {
    pub fn probe(&self) -> crate::wkb::ProbeConfig {
        use crate::wkb::ProbeConfig;
        let mut p = match self.kind {
            ProbeKind::Local => ProbeConfig::local(self.lambda, self.alpha0, self.omega_t),
            ProbeKind::Global => ProbeConfig::global(self.lambda, self.z0.into(), self.omega0.into()),
        };
        if let Some(t) = self.t_end {
            p.t_end = t;
        }
        p
    }
}

/// Boundary-cascade and pipeline settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RecoveryConfig {
    pub deltas: Vec<f64>,
    pub seeds: Vec<u64>,
    pub n_b: usize,
}

impl Default for RecoveryConfig {
    fn default() -> Self {
        Self { deltas: vec![1e-2, 1e-3, 1e-4, 1e-5], seeds: (1..=6).collect(), n_b: 48 }
    }
}

/// Arguments of the single-geodesic subcommands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShootConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Second boundary angle for `distance`.
    pub alpha_out: f64,
}

impl Default for ShootConfig {
    fn default() -> Self {
        Self { alpha: std::f64::consts::PI, beta: 0.0, alpha_out: 0.0 }
    }
}

/// Field fed to `xray`: registry id of a potential, covector or tensor by `order`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FieldConfig {
    pub order: u8,
    pub id: String,
}

impl Default for FieldConfig {
    fn default() -> Self {
        Self { order: 0, id: "bump:1,0.2,0.1,0.05".into() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Output root; falls back to `SIMPLERAY_DATA_DIR`, then `./simpleray-out`.
    pub output: Option<PathBuf>,
    pub domain: DomainConfig,
    pub triple: TripleSpec,
    /// Second triple of two-triple runs (gap, sinograms, pipeline).
    pub reference: Option<TripleSpec>,
    pub rays: RayGridConfig,
    pub solver: SolverConfig,
    pub probe: ProbeSpec,
    pub field: FieldConfig,
    pub shoot: ShootConfig,
    pub recovery: RecoveryConfig,
    pub holder: HolderConfig,
    /// Input artifact of `invert`.
    pub sinogram: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            output: None,
            domain: DomainConfig::default(),
            triple: TripleSpec::default(),
            reference: None,
            rays: RayGridConfig::default(),
            solver: SolverConfig::default(),
            probe: ProbeSpec::default(),
            field: FieldConfig::default(),
            shoot: ShootConfig::default(),
            recovery: RecoveryConfig::default(),
            holder: HolderConfig::default(),
            sinogram: None,
        }
    }
}

/// 1-based line and column of a byte offset.
fn line_column(src: &str, offset: usize) -> (usize, usize) {
    let before = &src[..offset.min(src.len())];
    let line = before.matches('\n').count() + 1;
    let column = before.rsplit('\n').next().map_or(0, |l| l.chars().count()) + 1;
    (line, column)
}

impl RunConfig {
    pub fn parse(src: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(src).map_err(|e| {
            let (line, column) = e.span().map_or((0, 0), |s| line_column(src, s.start));
            Error::Config { line, column, message: e.message().to_string() }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Resolves every registry id so unknown ids fail before any work starts.
    pub fn validate(&self) -> Result<()> {
        self.domain.domain()?;
        self.triple.resolve(&self.domain)?;
        if let Some(r) = &self.reference {
            r.resolve(&self.domain)?;
        }
        self.holder.base()?;
        self.holder.member(1.0)?;
        match self.field.order {
            0 => drop(crate::registry::potential(&self.field.id)?),
            1 => drop(crate::registry::covector(&self.field.id)?),
            2 => drop(crate::registry::tensor(&self.field.id)?),
            o => return Err(Error::BadId { id: self.field.id.clone(), reason: format!("tensor order {o} not in 0..=2") }),
        }
        Ok(())
    }

    /// Canonical TOML. Fails for integers beyond the TOML range (seeds above `i64::MAX`).
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config { line: 0, column: 0, message: e.to_string() })
    }

    /// Hash of the parsed configuration, stable across formatting of the source file.
    pub fn hash(&self) -> String {
        let d = Sha256::digest(format!("{self:?}").as_bytes());
        d.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }

    pub fn triple(&self) -> Result<CoefficientTriple> {
        self.triple.resolve(&self.domain)
    }

    pub fn reference(&self) -> Result<CoefficientTriple> {
        self.reference
            .as_ref()
            .ok_or_else(|| Error::Insufficient("run needs a [reference] triple".into()))?
            .resolve(&self.domain)
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output
            .clone()
            .or_else(|| std::env::var_os("SIMPLERAY_DATA_DIR").map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("simpleray-out"))
    }
}
