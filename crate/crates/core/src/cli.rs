//! Command-line front end.
//!
//! Every subcommand takes an optional JSON config (`--config`), a few flags
//! that override config fields, and writes its documents into `--out`.
//! CSV files start with one `#`-prefixed JSON line carrying the command,
//! the SHA-256 of the effective config, the seed and the crate version.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::bloch::{band_scan, winding_number, ModelParams};
use crate::boundstate::{
    bound_state_numeric, gap_window, solve_pole, wavefunction_quadrature, wavefunction_residue,
    BoundState, GapLabel,
};
use crate::chain::{build_hamiltonian, LatticeSpec, Sublattice};
use crate::coupling::{compose, lamb_and_gamma, EmitterSpec, DEFAULT_ETA, DEFAULT_NK};
use crate::disorder_ensemble::{
    ipr_map, run_ensemble, size_scaling_study, write_samples_csv, EnsembleSpec, IprPart,
};
use crate::dynamics::{
    dominant_oscillation, effective_model, evolve, evolve_chebyshev, rabi_frequency, spectrum,
    uniform_times, vanhove_decay, write_peaks_csv, write_time_series_csv, DecayConfig,
    InitialState,
};
use crate::error::Error;
use crate::floquet::{
    check_collisions, simulate_cluster, solve_tones, targets_for_drive_ratio, ClusterConfig,
    FrequencyLadder, ScheduleDocument,
};

pub const SCHEMA_VERSION: u32 = 1;
const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(
    name = "essh",
    version,
    about = "Emitters in extended-SSH photonic lattices"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// JSON config document.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "essh-out")]
    out: PathBuf,
    /// Master seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; 0 uses all cores.
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Dispersion, gaps and Van Hove energies.
    Bands,
    /// Winding number of one parameter set or a (J3', J3) grid.
    Winding {
        #[arg(long, allow_hyphen_values = true)]
        j3p: Option<f64>,
        #[arg(long, allow_hyphen_values = true)]
        j3: Option<f64>,
        /// `min:max:step`, used for both axes.
        #[arg(long, allow_hyphen_values = true)]
        grid: Option<String>,
    },
    /// Lamb shift and decay rate against detuning.
    Selfenergy,
    /// Bound-state profile from residues, quadrature or diagonalization.
    Boundstate,
    /// Disorder ensemble statistics.
    Disorder,
    /// Single-excitation dynamics and spectra.
    Dynamics,
    /// Drive schedule, collision report and cluster check.
    Floquet,
}

/// Failure reported as a JSON object on stderr.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub body: Value,
}

impl CliError {
    fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            code: 2,
            body: json!({"error": "config", "key": key.into(), "message": message.into()}),
        }
    }

    fn io(path: &Path, e: std::io::Error) -> Self {
        Self {
            code: 1,
            body: json!({"error": "io", "path": path.display().to_string(), "message": e.to_string()}),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        let kind = format!("{e:?}");
        let kind = kind
            .split([' ', '(', '{'])
            .next()
            .unwrap_or("Error")
            .to_string();
        Self {
            code: 1,
            body: json!({"error": "module", "kind": kind, "message": e.to_string()}),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

/// Runs the CLI on `args` (program name first). Returns the exit code.
pub fn run<I, S>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return 0;
            }
            let body = json!({"error": "usage", "message": e.to_string()});
            let _ = writeln!(stderr, "{body}");
            return 2;
        }
    };
    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.common.threads)
        .build()
    {
        Ok(p) => p,
        Err(e) => {
            let _ = writeln!(
                stderr,
                "{}",
                json!({"error": "threads", "message": e.to_string()})
            );
            return 2;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(text) => {
            let _ = stdout.write_all(text.as_bytes());
            0
        }
        Err(e) => {
            let _ = writeln!(stderr, "{}", e.body);
            e.code
        }
    }
}

fn dispatch(cli: &Cli) -> CliResult<String> {
    let c = &cli.common;
    match &cli.command {
        Command::Bands => bands(c),
        Command::Winding { j3p, j3, grid } => winding(c, *j3p, *j3, grid.as_deref()),
        Command::Selfenergy => selfenergy(c),
        Command::Boundstate => boundstate(c),
        Command::Disorder => disorder(c),
        Command::Dynamics => dynamics(c),
        Command::Floquet => floquet(c),
    }
}

// ---------------------------------------------------------------- configs

fn default_params() -> ModelParams<f64> {
    ModelParams::extended_ssh(0.5, 0.8)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Range {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl Range {
    pub fn values(&self, key: &str) -> CliResult<Vec<f64>> {
        if !(self.step > 0.0)
            || !(self.max >= self.min)
            || !self.min.is_finite()
            || !self.max.is_finite()
        {
            return Err(CliError::config(key, "need min <= max and step > 0"));
        }
        let n = ((self.max - self.min) / self.step + 1e-9).floor() as usize + 1;
        Ok((0..n).map(|i| self.min + i as f64 * self.step).collect())
    }

    fn parse(text: &str) -> CliResult<Self> {
        let parts: Vec<&str> = text.split(':').collect();
        let bad = || CliError::config("grid", format!("expected min:max:step, got {text:?}"));
        if parts.len() != 3 {
            return Err(bad());
        }
        let v: Vec<f64> = parts
            .iter()
            .map(|p| p.trim().parse::<f64>())
            .collect::<Result<_, _>>()
            .map_err(|_| bad())?;
        Ok(Self {
            min: v[0],
            max: v[1],
            step: v[2],
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandsConfig {
    pub schema_version: u32,
    #[serde(default = "default_params")]
    pub params: ModelParams<f64>,
    #[serde(default = "bands_nk")]
    pub n_k: usize,
}

fn bands_nk() -> usize {
    4096
}

impl Default for BandsConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            params: default_params(),
            n_k: bands_nk(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindingConfig {
    pub schema_version: u32,
    #[serde(default = "one")]
    pub j1: f64,
    #[serde(default = "one")]
    pub j1p: f64,
    /// `(J3', J3)`.
    #[serde(default)]
    pub point: Option<(f64, f64)>,
    #[serde(default)]
    pub grid: Option<Range>,
    #[serde(default = "winding_nk")]
    pub n_k: usize,
}

fn one() -> f64 {
    1.0
}

fn winding_nk() -> usize {
    2048
}

impl Default for WindingConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            j1: 1.0,
            j1p: 1.0,
            point: None,
            grid: None,
            n_k: winding_nk(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelfEnergyConfig {
    pub schema_version: u32,
    #[serde(default = "default_params")]
    pub params: ModelParams<f64>,
    #[serde(default = "default_g")]
    pub g: f64,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_nk")]
    pub n_k: usize,
    #[serde(default = "default_detunings")]
    pub delta: Range,
}

fn default_g() -> f64 {
    0.1
}

fn default_eta() -> f64 {
    DEFAULT_ETA
}

fn default_nk() -> usize {
    DEFAULT_NK
}

fn default_detunings() -> Range {
    Range {
        min: -6.0,
        max: 6.0,
        step: 0.01,
    }
}

impl Default for SelfEnergyConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            params: default_params(),
            g: default_g(),
            eta: default_eta(),
            n_k: default_nk(),
            delta: default_detunings(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileMethod {
    Residue,
    Quadrature,
    Both,
    Diagonalization,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoundStateConfig {
    pub schema_version: u32,
    #[serde(default = "default_params")]
    pub params: ModelParams<f64>,
    #[serde(default = "default_g")]
    pub g: f64,
    #[serde(default)]
    pub delta: f64,
    #[serde(default = "profile_method")]
    pub method: ProfileMethod,
    /// Cell offsets `[lo, hi]` relative to the emitter.
    #[serde(default = "profile_cells")]
    pub cells: (i64, i64),
    #[serde(default = "default_nk")]
    pub n_k: usize,
    /// Gap to search; defaults to the one containing `delta`.
    #[serde(default)]
    pub gap: Option<GapLabel>,
    /// Chain length in sites for `diagonalization`.
    #[serde(default = "profile_sites")]
    pub n_sites: usize,
    /// Emitter for `diagonalization`; defaults to a local emitter on the
    /// central A site with coupling `g` and detuning `delta`.
    #[serde(default)]
    pub emitter: Option<EmitterSpec<f64>>,
}

fn profile_method() -> ProfileMethod {
    ProfileMethod::Both
}

fn profile_cells() -> (i64, i64) {
    (-30, 30)
}

fn profile_sites() -> usize {
    600
}

impl Default for BoundStateConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            params: default_params(),
            g: default_g(),
            delta: 0.0,
            method: profile_method(),
            cells: profile_cells(),
            n_k: default_nk(),
            gap: None,
            n_sites: profile_sites(),
            emitter: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DisorderMode {
    Ensemble,
    Scaling {
        sizes: Vec<usize>,
        g_values: Vec<f64>,
    },
    IprMap {
        g_grid: Vec<f64>,
        sigma_grid: Vec<f64>,
        part: IprPart,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisorderConfig {
    pub schema_version: u32,
    pub ensemble: EnsembleSpec,
    #[serde(default = "ensemble_mode")]
    pub mode: DisorderMode,
}

fn ensemble_mode() -> DisorderMode {
    DisorderMode::Ensemble
}

impl Default for DisorderConfig {
    fn default() -> Self {
        let n_sites = 600;
        Self {
            schema_version: SCHEMA_VERSION,
            ensemble: EnsembleSpec {
                model: crate::disorder_ensemble::BaseModel::ExtendedSsh {
                    params: default_params(),
                },
                n_sites,
                emitter: EmitterSpec::local(EnsembleSpec::central_a_site(n_sites), 0.2, 0.0),
                disorder: crate::chain::DisorderKind::ChiralPreserving,
                sigmas: vec![0.02, 0.05, 0.1],
                samples: 200,
                seed: 2024,
            },
            mode: DisorderMode::Ensemble,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Propagator {
    Spectral,
    Chebyshev,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DynamicsMode {
    /// Emitter starts excited on a finite open chain.
    Series {
        n_sites: usize,
        emitter: EmitterSpec<f64>,
        t_max: f64,
        dt: f64,
        #[serde(default = "spectral")]
        propagator: Propagator,
        /// Also evaluate the edge-state effective model.
        #[serde(default)]
        effective: bool,
    },
    /// Late-time decay at a Van Hove energy.
    Vanhove {
        g: f64,
        #[serde(default)]
        decay: DecayConfig,
    },
}

fn spectral() -> Propagator {
    Propagator::Spectral
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DynamicsConfig {
    pub schema_version: u32,
    #[serde(default = "fig8_params")]
    pub params: ModelParams<f64>,
    #[serde(default = "fig8_mode")]
    pub mode: DynamicsMode,
}

fn fig8_params() -> ModelParams<f64> {
    ModelParams::extended_ssh(2.0, 0.5)
}

fn fig8_mode() -> DynamicsMode {
    DynamicsMode::Series {
        n_sites: 120,
        emitter: EmitterSpec::giant(&[0, 1], 0.1, 0.0),
        t_max: 400.0,
        dt: 0.5,
        propagator: Propagator::Spectral,
        effective: true,
    }
}

impl Default for DynamicsConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            params: fig8_params(),
            mode: fig8_mode(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FloquetConfig {
    pub schema_version: u32,
    #[serde(default = "default_ladder")]
    pub ladder: FrequencyLadder<f64>,
    #[serde(default = "default_targets")]
    pub targets: ModelParams<f64>,
    /// Rescale the targets (keeping their ratios) to this drive ratio;
    /// `null` keeps them as given.
    #[serde(default = "default_drive_ratio")]
    pub drive_ratio: Option<f64>,
    /// Collision resolution; defaults to 1% of the smallest tone spacing.
    #[serde(default)]
    pub resolution: Option<f64>,
    #[serde(default)]
    pub simulate: bool,
    #[serde(default)]
    pub cluster: ClusterConfig,
}

fn default_drive_ratio() -> Option<f64> {
    Some(20.0)
}

fn default_ladder() -> FrequencyLadder<f64> {
    FrequencyLadder {
        delta: 1.0,
        delta1: 0.55,
        delta2: 0.73,
        omega_bar: 0.0,
        omega_aux: -20.0,
    }
}

fn default_targets() -> ModelParams<f64> {
    ModelParams::new(1.0, 1.0, 0.8, 0.5)
}

impl Default for FloquetConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            ladder: default_ladder(),
            targets: default_targets(),
            drive_ratio: default_drive_ratio(),
            resolution: None,
            simulate: false,
            cluster: ClusterConfig::default(),
        }
    }
}

/// Parses a config document; errors name the offending key path.
pub fn parse_config<T: DeserializeOwned>(text: &str) -> CliResult<T> {
    let value: Value = serde_json::from_str(text)
        .map_err(|e| CliError::config("", format!("invalid JSON: {e}")))?;
    match value.get("schema_version") {
        None => {
            return Err(CliError::config(
                "schema_version",
                "missing field `schema_version`",
            ))
        }
        Some(v) if v.as_u64() != Some(SCHEMA_VERSION as u64) => {
            return Err(CliError::config(
                "schema_version",
                format!("unsupported schema version {v}"),
            ));
        }
        _ => {}
    }
    serde_path_to_error::deserialize(value).map_err(|e| {
        let path = e.path().to_string();
        let inner = e.into_inner().to_string();
        let key = offending_key(&path, &inner);
        CliError::config(key, inner)
    })
}

/// Dotted path of the failing key. Unknown and missing fields are named in
/// backticks by the deserializer; append them to the container path.
fn offending_key(path: &str, message: &str) -> String {
    let base = if path == "." { "" } else { path };
    let named = ["unknown field `", "missing field `", "unknown variant `"]
        .iter()
        .find_map(|p| message.split(p).nth(1).and_then(|r| r.split('`').next()));
    match named {
        Some(name) if message.starts_with("unknown variant") => {
            if base.is_empty() {
                name.to_string()
            } else {
                base.to_string()
            }
        }
        Some(name) if base.is_empty() => name.to_string(),
        Some(name) if base.ends_with(name) => base.to_string(),
        Some(name) => format!("{base}.{name}"),
        None => base.to_string(),
    }
}

fn load<T: DeserializeOwned + Default>(common: &Common) -> CliResult<T> {
    match &common.config {
        None => Ok(T::default()),
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
            parse_config(&text)
        }
    }
}

// ---------------------------------------------------------------- output

struct Output<'a> {
    dir: &'a Path,
    header: Value,
    written: Vec<String>,
}

impl<'a> Output<'a> {
    fn new<C: Serialize>(
        common: &'a Common,
        command: &str,
        config: &C,
        seed: Option<u64>,
    ) -> CliResult<Self> {
        let canonical = serde_json::to_string(config).expect("config serializes");
        let hash = hex::encode(Sha256::digest(canonical.as_bytes()));
        fs::create_dir_all(&common.out).map_err(|e| CliError::io(&common.out, e))?;
        Ok(Self {
            dir: &common.out,
            header: json!({
                "command": command,
                "config_sha256": hash,
                "seed": seed,
                "version": VERSION,
                "config": serde_json::to_value(config).expect("config serializes"),
            }),
            written: Vec::new(),
        })
    }

    fn csv(
        &mut self,
        name: &str,
        body: impl FnOnce(&mut Vec<u8>) -> crate::Result<()>,
    ) -> CliResult<()> {
        let mut buf = Vec::new();
        writeln!(buf, "# {}", self.header).expect("write to memory");
        body(&mut buf)?;
        self.write(name, &buf)
    }

    fn json(&mut self, name: &str, value: Value) -> CliResult<()> {
        let doc = json!({"meta": self.header, "result": value});
        let mut text = serde_json::to_string_pretty(&doc).expect("json serializes");
        text.push('\n');
        self.write(name, text.as_bytes())
    }

    fn write(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes).map_err(|e| CliError::io(&path, e))?;
        self.written.push(path.display().to_string());
        Ok(())
    }

    fn finish(self) -> String {
        format!("{}\n", json!({"written": self.written}))
    }
}

fn csv_rows<R: Serialize>(
    buf: &mut Vec<u8>,
    rows: impl IntoIterator<Item = R>,
) -> crate::Result<()> {
    let mut w = csv::Writer::from_writer(buf);
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::InvalidInput(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::InvalidInput(e.to_string()))?;
    Ok(())
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NaN".to_string(), |v| v.to_string())
}

// ---------------------------------------------------------------- commands

fn bands(common: &Common) -> CliResult<String> {
    let cfg: BandsConfig = load(common)?;
    let scan = band_scan(&cfg.params, cfg.n_k)?;
    let mut out = Output::new(common, "bands", &cfg, None)?;
    out.csv("bands.csv", |buf| {
        #[derive(Serialize)]
        struct Row {
            k: f64,
            omega_upper: f64,
            omega_lower: f64,
        }
        csv_rows(
            buf,
            scan.k_grid
                .iter()
                .zip(&scan.omega_upper)
                .zip(&scan.omega_lower)
                .map(|((&k, &u), &l)| Row {
                    k,
                    omega_upper: u,
                    omega_lower: l,
                }),
        )
    })?;
    let winding = winding_number(&cfg.params, cfg.n_k).ok();
    out.json(
        "bands.json",
        json!({
            "gap_width": scan.gap_width,
            "band_min": scan.band_min,
            "band_max": scan.band_max,
            "vhs_energies": scan.vhs_energies,
            "winding": winding,
        }),
    )?;
    Ok(out.finish())
}

fn winding(
    common: &Common,
    j3p: Option<f64>,
    j3: Option<f64>,
    grid: Option<&str>,
) -> CliResult<String> {
    let mut cfg: WindingConfig = load(common)?;
    match (j3p, j3) {
        (Some(a), Some(b)) => cfg.point = Some((a, b)),
        (None, None) => {}
        _ => {
            return Err(CliError::config(
                if j3p.is_none() { "j3p" } else { "j3" },
                "give both --j3p and --j3",
            ))
        }
    }
    if let Some(g) = grid {
        cfg.grid = Some(Range::parse(g)?);
    }
    if let Some((a, b)) = cfg.point {
        if cfg.grid.is_none() {
            let p = ModelParams::new(cfg.j1, cfg.j1p, b, a);
            let w = winding_number(&p, cfg.n_k)?;
            return Ok(format!("{w}\n"));
        }
    }
    let Some(range) = cfg.grid.clone() else {
        return Err(CliError::config("grid", "give --j3p/--j3 or a grid"));
    };
    let axis = range.values("grid")?;
    let points: Vec<(f64, f64)> = axis
        .iter()
        .flat_map(|&a| axis.iter().map(move |&b| (a, b)))
        .collect();
    let values: Vec<Option<i32>> = points
        .par_iter()
        .map(|&(a, b)| winding_number(&ModelParams::new(cfg.j1, cfg.j1p, b, a), cfg.n_k).ok())
        .collect();
    let mut out = Output::new(common, "winding", &cfg, None)?;
    out.csv("winding.csv", |buf| {
        writeln!(buf, "j3p,j3,W").expect("write to memory");
        for (&(a, b), w) in points.iter().zip(&values) {
            let w = w.map_or_else(|| "NaN".to_string(), |w| w.to_string());
            writeln!(buf, "{a},{b},{w}").expect("write to memory");
        }
        Ok(())
    })?;
    Ok(out.finish())
}

fn selfenergy(common: &Common) -> CliResult<String> {
    let cfg: SelfEnergyConfig = load(common)?;
    let grid = cfg.delta.values("delta")?;
    let curve = lamb_and_gamma(&cfg.params, &grid, cfg.g, cfg.eta, cfg.n_k)?;
    let mut out = Output::new(common, "selfenergy", &cfg, None)?;
    out.csv("selfenergy.csv", |buf| {
        writeln!(buf, "delta,lamb_shift,decay_rate").expect("write to memory");
        for i in 0..curve.delta.len() {
            writeln!(
                buf,
                "{},{},{}",
                curve.delta[i], curve.lamb_shift[i], curve.decay_rate[i]
            )
            .expect("write to memory");
        }
        Ok(())
    })?;
    out.json(
        "selfenergy.json",
        json!({"decay_peaks": curve.decay_peaks()}),
    )?;
    Ok(out.finish())
}

fn boundstate(common: &Common) -> CliResult<String> {
    let cfg: BoundStateConfig = load(common)?;
    let (lo, hi) = cfg.cells;
    if hi < lo {
        return Err(CliError::config("cells", "need lo <= hi"));
    }
    let gap = match cfg.gap {
        Some(g) => g,
        None => crate::boundstate::classify(&cfg.params, cfg.delta)?,
    };
    let mut profiles: Vec<(&str, BoundState<f64>)> = Vec::new();
    let mut summary = serde_json::Map::new();
    if matches!(cfg.method, ProfileMethod::Residue | ProfileMethod::Both) {
        if cfg.delta != 0.0 {
            return Err(CliError::config(
                "method",
                "the residue route needs delta = 0",
            ));
        }
        let (bs, report) = wavefunction_residue(&cfg.params, cfg.g, lo, hi)?;
        summary.insert(
            "roots".into(),
            serde_json::to_value(&report).expect("serializes"),
        );
        profiles.push(("residue", bs));
    }
    if matches!(cfg.method, ProfileMethod::Quadrature | ProfileMethod::Both) {
        let e = solve_pole(&cfg.params, cfg.delta, cfg.g, gap)?;
        profiles.push((
            "quadrature",
            wavefunction_quadrature(&cfg.params, e, cfg.g, lo, hi, cfg.n_k)?,
        ));
    }
    if cfg.method == ProfileMethod::Diagonalization {
        if cfg.n_sites % 2 != 0 {
            return Err(CliError::config("n_sites", "must be even"));
        }
        let emitter = cfg.emitter.clone().unwrap_or_else(|| {
            EmitterSpec::local(EnsembleSpec::central_a_site(cfg.n_sites), cfg.g, cfg.delta)
        });
        let bath = build_hamiltonian(&LatticeSpec::open(cfg.n_sites / 2, cfg.params), None, &[])?;
        let h = compose(&bath, &[emitter])?;
        let nb = bound_state_numeric(&h, &gap_window(&cfg.params, gap)?)?;
        summary.insert("n_in_window".into(), json!(nb.n_in_window));
        profiles.push(("diagonalization", nb.state));
    }
    let states: Vec<Value> = profiles
        .iter()
        .map(|(name, bs)| {
            json!({
                "method": name,
                "energy": bs.energy,
                "c_e": bs.c_e,
                "gap": bs.gap_label,
                "left_weight": bs.left_weight(),
                "right_weight": bs.right_weight(),
            })
        })
        .collect();
    summary.insert("states".into(), Value::Array(states));
    let mut out = Output::new(common, "boundstate", &cfg, None)?;
    out.csv("boundstate.csv", |buf| {
        write!(buf, "j").expect("write to memory");
        for (name, _) in &profiles {
            write!(buf, ",{name}_a,{name}_b").expect("write to memory");
        }
        writeln!(buf).expect("write to memory");
        let j_lo = profiles.iter().map(|(_, b)| b.j_min).min().unwrap_or(lo);
        let j_hi = profiles.iter().map(|(_, b)| b.j_max()).max().unwrap_or(hi);
        for j in j_lo..=j_hi {
            write!(buf, "{j}").expect("write to memory");
            for (_, bs) in &profiles {
                let in_range = j >= bs.j_min && j <= bs.j_max();
                let a = in_range.then(|| bs.amplitude(j, Sublattice::A));
                let b = in_range.then(|| bs.amplitude(j, Sublattice::B));
                write!(buf, ",{},{}", fmt_opt(a), fmt_opt(b)).expect("write to memory");
            }
            writeln!(buf).expect("write to memory");
        }
        Ok(())
    })?;
    out.json("boundstate.json", Value::Object(summary))?;
    Ok(out.finish())
}

fn disorder(common: &Common) -> CliResult<String> {
    let mut cfg: DisorderConfig = load(common)?;
    if let Some(seed) = common.seed {
        cfg.ensemble.seed = seed;
    }
    let spec = &cfg.ensemble;
    let mut out = Output::new(common, "disorder", &cfg, Some(spec.seed))?;
    match &cfg.mode {
        DisorderMode::Ensemble => {
            let result = run_ensemble(spec)?;
            out.csv("samples.csv", |buf| write_samples_csv(&result, buf))?;
            out.csv("stats.csv", |buf| csv_rows(buf, &result.stats))?;
        }
        DisorderMode::Scaling { sizes, g_values } => {
            let rows = size_scaling_study(spec, sizes, g_values)?;
            out.csv("scaling.csv", |buf| csv_rows(buf, &rows))?;
        }
        DisorderMode::IprMap {
            g_grid,
            sigma_grid,
            part,
        } => {
            let map = ipr_map(spec, g_grid, sigma_grid, *part)?;
            out.csv("ipr_map.csv", |buf| {
                writeln!(buf, "g,sigma,mean_ipr").expect("write to memory");
                for (i, g) in map.g.iter().enumerate() {
                    for (j, s) in map.sigma.iter().enumerate() {
                        writeln!(buf, "{g},{s},{}", map.mean_ipr[i][j]).expect("write to memory");
                    }
                }
                Ok(())
            })?;
        }
    }
    Ok(out.finish())
}

fn dynamics(common: &Common) -> CliResult<String> {
    let cfg: DynamicsConfig = load(common)?;
    let mut out = Output::new(common, "dynamics", &cfg, None)?;
    match &cfg.mode {
        DynamicsMode::Series {
            n_sites,
            emitter,
            t_max,
            dt,
            propagator,
            effective,
        } => {
            if n_sites % 2 != 0 {
                return Err(CliError::config("mode.n_sites", "must be even"));
            }
            let bath = build_hamiltonian(&LatticeSpec::open(n_sites / 2, cfg.params), None, &[])?;
            let h = compose(&bath, &[emitter.clone()])?;
            let times = uniform_times(*t_max, *dt);
            let ts = match propagator {
                Propagator::Spectral => evolve(&h, &InitialState::EmitterExcited, &times)?,
                Propagator::Chebyshev => {
                    evolve_chebyshev(&h, &InitialState::EmitterExcited, &times)?
                }
            };
            out.csv("series.csv", |buf| write_time_series_csv(&ts, buf))?;
            let peaks = spectrum(&ts);
            let mut summary = json!({
                "min_population": ts.min_population(),
                "max_norm_error": ts.max_norm_error,
            });
            match &peaks {
                Ok(p) => {
                    out.csv("peaks.csv", |buf| write_peaks_csv(p, buf))?;
                    summary["dominant"] =
                        serde_json::to_value(dominant_oscillation(p, 0.0)).expect("serializes");
                    summary["rabi_frequency"] = json!(rabi_frequency(p));
                }
                Err(e) => summary["spectrum_error"] = json!(e.to_string()),
            }
            if *effective {
                match effective_model(&cfg.params, n_sites / 2, emitter) {
                    Ok(m) => {
                        let pred = m.predict(&times);
                        let dev = ts
                            .c_e
                            .iter()
                            .zip(&pred.c_e)
                            .map(|(a, b)| (a.norm() - b.norm()).abs())
                            .fold(0.0, f64::max);
                        summary["effective"] = serde_json::to_value(&m).expect("serializes");
                        summary["effective_max_abs_ce_deviation"] = json!(dev);
                    }
                    Err(e) => summary["effective_error"] = json!(e.to_string()),
                }
            }
            out.json("dynamics.json", summary)?;
        }
        DynamicsMode::Vanhove { g, decay } => {
            let fit = vanhove_decay(&cfg.params, *g, decay)?;
            out.csv("series.csv", |buf| write_time_series_csv(&fit.series, buf))?;
            out.json(
                "vanhove.json",
                serde_json::to_value(&fit).expect("serializes"),
            )?;
        }
    }
    Ok(out.finish())
}

fn floquet(common: &Common) -> CliResult<String> {
    let cfg: FloquetConfig = load(common)?;
    let targets = match cfg.drive_ratio {
        Some(r) if r > 0.0 => targets_for_drive_ratio(&cfg.ladder, &cfg.targets, r)?,
        Some(_) => return Err(CliError::config("drive_ratio", "must be positive")),
        None => cfg.targets,
    };
    let schedule = solve_tones(&cfg.ladder, &targets)?;
    let report = match cfg.resolution {
        Some(r) => crate::floquet::find_collisions(&cfg.ladder, r),
        None => check_collisions(&schedule, &cfg.ladder),
    };
    let cluster = if cfg.simulate {
        Some(simulate_cluster(&schedule, &cfg.cluster)?)
    } else {
        None
    };
    let doc = ScheduleDocument::new(&schedule, &report, cluster.as_ref());
    let mut out = Output::new(common, "floquet", &cfg, None)?;
    let mut value = serde_json::to_value(&doc).expect("serializes");
    value["targets"] = serde_json::to_value(targets).expect("serializes");
    if let Some(c) = &cluster {
        value["hierarchy"] = serde_json::to_value(c.hierarchy).expect("serializes");
    }
    out.json("schedule.json", value)?;
    out.csv("collisions.csv", |buf| {
        writeln!(buf, "i,j,kind,value,matched,spurious").expect("write to memory");
        for e in &report.entries {
            let matched: Vec<String> = e.matched.iter().map(|(a, b)| format!("{a}-{b}")).collect();
            let kind = serde_json::to_value(e.kind).expect("serializes");
            writeln!(
                buf,
                "{},{},{},{},{},{}",
                e.i,
                e.j,
                kind.as_str().unwrap_or(""),
                e.value,
                matched.join(" "),
                e.spurious
            )
            .expect("write to memory");
        }
        Ok(())
    })?;
    Ok(out.finish())
}
