//! Monte-Carlo statistics of bound states in disordered baths.
//!
//! Sizes are given in lattice sites (`n_sites = 2 · n_cells`). Every sample
//! draws its disorder from a seed derived from `(master seed, σ index,
//! sample index)`, and results are reduced in `(σ, sample)` order, so the
//! output does not depend on the number of worker threads.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bloch::{band_scan, ModelParams};
use crate::boundstate::{bound_state_numeric, gap_window, GapLabel};
use crate::chain::{
    build_hamiltonian, ipr, DisorderKind, DisorderSpec, LatticeSpec, SiteLabel, Sublattice,
};
use crate::coupling::{compose, EmitterSpec};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BaseModel {
    ExtendedSsh {
        params: ModelParams<f64>,
    },
    /// `J1 = J1' = j`, no third-neighbour hopping, staggered on-site shift.
    Staggered {
        j: f64,
        omega_delta: f64,
    },
}

impl BaseModel {
    pub fn params(&self) -> ModelParams<f64> {
        match *self {
            BaseModel::ExtendedSsh { params } => params,
            BaseModel::Staggered { j, omega_delta } => ModelParams::staggered(j, omega_delta),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            BaseModel::ExtendedSsh { .. } => "extended_ssh",
            BaseModel::Staggered { .. } => "staggered",
        }
    }

    /// Trivial comparison model whose gap `2 ω_δ` equals `gap`.
    pub fn staggered_with_gap(j: f64, gap: f64) -> Self {
        BaseModel::Staggered {
            j,
            omega_delta: gap / 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub model: BaseModel,
    pub n_sites: usize,
    pub emitter: EmitterSpec<f64>,
    pub disorder: DisorderKind,
    pub sigmas: Vec<f64>,
    pub samples: usize,
    pub seed: u64,
}

impl EnsembleSpec {
    pub fn n_cells(&self) -> usize {
        self.n_sites / 2
    }

    /// A site of the central cell.
    pub fn central_a_site(n_sites: usize) -> usize {
        2 * (n_sites / 4)
    }

    pub fn coupling(&self) -> f64 {
        self.emitter.contacts.first().map_or(0.0, |c| c.g)
    }

    fn validate(&self) -> Result<()> {
        if self.n_sites < 100 || self.n_sites % 2 != 0 {
            return Err(Error::InvalidInput(format!(
                "n_sites must be even and at least 100, got {}",
                self.n_sites
            )));
        }
        if self.samples < 10 {
            return Err(Error::InvalidInput(format!(
                "samples must be at least 10, got {}",
                self.samples
            )));
        }
        if self.sigmas.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return Err(Error::InvalidInput(
                "sigmas must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Clean gap that contains the emitter detuning.
    /// Clean gap that contains the emitter detuning; the outer band edges
    /// count as part of the outer gaps.
    pub fn gap(&self) -> Result<GapLabel> {
        let p = self.model.params();
        let d = self.emitter.delta;
        if gap_window(&p, GapLabel::Middle)?.contains(d) {
            return Ok(GapLabel::Middle);
        }
        let edge = gap_window(&p, GapLabel::Upper)?.lo;
        if d >= edge {
            return Ok(GapLabel::Upper);
        }
        if d <= -edge {
            return Ok(GapLabel::Lower);
        }
        Err(Error::EnergyInBand {
            energy: self.emitter.delta,
        })
    }
}

/// Detuning half a gap below the lower band.
pub fn lower_gap_detuning(params: &ModelParams<f64>) -> Result<f64> {
    let scan = band_scan(params, 4096)?;
    Ok(-scan.band_max - scan.gap_width / 2.0)
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Seed of sample `sample` at sigma index `sigma_index`.
pub fn sample_seed(master: u64, sigma_index: usize, sample: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ sigma_index as u64) ^ sample as u64)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SampleRecord {
    pub sigma_index: usize,
    pub sigma: f64,
    pub sample: usize,
    pub seed: u64,
    pub energy: Option<f64>,
    /// IPR of the full eigenvector, emitter included.
    pub ipr: Option<f64>,
    /// IPR of the renormalized photonic part.
    pub ipr_photonic: Option<f64>,
    pub n_ingap: usize,
    pub emitter_population: Option<f64>,
    /// Photonic weight fraction on the A sublattice.
    pub fraction_a: Option<f64>,
}

impl SampleRecord {
    pub fn failed(&self) -> bool {
        self.energy.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SigmaStats {
    pub sigma: f64,
    pub mean_energy: f64,
    pub std_energy: f64,
    pub mean_ipr: f64,
    pub mean_ipr_photonic: f64,
    pub count: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EnsembleResult {
    pub model: String,
    pub n_sites: usize,
    pub g: f64,
    pub stats: Vec<SigmaStats>,
    pub samples: Vec<SampleRecord>,
}

/// Mean and sample standard deviation; exact zero spread for identical data.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let x0 = xs[0];
    let n = xs.len() as f64;
    let mean = x0 + xs.iter().map(|x| x - x0).sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn run_sample(
    spec: &EnsembleSpec,
    gap: GapLabel,
    sigma_index: usize,
    sample: usize,
) -> Result<SampleRecord> {
    let sigma = spec.sigmas[sigma_index];
    let seed = sample_seed(spec.seed, sigma_index, sample);
    let params = spec.model.params();
    let lattice = LatticeSpec::open(spec.n_cells(), params);
    let disorder = DisorderSpec {
        kind: spec.disorder,
        sigma,
        seed,
    };
    let bath = build_hamiltonian(&lattice, Some(&disorder), &[])?;
    let h = compose(&bath, std::slice::from_ref(&spec.emitter))?;
    let window = gap_window(&params, gap)?;
    let mut rec = SampleRecord {
        sigma_index,
        sigma,
        sample,
        seed,
        energy: None,
        ipr: None,
        ipr_photonic: None,
        n_ingap: 0,
        emitter_population: None,
        fraction_a: None,
    };
    match bound_state_numeric(&h, &window) {
        Ok(bs) => {
            let mut phot = Vec::with_capacity(h.dim());
            let mut wa = 0.0;
            for (p, l) in h.labels().iter().enumerate() {
                if let SiteLabel::Lattice { sublattice, .. } = *l {
                    let x = bs.vector[p];
                    phot.push(x);
                    if sublattice == Sublattice::A {
                        wa += x * x;
                    }
                }
            }
            let norm_sq: f64 = phot.iter().map(|x| x * x).sum();
            let norm = norm_sq.sqrt();
            for x in phot.iter_mut() {
                *x /= norm;
            }
            rec.energy = Some(bs.state.energy);
            rec.ipr = Some(ipr(bs.vector.as_slice())?);
            rec.ipr_photonic = Some(ipr(&phot)?);
            rec.n_ingap = bs.n_in_window;
            rec.emitter_population = Some(bs.state.c_e * bs.state.c_e);
            rec.fraction_a = Some(wa / norm_sq);
        }
        Err(Error::NoInGapState { .. }) => {}
        Err(e) => return Err(e),
    }
    Ok(rec)
}

/// Runs every `(σ, sample)` task on the current rayon pool.
pub fn run_ensemble(spec: &EnsembleSpec) -> Result<EnsembleResult> {
    spec.validate()?;
    let gap = spec.gap()?;
    let tasks: Vec<(usize, usize)> = (0..spec.sigmas.len())
        .flat_map(|s| (0..spec.samples).map(move |k| (s, k)))
        .collect();
    let samples: Vec<SampleRecord> = tasks
        .par_iter()
        .map(|&(s, k)| run_sample(spec, gap, s, k))
        .collect::<Result<_>>()?;
    let stats = spec
        .sigmas
        .iter()
        .enumerate()
        .map(|(s, &sigma)| {
            let recs: Vec<&SampleRecord> = samples.iter().filter(|r| r.sigma_index == s).collect();
            let energies: Vec<f64> = recs.iter().filter_map(|r| r.energy).collect();
            let iprs: Vec<f64> = recs.iter().filter_map(|r| r.ipr).collect();
            let iprs_phot: Vec<f64> = recs.iter().filter_map(|r| r.ipr_photonic).collect();
            let (mean_energy, std_energy) = mean_std(&energies);
            SigmaStats {
                sigma,
                mean_energy,
                std_energy,
                mean_ipr: mean_std(&iprs).0,
                mean_ipr_photonic: mean_std(&iprs_phot).0,
                count: energies.len(),
                failures: recs.len() - energies.len(),
            }
        })
        .collect();
    Ok(EnsembleResult {
        model: spec.model.name().to_string(),
        n_sites: spec.n_sites,
        g: spec.coupling(),
        stats,
        samples,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub g: f64,
    pub n_sites: usize,
    pub sigma: f64,
    pub mean_energy: f64,
    pub std_energy: f64,
    pub count: usize,
    pub failures: usize,
}

/// `Std(E_BS)` over `(g, N, σ)`. The emitter stays on the central A site and
/// every contact weight is replaced by `g`.
pub fn size_scaling_study(
    spec: &EnsembleSpec,
    sizes: &[usize],
    g_values: &[f64],
) -> Result<Vec<ScalingRow>> {
    let mut rows = Vec::new();
    for &g in g_values {
        for &n in sizes {
            let run_spec = resized(spec, n, g);
            let result = run_ensemble(&run_spec)?;
            for st in result.stats {
                rows.push(ScalingRow {
                    g,
                    n_sites: n,
                    sigma: st.sigma,
                    mean_energy: st.mean_energy,
                    std_energy: st.std_energy,
                    count: st.count,
                    failures: st.failures,
                });
            }
        }
    }
    Ok(rows)
}

fn resized(spec: &EnsembleSpec, n_sites: usize, g: f64) -> EnsembleSpec {
    let mut s = spec.clone();
    let shift = EnsembleSpec::central_a_site(n_sites) as i64
        - EnsembleSpec::central_a_site(spec.n_sites) as i64;
    s.n_sites = n_sites;
    for c in s.emitter.contacts.iter_mut() {
        c.site = (c.site as i64 + shift).max(0) as usize;
        c.g = g;
    }
    s
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IprPart {
    Full,
    Photonic,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IprMap {
    pub part: IprPart,
    pub g: Vec<f64>,
    pub sigma: Vec<f64>,
    /// `mean_ipr[i][j]` for `g[i]`, `sigma[j]`.
    pub mean_ipr: Vec<Vec<f64>>,
}

pub fn ipr_map(
    spec: &EnsembleSpec,
    g_grid: &[f64],
    sigma_grid: &[f64],
    part: IprPart,
) -> Result<IprMap> {
    let mut mean_ipr = Vec::with_capacity(g_grid.len());
    for &g in g_grid {
        let mut s = resized(spec, spec.n_sites, g);
        s.sigmas = sigma_grid.to_vec();
        let r = run_ensemble(&s)?;
        mean_ipr.push(
            r.stats
                .iter()
                .map(|st| match part {
                    IprPart::Full => st.mean_ipr,
                    IprPart::Photonic => st.mean_ipr_photonic,
                })
                .collect(),
        );
    }
    Ok(IprMap {
        part,
        g: g_grid.to_vec(),
        sigma: sigma_grid.to_vec(),
        mean_ipr,
    })
}

/// One row per sample:
/// `model,N,g,sigma,sample,seed,E_BS,IPR,n_ingap,failed`.
pub fn write_samples_csv<W: Write>(result: &EnsembleResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::InvalidInput(format!("csv output failed: {e}"));
    w.write_record([
        "model", "N", "g", "sigma", "sample", "seed", "E_BS", "IPR", "n_ingap", "failed",
    ])
    .map_err(io)?;
    for r in &result.samples {
        let fmt = |x: Option<f64>| x.map_or_else(|| "NaN".to_string(), |v| format!("{v:.17e}"));
        w.write_record([
            result.model.clone(),
            result.n_sites.to_string(),
            format!("{:.17e}", result.g),
            format!("{:.17e}", r.sigma),
            r.sample.to_string(),
            r.seed.to_string(),
            fmt(r.energy),
            fmt(r.ipr),
            r.n_ingap.to_string(),
            r.failed().to_string(),
        ])
        .map_err(io)?;
    }
    w.flush()
        .map_err(|e| Error::InvalidInput(format!("csv output failed: {e}")))?;
    Ok(())
}
