//! Single-excitation time evolution and its spectral analysis.

use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::bloch::{band_scan, dispersion, ModelParams};
use crate::boundstate::{gap_window, GapLabel};
use crate::chain::{
    build_hamiltonian, default_gap_window, edge_states, LatticeSpec, RealSpaceHamiltonian,
};
use crate::coupling::{compose, self_energy, EmitterSpec};
use crate::error::{Error, Result};
use crate::linalg::sym_eigen;
use crate::scalar::k_grid;

#[derive(Debug, Clone, PartialEq)]
pub enum InitialState {
    EmitterExcited,
    Custom(Vec<Complex64>),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimeSeries {
    pub times: Vec<f64>,
    pub c_e: Vec<Complex64>,
    pub population: Vec<f64>,
    /// Largest `|‖ψ(t)‖² − 1|` over the recorded times.
    pub max_norm_error: f64,
}

impl TimeSeries {
    fn from_amplitudes(times: Vec<f64>, c_e: Vec<Complex64>, max_norm_error: f64) -> Self {
        let population = c_e.iter().map(|c| c.norm_sqr()).collect();
        Self {
            times,
            c_e,
            population,
            max_norm_error,
        }
    }

    pub fn min_population(&self) -> f64 {
        self.population
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

fn emitter_position(h: &RealSpaceHamiltonian<f64>) -> Result<usize> {
    h.position_of_emitter(0)
        .ok_or_else(|| Error::InvalidInput("Hamiltonian has no emitter".into()))
}

fn initial_vector(h: &RealSpaceHamiltonian<f64>, initial: &InitialState) -> Result<Vec<Complex64>> {
    match initial {
        InitialState::EmitterExcited => {
            let mut v = vec![Complex64::new(0.0, 0.0); h.dim()];
            v[emitter_position(h)?] = Complex64::new(1.0, 0.0);
            Ok(v)
        }
        InitialState::Custom(v) => {
            if v.len() != h.dim() {
                return Err(Error::InvalidInput(format!(
                    "initial state has length {}, Hamiltonian has dimension {}",
                    v.len(),
                    h.dim()
                )));
            }
            let norm_sq: f64 = v.iter().map(|c| c.norm_sqr()).sum();
            if (norm_sq - 1.0).abs() > 1e-10 {
                return Err(Error::NotNormalized { norm_sq });
            }
            Ok(v.clone())
        }
    }
}

fn check_times(times: &[f64]) -> Result<()> {
    if times.is_empty() || times.iter().any(|t| !t.is_finite()) {
        return Err(Error::InvalidInput(
            "time grid must be non-empty and finite".into(),
        ));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidInput(
            "time grid must be strictly ascending".into(),
        ));
    }
    Ok(())
}

/// Exact propagator `V exp(−iΛt) Vᵀ` of a real symmetric Hamiltonian.
#[derive(Debug, Clone)]
pub struct SpectralPropagator {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
}

impl SpectralPropagator {
    pub fn new(h: &RealSpaceHamiltonian<f64>) -> Self {
        let eig = sym_eigen(&h.to_dense());
        Self {
            values: eig.values,
            vectors: eig.vectors,
        }
    }

    fn coefficients(&self, psi: &[Complex64]) -> Vec<Complex64> {
        let n = self.values.len();
        (0..n)
            .map(|c| {
                self.vectors
                    .column(c)
                    .iter()
                    .zip(psi)
                    .fold(Complex64::new(0.0, 0.0), |a, (&v, &x)| a + x * v)
            })
            .collect()
    }

    fn phased(&self, coef: &[Complex64], t: f64) -> Vec<Complex64> {
        coef.iter()
            .zip(self.values.iter())
            .map(|(&a, &e)| a * Complex64::from_polar(1.0, -e * t))
            .collect()
    }

    fn synthesize(&self, phased: &[Complex64]) -> Vec<Complex64> {
        let n = self.values.len();
        let mut out = vec![Complex64::new(0.0, 0.0); n];
        for (c, &a) in phased.iter().enumerate() {
            for (o, &v) in out.iter_mut().zip(self.vectors.column(c).iter()) {
                *o += a * v;
            }
        }
        out
    }

    pub fn apply(&self, psi: &[Complex64], t: f64) -> Vec<Complex64> {
        let coef = self.coefficients(psi);
        self.synthesize(&self.phased(&coef, t))
    }
}

/// Exact evolution by spectral decomposition; records the amplitude of
/// emitter 0.
pub fn evolve(
    h: &RealSpaceHamiltonian<f64>,
    initial: &InitialState,
    times: &[f64],
) -> Result<TimeSeries> {
    check_times(times)?;
    let e = emitter_position(h)?;
    let psi0 = initial_vector(h, initial)?;
    let prop = SpectralPropagator::new(h);
    let coef = prop.coefficients(&psi0);
    let mut c_e = Vec::with_capacity(times.len());
    let mut max_err = 0.0f64;
    for &t in times {
        let psi = prop.synthesize(&prop.phased(&coef, t));
        let norm: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
        max_err = max_err.max((norm - 1.0).abs());
        c_e.push(psi[e]);
    }
    Ok(TimeSeries::from_amplitudes(times.to_vec(), c_e, max_err))
}

/// `ψ(t)` from `ψ(0)` by spectral decomposition; negative `t` runs backwards.
pub fn evolve_state(h: &RealSpaceHamiltonian<f64>, psi0: &[Complex64], t: f64) -> Vec<Complex64> {
    SpectralPropagator::new(h).apply(psi0, t)
}

/// `J_0(x) … J_kmax(x)` by Miller's downward recurrence.
pub fn bessel_j_sequence(x: f64, kmax: usize) -> Vec<f64> {
    let mut out = vec![0.0; kmax + 1];
    if x == 0.0 {
        out[0] = 1.0;
        return out;
    }
    let start = (kmax + x.abs() as usize + 40) | 1;
    let (mut next, mut cur) = (0.0f64, 1e-300f64);
    let mut even_sum = 0.0;
    let mut j0 = 0.0;
    for k in (1..=start).rev() {
        let prev = 2.0 * k as f64 / x * cur - next;
        next = cur;
        cur = prev;
        if k - 1 <= kmax {
            out[k - 1] = cur;
        }
        if (k - 1) % 2 == 0 && k > 1 {
            even_sum += cur;
        }
        if k == 1 {
            j0 = cur;
        }
        if cur.abs() > 1e250 {
            let s = 1e-250;
            next *= s;
            cur *= s;
            even_sum *= s;
            for v in out.iter_mut() {
                *v *= s;
            }
        }
    }
    let norm = j0 + 2.0 * even_sum;
    for v in out.iter_mut() {
        *v /= norm;
    }
    out
}

/// Chebyshev propagator for one fixed step, using sparse matrix-vector
/// products only.
#[derive(Debug, Clone)]
pub struct ChebyshevStep {
    center: f64,
    radius: f64,
    dt: f64,
    coef: Vec<Complex64>,
}

impl ChebyshevStep {
    pub fn new(h: &RealSpaceHamiltonian<f64>, dt: f64) -> Self {
        let mut lo = vec![0.0; h.dim()];
        let mut hi = vec![0.0; h.dim()];
        let mut diag = vec![0.0; h.dim()];
        for &(i, j, v) in h.entries() {
            if i == j {
                diag[i] += v;
            } else {
                lo[i] += v.abs();
                lo[j] += v.abs();
            }
        }
        for i in 0..h.dim() {
            hi[i] = diag[i] + lo[i];
            lo[i] = diag[i] - lo[i];
        }
        let emin = lo.iter().copied().fold(f64::INFINITY, f64::min);
        let emax = hi.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let center = 0.5 * (emax + emin);
        let radius = (0.5 * (emax - emin)).max(1e-12) * 1.01;
        let x = radius * dt;
        let kmax = (x.abs() * 1.5) as usize + 30;
        let j = bessel_j_sequence(x, kmax);
        let mut coef = Vec::with_capacity(kmax + 1);
        let mut phase = Complex64::new(1.0, 0.0);
        for (k, &jk) in j.iter().enumerate() {
            let w = if k == 0 { 1.0 } else { 2.0 };
            coef.push(phase * (w * jk));
            phase *= Complex64::new(0.0, -1.0);
        }
        while coef.len() > 1 && coef.last().unwrap().norm() < 1e-18 {
            coef.pop();
        }
        Self {
            center,
            radius,
            dt,
            coef,
        }
    }

    fn scaled_matvec(&self, h: &RealSpaceHamiltonian<f64>, x: &[Complex64], out: &mut [Complex64]) {
        for o in out.iter_mut() {
            *o = Complex64::new(0.0, 0.0);
        }
        for &(i, j, v) in h.entries() {
            out[i] += x[j] * v;
            if i != j {
                out[j] += x[i] * v;
            }
        }
        let inv = 1.0 / self.radius;
        for (o, &xi) in out.iter_mut().zip(x) {
            *o = (*o - xi * self.center) * inv;
        }
    }

    pub fn apply(&self, h: &RealSpaceHamiltonian<f64>, psi: &[Complex64]) -> Vec<Complex64> {
        let n = psi.len();
        let mut t_prev = psi.to_vec();
        let mut out: Vec<Complex64> = psi.iter().map(|&x| x * self.coef[0]).collect();
        if self.coef.len() == 1 {
            return self.finish(out);
        }
        let mut t_cur = vec![Complex64::new(0.0, 0.0); n];
        self.scaled_matvec(h, &t_prev, &mut t_cur);
        for (o, &x) in out.iter_mut().zip(&t_cur) {
            *o += x * self.coef[1];
        }
        let mut tmp = vec![Complex64::new(0.0, 0.0); n];
        for c in &self.coef[2..] {
            self.scaled_matvec(h, &t_cur, &mut tmp);
            for i in 0..n {
                let next = tmp[i] * 2.0 - t_prev[i];
                t_prev[i] = t_cur[i];
                t_cur[i] = next;
                out[i] += next * *c;
            }
        }
        self.finish(out)
    }

    fn finish(&self, mut out: Vec<Complex64>) -> Vec<Complex64> {
        let phase = Complex64::from_polar(1.0, -self.center * self.dt);
        for o in out.iter_mut() {
            *o *= phase;
        }
        out
    }
}

/// Evolution on a uniform grid with a Chebyshev step; for chains too large
/// for a dense eigendecomposition.
pub fn evolve_chebyshev(
    h: &RealSpaceHamiltonian<f64>,
    initial: &InitialState,
    times: &[f64],
) -> Result<TimeSeries> {
    check_times(times)?;
    let e = emitter_position(h)?;
    let mut psi = initial_vector(h, initial)?;
    let mut out = Vec::with_capacity(times.len());
    let mut max_err = 0.0f64;
    let mut record = |psi: &[Complex64], out: &mut Vec<Complex64>| {
        let norm: f64 = psi.iter().map(|c| c.norm_sqr()).sum();
        max_err = max_err.max((norm - 1.0).abs());
        out.push(psi[e]);
    };
    if times[0] != 0.0 {
        psi = ChebyshevStep::new(h, times[0]).apply(h, &psi);
    }
    record(&psi, &mut out);
    if times.len() > 1 {
        let dt = times[1] - times[0];
        if times
            .windows(2)
            .any(|w| ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.max(1.0))
        {
            return Err(Error::InvalidInput(
                "Chebyshev evolution needs a uniform time grid".into(),
            ));
        }
        let step = ChebyshevStep::new(h, dt);
        for _ in 1..times.len() {
            psi = step.apply(h, &psi);
            record(&psi, &mut out);
        }
    }
    Ok(TimeSeries::from_amplitudes(times.to_vec(), out, max_err))
}

/// Uniform grid `0, dt, …` up to and including `t_max`.
pub fn uniform_times(t_max: f64, dt: f64) -> Vec<f64> {
    let n = (t_max / dt).round() as usize;
    (0..=n).map(|i| i as f64 * dt).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Peak {
    /// Energy `λ` of a component `e^{−iλt}`.
    pub frequency: f64,
    /// Amplitude relative to a unit-amplitude tone.
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectrumOptions {
    pub padding: usize,
    pub threshold: f64,
    pub min_periods: f64,
}

impl Default for SpectrumOptions {
    fn default() -> Self {
        Self {
            padding: 8,
            threshold: 0.05,
            min_periods: 10.0,
        }
    }
}

pub fn spectrum(ts: &TimeSeries) -> Result<Vec<Peak>> {
    spectrum_with(ts, &SpectrumOptions::default())
}

/// Flat-window DFT of `C_e(t)`. Peaks are local maxima of the unpadded
/// spectrum above `threshold` of the global maximum, located on the
/// zero-padded spectrum and refined by a parabola through three bins.
/// Sorted by decreasing weight. The grid must span `min_periods` periods of
/// the beat between the two strongest peaks.
pub fn spectrum_with(ts: &TimeSeries, opts: &SpectrumOptions) -> Result<Vec<Peak>> {
    let n = ts.times.len();
    if n < 16 {
        return Err(Error::GridTooShort {
            reason: format!("{n} samples, need at least 16"),
        });
    }
    let dt = ts.times[1] - ts.times[0];
    if ts
        .times
        .windows(2)
        .any(|w| ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.max(1.0))
    {
        return Err(Error::InvalidInput(
            "spectrum needs a uniform time grid".into(),
        ));
    }
    let pad = opts.padding.max(1);
    let m = n * pad;
    let mut buf: Vec<Complex64> = ts.c_e.clone();
    buf.resize(m, Complex64::new(0.0, 0.0));
    FftPlanner::new().plan_fft_forward(m).process(&mut buf);
    let mag: Vec<f64> = buf.iter().map(|c| c.norm() / n as f64).collect();
    let global = mag.iter().copied().fold(0.0, f64::max);
    if global == 0.0 {
        return Ok(Vec::new());
    }
    let coarse = |i: usize| mag[(i % n) * pad];
    let mut peaks = Vec::new();
    for i in 0..n {
        let (l, c, r) = (coarse(i + n - 1), coarse(i), coarse(i + 1));
        if !(c > l && c >= r) {
            continue;
        }
        let mut best = i * pad;
        for d in 0..=2 * pad {
            let idx = (i * pad + m - pad + d) % m;
            if mag[idx] > mag[best] {
                best = idx;
            }
        }
        let (yl, y0, yr) = (mag[(best + m - 1) % m], mag[best], mag[(best + 1) % m]);
        if y0 < opts.threshold * global {
            continue;
        }
        let denom = yl - 2.0 * y0 + yr;
        let shift = if denom.abs() > 0.0 {
            0.5 * (yl - yr) / denom
        } else {
            0.0
        };
        let mut bin = best as f64 + shift.clamp(-0.5, 0.5);
        if bin > m as f64 / 2.0 {
            bin -= m as f64;
        }
        let frequency = -2.0 * std::f64::consts::PI * bin / (m as f64 * dt);
        peaks.push(Peak {
            frequency,
            weight: y0,
        });
    }
    peaks.sort_by(|a, b| {
        b.weight
            .partial_cmp(&a.weight)
            .unwrap()
            .then(a.frequency.partial_cmp(&b.frequency).unwrap())
    });
    peaks.dedup_by(|a, b| (a.frequency - b.frequency).abs() < 1e-12);
    if peaks.len() >= 2 {
        let beat = (peaks[0].frequency - peaks[1].frequency).abs();
        let periods = dt * (n - 1) as f64 * beat / (2.0 * std::f64::consts::PI);
        if periods < opts.min_periods {
            return Err(Error::GridTooShort {
                reason: format!(
                    "{periods:.2} periods of the strongest beat, need {}",
                    opts.min_periods
                ),
            });
        }
    }
    Ok(peaks)
}

/// Largest-weight peak with non-zero frequency, if any.
pub fn dominant_oscillation(peaks: &[Peak], resolution: f64) -> Option<Peak> {
    peaks
        .iter()
        .filter(|p| p.frequency.abs() > resolution)
        .copied()
        .max_by(|a, b| a.weight.partial_cmp(&b.weight).unwrap())
}

/// Half the separation of the two strongest peaks: the oscillation
/// frequency of `C_e` about its Lamb-shifted carrier.
pub fn rabi_frequency(peaks: &[Peak]) -> Option<f64> {
    match peaks {
        [a, b, ..] => Some(0.5 * (a.frequency - b.frequency).abs()),
        _ => None,
    }
}

/// Emitter coupled to the in-gap modes of a clean open chain.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectiveModel {
    pub delta: f64,
    pub edge_energies: Vec<f64>,
    /// `⟨ES_i|H_int|e⟩`.
    pub couplings: Vec<f64>,
    /// `sqrt(Σ g̃_i²)`.
    pub g_eff: f64,
}

/// Projects the emitter-chain problem onto `{|e⟩} ∪ {|ES_i⟩}`.
pub fn effective_model(
    params: &ModelParams<f64>,
    n_cells: usize,
    emitter: &EmitterSpec<f64>,
) -> Result<EffectiveModel> {
    if !gap_window(params, GapLabel::Middle)?.contains(emitter.delta) {
        return Err(Error::EnergyInBand {
            energy: emitter.delta,
        });
    }
    let bath = build_hamiltonian(&LatticeSpec::open(n_cells, *params), None, &[])?;
    let edges = edge_states(&bath, default_gap_window(params)?);
    if edges.is_empty() {
        return Err(Error::NoEdgeStates);
    }
    let mut couplings = Vec::with_capacity(edges.len());
    for psi in &edges.states {
        let mut g = 0.0;
        for c in &emitter.contacts {
            let p = bath.position_of_site(c.site).ok_or(Error::InvalidSite {
                site: c.site,
                sites: 2 * n_cells,
            })?;
            g += c.g * psi[p];
        }
        couplings.push(g);
    }
    let g_eff = couplings.iter().map(|g| g * g).sum::<f64>().sqrt();
    Ok(EffectiveModel {
        delta: emitter.delta,
        edge_energies: edges.energies,
        couplings,
        g_eff,
    })
}

impl EffectiveModel {
    fn matrix(&self) -> DMatrix<f64> {
        let m = self.couplings.len() + 1;
        let mut h = DMatrix::zeros(m, m);
        h[(0, 0)] = self.delta;
        for (i, (&e, &g)) in self.edge_energies.iter().zip(&self.couplings).enumerate() {
            h[(i + 1, i + 1)] = e;
            h[(0, i + 1)] = g;
            h[(i + 1, 0)] = g;
        }
        h
    }

    /// `C_e(t)` of the projected Hamiltonian, solved exactly.
    pub fn predict(&self, times: &[f64]) -> TimeSeries {
        let eig = sym_eigen(&self.matrix());
        let c_e = times
            .iter()
            .map(|&t| {
                (0..eig.len()).fold(Complex64::new(0.0, 0.0), |a, n| {
                    let v = eig.vectors[(0, n)];
                    a + Complex64::from_polar(v * v, -eig.values[n] * t)
                })
            })
            .collect();
        TimeSeries::from_amplitudes(times.to_vec(), c_e, 0.0)
    }

    /// `cos(g̃ t)`: resonant exchange with degenerate zero modes.
    pub fn rabi(&self, t: f64) -> f64 {
        (self.g_eff * t).cos()
    }
}

/// Emitter at zero detuning coupled with `g` to two modes at `±ε`.
pub fn weak_oscillation(epsilon: f64, g: f64, t: f64) -> f64 {
    let s = epsilon * epsilon + 2.0 * g * g;
    epsilon * epsilon / s + 2.0 * g * g / s * (s.sqrt() * t).cos()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecayConfig {
    pub y_min: f64,
    pub y_max: f64,
    pub n_y: usize,
    pub n_k: usize,
    pub n_cells: usize,
    pub dt: f64,
    /// Van Hove energy to use; defaults to the highest in-band one.
    pub x_star: Option<f64>,
    /// Late-time window; defaults to `[max(5/Γ, t₂/10), 0.9 t_rev]`.
    pub t_window: Option<(f64, f64)>,
}

impl Default for DecayConfig {
    fn default() -> Self {
        Self {
            y_min: 1e-4,
            y_max: 1e-2,
            n_y: 41,
            n_k: 1 << 21,
            n_cells: 2000,
            dt: 0.05,
            x_star: None,
            t_window: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecayFit {
    pub x_star: f64,
    pub alpha: f64,
    pub alpha_rms_residual: f64,
    pub y_window: (f64, f64),
    /// `(y, |F*(y)|)` samples used in the fit.
    pub f_samples: Vec<(f64, f64)>,
    pub beta_predicted: f64,
    pub beta_measured: f64,
    pub beta_rms_residual: f64,
    pub t_window: (f64, f64),
    pub t_revival: f64,
    pub max_group_velocity: f64,
    /// Markovian rate `−2 Im Σ(x* + iη)` at `η = y_min`.
    pub gamma_markov: f64,
    #[serde(skip)]
    pub series: TimeSeries,
}

/// `F*(y) = 2Σ(z)/[(z − Δ)² − Σ(z)²]` at `z = x* − iy`.
pub fn branch_cut_amplitude(
    params: &ModelParams<f64>,
    g: f64,
    delta: f64,
    x_star: f64,
    y: f64,
    n_k: usize,
) -> Complex64 {
    let z = Complex64::new(x_star, -y);
    let s = self_energy(params, z, g, n_k);
    2.0 * s / ((z - delta) * (z - delta) - s * s)
}

/// Least-squares slope and rms residual of `ln y` against `ln x`.
pub fn loglog_fit(points: &[(f64, f64)]) -> (f64, f64) {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(x, y)| *x > 0.0 && *y > 0.0)
        .map(|&(x, y)| (x.ln(), y.ln()))
        .collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let slope = sxy / sxx;
    let rms = (pts
        .iter()
        .map(|p| {
            let r = p.1 - (my + slope * (p.0 - mx));
            r * r
        })
        .sum::<f64>()
        / n)
        .sqrt();
    (slope, rms)
}

/// Largest `|dω/dk|` of the upper band.
pub fn max_group_velocity(params: &ModelParams<f64>, n_k: usize) -> f64 {
    let dk = 2.0 * std::f64::consts::PI / n_k as f64;
    k_grid::<f64>(n_k, 0.0)
        .map(|k| ((dispersion(params, k + 0.5 * dk) - dispersion(params, k - 0.5 * dk)) / dk).abs())
        .fold(0.0, f64::max)
}

/// Non-Markovian decay of an emitter tuned to an in-band Van Hove energy:
/// small-`y` power law of `F*` and the late-time algebraic decay of the
/// full open-chain evolution.
pub fn vanhove_decay(params: &ModelParams<f64>, g: f64, cfg: &DecayConfig) -> Result<DecayFit> {
    if !(cfg.y_min > 0.0 && cfg.y_max > cfg.y_min && cfg.n_y >= 3) {
        return Err(Error::InvalidInput(
            "F* window needs 0 < y_min < y_max and n_y >= 3".into(),
        ));
    }
    let scan = band_scan(params, 4096)?;
    let x_star = match cfg.x_star {
        Some(x) => x,
        None => *scan.vhs_energies.last().ok_or(Error::NoVhs)?,
    };
    if !scan.in_band(x_star) {
        return Err(Error::NoVhs);
    }
    let delta = x_star;
    let ratio = (cfg.y_max / cfg.y_min).ln();
    let ys: Vec<f64> = (0..cfg.n_y)
        .map(|i| cfg.y_min * (ratio * i as f64 / (cfg.n_y - 1) as f64).exp())
        .collect();
    use rayon::prelude::*;
    let f_samples: Vec<(f64, f64)> = ys
        .par_iter()
        .map(|&y| {
            (
                y,
                branch_cut_amplitude(params, g, delta, x_star, y, cfg.n_k).norm(),
            )
        })
        .collect();
    let (alpha, alpha_rms) = loglog_fit(&f_samples);

    let vmax = max_group_velocity(params, 4096);
    let t_rev = cfg.n_cells as f64 / (2.0 * vmax);
    let gamma = -2.0 * self_energy(params, Complex64::new(x_star, cfg.y_min), g, cfg.n_k).im;
    let (t1, t2) = cfg.t_window.unwrap_or_else(|| {
        let t2 = 0.9 * t_rev;
        ((5.0 / gamma).max(t2 / 10.0), t2)
    });
    if !(t1 > 0.0 && t2 > t1) {
        return Err(Error::GridTooShort {
            reason: format!("late-time window [{t1}, {t2}] is empty"),
        });
    }
    let lattice = LatticeSpec::open(cfg.n_cells, *params);
    let bath = build_hamiltonian(&lattice, None, &[])?;
    let site = 2 * (cfg.n_cells / 2);
    let h = compose(&bath, &[EmitterSpec::local(site, g, delta)])?;
    let times = uniform_times(t2, cfg.dt);
    let series = evolve_chebyshev(&h, &InitialState::EmitterExcited, &times)?;
    let late: Vec<(f64, f64)> = series
        .times
        .iter()
        .zip(&series.population)
        .filter(|(t, _)| **t >= t1 && **t <= t2)
        .map(|(&t, &p)| (t, p))
        .collect();
    let (slope, beta_rms) = loglog_fit(&late);
    Ok(DecayFit {
        x_star,
        alpha,
        alpha_rms_residual: alpha_rms,
        y_window: (cfg.y_min, cfg.y_max),
        f_samples,
        beta_predicted: 2.0 * (1.0 + alpha),
        beta_measured: -slope,
        beta_rms_residual: beta_rms,
        t_window: (t1, t2),
        t_revival: t_rev,
        max_group_velocity: vmax,
        gamma_markov: gamma,
        series,
    })
}

fn csv_error(e: csv::Error) -> Error {
    Error::InvalidInput(format!("csv output failed: {e}"))
}

/// Columns `t,re_c_e,im_c_e,population`.
pub fn write_time_series_csv<W: Write>(ts: &TimeSeries, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "re_c_e", "im_c_e", "population"])
        .map_err(csv_error)?;
    for ((t, c), p) in ts.times.iter().zip(&ts.c_e).zip(&ts.population) {
        w.write_record([
            format!("{t:.17e}"),
            format!("{:.17e}", c.re),
            format!("{:.17e}", c.im),
            format!("{p:.17e}"),
        ])
        .map_err(csv_error)?;
    }
    w.flush()
        .map_err(|e| Error::InvalidInput(format!("csv output failed: {e}")))
}

/// Columns `frequency,weight`.
pub fn write_peaks_csv<W: Write>(peaks: &[Peak], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["frequency", "weight"]).map_err(csv_error)?;
    for p in peaks {
        w.write_record([
            format!("{:.17e}", p.frequency),
            format!("{:.17e}", p.weight),
        ])
        .map_err(csv_error)?;
    }
    w.flush()
        .map_err(|e| Error::InvalidInput(format!("csv output failed: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chain_with_emitter(
        params: ModelParams<f64>,
        n_sites: usize,
        emitter: EmitterSpec<f64>,
    ) -> RealSpaceHamiltonian<f64> {
        let bath = build_hamiltonian(&LatticeSpec::open(n_sites / 2, params), None, &[]).unwrap();
        compose(&bath, &[emitter]).unwrap()
    }

    fn rk4(
        h: &DMatrix<f64>,
        psi0: &[Complex64],
        t_max: f64,
        dt: f64,
        record: &[f64],
    ) -> Vec<Complex64> {
        let n = psi0.len();
        let deriv = |x: &[Complex64]| -> Vec<Complex64> {
            (0..n)
                .map(|i| {
                    let mut acc = Complex64::new(0.0, 0.0);
                    for j in 0..n {
                        acc += x[j] * h[(i, j)];
                    }
                    acc * Complex64::new(0.0, -1.0)
                })
                .collect()
        };
        let axpy = |x: &[Complex64], k: &[Complex64], a: f64| -> Vec<Complex64> {
            x.iter().zip(k).map(|(&x, &k)| x + k * a).collect()
        };
        let steps = (t_max / dt).round() as usize;
        let mut psi = psi0.to_vec();
        let mut out = Vec::new();
        let mut next = 0;
        for s in 0..=steps {
            let t = s as f64 * dt;
            if next < record.len() && (t - record[next]).abs() < 1e-9 {
                out.push(psi.clone());
                next += 1;
            }
            if s == steps {
                break;
            }
            let k1 = deriv(&psi);
            let k2 = deriv(&axpy(&psi, &k1, dt / 2.0));
            let k3 = deriv(&axpy(&psi, &k2, dt / 2.0));
            let k4 = deriv(&axpy(&psi, &k3, dt));
            for i in 0..n {
                psi[i] += (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (dt / 6.0);
            }
        }
        out.into_iter().map(|v| v[n - 1]).collect()
    }

    #[test]
    fn decoupled_emitter_stays_excited() {
        let h = chain_with_emitter(
            ModelParams::extended_ssh(0.5, 0.8),
            40,
            EmitterSpec::local(10, 0.0, 0.3),
        );
        let ts = evolve(&h, &InitialState::EmitterExcited, &uniform_times(50.0, 0.5)).unwrap();
        assert!(ts.population.iter().all(|p| (p - 1.0).abs() < 1e-12));
    }

    #[test]
    fn spectral_evolution_matches_rk4() {
        let h = chain_with_emitter(
            ModelParams::extended_ssh(0.5, 0.8),
            60,
            EmitterSpec::local(30, 0.3, 0.2),
        );
        let record = [0.0, 2.5, 5.0, 10.0, 20.0];
        let ts = evolve(&h, &InitialState::EmitterExcited, &record).unwrap();
        let mut psi0 = vec![Complex64::new(0.0, 0.0); h.dim()];
        psi0[h.dim() - 1] = Complex64::new(1.0, 0.0);
        let reference = rk4(&h.to_dense(), &psi0, 20.0, 1e-3, &record);
        for (a, b) in ts.c_e.iter().zip(&reference) {
            assert!((a.norm() - b.norm()).abs() < 1e-6, "{a} {b}");
        }
        assert!(ts.max_norm_error < 1e-10);
    }

    #[test]
    fn evolution_is_reversible() {
        let h = chain_with_emitter(
            ModelParams::extended_ssh(2.0, 0.5),
            120,
            EmitterSpec::giant(&[0, 1], 0.1, 0.0),
        );
        let mut psi0 = vec![Complex64::new(0.0, 0.0); h.dim()];
        psi0[h.position_of_emitter(0).unwrap()] = Complex64::new(1.0, 0.0);
        let forward = evolve_state(&h, &psi0, 137.0);
        let back = evolve_state(&h, &forward, -137.0);
        let err = back
            .iter()
            .zip(&psi0)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn custom_state_must_be_normalized() {
        let h = chain_with_emitter(
            ModelParams::extended_ssh(0.5, 0.8),
            20,
            EmitterSpec::local(0, 0.1, 0.0),
        );
        let v = vec![Complex64::new(0.5, 0.0); h.dim()];
        assert!(matches!(
            evolve(&h, &InitialState::Custom(v), &[0.0]),
            Err(Error::NotNormalized { .. })
        ));
        assert!(evolve(&h, &InitialState::EmitterExcited, &[1.0, 0.5]).is_err());
    }

    #[test]
    fn bessel_values() {
        let j = bessel_j_sequence(1.0, 3);
        assert!((j[0] - 0.765_197_686_557_966_6).abs() < 1e-14);
        assert!((j[1] - 0.440_050_585_744_933_5).abs() < 1e-14);
        let j = bessel_j_sequence(10.0, 5);
        assert!((j[5] + 0.234_061_528_186_793_6).abs() < 1e-13);
        let j = bessel_j_sequence(-2.0, 1);
        assert!((j[1] + 0.576_724_807_756_873_4).abs() < 1e-14);
    }

    #[test]
    fn chebyshev_matches_spectral() {
        let h = chain_with_emitter(
            ModelParams::extended_ssh(1.0, 2.0).with_omega_delta(0.0),
            200,
            EmitterSpec::local(100, 0.3, 3.0),
        );
        let times = uniform_times(30.0, 0.5);
        let a = evolve(&h, &InitialState::EmitterExcited, &times).unwrap();
        let b = evolve_chebyshev(&h, &InitialState::EmitterExcited, &times).unwrap();
        for (x, y) in a.c_e.iter().zip(&b.c_e) {
            assert!((x - y).norm() < 1e-10, "{x} {y}");
        }
        assert!(b.max_norm_error < 1e-10);
    }

    #[test]
    fn cosine_has_two_symmetric_peaks() {
        let g = 0.37;
        let times = uniform_times(300.0, 0.1);
        let c_e = times
            .iter()
            .map(|t| Complex64::new((g * t).cos(), 0.0))
            .collect();
        let ts = TimeSeries::from_amplitudes(times, c_e, 0.0);
        let peaks = spectrum(&ts).unwrap();
        assert_eq!(peaks.len(), 2, "{peaks:?}");
        for p in &peaks {
            assert!((p.frequency.abs() - g).abs() < 1e-3 * g);
            assert!((p.weight - 0.5).abs() < 0.02);
        }
        assert!((rabi_frequency(&peaks).unwrap() - g).abs() < 1e-3 * g);
    }

    #[test]
    fn short_grid_is_rejected() {
        let times = uniform_times(20.0, 0.1);
        let c_e = times
            .iter()
            .map(|t| Complex64::new((0.2 * t).cos(), 0.0))
            .collect();
        let ts = TimeSeries::from_amplitudes(times, c_e, 0.0);
        assert!(matches!(spectrum(&ts), Err(Error::GridTooShort { .. })));
    }

    #[test]
    fn trivial_phase_has_no_edge_modes() {
        let p = ModelParams::extended_ssh(-0.76, 0.5);
        let em = EmitterSpec::giant(&[0, 1], 0.1, 0.0);
        assert!(matches!(
            effective_model(&p, 60, &em),
            Err(Error::NoEdgeStates)
        ));
        let h = chain_with_emitter(p, 120, em);
        let ts = evolve(
            &h,
            &InitialState::EmitterExcited,
            &uniform_times(400.0, 0.2),
        )
        .unwrap();
        assert!(ts.min_population() > 0.95);
    }

    #[test]
    fn weak_oscillation_formula_matches_projection() {
        let m = EffectiveModel {
            delta: 0.0,
            edge_energies: vec![-0.02, 0.02],
            couplings: vec![0.004, 0.004],
            g_eff: 0.004f64 * 2f64.sqrt(),
        };
        let times = uniform_times(500.0, 1.0);
        let pred = m.predict(&times);
        for (t, c) in times.iter().zip(&pred.c_e) {
            assert!((c.re - weak_oscillation(0.02, 0.004, *t)).abs() < 1e-12);
        }
    }

    #[test]
    fn local_coupling_in_w_minus_one_barely_oscillates() {
        let p = ModelParams::extended_ssh(2.0, 0.5);
        let h = chain_with_emitter(p, 120, EmitterSpec::local(0, 0.1, 0.0));
        let ts = evolve(
            &h,
            &InitialState::EmitterExcited,
            &uniform_times(400.0, 0.2),
        )
        .unwrap();
        assert!(1.0 - ts.min_population() < 0.05);
        let m = effective_model(&p, 60, &EmitterSpec::local(0, 0.1, 0.0)).unwrap();
        assert!(m.g_eff < 1e-6);
    }

    #[test]
    fn giant_atom_rabi_frequency_matches_effective_coupling() {
        let p = ModelParams::extended_ssh(2.0, 0.5);
        let em = EmitterSpec::giant(&[0, 1], 0.1, 0.0);
        let h = chain_with_emitter(p, 120, em.clone());
        let ts = evolve(
            &h,
            &InitialState::EmitterExcited,
            &uniform_times(1000.0, 0.1),
        )
        .unwrap();
        let m = effective_model(&p, 60, &em).unwrap();
        let f = rabi_frequency(&spectrum(&ts).unwrap()).unwrap();
        assert!((f - m.g_eff).abs() < 0.02 * m.g_eff, "{f} {}", m.g_eff);
    }

    #[test]
    fn early_decay_follows_markov_rate() {
        let p = ModelParams::extended_ssh(0.5, 0.8);
        let (g, delta) = (0.1, 2.0);
        let gamma = -2.0 * self_energy(&p, Complex64::new(delta, 1e-3), g, 1 << 16).im;
        let n_cells = 800;
        let h = chain_with_emitter(p, 2 * n_cells, EmitterSpec::local(n_cells, g, delta));
        let times = uniform_times(1.5 / gamma, 0.5);
        let ts = evolve_chebyshev(&h, &InitialState::EmitterExcited, &times).unwrap();
        for (t, pop) in ts.times.iter().zip(&ts.population) {
            assert!(
                (pop - (-gamma * t).exp()).abs() < 0.03,
                "t={t} {pop} {}",
                (-gamma * t).exp()
            );
        }
    }

    #[test]
    fn power_law_fit_recovers_exponent() {
        let pts: Vec<(f64, f64)> = (1..50)
            .map(|i| (i as f64, 3.0 * (i as f64).powf(-2.5)))
            .collect();
        let (slope, rms) = loglog_fit(&pts);
        assert!((slope + 2.5).abs() < 1e-12 && rms < 1e-12);
    }

    #[test]
    fn csv_has_header_and_rows() {
        let times = uniform_times(1.0, 0.5);
        let ts = TimeSeries::from_amplitudes(times, vec![Complex64::new(1.0, 0.0); 3], 0.0);
        let mut buf = Vec::new();
        write_time_series_csv(&ts, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,re_c_e,im_c_e,population\n"));
        assert_eq!(text.lines().count(), 4);
    }
}
