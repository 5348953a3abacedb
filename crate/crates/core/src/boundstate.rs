//! Qubit-photon bound states of an emitter on the A site of cell 0.
//!
//! Photonic amplitudes relative to the emitter amplitude are lattice Green
//! functions,
//! `C_{j,a}/C_e = g ⟨e^{ikj} (E + ω_δ)/(E² − ω²)⟩_k` and
//! `C_{j,b}/C_e = g ⟨e^{ikj} h̄(k)/(E² − ω²)⟩_k`,
//! with `h(k) = d_x − i d_y = p(y)/y²`, `y = e^{ik}`,
//! `p(y) = J3' y³ + J1' y² + J1 y + J3`. At `E = 0` the B amplitudes reduce to
//! residue sums over the roots of `p` (cells `j ≥ 0`) or of the reciprocal
//! polynomial `p*(y) = y³ p(1/y)` (cells `j < 0`) inside the unit circle.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex;
use serde::Serialize;

use crate::bloch::{band_scan, ModelParams};
use crate::chain::{
    build_hamiltonian, summarize, CellWeight, LatticeSpec, LocalizationProfile,
    RealSpaceHamiltonian, SiteLabel, Sublattice,
};
use crate::coupling::DEFAULT_NK;
use crate::error::{Error, Result};
use crate::scalar::{k_grid, Real};

/// Quadrature nodes for wavefunction integrals.
pub const WAVEFUNCTION_NK: usize = 1 << 18;
const UNIT_CIRCLE_MARGIN: f64 = 1e-8;
const EDGE_OFFSET: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GapLabel {
    Upper,
    Middle,
    Lower,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Quadrature,
    Residue,
    Diagonalization,
}

/// Energy interval of one spectral gap; outer gaps are unbounded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapWindow<T> {
    pub label: GapLabel,
    pub lo: T,
    pub hi: T,
}

impl<T: Real> GapWindow<T> {
    pub fn contains(&self, e: T) -> bool {
        e > self.lo && e < self.hi
    }

    pub fn width(&self) -> T {
        self.hi - self.lo
    }
}

/// Gap windows of a bath: middle `(-ω_min, ω_min)`, upper `(ω_max, ∞)`,
/// lower `(-∞, -ω_max)`.
pub fn gap_window<T: Real>(params: &ModelParams<T>, label: GapLabel) -> Result<GapWindow<T>> {
    let scan = band_scan(params, 4096)?;
    let inf = T::max_value().unwrap();
    Ok(match label {
        GapLabel::Middle => GapWindow {
            label,
            lo: -scan.band_min,
            hi: scan.band_min,
        },
        GapLabel::Upper => GapWindow {
            label,
            lo: scan.band_max,
            hi: inf,
        },
        GapLabel::Lower => GapWindow {
            label,
            lo: -inf,
            hi: -scan.band_max,
        },
    })
}

/// Gap containing energy `e`; fails inside a band.
pub fn classify<T: Real>(params: &ModelParams<T>, e: T) -> Result<GapLabel> {
    for label in [GapLabel::Middle, GapLabel::Upper, GapLabel::Lower] {
        if gap_window(params, label)?.contains(e) {
            return Ok(label);
        }
    }
    Err(Error::EnergyInBand {
        energy: e.to_f64_lossy(),
    })
}

/// Emitter plus photonic cloud, photonic amplitudes indexed by cell offset
/// `j = j_min, j_min + 1, …` from the emitter's cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundState<T> {
    pub energy: T,
    pub c_e: T,
    pub j_min: i64,
    pub photon_a: Vec<T>,
    pub photon_b: Vec<T>,
    pub gap_label: GapLabel,
    pub method: Method,
}

impl<T: Real> BoundState<T> {
    pub fn j_max(&self) -> i64 {
        self.j_min + self.photon_a.len() as i64 - 1
    }

    pub fn cells(&self) -> impl Iterator<Item = i64> + '_ {
        (0..self.photon_a.len()).map(move |i| self.j_min + i as i64)
    }

    /// Amplitude at relative cell `j`; zero outside the stored range.
    pub fn amplitude(&self, j: i64, sublattice: Sublattice) -> T {
        let idx = j - self.j_min;
        if idx < 0 || idx as usize >= self.photon_a.len() {
            return T::zero();
        }
        match sublattice {
            Sublattice::A => self.photon_a[idx as usize],
            Sublattice::B => self.photon_b[idx as usize],
        }
    }

    pub fn photonic_weight(&self) -> T {
        self.photon_a
            .iter()
            .chain(self.photon_b.iter())
            .fold(T::zero(), |a, &x| a + x * x)
    }

    /// Photonic weight in cells `j > 0`.
    pub fn right_weight(&self) -> T {
        self.cells()
            .zip(self.photon_a.iter().zip(&self.photon_b))
            .filter(|(j, _)| *j > 0)
            .fold(T::zero(), |acc, (_, (&a, &b))| acc + a * a + b * b)
    }

    /// Photonic weight in cells `j < 0`.
    pub fn left_weight(&self) -> T {
        self.cells()
            .zip(self.photon_a.iter().zip(&self.photon_b))
            .filter(|(j, _)| *j < 0)
            .fold(T::zero(), |acc, (_, (&a, &b))| acc + a * a + b * b)
    }

    pub fn profile(&self) -> LocalizationProfile<T> {
        let cells = self
            .photon_a
            .iter()
            .zip(&self.photon_b)
            .enumerate()
            .map(|(i, (&a, &b))| CellWeight {
                cell: i,
                a: a * a,
                b: b * b,
            })
            .collect();
        summarize(cells, (-self.j_min) as usize, self.c_e * self.c_e)
    }

    /// Photonic part as a normalized vector over `(j, A), (j, B)` pairs.
    pub fn photonic_unit(&self) -> Vec<T> {
        let norm = self.photonic_weight().sqrt();
        self.photon_a
            .iter()
            .zip(&self.photon_b)
            .flat_map(|(&a, &b)| [a / norm, b / norm])
            .collect()
    }

    fn from_ratios(
        energy: T,
        j_min: i64,
        ratio_a: Vec<T>,
        ratio_b: Vec<T>,
        gap_label: GapLabel,
        method: Method,
    ) -> Self {
        let photon: T = ratio_a
            .iter()
            .chain(ratio_b.iter())
            .fold(T::zero(), |a, &x| a + x * x);
        let c_e = T::one() / (T::one() + photon).sqrt();
        Self {
            energy,
            c_e,
            j_min,
            photon_a: ratio_a.into_iter().map(|x| x * c_e).collect(),
            photon_b: ratio_b.into_iter().map(|x| x * c_e).collect(),
            gap_label,
            method,
        }
    }
}

/// `ω²(k)` sampled on the uniform grid, shared by repeated evaluations.
struct Dispersion<T> {
    w2: Vec<T>,
    omega_delta: T,
}

impl<T: Real> Dispersion<T> {
    fn new(params: &ModelParams<T>, n_k: usize) -> Self {
        let w2 = k_grid(n_k, T::zero())
            .map(|k| params.offdiag(k).norm_sqr() + params.omega_delta * params.omega_delta)
            .collect();
        Self {
            w2,
            omega_delta: params.omega_delta,
        }
    }

    /// Real self-energy at an in-gap energy.
    fn sigma(&self, e: T, g: T) -> T {
        let e2 = e * e;
        let s = self
            .w2
            .iter()
            .fold(T::zero(), |a, &w2| a + T::one() / (e2 - w2));
        g * g * (e + self.omega_delta) * s / T::from_count(self.w2.len())
    }

    fn sigma_derivative(&self, e: T, g: T) -> T {
        let e2 = e * e;
        let (mut s1, mut s2) = (T::zero(), T::zero());
        for &w2 in &self.w2 {
            let d = T::one() / (e2 - w2);
            s1 += d;
            s2 += d * d;
        }
        let n = T::from_count(self.w2.len());
        g * g * (s1 - T::lit(2.0) * e * (e + self.omega_delta) * s2) / n
    }
}

/// Real self-energy of an A-site emitter at an in-gap energy.
pub fn self_energy_real<T: Real>(params: &ModelParams<T>, e: T, g: T, n_k: usize) -> T {
    Dispersion::new(params, n_k).sigma(e, g)
}

/// Emitter population of the exact bound state, `1 / (1 − Σ'(E))`.
pub fn emitter_population<T: Real>(params: &ModelParams<T>, e: T, g: T, n_k: usize) -> T {
    T::one() / (T::one() - Dispersion::new(params, n_k).sigma_derivative(e, g))
}

/// Root of `E − Δ − Σ(E)` inside the requested gap.
pub fn solve_pole<T: Real>(params: &ModelParams<T>, delta: T, g: T, gap: GapLabel) -> Result<T> {
    solve_pole_with(params, delta, g, gap, DEFAULT_NK)
}

pub fn solve_pole_with<T: Real>(
    params: &ModelParams<T>,
    delta: T,
    g: T,
    gap: GapLabel,
    n_k: usize,
) -> Result<T> {
    let scan = band_scan(params, 4096)?;
    let scale = params.hopping_scale();
    let offset = T::lit(EDGE_OFFSET) * scale;
    let e_g = scan.gap_width;
    if gap == GapLabel::Middle && e_g <= T::lit(1e-6) * scale {
        return Err(Error::GaplessModel {
            min_gap: e_g.to_f64_lossy(),
            tolerance: 1e-6 * scale.to_f64_lossy(),
        });
    }
    let disp = Dispersion::new(params, n_k);
    let f = |e: T| e - delta - disp.sigma(e, g);
    let reach = T::lit(10.0) * g * g / e_g.max(T::lit(1e-6) * scale) + offset;
    let (mut lo, mut hi) = match gap {
        GapLabel::Middle => (-scan.band_min + offset, scan.band_min - offset),
        GapLabel::Upper => {
            let lo = scan.band_max + offset;
            let mut hi = scan.band_max + reach;
            while f(hi) < T::zero() {
                hi = scan.band_max + (hi - scan.band_max) * T::lit(2.0);
            }
            (lo, hi)
        }
        GapLabel::Lower => {
            let hi = -scan.band_max - offset;
            let mut lo = -scan.band_max - reach;
            while f(lo) > T::zero() {
                lo = -scan.band_max + (lo + scan.band_max) * T::lit(2.0);
            }
            (lo, hi)
        }
    };
    let (flo, fhi) = (f(lo), f(hi));
    if flo > T::zero() || fhi < T::zero() {
        return Err(Error::NoPoleInGap {
            gap: format!("{gap:?}").to_lowercase(),
        });
    }
    for _ in 0..200 {
        let mid = (lo + hi) * T::lit(0.5);
        if mid <= lo || mid >= hi {
            break;
        }
        let fm = f(mid);
        if fm == T::zero() {
            return Ok(mid);
        }
        if fm < T::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let (flo, fhi) = (f(lo).abs(), f(hi).abs());
    Ok(if flo <= fhi { lo } else { hi })
}

fn check_in_gap<T: Real>(params: &ModelParams<T>, e: T) -> Result<GapLabel> {
    classify(params, e)
}

/// Bound state from direct quadrature at energy `e_bs`, over cells
/// `j_lo ..= j_hi`, normalized over that range.
pub fn wavefunction_quadrature<T: Real>(
    params: &ModelParams<T>,
    e_bs: T,
    g: T,
    j_lo: i64,
    j_hi: i64,
    n_k: usize,
) -> Result<BoundState<T>> {
    if j_hi < j_lo {
        return Err(Error::InvalidInput("empty cell range".into()));
    }
    let label = check_in_gap(params, e_bs)?;
    let nj = (j_hi - j_lo + 1) as usize;
    let mut ra = vec![T::zero(); nj];
    let mut rb = vec![T::zero(); nj];
    let e2 = e_bs * e_bs;
    let j_lo_t = T::lit(j_lo as f64);
    for k in k_grid(n_k, T::zero()) {
        let h = params.offdiag(k);
        let denom = e2 - h.norm_sqr() - params.omega_delta * params.omega_delta;
        let wa = (e_bs + params.omega_delta) / denom;
        let wb = h.conj() / denom;
        let step = Complex::new(k.cos(), k.sin());
        let mut phase = Complex::new((k * j_lo_t).cos(), (k * j_lo_t).sin());
        for i in 0..nj {
            ra[i] += phase.re * wa;
            rb[i] += (phase * wb).re;
            phase *= step;
        }
    }
    let scale = g / T::from_count(n_k);
    let ra: Vec<T> = ra.into_iter().map(|x| x * scale).collect();
    let rb: Vec<T> = rb.into_iter().map(|x| x * scale).collect();
    Ok(BoundState::from_ratios(
        e_bs,
        j_lo,
        ra,
        rb,
        label,
        Method::Quadrature,
    ))
}

/// Roots of `p` and `p*` with their unit-circle classification.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RootReport<T> {
    /// `[J3', J1', J1, J3]`, highest power first.
    pub coefficients: [T; 4],
    pub degree: usize,
    pub roots: Vec<Complex<T>>,
    /// Residue of `1/p` at each root.
    pub residues: Vec<Complex<T>>,
    pub inside_count: usize,
    pub reciprocal_roots: Vec<Complex<T>>,
    pub reciprocal_inside_count: usize,
    /// `2 − inside_count`.
    pub winding: i32,
}

fn cabs<T: Real>(z: impl std::borrow::Borrow<Complex<T>>) -> T {
    z.borrow().norm_sqr().sqrt()
}

fn horner<T: Real>(coef: &[Complex<T>], y: Complex<T>) -> Complex<T> {
    coef.iter()
        .fold(Complex::new(T::zero(), T::zero()), |acc, &c| acc * y + c)
}

fn derivative<T: Real>(coef: &[Complex<T>]) -> Vec<Complex<T>> {
    let deg = coef.len() - 1;
    coef[..deg]
        .iter()
        .enumerate()
        .map(|(i, &c)| c * T::from_count(deg - i))
        .collect()
}

/// Drops leading (highest-power) zero coefficients.
fn trim<T: Real>(coef: &[T]) -> Vec<T> {
    let first = coef
        .iter()
        .position(|&c| c != T::zero())
        .unwrap_or(coef.len());
    coef[first..].to_vec()
}

/// Roots of a real polynomial (highest power first) via companion-matrix
/// eigenvalues, Newton-polished.
pub fn polynomial_roots<T: Real>(coef: &[T]) -> Vec<Complex<T>> {
    let c = trim(coef);
    if c.len() < 2 {
        return Vec::new();
    }
    let deg = c.len() - 1;
    let mut comp = DMatrix::zeros(deg, deg);
    for i in 0..deg {
        comp[(0, i)] = -c[i + 1] / c[0];
        if i + 1 < deg {
            comp[(i + 1, i)] = T::one();
        }
    }
    let cc: Vec<Complex<T>> = c.iter().map(|&x| Complex::from(x)).collect();
    let dc = derivative(&cc);
    let mut roots: Vec<Complex<T>> = comp.complex_eigenvalues().iter().copied().collect();
    for r in roots.iter_mut() {
        for _ in 0..4 {
            let d = horner(&dc, *r);
            if cabs(d) == T::zero() {
                break;
            }
            let step = horner(&cc, *r) / d;
            if !(step.re.is_finite() && step.im.is_finite()) {
                break;
            }
            let next = *r - step;
            if cabs(horner(&cc, next)) <= cabs(horner(&cc, *r)) {
                *r = next;
            } else {
                break;
            }
        }
    }
    roots.sort_by(|a, b| {
        cabs(a)
            .partial_cmp(&cabs(b))
            .unwrap()
            .then(a.im.partial_cmp(&b.im).unwrap())
    });
    roots
}

/// Groups numerically coincident roots; returns `(centre, multiplicity)`.
fn group_roots<T: Real>(roots: &[Complex<T>]) -> Vec<(Complex<T>, usize)> {
    let tol = T::lit(1e-6);
    let mut groups: Vec<(Complex<T>, usize)> = Vec::new();
    for &r in roots {
        let scale = T::one().max(cabs(r));
        match groups.iter_mut().find(|(c, _)| cabs(*c - r) < tol * scale) {
            Some(g) => {
                g.0 = (g.0 * T::from_count(g.1) + r) / T::from_count(g.1 + 1);
                g.1 += 1;
            }
            None => groups.push((r, 1)),
        }
    }
    groups
}

/// Residue of `y^m / P(y)` at a root `y0` of multiplicity `mult`.
fn residue<T: Real>(coef: &[T], y0: Complex<T>, mult: usize, m: usize) -> Complex<T> {
    let zero = Complex::new(T::zero(), T::zero());
    // Taylor coefficients of P about y0 by repeated synthetic division.
    let mut work: Vec<Complex<T>> = trim(coef).into_iter().map(Complex::from).collect();
    let deg = work.len() - 1;
    let mut taylor = vec![zero; deg + 1];
    for t in taylor.iter_mut() {
        let mut acc = zero;
        let mut next = Vec::with_capacity(work.len().saturating_sub(1));
        for &c in &work {
            acc = acc * y0 + c;
            next.push(acc);
        }
        *t = next.pop().unwrap_or(zero);
        work = next;
    }
    // P = (y - y0)^mult · Q with Q's Taylor coefficients taylor[mult..].
    let q: Vec<Complex<T>> = taylor[mult..].to_vec();
    let order = mult - 1;
    // Series of 1/Q to the needed order.
    let mut inv = vec![zero; order + 1];
    inv[0] = Complex::from(T::one()) / q[0];
    for n in 1..=order {
        let mut acc = zero;
        for i in 1..=n.min(q.len() - 1) {
            acc += q[i] * inv[n - i];
        }
        inv[n] = -acc / q[0];
    }
    // Series of y^m = (y0 + u)^m.
    let mut num = vec![zero; order + 1];
    let mut binom = T::one();
    for (i, slot) in num.iter_mut().enumerate() {
        if i > m {
            break;
        }
        if i > 0 {
            binom = binom * T::from_count(m + 1 - i) / T::from_count(i);
        }
        *slot = y0.powu((m - i) as u32) * binom;
    }
    (0..=order).fold(zero, |acc, i| acc + num[i] * inv[order - i])
}

/// Sum of residues of `y^m / P(y)` over the roots strictly inside the unit
/// circle.
fn inside_residue_sum<T: Real>(coef: &[T], groups: &[(Complex<T>, usize)], m: usize) -> Complex<T> {
    groups
        .iter()
        .filter(|(r, _)| cabs(r) < T::one())
        .fold(Complex::new(T::zero(), T::zero()), |acc, &(r, mult)| {
            acc + residue(coef, r, mult, m)
        })
}

pub fn root_report<T: Real>(params: &ModelParams<T>) -> Result<RootReport<T>> {
    let coefficients = [params.j3p, params.j1p, params.j1, params.j3];
    let reciprocal = [params.j3, params.j1, params.j1p, params.j3p];
    let roots = polynomial_roots(&coefficients);
    let reciprocal_roots = polynomial_roots(&reciprocal);
    for r in roots.iter().chain(&reciprocal_roots) {
        if (cabs(r) - T::one()).abs() <= T::lit(UNIT_CIRCLE_MARGIN) {
            return Err(Error::RootOnUnitCircle {
                modulus: cabs(r).to_f64_lossy(),
            });
        }
    }
    let groups = group_roots(&roots);
    let residues = roots
        .iter()
        .map(|r| {
            let (centre, mult) = groups
                .iter()
                .copied()
                .find(|(c, _)| cabs(*c - *r) < T::lit(1e-6) * T::one().max(cabs(r)))
                .unwrap();
            residue(&coefficients, centre, mult, 0)
        })
        .collect();
    let inside_count = roots.iter().filter(|r| cabs(**r) < T::one()).count();
    let reciprocal_inside_count = reciprocal_roots
        .iter()
        .filter(|r| cabs(**r) < T::one())
        .count();
    Ok(RootReport {
        coefficients,
        degree: roots.len(),
        roots,
        residues,
        inside_count,
        reciprocal_roots,
        reciprocal_inside_count,
        winding: 2 - inside_count as i32,
    })
}

/// Exact `E = 0` bound state from residues; requires a chiral, gapped bath.
pub fn wavefunction_residue<T: Real>(
    params: &ModelParams<T>,
    g: T,
    j_lo: i64,
    j_hi: i64,
) -> Result<(BoundState<T>, RootReport<T>)> {
    if !params.is_chiral() {
        return Err(Error::ChiralityBroken {
            omega_delta: params.omega_delta.to_f64_lossy(),
        });
    }
    if j_hi < j_lo {
        return Err(Error::InvalidInput("empty cell range".into()));
    }
    let report = root_report(params)?;
    let p = report.coefficients;
    let p_star = [params.j3, params.j1, params.j1p, params.j3p];
    let groups = group_roots(&report.roots);
    let star_groups = group_roots(&report.reciprocal_roots);
    let nj = (j_hi - j_lo + 1) as usize;
    let ra = vec![T::zero(); nj];
    let rb: Vec<T> = (j_lo..=j_hi)
        .map(|j| {
            let s = if j >= 0 {
                inside_residue_sum(&p, &groups, (j + 1) as usize)
            } else {
                inside_residue_sum(&p_star, &star_groups, (-j) as usize)
            };
            -g * s.re
        })
        .collect();
    let state = BoundState::from_ratios(T::zero(), j_lo, ra, rb, GapLabel::Middle, Method::Residue);
    Ok((state, report))
}

fn lattice_parity<T: Real>(label: &SiteLabel) -> T {
    match label {
        SiteLabel::Lattice { sublattice, .. } => T::lit(sublattice.parity() as f64),
        SiteLabel::Emitter { .. } => T::zero(),
    }
}

/// Eigenvalues closer than this (relative to the largest matrix element) are
/// treated as one group when selecting a bound state. It absorbs the
/// finite-size splitting between a mid-gap bound state and edge modes.
pub const CLUSTER_TOL: f64 = 1e-5;

/// Eigenvector in the window with maximal weight on matrix position `target`.
/// Near-degenerate eigenvalues are grouped and the best combination within
/// each group (the normalized projection of the target basis vector) is used.
pub(crate) fn select_by_overlap<T: Real>(
    h: &RealSpaceHamiltonian<T>,
    lo: T,
    hi: T,
    target: usize,
) -> Option<(T, DVector<T>, usize)> {
    let bound = h
        .entries()
        .iter()
        .fold(T::zero(), |a, e| a.max(e.2.abs()))
        .max(T::one());
    let radius = gershgorin(h);
    let (lo, hi) = (lo.max(-radius), hi.min(radius));
    let eig = h.eigenpairs_in(lo, hi);
    let n_in = eig.len();
    if n_in == 0 {
        return None;
    }
    let tol = T::lit(CLUSTER_TOL) * bound;
    let mut best: Option<(T, DVector<T>)> = None;
    let mut start = 0;
    while start < n_in {
        let mut end = start + 1;
        while end < n_in && eig.values[end] - eig.values[end - 1] < tol {
            end += 1;
        }
        let mut psi = DVector::zeros(h.dim());
        let mut w = T::zero();
        for c in start..end {
            let amp = eig.vectors[(target, c)];
            w += amp * amp;
            psi += eig.vectors.column(c) * amp;
        }
        if w > T::zero() {
            psi /= w.sqrt();
        } else {
            psi = eig.vector(start);
        }
        if best.as_ref().map_or(true, |(bw, _)| w > *bw) {
            best = Some((w, psi));
        }
        start = end;
    }
    best.map(|(_, psi)| {
        let hp = h.matvec(psi.as_slice());
        let e = psi.iter().zip(&hp).fold(T::zero(), |a, (&x, &y)| a + x * y);
        (e, psi, n_in)
    })
}

fn gershgorin<T: Real>(h: &RealSpaceHamiltonian<T>) -> T {
    let mut rows = vec![T::zero(); h.dim()];
    for &(i, j, v) in h.entries() {
        rows[i] += v.abs();
        if i != j {
            rows[j] += v.abs();
        }
    }
    rows.into_iter().fold(T::zero(), |a, b| a.max(b)) + T::one()
}

/// Full eigenvector of the numerically selected bound state together with
/// the number of eigenvalues found in the window.
#[derive(Debug, Clone)]
pub struct NumericBoundState<T: Real> {
    pub state: BoundState<T>,
    pub vector: DVector<T>,
    pub n_in_window: usize,
}

/// Bound state of emitter 0 in a composed Hamiltonian: the in-window
/// eigenstate with maximal emitter population.
pub fn bound_state_numeric<T: Real>(
    h_full: &RealSpaceHamiltonian<T>,
    window: &GapWindow<T>,
) -> Result<NumericBoundState<T>> {
    let e_pos = h_full
        .position_of_emitter(0)
        .ok_or_else(|| Error::InvalidInput("Hamiltonian has no emitter".into()))?;
    let (energy, mut psi, n_in) =
        select_by_overlap(h_full, window.lo, window.hi, e_pos).ok_or(Error::NoInGapState {
            lo: window.lo.to_f64_lossy(),
            hi: window.hi.to_f64_lossy(),
        })?;
    if psi[e_pos] < T::zero() {
        psi.neg_mut();
    }
    let contact = h_full
        .entries()
        .iter()
        .filter(|&&(i, j, _)| (i == e_pos) != (j == e_pos))
        .map(|&(i, j, _)| if i == e_pos { j } else { i })
        .filter_map(|p| match h_full.labels()[p] {
            SiteLabel::Lattice { cell, .. } => Some(cell),
            _ => None,
        })
        .min()
        .unwrap_or(0);
    let n = h_full.n_cells;
    let mut pa = vec![T::zero(); n];
    let mut pb = vec![T::zero(); n];
    for (p, l) in h_full.labels().iter().enumerate() {
        if let SiteLabel::Lattice {
            cell, sublattice, ..
        } = *l
        {
            match sublattice {
                Sublattice::A => pa[cell] = psi[p],
                Sublattice::B => pb[cell] = psi[p],
            }
        }
    }
    let state = BoundState {
        energy,
        c_e: psi[e_pos],
        j_min: -(contact as i64),
        photon_a: pa,
        photon_b: pb,
        gap_label: window.label,
        method: Method::Diagonalization,
    };
    Ok(NumericBoundState {
        state,
        vector: psi,
        n_in_window: n_in,
    })
}

/// Overlap of a photonic cloud with the zero modes of the bath with the
/// contact sites removed.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VacancyOverlap<T> {
    pub captured_weight: T,
    pub n_zero_modes: usize,
    /// `|⟨ES_i|ψ_ph⟩|² / ‖ψ_ph‖²` per zero mode.
    pub per_mode: Vec<T>,
    /// `(w_A, w_B)` of each zero mode.
    pub mode_sublattice_weights: Vec<(T, T)>,
}

/// Zero-mode threshold for the vacancy Hamiltonian, as a fraction of the
/// clean middle-gap half-width. Vacancy modes hybridize with the chain-end
/// modes across finite chains, so an absolute threshold misses them.
pub const ZERO_MODE_TOL: f64 = 1e-2;

pub fn zero_mode_tolerance<T: Real>(params: &ModelParams<T>) -> Result<T> {
    Ok(T::lit(ZERO_MODE_TOL) * gap_window(params, GapLabel::Middle)?.hi)
}

/// Projects a bound state's photonic part onto the zero-mode subspace of the
/// vacancy Hamiltonian. `bound_state` must cover cells relative to
/// `emitter_cell`; cells outside the chain are ignored.
pub fn vacancy_decomposition<T: Real>(
    params: &ModelParams<T>,
    n_cells: usize,
    vacancy_sites: &[usize],
    bound_state: &BoundState<T>,
    emitter_cell: usize,
) -> Result<VacancyOverlap<T>> {
    let spec = LatticeSpec::open(n_cells, *params);
    let h = build_hamiltonian(&spec, None, vacancy_sites)?;
    let tol = zero_mode_tolerance(params)?;
    let eig = h.eigenpairs_in(-tol, tol);
    let mut phot = DVector::zeros(h.dim());
    for (p, l) in h.labels().iter().enumerate() {
        if let SiteLabel::Lattice {
            cell, sublattice, ..
        } = *l
        {
            let j = cell as i64 - emitter_cell as i64;
            phot[p] = bound_state.amplitude(j, sublattice);
        }
    }
    let norm_sq = phot.norm_squared();
    let mut per_mode = Vec::with_capacity(eig.len());
    let mut mode_sublattice_weights = Vec::with_capacity(eig.len());
    for c in 0..eig.len() {
        let v = eig.vector(c);
        let ov = v.dot(&phot);
        per_mode.push(ov * ov / norm_sq);
        let (mut wa, mut wb) = (T::zero(), T::zero());
        for (p, l) in h.labels().iter().enumerate() {
            let w = v[p] * v[p];
            if lattice_parity::<T>(l) > T::zero() {
                wa += w;
            } else {
                wb += w;
            }
        }
        mode_sublattice_weights.push((wa, wb));
    }
    Ok(VacancyOverlap {
        captured_weight: per_mode.iter().fold(T::zero(), |a, &b| a + b),
        n_zero_modes: eig.len(),
        per_mode,
        mode_sublattice_weights,
    })
}

/// Emitter position for coupling-matrix export.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct EmitterSite {
    pub cell: i64,
    pub sublattice: Sublattice,
}

/// Bound-state-mediated couplings `J_αβ = g C(β − α) / C_e`, built from the
/// single-emitter bound state of an A-site emitter. A–B entries use the B
/// amplitudes at the signed cell distance, A–A and B–B entries the A
/// amplitudes (the two coincide for a chiral bath).
pub fn spin_coupling_matrix<T: Real>(
    bound_state: &BoundState<T>,
    g: T,
    emitters: &[EmitterSite],
) -> DMatrix<T> {
    let n = emitters.len();
    let scale = g / bound_state.c_e;
    DMatrix::from_fn(n, n, |a, b| {
        let (ea, eb) = (emitters[a], emitters[b]);
        let v = match (ea.sublattice, eb.sublattice) {
            (Sublattice::A, Sublattice::B) => {
                bound_state.amplitude(eb.cell - ea.cell, Sublattice::B)
            }
            (Sublattice::B, Sublattice::A) => {
                bound_state.amplitude(ea.cell - eb.cell, Sublattice::B)
            }
            _ => bound_state.amplitude(eb.cell - ea.cell, Sublattice::A),
        };
        v * scale
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coupling::{compose, self_energy, EmitterSpec};

    fn essh(j3p: f64, j3: f64) -> ModelParams<f64> {
        ModelParams::extended_ssh(j3p, j3)
    }

    #[test]
    fn pole_at_zero_detuning_is_zero() {
        for (a, b) in [(0.5, 0.8), (0.2661, 0.5), (2.0, 0.5)] {
            for g in [0.05, 0.3] {
                assert_eq!(
                    solve_pole(&essh(a, b), 0.0, g, GapLabel::Middle).unwrap(),
                    0.0
                );
            }
        }
    }

    #[test]
    fn weak_coupling_pole_tracks_detuning() {
        let p = essh(0.5, 0.8);
        let e = solve_pole(&p, 0.05, 1e-4, GapLabel::Middle).unwrap();
        assert!((e - 0.05).abs() < 1e-8);
        let sigma = self_energy_real(&p, e, 1e-4, DEFAULT_NK);
        assert!((e - 0.05 - sigma).abs() < 1e-10);
    }

    #[test]
    fn pole_residual_and_perturbative_hook() {
        let p = essh(0.5, 0.8);
        for (delta, gap) in [
            (0.04, GapLabel::Middle),
            (3.5, GapLabel::Upper),
            (-3.5, GapLabel::Lower),
        ] {
            let g = 0.05;
            let e = solve_pole(&p, delta, g, gap).unwrap();
            let resid = e - delta - self_energy_real(&p, e, g, DEFAULT_NK);
            assert!(resid.abs() < 1e-10);
            assert!(gap_window(&p, gap).unwrap().contains(e));
            let pert = delta + self_energy(&p, Complex::new(delta, 0.0), g, DEFAULT_NK).re;
            assert!((pert - e).abs() < 1e-4, "{pert} {e}");
        }
    }

    #[test]
    fn lower_gap_pole_matches_diagonalization() {
        let p = essh(0.5, 0.8);
        let e = solve_pole(&p, -3.5, 0.1, GapLabel::Lower).unwrap();
        let n = 600;
        let bath = build_hamiltonian(&LatticeSpec::open(n, p), None, &[]).unwrap();
        let h = compose(&bath, &[EmitterSpec::local(n, 0.1, -3.5)]).unwrap();
        let win = gap_window(&p, GapLabel::Lower).unwrap();
        let bs = bound_state_numeric(&h, &win).unwrap();
        assert!(
            (bs.state.energy - e).abs() < 1e-6,
            "{} vs {e}",
            bs.state.energy
        );
    }

    #[test]
    fn quadrature_zero_energy_is_pure_b_and_chiral() {
        let p = essh(0.5, 0.8);
        let bs = wavefunction_quadrature(&p, 0.0, 0.1, -30, 30, WAVEFUNCTION_NK).unwrap();
        assert!(bs.photon_a.iter().all(|x| x.abs() < 1e-10));
        assert!(bs.right_weight() < 1e-10);
        let p0 = essh(0.2661, 0.5);
        let bs = wavefunction_quadrature(&p0, 0.0, 0.1, -30, 30, WAVEFUNCTION_NK).unwrap();
        assert!(bs.left_weight() > 1e-3 && bs.right_weight() > 1e-3);
        assert!(matches!(
            wavefunction_quadrature(&p, 1.0, 0.1, -3, 3, 1024),
            Err(Error::EnergyInBand { .. })
        ));
    }

    fn monotone(xs: &[f64]) -> bool {
        xs.windows(2).all(|w| w[1] <= w[0] * (1.0 + 1e-12))
    }

    #[test]
    fn trivial_phase_profile_non_monotone_on_one_side() {
        let p0 = essh(0.2661, 0.5);
        let bs = wavefunction_quadrature(&p0, 0.0, 0.1, -30, 30, WAVEFUNCTION_NK).unwrap();
        let mag = |j: i64| bs.amplitude(j, Sublattice::B).abs();
        let right: Vec<f64> = (0..=20).map(mag).collect();
        let left: Vec<f64> = (1..=20).map(|j| mag(-j)).collect();
        assert_ne!(monotone(&right), monotone(&left));
    }

    #[test]
    fn residue_matches_quadrature() {
        for (a, b) in [(0.5, 0.8), (0.2661, 0.5), (2.0, 0.5), (0.5, -0.76)] {
            let p = essh(a, b);
            let (res, report) = wavefunction_residue(&p, 0.1, -30, 30).unwrap();
            let quad = wavefunction_quadrature(&p, 0.0, 0.1, -30, 30, WAVEFUNCTION_NK).unwrap();
            let (u, v) = (res.photonic_unit(), quad.photonic_unit());
            let err = u
                .iter()
                .zip(&v)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-8, "({a},{b}): {err}");
            assert_eq!(
                report.winding,
                crate::bloch::winding_number(&p, 2048).unwrap()
            );
        }
    }

    #[test]
    fn cited_root_counts() {
        let r = root_report(&essh(0.5, 0.8)).unwrap();
        assert_eq!(r.inside_count, 0);
        assert_eq!(r.winding, 2);
        let r = root_report(&essh(0.2661, 0.5)).unwrap();
        assert_eq!(r.inside_count, 2);
        assert_eq!(r.winding, 0);
        let (bs, _) = wavefunction_residue(&essh(0.5, 0.8), 0.1, 0, 20).unwrap();
        assert!(bs.photon_b.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn reciprocal_roots_are_inverses() {
        let r = root_report(&essh(0.5, 0.8)).unwrap();
        for y in &r.roots {
            let best = r
                .reciprocal_roots
                .iter()
                .map(|z| (y * z - 1.0).norm())
                .fold(f64::INFINITY, f64::min);
            assert!(best < 1e-10);
        }
    }

    #[test]
    fn degenerate_polynomials() {
        // J3' = 0: quadratic p; J3 = 0: root at the origin.
        for (a, b) in [(0.0, 0.6), (0.6, 0.0), (0.0, 2.0), (2.5, 0.0)] {
            let p = essh(a, b);
            let (res, report) = wavefunction_residue(&p, 0.1, -25, 25).unwrap();
            let quad = wavefunction_quadrature(&p, 0.0, 0.1, -25, 25, WAVEFUNCTION_NK).unwrap();
            let (u, v) = (res.photonic_unit(), quad.photonic_unit());
            let err = u
                .iter()
                .zip(&v)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            assert!(err < 1e-8, "({a},{b}): {err}");
            assert_eq!(
                report.winding,
                crate::bloch::winding_number(&p, 2048).unwrap()
            );
        }
    }

    #[test]
    fn repeated_root_residue() {
        // (y - 0.5)^2 (y - 3): residue of y^2/P at 0.5 is d/dy[y^2/(y-3)] = (y^2 - 6y)/(y-3)^2.
        let coef: [f64; 4] = [1.0, -4.0, 3.25, -0.75];
        let r = residue(&coef, Complex::new(0.5, 0.0), 2, 2);
        let expect = (0.25 - 3.0) / 6.25;
        assert!((r.re - expect).abs() < 1e-12 && r.im.abs() < 1e-12);
        let groups = group_roots(&polynomial_roots(&coef));
        assert!(groups
            .iter()
            .any(|&(c, m)| m == 2 && (c.re - 0.5).abs() < 1e-6));
    }

    #[test]
    fn unit_circle_root_rejected() {
        assert!(matches!(
            root_report(&ModelParams::new(1.0, 1.0, 0.0, 0.0)),
            Err(Error::RootOnUnitCircle { .. })
        ));
    }

    #[test]
    fn numeric_matches_quadrature_and_vacancy() {
        // The left-chiral cloud decays by ~1.07 per cell; 300 cells to the
        // left edge keep truncation below 1e-8.
        let p = essh(0.5, 0.8);
        let n = 600;
        let g = 0.1;
        let bath = build_hamiltonian(&LatticeSpec::open(n, p), None, &[]).unwrap();
        let h = compose(&bath, &[EmitterSpec::local(n, g, 0.0)]).unwrap();
        let win = gap_window(&p, GapLabel::Middle).unwrap();
        let num = bound_state_numeric(&h, &win).unwrap().state;
        assert!(num.energy.abs() < 1e-9, "{}", num.energy);
        assert!(num.right_weight() < 1e-6, "{}", num.right_weight());
        let quad =
            wavefunction_quadrature(&p, 0.0, g, num.j_min, num.j_max(), WAVEFUNCTION_NK).unwrap();
        let err = num
            .photon_b
            .iter()
            .zip(&quad.photon_b)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
        let vac = vacancy_decomposition(&p, n, &[n], &num, n / 2).unwrap();
        assert!(vac.captured_weight > 0.999, "{}", vac.captured_weight);
    }

    #[test]
    fn photonic_fraction_scales_as_g_squared() {
        let p = essh(0.5, 0.8);
        let delta = 0.05;
        let frac = |g: f64| {
            let e = solve_pole(&p, delta, g, GapLabel::Middle).unwrap();
            1.0 - emitter_population(&p, e, g, DEFAULT_NK)
        };
        let slope = (frac(0.01).ln() - frac(0.001).ln()) / (0.01f64.ln() - 0.001f64.ln());
        assert!((slope - 2.0).abs() < 0.05, "{slope}");
    }

    #[test]
    fn outer_gap_profiles_related_by_staggered_sign() {
        let p = essh(0.5, 0.8);
        let g = 0.1;
        let up = solve_pole(&p, 3.5, g, GapLabel::Upper).unwrap();
        let dn = solve_pole(&p, -3.5, g, GapLabel::Lower).unwrap();
        assert!((up + dn).abs() < 1e-10);
        let a = wavefunction_quadrature(&p, up, g, -20, 20, WAVEFUNCTION_NK).unwrap();
        let b = wavefunction_quadrature(&p, dn, g, -20, 20, WAVEFUNCTION_NK).unwrap();
        for i in 0..a.photon_a.len() {
            assert!((a.photon_a[i].abs() - b.photon_a[i].abs()).abs() < 1e-6);
            assert!((a.photon_b[i].abs() - b.photon_b[i].abs()).abs() < 1e-6);
            assert!((a.photon_a[i] + b.photon_a[i]).abs() < 1e-6);
            assert!((a.photon_b[i] - b.photon_b[i]).abs() < 1e-6);
        }
    }

    #[test]
    fn spin_couplings() {
        let p = essh(0.5, 0.8);
        let (bs, _) = wavefunction_residue(&p, 0.1, -30, 30).unwrap();
        let aa = [
            EmitterSite {
                cell: 0,
                sublattice: Sublattice::A,
            },
            EmitterSite {
                cell: 3,
                sublattice: Sublattice::A,
            },
        ];
        let m = spin_coupling_matrix(&bs, 0.1, &aa);
        assert!(m.iter().all(|&x| x == 0.0));
        let left = [
            EmitterSite {
                cell: 0,
                sublattice: Sublattice::A,
            },
            EmitterSite {
                cell: -2,
                sublattice: Sublattice::B,
            },
        ];
        let m = spin_coupling_matrix(&bs, 0.1, &left);
        assert!(m[(0, 1)].abs() > 1e-4);
        assert_eq!(m[(0, 1)], m[(1, 0)]);
        let right = [
            EmitterSite {
                cell: 0,
                sublattice: Sublattice::A,
            },
            EmitterSite {
                cell: 2,
                sublattice: Sublattice::B,
            },
        ];
        let m = spin_coupling_matrix(&bs, 0.1, &right);
        assert_eq!(m[(0, 1)], 0.0);
    }
}
