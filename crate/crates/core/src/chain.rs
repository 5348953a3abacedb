//! Finite real-space lattices: assembly, disorder, edge states and
//! localization measures.
//!
//! Site `s` of a chain with `N` cells lives in cell `s / 2`; even sites are the
//! A sublattice and odd sites the B sublattice. Hopping pattern per cell `j`:
//! `A_j–B_j` carries `J1'`, `B_j–A_{j+1}` carries `J1`, `A_j–B_{j+1}` carries
//! `J3'` and `B_j–A_{j+2}` carries `J3`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::bloch::{band_scan, ModelParams};
use crate::error::{Error, Result};
use crate::linalg::{banded_eigenpairs_in, restrict_window, sym_eigen, BandedSym, SymEigen};
use crate::scalar::Real;

/// Systems up to this dimension are diagonalized densely.
pub const DENSE_LIMIT: usize = 400;
const MAX_BANDWIDTH: usize = 48;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    Open,
    Periodic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Sublattice {
    A,
    B,
}

impl Sublattice {
    pub fn of_site(site: usize) -> Self {
        if site % 2 == 0 {
            Sublattice::A
        } else {
            Sublattice::B
        }
    }

    /// Eigenvalue of the sublattice-parity operator.
    pub fn parity(self) -> i32 {
        match self {
            Sublattice::A => 1,
            Sublattice::B => -1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(
    deny_unknown_fields,
    bound(deserialize = "T: Deserialize<'de> + Default")
)]
pub struct LatticeSpec<T> {
    pub n_cells: usize,
    pub boundary: Boundary,
    pub params: ModelParams<T>,
}

impl<T: Real> LatticeSpec<T> {
    pub fn open(n_cells: usize, params: ModelParams<T>) -> Self {
        Self {
            n_cells,
            boundary: Boundary::Open,
            params,
        }
    }

    pub fn periodic(n_cells: usize, params: ModelParams<T>) -> Self {
        Self {
            n_cells,
            boundary: Boundary::Periodic,
            params,
        }
    }

    pub fn n_sites(&self) -> usize {
        2 * self.n_cells
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DisorderKind {
    ChiralPreserving,
    ChiralBreaking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisorderSpec<T> {
    pub kind: DisorderKind,
    pub sigma: T,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SiteLabel {
    Lattice {
        site: usize,
        cell: usize,
        sublattice: Sublattice,
    },
    Emitter {
        index: usize,
    },
}

impl SiteLabel {
    pub fn lattice(site: usize) -> Self {
        SiteLabel::Lattice {
            site,
            cell: site / 2,
            sublattice: Sublattice::of_site(site),
        }
    }

    pub fn is_emitter(&self) -> bool {
        matches!(self, SiteLabel::Emitter { .. })
    }
}

/// Real symmetric single-excitation Hamiltonian.
///
/// Stored as coalesced upper-triangle triplets; [`to_dense`](Self::to_dense)
/// materializes the full matrix.
#[derive(Debug, Clone)]
pub struct RealSpaceHamiltonian<T: Real> {
    pub n_cells: usize,
    pub boundary: Boundary,
    labels: Vec<SiteLabel>,
    entries: Vec<(usize, usize, T)>,
}

impl<T: Real> RealSpaceHamiltonian<T> {
    pub(crate) fn from_parts(
        n_cells: usize,
        boundary: Boundary,
        labels: Vec<SiteLabel>,
        raw: Vec<(usize, usize, T)>,
    ) -> Self {
        let mut entries: Vec<(usize, usize, T)> = raw
            .into_iter()
            .map(|(i, j, v)| if i <= j { (i, j, v) } else { (j, i, v) })
            .collect();
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut merged: Vec<(usize, usize, T)> = Vec::with_capacity(entries.len());
        for (i, j, v) in entries {
            match merged.last_mut() {
                Some(last) if last.0 == i && last.1 == j => last.2 += v,
                _ => merged.push((i, j, v)),
            }
        }
        Self {
            n_cells,
            boundary,
            labels,
            entries: merged,
        }
    }

    pub fn dim(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[SiteLabel] {
        &self.labels
    }

    /// Upper-triangle entries `(i, j, value)` with `i <= j`.
    pub fn entries(&self) -> &[(usize, usize, T)] {
        &self.entries
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let key = if i <= j { (i, j) } else { (j, i) };
        self.entries
            .binary_search_by(|e| (e.0, e.1).cmp(&key))
            .map(|idx| self.entries[idx].2)
            .unwrap_or_else(|_| T::zero())
    }

    pub fn to_dense(&self) -> DMatrix<T> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for &(i, j, v) in &self.entries {
            m[(i, j)] += v;
            if i != j {
                m[(j, i)] += v;
            }
        }
        m
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.dim()];
        for &(i, j, v) in &self.entries {
            y[i] += v * x[j];
            if i != j {
                y[j] += v * x[i];
            }
        }
        y
    }

    /// Matrix position of lattice site `site`, if it was not removed.
    pub fn position_of_site(&self, site: usize) -> Option<usize> {
        self.labels.iter().position(|l| match l {
            SiteLabel::Lattice { site: s, .. } => *s == site,
            _ => false,
        })
    }

    pub fn position_of_emitter(&self, index: usize) -> Option<usize> {
        self.labels.iter().position(|l| match l {
            SiteLabel::Emitter { index: e } => *e == index,
            _ => false,
        })
    }

    pub fn n_emitters(&self) -> usize {
        self.labels.iter().filter(|l| l.is_emitter()).count()
    }

    /// Frobenius norm of `{H, Γ}` restricted to the lattice sites.
    pub fn chirality_defect(&self) -> T {
        let mut acc = T::zero();
        for &(i, j, v) in &self.entries {
            if let (
                SiteLabel::Lattice { sublattice: a, .. },
                SiteLabel::Lattice { sublattice: b, .. },
            ) = (self.labels[i], self.labels[j])
            {
                if a == b {
                    let term = T::lit(2.0) * v;
                    let mult = if i == j { T::one() } else { T::lit(2.0) };
                    acc += mult * term * term;
                }
            }
        }
        acc.sqrt()
    }

    /// Ordering that keeps every emitter next to its contacts, so the matrix
    /// stays narrow-banded.
    fn band_order(&self) -> Vec<usize> {
        let n = self.dim();
        let mut key = vec![0.0f64; n];
        let mut sum = vec![0.0f64; n];
        let mut count = vec![0usize; n];
        for &(i, j, _) in &self.entries {
            if i == j {
                continue;
            }
            for (e, other) in [(i, j), (j, i)] {
                if self.labels[e].is_emitter() && !self.labels[other].is_emitter() {
                    sum[e] += other as f64;
                    count[e] += 1;
                }
            }
        }
        for p in 0..n {
            key[p] = if self.labels[p].is_emitter() {
                if count[p] > 0 {
                    2.0 * (sum[p] / count[p] as f64).round() + 1.0
                } else {
                    2.0 * n as f64 + p as f64
                }
            } else {
                2.0 * p as f64
            };
        }
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| key[a].partial_cmp(&key[b]).unwrap().then(a.cmp(&b)));
        order
    }

    /// Eigenpairs with eigenvalue in `(lo, hi)`, sorted ascending.
    ///
    /// Small or irregular systems are diagonalized densely; large chains use
    /// the banded windowed solver.
    pub fn eigenpairs_in(&self, lo: T, hi: T) -> SymEigen<T> {
        let n = self.dim();
        if n > DENSE_LIMIT {
            let order = self.band_order();
            let mut inverse = vec![0usize; n];
            for (new, &old) in order.iter().enumerate() {
                inverse[old] = new;
            }
            let permuted: Vec<(usize, usize, T)> = self
                .entries
                .iter()
                .map(|&(i, j, v)| (inverse[i], inverse[j], v))
                .collect();
            let bandwidth = permuted
                .iter()
                .map(|&(i, j, _)| i.abs_diff(j))
                .max()
                .unwrap_or(0);
            if bandwidth <= MAX_BANDWIDTH {
                let band = BandedSym::from_triplets(n, bandwidth.max(1), &permuted);
                let eig = banded_eigenpairs_in(&band, lo, hi);
                let mut vectors = DMatrix::zeros(n, eig.len());
                for c in 0..eig.len() {
                    for old in 0..n {
                        vectors[(old, c)] = eig.vectors[(inverse[old], c)];
                    }
                }
                return SymEigen {
                    values: eig.values,
                    vectors,
                };
            }
        }
        restrict_window(&sym_eigen(&self.to_dense()), lo, hi)
    }

    /// Full spectrum, dense.
    pub fn eigen(&self) -> SymEigen<T> {
        sym_eigen(&self.to_dense())
    }
}

fn gaussian_draws(sigma: f64, seed: u64) -> impl FnMut() -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma.abs()).expect("finite sigma");
    move || normal.sample(&mut rng)
}

/// Disorder terms `(i, j, ε)` in draw order.
pub fn disorder_terms<T: Real>(
    n_sites: usize,
    disorder: &DisorderSpec<T>,
) -> Vec<(usize, usize, T)> {
    let sigma = disorder.sigma.to_f64_lossy();
    let mut out = Vec::new();
    if sigma == 0.0 {
        return out;
    }
    let mut draw = gaussian_draws(sigma, disorder.seed);
    let (first, second) = match disorder.kind {
        DisorderKind::ChiralPreserving => (1, 3),
        DisorderKind::ChiralBreaking => (0, 2),
    };
    for i in 0..n_sites {
        for d in [first, second] {
            if i + d < n_sites {
                out.push((i, i + d, T::lit(draw())));
            }
        }
    }
    out
}

/// Lattice hopping terms of the clean chain.
fn lattice_terms<T: Real>(spec: &LatticeSpec<T>) -> Vec<(usize, usize, T)> {
    let p = &spec.params;
    let n = spec.n_sites();
    let mut out = Vec::with_capacity(3 * n);
    let mut bond = |i: usize, d: usize, v: T| {
        let j = i + d;
        if j < n {
            out.push((i, j, v));
        } else if spec.boundary == Boundary::Periodic {
            out.push((i, j % n, v));
        }
    };
    for c in 0..spec.n_cells {
        let a = 2 * c;
        let b = a + 1;
        bond(a, 1, p.j1p);
        bond(b, 1, p.j1);
        bond(a, 3, p.j3p);
        bond(b, 3, p.j3);
    }
    for c in 0..spec.n_cells {
        out.push((2 * c, 2 * c, p.omega_delta));
        out.push((2 * c + 1, 2 * c + 1, -p.omega_delta));
    }
    out
}

/// Assembles the finite-chain Hamiltonian, optionally disordered and with
/// sites removed.
pub fn build_hamiltonian<T: Real>(
    spec: &LatticeSpec<T>,
    disorder: Option<&DisorderSpec<T>>,
    vacancies: &[usize],
) -> Result<RealSpaceHamiltonian<T>> {
    if spec.n_cells < 4 {
        return Err(Error::SizeTooSmall {
            n_cells: spec.n_cells,
            min: 4,
        });
    }
    let n = spec.n_sites();
    if let Some(&bad) = vacancies.iter().find(|&&s| s >= n) {
        return Err(Error::InvalidSite {
            site: bad,
            sites: n,
        });
    }
    let mut raw = lattice_terms(spec);
    if let Some(d) = disorder {
        if spec.boundary == Boundary::Periodic {
            return Err(Error::InvalidInput(
                "disorder is only supported with open boundaries".into(),
            ));
        }
        if !d.sigma.is_finite() || d.sigma < T::zero() {
            return Err(Error::InvalidInput(
                "disorder sigma must be finite and non-negative".into(),
            ));
        }
        raw.extend(disorder_terms(n, d));
    }
    let mut removed = vec![false; n];
    for &s in vacancies {
        removed[s] = true;
    }
    let mut position = vec![usize::MAX; n];
    let mut labels = Vec::with_capacity(n);
    for s in 0..n {
        if !removed[s] {
            position[s] = labels.len();
            labels.push(SiteLabel::lattice(s));
        }
    }
    let kept = raw
        .into_iter()
        .filter(|&(i, j, _)| !removed[i] && !removed[j])
        .map(|(i, j, v)| (position[i], position[j], v))
        .collect();
    Ok(RealSpaceHamiltonian::from_parts(
        spec.n_cells,
        spec.boundary,
        labels,
        kept,
    ))
}

/// In-gap eigenpairs of an open chain.
#[derive(Debug, Clone)]
pub struct EdgeStateSet<T: Real> {
    pub energies: Vec<T>,
    pub states: Vec<DVector<T>>,
    /// `(w_A, w_B)` per state.
    pub sublattice_weights: Vec<(T, T)>,
    /// `(w_left, w_right)` per state, split at the middle cell.
    pub side_weights: Vec<(T, T)>,
}

impl<T: Real> EdgeStateSet<T> {
    pub fn len(&self) -> usize {
        self.energies.len()
    }

    pub fn is_empty(&self) -> bool {
        self.energies.is_empty()
    }

    fn from_states(h: &RealSpaceHamiltonian<T>, energies: Vec<T>, states: Vec<DVector<T>>) -> Self {
        let half = h.n_cells / 2;
        let mut sublattice_weights = Vec::with_capacity(states.len());
        let mut side_weights = Vec::with_capacity(states.len());
        for psi in &states {
            let (mut wa, mut wb, mut wl, mut wr) = (T::zero(), T::zero(), T::zero(), T::zero());
            for (p, label) in h.labels().iter().enumerate() {
                if let SiteLabel::Lattice {
                    cell, sublattice, ..
                } = *label
                {
                    let w = psi[p] * psi[p];
                    match sublattice {
                        Sublattice::A => wa += w,
                        Sublattice::B => wb += w,
                    }
                    if cell < half {
                        wl += w;
                    } else {
                        wr += w;
                    }
                }
            }
            sublattice_weights.push((wa, wb));
            side_weights.push((wl, wr));
        }
        Self {
            energies,
            states,
            sublattice_weights,
            side_weights,
        }
    }

    /// Rotates the in-gap subspace so each state has definite sublattice
    /// parity where chiral symmetry allows it. Energies become expectation
    /// values.
    pub fn sublattice_polarized(&self, h: &RealSpaceHamiltonian<T>) -> Self {
        let m = self.len();
        if m == 0 {
            return self.clone();
        }
        let parity: Vec<T> = h
            .labels()
            .iter()
            .map(|l| match l {
                SiteLabel::Lattice { sublattice, .. } => T::lit(sublattice.parity() as f64),
                SiteLabel::Emitter { .. } => T::zero(),
            })
            .collect();
        let mut g = DMatrix::zeros(m, m);
        for a in 0..m {
            for b in 0..m {
                g[(a, b)] = self.states[a]
                    .iter()
                    .zip(self.states[b].iter())
                    .zip(&parity)
                    .fold(T::zero(), |acc, ((&x, &y), &p)| acc + x * y * p);
            }
        }
        let rot = sym_eigen(&g);
        let mut states = Vec::with_capacity(m);
        let mut energies = Vec::with_capacity(m);
        for c in (0..m).rev() {
            let mut psi = DVector::zeros(h.dim());
            for a in 0..m {
                psi += &self.states[a] * rot.vectors[(a, c)];
            }
            let hpsi = h.matvec(psi.as_slice());
            energies.push(
                psi.iter()
                    .zip(&hpsi)
                    .fold(T::zero(), |acc, (&x, &y)| acc + x * y),
            );
            states.push(psi);
        }
        Self::from_states(h, energies, states)
    }
}

/// Default in-gap window: `0.45 E_g` of the clean model.
pub fn default_gap_window<T: Real>(params: &ModelParams<T>) -> Result<T> {
    let scan = band_scan(params, 4096)?;
    Ok(T::lit(0.45) * scan.gap_width)
}

/// All eigenpairs with `|ε| < gap_window`.
pub fn edge_states<T: Real>(h: &RealSpaceHamiltonian<T>, gap_window: T) -> EdgeStateSet<T> {
    let eig = h.eigenpairs_in(-gap_window, gap_window);
    let states = (0..eig.len()).map(|i| eig.vector(i)).collect();
    EdgeStateSet::from_states(h, eig.values, states)
}

/// Inverse participation ratio `1 / Σ|c|^4` of a normalized vector.
pub fn ipr<T: Real>(state: &[T]) -> Result<T> {
    let norm_sq = state.iter().fold(T::zero(), |a, &x| a + x * x);
    if (norm_sq - T::one()).abs()
        > T::lit(1e-10).max(T::eps() * T::from_count(state.len()) * T::lit(4.0))
    {
        return Err(Error::NotNormalized {
            norm_sq: norm_sq.to_f64_lossy(),
        });
    }
    let quartic = state.iter().fold(T::zero(), |a, &x| a + x * x * x * x);
    Ok(T::one() / quartic)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellWeight<T> {
    pub cell: usize,
    pub a: T,
    pub b: T,
}

/// Photonic probability per cell and sublattice, with summaries relative to a
/// reference cell. Fractions are normalized to the photonic weight; any
/// emitter amplitude is reported separately.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocalizationProfile<T> {
    pub cells: Vec<CellWeight<T>>,
    pub fraction_a: T,
    pub fraction_b: T,
    pub dominant: Sublattice,
    pub dominant_fraction: T,
    pub reference_cell: usize,
    pub left_fraction: T,
    pub center_fraction: T,
    pub right_fraction: T,
    pub emitter_weight: T,
}

pub fn localization_profile<T: Real>(
    h: &RealSpaceHamiltonian<T>,
    state: &[T],
    reference_cell: usize,
) -> LocalizationProfile<T> {
    let mut cells: Vec<CellWeight<T>> = (0..h.n_cells)
        .map(|cell| CellWeight {
            cell,
            a: T::zero(),
            b: T::zero(),
        })
        .collect();
    let mut emitter_weight = T::zero();
    for (p, label) in h.labels().iter().enumerate() {
        let w = state[p] * state[p];
        match *label {
            SiteLabel::Lattice {
                cell, sublattice, ..
            } => match sublattice {
                Sublattice::A => cells[cell].a += w,
                Sublattice::B => cells[cell].b += w,
            },
            SiteLabel::Emitter { .. } => emitter_weight += w,
        }
    }
    summarize(cells, reference_cell, emitter_weight)
}

pub(crate) fn summarize<T: Real>(
    cells: Vec<CellWeight<T>>,
    reference_cell: usize,
    emitter_weight: T,
) -> LocalizationProfile<T> {
    let (mut wa, mut wb, mut left, mut center, mut right) =
        (T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
    for c in &cells {
        wa += c.a;
        wb += c.b;
        let w = c.a + c.b;
        match c.cell.cmp(&reference_cell) {
            std::cmp::Ordering::Less => left += w,
            std::cmp::Ordering::Equal => center += w,
            std::cmp::Ordering::Greater => right += w,
        }
    }
    let total = wa + wb;
    let scale = if total > T::zero() {
        T::one() / total
    } else {
        T::zero()
    };
    let (fa, fb) = (wa * scale, wb * scale);
    let (dominant, dominant_fraction) = if fa >= fb {
        (Sublattice::A, fa)
    } else {
        (Sublattice::B, fb)
    };
    LocalizationProfile {
        cells,
        fraction_a: fa,
        fraction_b: fb,
        dominant,
        dominant_fraction,
        reference_cell,
        left_fraction: left * scale,
        center_fraction: center * scale,
        right_fraction: right * scale,
        emitter_weight,
    }
}
