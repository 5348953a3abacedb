//! Emitter–bath composition and single-emitter self-energy.

use num_complex::Complex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bloch::ModelParams;
use crate::chain::{RealSpaceHamiltonian, SiteLabel, Sublattice};
use crate::error::{Error, Result};
use crate::scalar::{k_grid, Real};

pub const DEFAULT_ETA: f64 = 1e-3;
pub const DEFAULT_NK: usize = 1 << 16;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Contact<T> {
    pub site: usize,
    pub g: T,
}

/// Emitter detuned by `delta` from the bare cavity frequency, coupled to one
/// (local) or several (giant atom) lattice sites.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EmitterSpec<T> {
    pub delta: T,
    pub contacts: Vec<Contact<T>>,
}

impl<T: Real> EmitterSpec<T> {
    pub fn local(site: usize, g: T, delta: T) -> Self {
        Self {
            delta,
            contacts: vec![Contact { site, g }],
        }
    }

    pub fn giant(sites: &[usize], g: T, delta: T) -> Self {
        Self {
            delta,
            contacts: sites.iter().map(|&site| Contact { site, g }).collect(),
        }
    }

    pub fn is_local(&self) -> bool {
        self.contacts.len() == 1
    }

    pub fn sites(&self) -> Vec<usize> {
        self.contacts.iter().map(|c| c.site).collect()
    }
}

/// Appends emitters to a bath Hamiltonian. Emitter `α` gets matrix position
/// `bath.dim() + α`.
pub fn compose<T: Real>(
    bath: &RealSpaceHamiltonian<T>,
    emitters: &[EmitterSpec<T>],
) -> Result<RealSpaceHamiltonian<T>> {
    let n_sites = 2 * bath.n_cells;
    let mut labels = bath.labels().to_vec();
    let mut entries = bath.entries().to_vec();
    let mut site_pos = vec![usize::MAX; n_sites];
    for (p, l) in bath.labels().iter().enumerate() {
        if let SiteLabel::Lattice { site, .. } = *l {
            site_pos[site] = p;
        }
    }
    let base = labels.len();
    for (alpha, em) in emitters.iter().enumerate() {
        if em.contacts.is_empty() {
            return Err(Error::InvalidInput(format!(
                "emitter {alpha} has no contacts"
            )));
        }
        let e = base + alpha;
        labels.push(SiteLabel::Emitter { index: alpha });
        entries.push((e, e, em.delta));
        for c in &em.contacts {
            let p = site_pos.get(c.site).copied().unwrap_or(usize::MAX);
            if p == usize::MAX {
                return Err(Error::InvalidSite {
                    site: c.site,
                    sites: n_sites,
                });
            }
            entries.push((p, e, c.g));
        }
    }
    Ok(RealSpaceHamiltonian::from_parts(
        bath.n_cells,
        bath.boundary,
        labels,
        entries,
    ))
}

/// Self-energy of an emitter coupled with strength `g` to a single site of
/// the given sublattice of an infinite chain,
/// `Σ(z) = g² ⟨(z ± ω_δ)/(z² − ω²(k))⟩_k`, averaged over `n_k` uniform nodes.
pub fn self_energy_on<T: Real>(
    params: &ModelParams<T>,
    sublattice: Sublattice,
    z: Complex<T>,
    g: T,
    n_k: usize,
) -> Complex<T> {
    let shift = match sublattice {
        Sublattice::A => params.omega_delta,
        Sublattice::B => -params.omega_delta,
    };
    let num = z + Complex::from(shift);
    let z2 = z * z;
    let mut acc = Complex::new(T::zero(), T::zero());
    for k in k_grid(n_k, T::zero()) {
        let h = params.offdiag(k);
        let w2 = h.norm_sqr() + params.omega_delta * params.omega_delta;
        acc += Complex::from(T::one()) / (z2 - Complex::from(w2));
    }
    num * acc * (g * g / T::from_count(n_k))
}

/// A-site self-energy.
pub fn self_energy<T: Real>(
    params: &ModelParams<T>,
    z: Complex<T>,
    g: T,
    n_k: usize,
) -> Complex<T> {
    self_energy_on(params, Sublattice::A, z, g, n_k)
}

/// Lamb shift and decay rate on a grid of detunings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelfEnergyCurve<T> {
    pub delta: Vec<T>,
    pub lamb_shift: Vec<T>,
    pub decay_rate: Vec<T>,
    pub eta: T,
    pub g: T,
}

impl<T: Real> SelfEnergyCurve<T> {
    /// Detunings where the decay rate has a strict local maximum.
    pub fn decay_peaks(&self) -> Vec<T> {
        let r = &self.decay_rate;
        (1..r.len().saturating_sub(1))
            .filter(|&i| r[i] > r[i - 1] && r[i] >= r[i + 1])
            .map(|i| self.delta[i])
            .collect()
    }
}

/// `δω(Δ) = Re Σ(Δ + iη)`, `Γ(Δ) = −2 Im Σ(Δ + iη)`.
pub fn lamb_and_gamma<T: Real>(
    params: &ModelParams<T>,
    delta_grid: &[T],
    g: T,
    eta: T,
    n_k: usize,
) -> Result<SelfEnergyCurve<T>> {
    if !(eta > T::zero()) {
        return Err(Error::InvalidInput("eta must be positive".into()));
    }
    if n_k == 0 {
        return Err(Error::InvalidInput("n_k must be positive".into()));
    }
    let values: Vec<Complex<T>> = delta_grid
        .par_iter()
        .map(|&d| self_energy(params, Complex::new(d, eta), g, n_k))
        .collect();
    Ok(SelfEnergyCurve {
        delta: delta_grid.to_vec(),
        lamb_shift: values.iter().map(|s| s.re).collect(),
        decay_rate: values.iter().map(|s| -T::lit(2.0) * s.im).collect(),
        eta,
        g,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bloch::band_scan;
    use crate::chain::{build_hamiltonian, LatticeSpec};
    use nalgebra::Matrix2;

    fn c(re: f64, im: f64) -> Complex<f64> {
        Complex::new(re, im)
    }

    #[test]
    fn compose_shapes() {
        let p: ModelParams<f64> = ModelParams::extended_ssh(0.5, 0.8);
        let bath = build_hamiltonian(&LatticeSpec::open(8, p), None, &[]).unwrap();
        let h = compose(&bath, &[EmitterSpec::local(4, 0.0, 0.37)]).unwrap();
        assert_eq!(h.dim(), 17);
        let eig = h.eigen();
        assert!(eig.values.iter().any(|&v| (v - 0.37).abs() < 1e-14));

        let h = compose(&bath, &[EmitterSpec::giant(&[0, 1], 0.2, 0.0)]).unwrap();
        let row: Vec<f64> = (0..16)
            .map(|s| h.get(16, s))
            .filter(|&v| v != 0.0)
            .collect();
        assert_eq!(row, vec![0.2, 0.2]);

        let two = [
            EmitterSpec::local(0, 0.1, 0.0),
            EmitterSpec::local(10, 0.1, 0.0),
        ];
        let h = compose(&bath, &two).unwrap();
        assert_eq!(h.dim(), 18);
        assert_eq!(h.get(0, 16), 0.1);
        assert_eq!(h.get(10, 17), 0.1);
        assert_eq!(h.n_emitters(), 2);

        assert!(matches!(
            compose(&bath, &[EmitterSpec::local(16, 0.1, 0.0)]),
            Err(Error::InvalidSite { site: 16, .. })
        ));
        let vac = build_hamiltonian(&LatticeSpec::open(8, p), None, &[4]).unwrap();
        assert!(compose(&vac, &[EmitterSpec::local(4, 0.1, 0.0)]).is_err());
    }

    #[test]
    fn zero_and_odd_in_gap() {
        let p: ModelParams<f64> = ModelParams::extended_ssh(0.5, 0.8);
        assert_eq!(self_energy(&p, c(0.0, 0.0), 0.3, 4096), c(0.0, 0.0));
        for z in [0.01, 0.05, 0.09] {
            let a = self_energy(&p, c(z, 0.0), 0.3, 4096);
            let b = self_energy(&p, c(-z, 0.0), 0.3, 4096);
            assert!((a + b).norm() < 1e-14);
            assert!(a.im.abs() < 1e-14);
        }
    }

    #[test]
    fn matches_periodic_chain_eigenmode_sum() {
        // Same k-grid as the quadrature, so agreement is exact up to rounding.
        let p: ModelParams<f64> = ModelParams::extended_ssh(0.5, 0.8);
        let n = 64;
        let h = build_hamiltonian(&LatticeSpec::periodic(n, p), None, &[]).unwrap();
        let eig = h.eigen();
        for z in [c(0.05, 0.0), c(1.7, 0.01), c(-3.5, 0.0)] {
            let g = 0.2;
            let mut s = c(0.0, 0.0);
            for i in 0..eig.len() {
                let w = eig.vectors[(0, i)].powi(2);
                s += c(w, 0.0) / (z - eig.values[i]);
            }
            s *= g * g;
            let q = self_energy(&p, z, g, n);
            assert!((s - q).norm() < 1e-12, "{s} vs {q}");
        }
    }

    #[test]
    fn bloch_mode_sum_converges_to_integral() {
        let p: ModelParams<f64> = ModelParams::extended_ssh(0.5, 0.8);
        let g = 0.3;
        for z in [c(0.5, 1e-2), c(2.0, 1e-2), c(0.05, 1e-2), c(3.6, 1e-2)] {
            let n = 4096;
            let mut s = c(0.0, 0.0);
            for m in 0..n {
                let k = 2.0 * std::f64::consts::PI * m as f64 / n as f64;
                let h = p.offdiag(k);
                // Gauge away the phase of h: same spectrum and site weights.
                let herm: Matrix2<f64> = Matrix2::new(0.0, h.norm(), h.norm(), 0.0);
                let eig = herm.symmetric_eigen();
                for i in 0..2 {
                    let w = eig.eigenvectors[(0, i)].powi(2);
                    s += c(w, 0.0) / (z - eig.eigenvalues[i]);
                }
            }
            s *= g * g / n as f64;
            let q = self_energy(&p, z, g, DEFAULT_NK);
            assert!((s - q).norm() < 1e-6, "z={z}: {s} vs {q}");
        }
    }

    #[test]
    fn decay_is_nonnegative_and_symmetric() {
        let p: ModelParams<f64> = ModelParams::extended_ssh(0.5, 0.8);
        let grid: Vec<f64> = (0..401).map(|i| -4.0 + 0.02 * i as f64).collect();
        let curve = lamb_and_gamma(&p, &grid, 0.2, 1e-3, DEFAULT_NK).unwrap();
        assert!(curve.decay_rate.iter().all(|&g| g >= -1e-10));
        let n = grid.len();
        for i in 0..n {
            let j = n - 1 - i;
            assert!((curve.lamb_shift[i] + curve.lamb_shift[j]).abs() < 1e-8);
            assert!((curve.decay_rate[i] - curve.decay_rate[j]).abs() < 1e-8);
        }
        let mid = grid.iter().position(|&d| d.abs() < 1e-12).unwrap();
        assert!(curve.decay_rate[mid] < 1e-3);
        assert!(lamb_and_gamma(&p, &grid, 0.2, 0.0, 16).is_err());
    }

    #[test]
    fn lamb_shift_grows_toward_upper_edge() {
        let p: ModelParams<f64> = ModelParams::new(1.0, 1.0, 0.0, 0.3);
        let top = band_scan(&p, 4096).unwrap().band_max;
        let grid: Vec<f64> = [0.3, 0.1, 0.03, 0.01].iter().map(|d| top + d).collect();
        let curve = lamb_and_gamma(&p, &grid, 0.5, 1e-6, DEFAULT_NK).unwrap();
        for w in curve.lamb_shift.windows(2) {
            assert!(w[0] > 0.0 && w[1] > w[0]);
        }
    }

    #[test]
    fn extra_decay_peak_at_interior_van_hove() {
        let p: ModelParams<f64> = ModelParams::new(1.0, 1.0, 2.0, 4.0);
        let grid: Vec<f64> = (0..601).map(|i| 4.0 + 0.005 * i as f64).collect();
        let curve = lamb_and_gamma(&p, &grid, 0.1, 1e-3, DEFAULT_NK).unwrap();
        let peaks = curve.decay_peaks();
        assert!(peaks.iter().any(|&d| (d - 5.03).abs() < 0.05), "{peaks:?}");

        let p: ModelParams<f64> = ModelParams::new(1.0, 1.0, 0.0, 0.3);
        let scan = band_scan(&p, 4096).unwrap();
        let grid: Vec<f64> = (1..200)
            .map(|i| scan.band_min + (scan.band_max - scan.band_min) * i as f64 / 200.0)
            .collect();
        let curve = lamb_and_gamma(&p, &grid, 0.1, 1e-3, DEFAULT_NK).unwrap();
        assert!(curve.decay_peaks().is_empty());
    }

    #[test]
    fn eta_halving_converges_mid_band() {
        let p: ModelParams<f64> = ModelParams::extended_ssh(0.5, 0.8);
        let d = [1.2];
        let a = lamb_and_gamma(&p, &d, 0.2, 1e-3, DEFAULT_NK)
            .unwrap()
            .decay_rate[0];
        let b = lamb_and_gamma(&p, &d, 0.2, 5e-4, DEFAULT_NK)
            .unwrap()
            .decay_rate[0];
        assert!(((a - b) / a).abs() < 0.01, "{a} {b}");
    }

    #[test]
    fn staggered_sublattices_differ_by_sign_of_shift() {
        let p: ModelParams<f64> = ModelParams::staggered(1.0, 0.1);
        let z = c(0.0, 0.0);
        let a = self_energy_on(&p, Sublattice::A, z, 0.2, 4096);
        let b = self_energy_on(&p, Sublattice::B, z, 0.2, 4096);
        assert!((a + b).norm() < 1e-14);
        assert!(a.re < 0.0);
    }
}
