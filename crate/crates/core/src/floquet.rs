//! Drive schedules that synthesize the chain hoppings in a cavity array
//! with parametrically modulated couplers.
//!
//! Six main cavities `1…6` share one auxiliary resonator. Their frequencies
//! climb the ladder `0, δ, δ+δ₁, 2δ+δ₁, 2δ+δ₁+δ₂, 3δ+δ₁+δ₂` (relative to
//! cavity 1). The coupler carries six tones; a tone pair `(i, j)` activates
//! the hopping between cavities `α, β` when `Ω_i + Ω_j = ω_α − ω_β`.
//!
//! Hopping assignment, with cavity 1 on a B site of the chain:
//! `(1,2), (3,4), (5,6)` carry `J₁`; `(2,3), (4,5)` carry `J₁′`;
//! `(1,4), (3,6)` carry `J₃`; `(2,5)` carries `J₃′`.

use std::fmt;

use nalgebra::RealField;
use num_rational::Ratio;
use num_traits::{FromPrimitive, Num, Signed};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bloch::ModelParams;
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Scalars the frequency algebra runs on: floats and exact rationals.
pub trait ToneScalar: Num + Signed + PartialOrd + Copy + FromPrimitive + fmt::Debug {}

impl<T: Num + Signed + PartialOrd + Copy + FromPrimitive + fmt::Debug> ToneScalar for T {}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrequencyLadder<T> {
    pub delta: T,
    pub delta1: T,
    pub delta2: T,
    pub omega_bar: T,
    pub omega_aux: T,
}

impl<T: ToneScalar> FrequencyLadder<T> {
    /// `ω_α − ω_1` for `α = 1…6`.
    pub fn cavity_offsets(&self) -> [T; 6] {
        cavity_forms().map(|f| f.eval(self))
    }

    /// Absolute cavity frequencies with mean `ω̄`.
    pub fn cavity_frequencies(&self) -> [T; 6] {
        let off = self.cavity_offsets();
        let six = T::from_i64(6).unwrap();
        let mean = off.iter().fold(T::zero(), |a, &b| a + b) / six;
        off.map(|o| self.omega_bar + o - mean)
    }
}

/// `c₀ δ + c₁ δ₁ + c₂ δ₂` with rational coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct LinearForm(pub [Ratio<i64>; 3]);

impl LinearForm {
    pub fn new(num: [i64; 3], den: i64) -> Self {
        Self(num.map(|n| Ratio::new(n, den)))
    }

    pub fn eval<T: ToneScalar>(&self, ladder: &FrequencyLadder<T>) -> T {
        let c =
            |r: &Ratio<i64>| T::from_i64(*r.numer()).unwrap() / T::from_i64(*r.denom()).unwrap();
        c(&self.0[0]) * ladder.delta + c(&self.0[1]) * ladder.delta1 + c(&self.0[2]) * ladder.delta2
    }

    pub fn add(&self, o: &Self) -> Self {
        Self([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }

    pub fn sub(&self, o: &Self) -> Self {
        Self([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }

    pub fn scale(&self, k: i64) -> Self {
        Self(self.0.map(|c| c * k))
    }

    pub fn neg(&self) -> Self {
        self.scale(-1)
    }
}

impl fmt::Display for LinearForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let den = self
            .0
            .iter()
            .fold(1i64, |a, c| num_integer_lcm(a, *c.denom()));
        let names = ["δ", "δ1", "δ2"];
        let mut s = String::new();
        for (c, name) in self.0.iter().zip(names) {
            let n = (c * den).to_integer();
            if n == 0 {
                continue;
            }
            let sign = if n < 0 {
                "-"
            } else if s.is_empty() {
                ""
            } else {
                "+"
            };
            let mag = if n.abs() == 1 {
                String::new()
            } else {
                n.abs().to_string()
            };
            s.push_str(&format!("{sign}{mag}{name}"));
        }
        if s.is_empty() {
            s.push('0');
        }
        if den == 1 {
            write!(f, "{s}")
        } else {
            write!(f, "({s})/{den}")
        }
    }
}

fn num_integer_lcm(a: i64, b: i64) -> i64 {
    fn gcd(a: i64, b: i64) -> i64 {
        if b == 0 {
            a.abs()
        } else {
            gcd(b, a % b)
        }
    }
    a / gcd(a, b) * b
}

pub fn cavity_forms() -> [LinearForm; 6] {
    [
        LinearForm::new([0, 0, 0], 1),
        LinearForm::new([1, 0, 0], 1),
        LinearForm::new([1, 1, 0], 1),
        LinearForm::new([2, 1, 0], 1),
        LinearForm::new([2, 1, 1], 1),
        LinearForm::new([3, 1, 1], 1),
    ]
}

/// Unique solution of the six resonance conditions.
pub fn tone_forms() -> [LinearForm; 6] {
    [
        LinearForm::new([1, 2, 0], 2),
        LinearForm::new([3, 0, 0], 2),
        LinearForm::new([1, 0, 2], 2),
        LinearForm::new([1, 1, -1], 2),
        LinearForm::new([1, -1, 1], 2),
        LinearForm::new([-1, 1, 1], 2),
    ]
}

/// Tone frequencies without feasibility checks.
pub fn tone_frequencies<T: ToneScalar>(ladder: &FrequencyLadder<T>) -> [T; 6] {
    tone_forms().map(|f| f.eval(ladder))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Neighbour {
    First,
    Second,
    Third,
}

/// `Δ_{αβ} = ω_α − ω_β` for a cavity pair (1-based, `α > β`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detuning {
    pub alpha: usize,
    pub beta: usize,
    pub order: Neighbour,
    pub form: LinearForm,
}

pub fn detunings() -> Vec<Detuning> {
    let cav = cavity_forms();
    let mut out = Vec::new();
    for (sep, order) in [
        (1, Neighbour::First),
        (2, Neighbour::Second),
        (3, Neighbour::Third),
    ] {
        for beta in 1..=6 - sep {
            let alpha = beta + sep;
            out.push(Detuning {
                alpha,
                beta,
                order,
                form: cav[alpha - 1].sub(&cav[beta - 1]),
            });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CombinationKind {
    Sum,
    /// `Ω_i − Ω_j`, `i < j`.
    Difference,
    /// `2Ω_i`.
    Double,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Combination {
    /// 1-based tone indices.
    pub i: usize,
    pub j: usize,
    pub kind: CombinationKind,
    pub form: LinearForm,
}

/// The 30 sums and differences `Ω_i ± Ω_j` (`i < j`) followed by the six
/// doubles `2Ω_i`.
pub fn combination_table() -> Vec<Combination> {
    let t = tone_forms();
    let mut out = Vec::with_capacity(36);
    for i in 0..6 {
        for j in i + 1..6 {
            out.push(Combination {
                i: i + 1,
                j: j + 1,
                kind: CombinationKind::Sum,
                form: t[i].add(&t[j]),
            });
            out.push(Combination {
                i: i + 1,
                j: j + 1,
                kind: CombinationKind::Difference,
                form: t[i].sub(&t[j]),
            });
        }
    }
    for i in 0..6 {
        out.push(Combination {
            i: i + 1,
            j: i + 1,
            kind: CombinationKind::Double,
            form: t[i].scale(2),
        });
    }
    out
}

/// Intended tone pairs and the cavity pairs `(α, β)` each one activates.
pub fn intended_resonances() -> Vec<((usize, usize), Vec<(usize, usize)>)> {
    vec![
        ((1, 2), vec![(4, 1)]),
        ((1, 3), vec![(5, 2)]),
        ((2, 3), vec![(6, 3)]),
        ((4, 5), vec![(2, 1), (4, 3), (6, 5)]),
        ((4, 6), vec![(3, 2)]),
        ((5, 6), vec![(5, 4)]),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ToneSchedule<T> {
    pub ladder: FrequencyLadder<T>,
    pub omegas: [T; 6],
    /// Amplitudes for odd auxiliary resonators.
    pub amps: [T; 6],
    /// Even auxiliary resonators: `J₃ ↔ J₃′`.
    pub amps_even: [T; 6],
    pub targets: ModelParams<T>,
}

fn third_amps<T: Real>(j3: T, j3p: T) -> Result<[T; 3]> {
    if !(j3p > T::zero()) {
        return Err(Error::SqrtDomain {
            name: "J3'",
            value: j3p.to_f64_lossy(),
        });
    }
    let s = j3p.sqrt();
    Ok([s, j3 / s, s])
}

pub fn solve_tones<T: Real + ToneScalar>(
    ladder: &FrequencyLadder<T>,
    targets: &ModelParams<T>,
) -> Result<ToneSchedule<T>> {
    for (name, v) in [
        ("delta", ladder.delta),
        ("delta1", ladder.delta1),
        ("delta2", ladder.delta2),
    ] {
        if !(v > T::zero()) {
            return Err(Error::InvalidInput(format!(
                "{name} must be positive, got {v}"
            )));
        }
    }
    if !(targets.j1 > T::zero()) {
        return Err(Error::SqrtDomain {
            name: "J1",
            value: targets.j1.to_f64_lossy(),
        });
    }
    let omegas = tone_frequencies(ladder);
    if let Some((i, &w)) = omegas.iter().enumerate().find(|(_, &w)| w <= T::zero()) {
        return Err(Error::NonPositiveTone {
            index: i + 1,
            value: w.to_f64_lossy(),
        });
    }
    let odd = third_amps(targets.j3, targets.j3p)?;
    let even = third_amps(targets.j3p, targets.j3).unwrap_or([T::zero(); 3]);
    let s1 = targets.j1.sqrt();
    let first = [s1, s1, targets.j1p / s1];
    let amps = [odd[0], odd[1], odd[2], first[0], first[1], first[2]];
    let amps_even = [even[0], even[1], even[2], first[0], first[1], first[2]];
    let tol = T::lit(1e-12) * RealField::max(targets.hopping_scale(), T::one());
    let check = |x: T, y: T| Signed::abs(&(x - y)) <= tol;
    assert!(
        check(amps[0] * amps[1], targets.j3)
            && check(amps[1] * amps[2], targets.j3)
            && check(amps[0] * amps[2], targets.j3p)
            && check(amps[3] * amps[4], targets.j1)
            && check(amps[3] * amps[5], targets.j1p)
            && check(amps[4] * amps[5], targets.j1p),
        "amplitude products do not reproduce the targets"
    );
    Ok(ToneSchedule {
        ladder: *ladder,
        omegas,
        amps,
        amps_even,
        targets: *targets,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollisionEntry<T> {
    pub i: usize,
    pub j: usize,
    pub kind: CombinationKind,
    pub value: T,
    /// Cavity pairs `(α, β)` whose `|Δ_{αβ}|` lies within the resolution.
    pub matched: Vec<(usize, usize)>,
    pub spurious: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CollisionReport<T> {
    pub resolution: T,
    pub entries: Vec<CollisionEntry<T>>,
}

impl<T> CollisionReport<T> {
    pub fn spurious(&self) -> impl Iterator<Item = &CollisionEntry<T>> {
        self.entries.iter().filter(|e| e.spurious)
    }

    pub fn is_clean(&self) -> bool {
        self.spurious().next().is_none()
    }
}

/// Smallest gap between two distinct tones.
pub fn min_tone_spacing<T: ToneScalar>(omegas: &[T; 6]) -> T {
    let mut best: Option<T> = None;
    for i in 0..6 {
        for j in i + 1..6 {
            let d = (omegas[i] - omegas[j]).abs();
            if d > T::zero() && best.map_or(true, |b| d < b) {
                best = Some(d);
            }
        }
    }
    best.unwrap_or_else(T::zero)
}

/// Matches every `|Ω_i ± Ω_j|` and `2Ω_i` against all first-, second- and
/// third-neighbour `|Δ_{αβ}|`. A match is spurious unless it is one of the
/// intended resonances. With `resolution = 0` only exact equality counts.
pub fn find_collisions<T: ToneScalar>(
    ladder: &FrequencyLadder<T>,
    resolution: T,
) -> CollisionReport<T> {
    let omegas = tone_frequencies(ladder);
    let dets: Vec<(usize, usize, T)> = detunings()
        .iter()
        .map(|d| (d.alpha, d.beta, d.form.eval(ladder).abs()))
        .collect();
    let intended = intended_resonances();
    let two = T::from_i64(2).unwrap();
    let entries = combination_table()
        .iter()
        .map(|c| {
            let (a, b) = (omegas[c.i - 1], omegas[c.j - 1]);
            let value = match c.kind {
                CombinationKind::Sum => a + b,
                CombinationKind::Difference => a - b,
                CombinationKind::Double => two * a,
            };
            let matched: Vec<(usize, usize)> = dets
                .iter()
                .filter(|(_, _, d)| {
                    let gap = (value.abs() - *d).abs();
                    gap == T::zero() || gap < resolution
                })
                .map(|&(al, be, _)| (al, be))
                .collect();
            let allowed: &[(usize, usize)] = match c.kind {
                CombinationKind::Sum => intended
                    .iter()
                    .find(|(p, _)| *p == (c.i, c.j))
                    .map_or(&[], |(_, v)| v.as_slice()),
                _ => &[],
            };
            let spurious = matched.iter().any(|m| !allowed.contains(m));
            CollisionEntry {
                i: c.i,
                j: c.j,
                kind: c.kind,
                value,
                matched,
                spurious,
            }
        })
        .collect();
    CollisionReport {
        resolution,
        entries,
    }
}

/// Collision report at the default resolution, 1% of the smallest tone
/// spacing.
pub fn check_collisions<T: Real + ToneScalar>(
    schedule: &ToneSchedule<T>,
    ladder: &FrequencyLadder<T>,
) -> CollisionReport<T> {
    find_collisions(ladder, T::lit(1e-2) * min_tone_spacing(&schedule.omegas))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HierarchyReport {
    /// `|ω̄ − ω_aux| / max(δ, δ₁, δ₂)`.
    pub aux_ratio: f64,
    /// `min(δ, δ₁, δ₂) / (Σ|A_i|)²`, the smallest detuning over the peak
    /// coupling the tones reach when they add in phase.
    pub drive_ratio: f64,
}

impl HierarchyReport {
    pub fn new(schedule: &ToneSchedule<f64>) -> Self {
        let l = &schedule.ladder;
        let dmax = l.delta.max(l.delta1).max(l.delta2);
        let dmin = l.delta.min(l.delta1).min(l.delta2);
        let peak = |a: &[f64; 6]| a.iter().map(|x| x.abs()).sum::<f64>().powi(2);
        let jmax = peak(&schedule.amps).max(peak(&schedule.amps_even));
        Self {
            aux_ratio: (l.omega_bar - l.omega_aux).abs() / dmax,
            drive_ratio: dmin / jmax,
        }
    }
}

/// Rescales the target hoppings (keeping their ratios) so the schedule's
/// drive ratio equals `ratio`.
pub fn targets_for_drive_ratio(
    ladder: &FrequencyLadder<f64>,
    shape: &ModelParams<f64>,
    ratio: f64,
) -> Result<ModelParams<f64>> {
    let probe = solve_tones(ladder, shape)?;
    let f = HierarchyReport::new(&probe).drive_ratio / ratio;
    Ok(ModelParams {
        j1: shape.j1 * f,
        j1p: shape.j1p * f,
        j3: shape.j3 * f,
        j3p: shape.j3p * f,
        ..*shape
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuxParity {
    Odd,
    Even,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClusterConfig {
    /// Cavity pairs `(α, β)` to probe, 1-based; empty means all eight
    /// intended pairs.
    pub pairs: Vec<(usize, usize)>,
    /// Integration window; `None` picks 1.5× the time the slowest target
    /// needs for a full transfer lobe.
    pub t_max: Option<f64>,
    /// Step; `None` picks `1 / (60 f_max)`.
    pub dt: Option<f64>,
    pub parity: AuxParity,
    /// Envelope `g(t) = sqrt(κ |ω_aux − ω̄|) Σ A_i cos(Ω_i t)`.
    pub envelope_factor: f64,
    /// Tone indices (1-based) to switch on; empty means all six.
    pub tones: Vec<usize>,
    /// Retune each cavity by its static second-order shift from the drive.
    pub stark_compensation: bool,
}

impl Default for ClusterConfig {
    fn default() -> Self {
        Self {
            pairs: Vec::new(),
            t_max: None,
            dt: None,
            parity: AuxParity::Odd,
            envelope_factor: 2.0,
            tones: Vec::new(),
            stark_compensation: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExtractedHopping {
    pub alpha: usize,
    pub beta: usize,
    pub target: f64,
    /// Target corrected for the pair's own auxiliary detunings.
    pub predicted: f64,
    /// Half-period of the fitted two-site transfer `P_β = a sin²(J t)`.
    pub extracted: f64,
    pub max_transfer: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClusterResult {
    pub hierarchy: HierarchyReport,
    pub hoppings: Vec<ExtractedHopping>,
    pub t_max: f64,
    pub dt: f64,
    pub warnings: Vec<String>,
}

fn all_pairs() -> Vec<(usize, usize)> {
    intended_resonances()
        .into_iter()
        .flat_map(|(_, v)| v)
        .map(|(a, b)| (b, a))
        .collect()
}

fn target_hopping(t: &ModelParams<f64>, parity: AuxParity, pair: (usize, usize)) -> f64 {
    let (lo, hi) = (pair.0.min(pair.1), pair.0.max(pair.1));
    let (j3, j3p) = match parity {
        AuxParity::Odd => (t.j3, t.j3p),
        AuxParity::Even => (t.j3p, t.j3),
    };
    match (lo, hi) {
        (1, 2) | (3, 4) | (5, 6) => t.j1,
        (2, 3) | (4, 5) => t.j1p,
        (1, 4) | (3, 6) => j3,
        (2, 5) => j3p,
        _ => 0.0,
    }
}

/// Drives two cavities of the cluster through the auxiliary resonator with
/// the full tone schedule and reads off each effective hopping from the
/// two-site population transfer. The remaining cavities are left uncoupled.
pub fn simulate_cluster(
    schedule: &ToneSchedule<f64>,
    cfg: &ClusterConfig,
) -> Result<ClusterResult> {
    let ladder = &schedule.ladder;
    let hierarchy = HierarchyReport::new(schedule);
    let mut warnings = Vec::new();
    if hierarchy.aux_ratio < 10.0 || hierarchy.drive_ratio < 10.0 {
        warnings.push(
            Error::HierarchyViolated {
                detail: format!(
                    "aux ratio {:.2}, drive ratio {:.2}; both should be at least 10",
                    hierarchy.aux_ratio, hierarchy.drive_ratio
                ),
            }
            .to_string(),
        );
    }
    let amps = match cfg.parity {
        AuxParity::Odd => schedule.amps,
        AuxParity::Even => schedule.amps_even,
    };
    let active: Vec<usize> = if cfg.tones.is_empty() {
        (1..=6).collect()
    } else {
        cfg.tones.clone()
    };
    if active.iter().any(|&i| i == 0 || i > 6) {
        return Err(Error::InvalidInput("tone indices run from 1 to 6".into()));
    }
    let tones: Vec<(f64, f64)> = active
        .iter()
        .map(|&i| (amps[i - 1], schedule.omegas[i - 1]))
        .collect();
    let pairs = if cfg.pairs.is_empty() {
        all_pairs()
    } else {
        cfg.pairs.clone()
    };
    if pairs
        .iter()
        .any(|&(a, b)| a == b || a == 0 || b == 0 || a > 6 || b > 6)
    {
        return Err(Error::InvalidInput(
            "cavity pairs need two distinct indices in 1..=6".into(),
        ));
    }
    let omega = ladder.cavity_frequencies();
    let det: Vec<f64> = omega.iter().map(|w| w - ladder.omega_aux).collect();
    let gap = (ladder.omega_aux - ladder.omega_bar).abs();
    let f_max = det.iter().fold(0.0f64, |a, d| a.max(d.abs()))
        + schedule.omegas.iter().fold(0.0f64, |a, w| a.max(w.abs()));
    let max_dt = 1.0 / (50.0 * f_max);
    let dt = cfg.dt.unwrap_or(1.0 / (60.0 * f_max));
    if dt > max_dt {
        return Err(Error::StepTooLarge { dt, max_dt });
    }
    let slowest = pairs
        .iter()
        .map(|&p| target_hopping(&schedule.targets, cfg.parity, p).abs())
        .filter(|j| *j > 0.0)
        .fold(f64::INFINITY, f64::min);
    let t_max = cfg.t_max.unwrap_or_else(|| {
        if slowest.is_finite() {
            1.5 * std::f64::consts::PI / slowest
        } else {
            100.0
        }
    });
    let scale = (cfg.envelope_factor * gap).sqrt();
    let steps = (t_max / dt).ceil() as usize;

    let hoppings = pairs
        .par_iter()
        .map(|&(a, b)| {
            let (mut da, mut db) = (det[a - 1], det[b - 1]);
            if cfg.stark_compensation {
                da -= stark_shift(&tones, scale, da);
                db -= stark_shift(&tones, scale, db);
            }
            let target = target_hopping(&schedule.targets, cfg.parity, (a, b));
            let predicted = target * 0.5 * gap * (1.0 / da.abs() + 1.0 / db.abs());
            let (extracted, max_transfer) = two_site_transfer(&tones, scale, da, db, dt, steps);
            let relative_error = if target != 0.0 {
                (extracted - target.abs()) / target.abs()
            } else {
                extracted
            };
            ExtractedHopping {
                alpha: a,
                beta: b,
                target,
                predicted,
                extracted,
                max_transfer,
                relative_error,
            }
        })
        .collect();
    Ok(ClusterResult {
        hierarchy,
        hoppings,
        t_max,
        dt,
        warnings,
    })
}

/// Second-order shift of a cavity detuned by `d` from the auxiliary mode.
pub fn stark_shift(tones: &[(f64, f64)], scale: f64, d: f64) -> f64 {
    tones
        .iter()
        .map(|&(a, w)| {
            let g = scale * a;
            g * g / 4.0 * (1.0 / (d - w) + 1.0 / (d + w))
        })
        .sum()
}

/// RK4 on `(c_α, c_β, b)` in the interaction picture. Tone and frame
/// phases advance by half-step rotations.
fn two_site_transfer(
    tones: &[(f64, f64)],
    scale: f64,
    da: f64,
    db: f64,
    dt: f64,
    steps: usize,
) -> (f64, f64) {
    use num_complex::Complex64 as C;
    let half: Vec<C> = tones
        .iter()
        .map(|&(_, w)| C::from_polar(1.0, w * dt / 2.0))
        .collect();
    let (ha, hb) = (
        C::from_polar(1.0, da * dt / 2.0),
        C::from_polar(1.0, db * dt / 2.0),
    );
    let mut z = vec![C::new(1.0, 0.0); tones.len()];
    let (mut za, mut zb) = (C::new(1.0, 0.0), C::new(1.0, 0.0));
    // (g, e^{i d_α t}, e^{i d_β t}) at the current phases
    let sample = |z: &[C], za: C, zb: C| {
        let g = scale
            * tones
                .iter()
                .zip(z)
                .map(|(&(a, _), zi)| a * zi.re)
                .sum::<f64>();
        (g, za, zb)
    };
    let rhs = |(g, pa, pb): (f64, C, C), y: &[C; 3]| -> [C; 3] {
        let mi = C::new(0.0, -g);
        [
            mi * pa * y[2],
            mi * pb * y[2],
            mi * (pa.conj() * y[0] + pb.conj() * y[1]),
        ]
    };
    let add = |y: &[C; 3], k: &[C; 3], h: f64| [y[0] + k[0] * h, y[1] + k[1] * h, y[2] + k[2] * h];
    let advance = |z: &mut Vec<C>, za: &mut C, zb: &mut C| {
        for (zi, hi) in z.iter_mut().zip(&half) {
            *zi *= hi;
        }
        *za *= ha;
        *zb *= hb;
    };

    let mut y = [C::new(1.0, 0.0), C::new(0.0, 0.0), C::new(0.0, 0.0)];
    let stride = (steps / 4000).max(1);
    let mut ts = vec![0.0];
    let mut ps = vec![0.0];
    let mut max_p = 0.0f64;
    let mut s0 = sample(&z, za, zb);
    for s in 0..steps {
        advance(&mut z, &mut za, &mut zb);
        let sh = sample(&z, za, zb);
        advance(&mut z, &mut za, &mut zb);
        if s % 1024 == 1023 {
            for zi in z.iter_mut() {
                *zi /= zi.norm();
            }
            za /= za.norm();
            zb /= zb.norm();
        }
        let s1 = sample(&z, za, zb);
        let k1 = rhs(s0, &y);
        let k2 = rhs(sh, &add(&y, &k1, dt / 2.0));
        let k3 = rhs(sh, &add(&y, &k2, dt / 2.0));
        let k4 = rhs(s1, &add(&y, &k3, dt));
        for i in 0..3 {
            y[i] += (k1[i] + k2[i] * 2.0 + k3[i] * 2.0 + k4[i]) * (dt / 6.0);
        }
        s0 = s1;
        let p = y[1].norm_sqr();
        max_p = max_p.max(p);
        if (s + 1) % stride == 0 {
            ts.push((s + 1) as f64 * dt);
            ps.push(p);
        }
    }
    (fit_transfer(&ts, &ps), max_p)
}

/// Least-squares fit of `P(t) = a sin²(J t)`; returns `J`, or `0` when the
/// transfer never exceeds a few percent.
pub fn fit_transfer(times: &[f64], p: &[f64]) -> f64 {
    let t_max = times.last().copied().unwrap_or(0.0);
    if t_max <= 0.0 || p.iter().all(|&x| x < 0.05) {
        return 0.0;
    }
    let cost = |j: f64| {
        let (mut sf, mut ff) = (0.0, 0.0);
        for (&t, &y) in times.iter().zip(p) {
            let f = (j * t).sin().powi(2);
            sf += f * y;
            ff += f * f;
        }
        let a = if ff > 0.0 { sf / ff } else { 0.0 };
        times
            .iter()
            .zip(p)
            .map(|(&t, &y)| (y - a * (j * t).sin().powi(2)).powi(2))
            .sum::<f64>()
    };
    let (lo, hi, n) = (0.25 / t_max, 200.0 / t_max, 3000);
    let r = (hi / lo).powf(1.0 / n as f64);
    let mut best = (lo, f64::INFINITY);
    let mut j = lo;
    for _ in 0..=n {
        let c = cost(j);
        if c < best.1 {
            best = (j, c);
        }
        j *= r;
    }
    let (mut a, mut b) = (best.0 / r, best.0 * r);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..60 {
        let x1 = b - phi * (b - a);
        let x2 = a + phi * (b - a);
        if cost(x1) < cost(x2) {
            b = x2;
        } else {
            a = x1;
        }
    }
    0.5 * (a + b)
}

/// JSON document with the schedule, its collision report and, when
/// available, the simulated hoppings.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScheduleDocument {
    pub ladder: FrequencyLadder<f64>,
    pub omegas: [f64; 6],
    pub amps: [f64; 6],
    pub amps_even: [f64; 6],
    pub collisions: Vec<CollisionEntry<f64>>,
    pub extracted_hoppings: Vec<ExtractedHopping>,
    pub deviations: Vec<String>,
}

impl ScheduleDocument {
    pub fn new(
        schedule: &ToneSchedule<f64>,
        report: &CollisionReport<f64>,
        cluster: Option<&ClusterResult>,
    ) -> Self {
        let mut deviations = vec![
            "A6 = J1'/sqrt(J1), so that A4*A6 = A5*A6 = J1'".to_string(),
            "coupler envelope carries an extra factor sqrt(2): the resonant part of a tone product is A_i*A_j/2".to_string(),
        ];
        if let Some(c) = cluster {
            deviations.extend(c.warnings.iter().cloned());
        }
        Self {
            ladder: schedule.ladder,
            omegas: schedule.omegas,
            amps: schedule.amps,
            amps_even: schedule.amps_even,
            collisions: report
                .entries
                .iter()
                .filter(|e| !e.matched.is_empty())
                .cloned()
                .collect(),
            extracted_hoppings: cluster.map(|c| c.hoppings.clone()).unwrap_or_default(),
            deviations,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ladder(d: f64, d1: f64, d2: f64) -> FrequencyLadder<f64> {
        FrequencyLadder {
            delta: d,
            delta1: d1,
            delta2: d2,
            omega_bar: 0.0,
            omega_aux: -20.0 * d.max(d1).max(d2),
        }
    }

    fn targets(j: f64) -> ModelParams<f64> {
        ModelParams::new(j, j, 0.8 * j, 0.5 * j)
    }

    fn scaled(l: &FrequencyLadder<f64>, ratio: f64) -> ToneSchedule<f64> {
        solve_tones(
            l,
            &targets_for_drive_ratio(l, &targets(1.0), ratio).unwrap(),
        )
        .unwrap()
    }

    #[test]
    fn example_ladder_tones() {
        let s = solve_tones(&ladder(1.0, 0.7, 1.3), &targets(0.01)).unwrap();
        for (w, e) in s.omegas.iter().zip([1.2, 1.5, 1.8, 0.2, 0.8, 0.5]) {
            assert!((w - e).abs() < 1e-14, "{w} vs {e}");
        }
    }

    #[test]
    fn symmetric_third_amplitudes() {
        let s = solve_tones(
            &ladder(1.0, 0.7, 1.3),
            &ModelParams::new(0.3, 0.2, 0.49, 0.49),
        )
        .unwrap();
        for a in &s.amps[..3] {
            assert!((a - 0.7).abs() < 1e-14);
        }
        assert_eq!(s.amps[..3], s.amps_even[..3]);
    }

    #[test]
    fn even_resonators_swap_third_neighbours() {
        let t = ModelParams::new(0.3, 0.2, 0.5, 0.2);
        let s = solve_tones(&ladder(1.0, 0.7, 1.3), &t).unwrap();
        let e = s.amps_even;
        assert!((e[0] * e[1] - t.j3p).abs() < 1e-14);
        assert!((e[0] * e[2] - t.j3).abs() < 1e-14);
        assert!((s.amps[5] - 0.2 / 0.3f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn infeasible_ladder_and_square_roots() {
        let err = solve_tones(&ladder(1.0, 0.3, 0.5), &targets(0.01)).unwrap_err();
        assert!(
            matches!(err, Error::NonPositiveTone { index: 6, .. }),
            "{err:?}"
        );
        let err = solve_tones(
            &ladder(1.0, 0.7, 1.3),
            &ModelParams::new(0.0, 0.1, 0.1, 0.1),
        )
        .unwrap_err();
        assert!(matches!(err, Error::SqrtDomain { name: "J1", .. }));
        let err = solve_tones(
            &ladder(1.0, 0.7, 1.3),
            &ModelParams::new(0.1, 0.1, 0.1, -0.1),
        )
        .unwrap_err();
        assert!(matches!(err, Error::SqrtDomain { name: "J3'", .. }));
    }

    #[test]
    fn intended_sums_hit_their_detunings_exactly() {
        let l = FrequencyLadder {
            delta: Ratio::new(7i64, 5),
            delta1: Ratio::new(3, 11),
            delta2: Ratio::new(13, 17),
            omega_bar: Ratio::from_integer(0),
            omega_aux: Ratio::from_integer(-30),
        };
        let w = tone_frequencies(&l);
        let off = l.cavity_offsets();
        for ((i, j), cavs) in intended_resonances() {
            for (a, b) in cavs {
                assert_eq!(
                    w[i - 1] + w[j - 1],
                    off[a - 1] - off[b - 1],
                    "Ω{i}+Ω{j} vs Δ{a}{b}"
                );
            }
        }
    }

    #[test]
    fn combination_table_matches_closed_forms() {
        // (i, j, sign, 2·coefficients of (δ, δ1, δ2))
        let table: [(usize, usize, i64, [i64; 3]); 24] = [
            (2, 3, -1, [2, 0, -2]),
            (1, 3, -1, [0, 2, -2]),
            (1, 2, -1, [-2, 2, 0]),
            (4, 5, -1, [0, 2, -2]),
            (5, 6, -1, [2, -2, 0]),
            (6, 4, -1, [-2, 0, 2]),
            (1, 4, -1, [0, 1, 1]),
            (1, 5, -1, [0, 3, -1]),
            (1, 6, -1, [2, 1, -1]),
            (2, 4, -1, [2, -1, 1]),
            (2, 5, -1, [2, 1, -1]),
            (2, 6, -1, [4, -1, -1]),
            (3, 4, -1, [0, -1, 3]),
            (3, 5, -1, [0, 1, 1]),
            (3, 6, -1, [2, -1, 1]),
            (1, 4, 1, [2, 3, -1]),
            (1, 5, 1, [2, 1, 1]),
            (1, 6, 1, [0, 3, 1]),
            (2, 4, 1, [4, 1, -1]),
            (2, 5, 1, [4, -1, 1]),
            (2, 6, 1, [2, 1, 1]),
            (3, 4, 1, [2, 1, 1]),
            (3, 5, 1, [2, -1, 3]),
            (3, 6, 1, [0, 1, 3]),
        ];
        let combos = combination_table();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..100 {
            let l = ladder(
                rng.gen_range(0.1..3.0),
                rng.gen_range(0.1..3.0),
                rng.gen_range(0.1..3.0),
            );
            for &(i, j, sign, c) in &table {
                let expected =
                    (c[0] as f64 * l.delta + c[1] as f64 * l.delta1 + c[2] as f64 * l.delta2) / 2.0;
                let (lo, hi, flip) = if i < j { (i, j, 1.0) } else { (j, i, -1.0) };
                let kind = if sign > 0 {
                    CombinationKind::Sum
                } else {
                    CombinationKind::Difference
                };
                let entry = combos
                    .iter()
                    .find(|c| c.i == lo && c.j == hi && c.kind == kind)
                    .unwrap();
                let got = entry.form.eval(&l) * if sign > 0 { 1.0 } else { flip };
                assert!(
                    (got - expected).abs() < 1e-12,
                    "Ω{i}{}Ω{j}",
                    if sign > 0 { '+' } else { '-' }
                );
            }
        }
        assert_eq!(combos.len(), 36);
    }

    #[test]
    fn linear_form_display() {
        assert_eq!(tone_forms()[0].to_string(), "(δ+2δ1)/2");
        assert_eq!(tone_forms()[1].to_string(), "(3δ)/2");
        assert_eq!(LinearForm::new([0, 0, 0], 1).to_string(), "0");
        assert_eq!(LinearForm::new([-1, 0, 1], 1).to_string(), "-δ+δ2");
    }

    #[test]
    fn commensurate_ladder_is_flagged() {
        let l = ladder(1.0, 0.3, 0.5);
        let report = find_collisions(&l, 1e-2 * min_tone_spacing(&tone_frequencies(&l)));
        let hit = report
            .spurious()
            .find(|e| e.i == 2 && e.j == 3 && e.kind == CombinationKind::Difference)
            .expect("Ω2−Ω3 flagged");
        assert!(hit.matched.contains(&(5, 4)));
        assert!((hit.value - 0.5).abs() < 1e-12);
    }

    #[test]
    fn generic_ladder_only_intended_matches() {
        let l = ladder(1.0, 0.55, 0.73);
        let s = solve_tones(&l, &targets(1e-3)).unwrap();
        let report = check_collisions(&s, &l);
        assert!(
            report.is_clean(),
            "{:?}",
            report.spurious().collect::<Vec<_>>()
        );
        let matched: usize = report.entries.iter().map(|e| e.matched.len()).sum();
        assert_eq!(matched, 8);
    }

    #[test]
    fn zero_resolution_reports_exact_coincidences_only() {
        let exact = FrequencyLadder {
            delta: Ratio::from_integer(10i64),
            delta1: Ratio::from_integer(7),
            delta2: Ratio::from_integer(13),
            omega_bar: Ratio::from_integer(0),
            omega_aux: Ratio::from_integer(-300),
        };
        let report = find_collisions(&exact, Ratio::from_integer(0));
        // 2δ = δ1 + δ2 makes Ω3 − Ω6 = Δ54 and Ω1 + Ω6 = Δ31
        let spurious: Vec<_> = report.spurious().map(|e| (e.i, e.j, e.kind)).collect();
        assert!(spurious.contains(&(3, 6, CombinationKind::Difference)));
        assert!(spurious.contains(&(1, 6, CombinationKind::Sum)));
        let nudged = FrequencyLadder {
            delta1: Ratio::new(7001, 1000),
            ..exact
        };
        let report = find_collisions(&nudged, Ratio::from_integer(0));
        assert!(report.is_clean());
        assert!(!find_collisions(&ladder(1.0, 0.7001, 1.3), 0.01).is_clean());
    }

    #[test]
    fn zero_amplitudes_give_no_transfer() {
        let l = ladder(1.0, 0.55, 0.73);
        let mut s = solve_tones(&l, &targets(1e-3)).unwrap();
        s.amps = [0.0; 6];
        let cfg = ClusterConfig {
            t_max: Some(200.0),
            ..ClusterConfig::default()
        };
        let r = simulate_cluster(&s, &cfg).unwrap();
        assert_eq!(r.hoppings.len(), 8);
        for h in &r.hoppings {
            assert_eq!(h.extracted, 0.0);
            assert!(h.max_transfer < 1e-20);
        }
    }

    #[test]
    fn step_limit_enforced() {
        let l = ladder(1.0, 0.55, 0.73);
        let s = solve_tones(&l, &targets(1e-3)).unwrap();
        let cfg = ClusterConfig {
            dt: Some(0.01),
            ..ClusterConfig::default()
        };
        assert!(matches!(
            simulate_cluster(&s, &cfg),
            Err(Error::StepTooLarge { .. })
        ));
    }

    #[test]
    fn weak_hierarchy_warns() {
        let l = ladder(1.0, 0.55, 0.73);
        let s = solve_tones(&l, &targets(0.05)).unwrap();
        let cfg = ClusterConfig {
            t_max: Some(1.0),
            ..ClusterConfig::default()
        };
        let r = simulate_cluster(&s, &cfg).unwrap();
        assert_eq!(r.warnings.len(), 1);
    }

    #[test]
    fn single_pair_rabi_oracle() {
        let l = ladder(1.0, 0.55, 0.73);
        let s = scaled(&l, 20.0);
        let cfg = ClusterConfig {
            pairs: vec![(1, 4)],
            tones: vec![1, 2],
            ..ClusterConfig::default()
        };
        let h = simulate_cluster(&s, &cfg).unwrap().hoppings[0];
        let a1a2 = s.amps[0] * s.amps[1];
        assert!((h.extracted - a1a2).abs() < 0.1 * a1a2, "{h:?}");
        assert!(
            (h.extracted - h.predicted).abs() < 0.02 * h.predicted,
            "{h:?}"
        );
        assert!(h.max_transfer > 0.99);
    }

    #[test]
    fn fit_recovers_clean_transfer() {
        let t: Vec<f64> = (0..2000).map(|i| i as f64 * 0.5).collect();
        let p: Vec<f64> = t.iter().map(|&t| (0.0123 * t).sin().powi(2)).collect();
        assert!((fit_transfer(&t, &p) - 0.0123).abs() < 1e-7);
    }
}
