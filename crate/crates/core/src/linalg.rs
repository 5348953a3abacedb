//! Symmetric eigenproblems for the lattice Hamiltonians.
//!
//! Small systems go through nalgebra's dense `SymmetricEigen`. Large chains
//! are narrow-banded (third-neighbour hopping plus emitter rows placed next to
//! their contacts), and only a handful of in-gap eigenpairs are ever needed,
//! so they use a band-to-tridiagonal Givens reduction, Sturm bisection for the
//! eigenvalues inside a window, and inverse iteration on the original band for
//! the vectors.

use nalgebra::{DMatrix, DVector};

use crate::scalar::Real;

/// Eigenpairs in ascending eigenvalue order; column `i` of `vectors` belongs
/// to `values[i]`.
#[derive(Debug, Clone)]
pub struct SymEigen<T: Real> {
    pub values: Vec<T>,
    pub vectors: DMatrix<T>,
}

impl<T: Real> SymEigen<T> {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn vector(&self, i: usize) -> DVector<T> {
        self.vectors.column(i).into_owned()
    }
}

/// Full dense diagonalization, sorted ascending.
pub fn sym_eigen<T: Real>(m: &DMatrix<T>) -> SymEigen<T> {
    let eig = m.clone().symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].partial_cmp(&eig.eigenvalues[b]).unwrap());
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let mut vectors = DMatrix::zeros(m.nrows(), order.len());
    for (c, &i) in order.iter().enumerate() {
        vectors.set_column(c, &eig.eigenvectors.column(i));
    }
    SymEigen { values, vectors }
}

/// Keeps only the eigenpairs with `lo < value < hi`.
pub fn restrict_window<T: Real>(eig: &SymEigen<T>, lo: T, hi: T) -> SymEigen<T> {
    let idx: Vec<usize> = (0..eig.len())
        .filter(|&i| eig.values[i] > lo && eig.values[i] < hi)
        .collect();
    let mut vectors = DMatrix::zeros(eig.vectors.nrows(), idx.len());
    for (c, &i) in idx.iter().enumerate() {
        vectors.set_column(c, &eig.vectors.column(i));
    }
    SymEigen {
        values: idx.iter().map(|&i| eig.values[i]).collect(),
        vectors,
    }
}

/// Symmetric band matrix stored by lower diagonals. One extra diagonal is
/// reserved for the bulge created during reduction.
#[derive(Debug, Clone)]
pub struct BandedSym<T: Real> {
    n: usize,
    b: usize,
    /// `data[i * (b + 2) + d] = A[i][i - d]`.
    data: Vec<T>,
}

impl<T: Real> BandedSym<T> {
    pub fn zeros(n: usize, bandwidth: usize) -> Self {
        Self {
            n,
            b: bandwidth,
            data: vec![T::zero(); n * (bandwidth + 2)],
        }
    }

    /// Builds from upper-or-lower triplets; `bandwidth` must bound `|i - j|`.
    pub fn from_triplets(n: usize, bandwidth: usize, entries: &[(usize, usize, T)]) -> Self {
        let mut m = Self::zeros(n, bandwidth);
        for &(i, j, v) in entries {
            let (r, c) = if i >= j { (i, j) } else { (j, i) };
            assert!(
                r - c <= bandwidth,
                "entry ({i},{j}) outside bandwidth {bandwidth}"
            );
            let idx = r * (bandwidth + 2) + (r - c);
            m.data[idx] += v;
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.b
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let d = r - c;
        if d > self.b + 1 {
            T::zero()
        } else {
            self.data[r * (self.b + 2) + d]
        }
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, v: T) {
        let (r, c) = if i >= j { (i, j) } else { (j, i) };
        let d = r - c;
        if d > self.b + 1 {
            return;
        }
        self.data[r * (self.b + 2) + d] = v;
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.n];
        for i in 0..self.n {
            let lo = i.saturating_sub(self.b);
            for j in lo..=i {
                let a = self.data[i * (self.b + 2) + (i - j)];
                if a == T::zero() {
                    continue;
                }
                y[i] += a * x[j];
                if i != j {
                    y[j] += a * x[i];
                }
            }
        }
        y
    }

    /// Max-row-sum norm.
    pub fn norm_inf(&self) -> T {
        let mut rows = vec![T::zero(); self.n];
        for i in 0..self.n {
            for j in i.saturating_sub(self.b)..=i {
                let a = self.data[i * (self.b + 2) + (i - j)].abs();
                rows[i] += a;
                if i != j {
                    rows[j] += a;
                }
            }
        }
        rows.into_iter().fold(T::zero(), |a, b| a.max(b))
    }

    /// Similarity by a Givens rotation acting on rows/columns `(p, p + 1)`.
    fn rotate(&mut self, p: usize, c: T, s: T) {
        let q = p + 1;
        let lo = p.saturating_sub(self.b + 1);
        let hi = (q + self.b + 1).min(self.n - 1);
        for j in lo..=hi {
            if j == p || j == q {
                continue;
            }
            let apj = self.get(p, j);
            let aqj = self.get(q, j);
            if apj == T::zero() && aqj == T::zero() {
                continue;
            }
            self.set(p, j, c * apj + s * aqj);
            self.set(q, j, c * aqj - s * apj);
        }
        let app = self.get(p, p);
        let aqq = self.get(q, q);
        let apq = self.get(p, q);
        let two = T::lit(2.0);
        self.set(p, p, c * c * app + two * c * s * apq + s * s * aqq);
        self.set(q, q, s * s * app - two * c * s * apq + c * c * aqq);
        self.set(p, q, (c * c - s * s) * apq + c * s * (aqq - app));
    }

    /// Orthogonal reduction to tridiagonal form `(diagonal, off-diagonal)`.
    pub fn tridiagonalize(&self) -> (Vec<T>, Vec<T>) {
        let mut a = self.clone();
        let n = a.n;
        let b = a.b;
        if b > 1 && n > 2 {
            for k in 0..n - 2 {
                for l in (2..=b).rev() {
                    let i = k + l;
                    if i >= n {
                        continue;
                    }
                    let y = a.get(i, k);
                    if y == T::zero() {
                        continue;
                    }
                    let x = a.get(i - 1, k);
                    let r = x.hypot(y);
                    a.rotate(i - 1, x / r, y / r);
                    a.set(i, k, T::zero());
                    // Chase the bulge at (p + b + 1, p) off the end.
                    let mut p = i - 1;
                    loop {
                        let row = p + b + 1;
                        if row >= n {
                            break;
                        }
                        let y = a.get(row, p);
                        if y == T::zero() {
                            break;
                        }
                        let x = a.get(row - 1, p);
                        let r = x.hypot(y);
                        a.rotate(row - 1, x / r, y / r);
                        a.set(row, p, T::zero());
                        p = row - 1;
                    }
                }
            }
        }
        let d = (0..n).map(|i| a.get(i, i)).collect();
        let e = (0..n.saturating_sub(1)).map(|i| a.get(i + 1, i)).collect();
        (d, e)
    }
}

/// Number of eigenvalues of the tridiagonal `(d, e)` strictly below `sigma`.
pub fn sturm_count<T: Real>(d: &[T], e: &[T], sigma: T, pivmin: T) -> usize {
    let mut count = 0;
    let mut q = d[0] - sigma;
    if q.abs() < pivmin {
        q = -pivmin;
    }
    if q < T::zero() {
        count += 1;
    }
    for i in 1..d.len() {
        q = d[i] - sigma - e[i - 1] * e[i - 1] / q;
        if q.abs() < pivmin {
            q = -pivmin;
        }
        if q < T::zero() {
            count += 1;
        }
    }
    count
}

/// Eigenvalues of the tridiagonal `(d, e)` inside `(lo, hi)` by bisection.
pub fn tridiagonal_eigenvalues_in<T: Real>(d: &[T], e: &[T], lo: T, hi: T) -> Vec<T> {
    if d.is_empty() {
        return Vec::new();
    }
    let scale = d
        .iter()
        .chain(e.iter())
        .fold(T::zero(), |a, &b| a.max(b.abs()))
        .max(T::one());
    let pivmin = T::min_value().unwrap().sqrt() * scale;
    let n_lo = sturm_count(d, e, lo, pivmin);
    let n_hi = sturm_count(d, e, hi, pivmin);
    let tol = T::eps() * T::lit(4.0) * scale;
    (n_lo..n_hi)
        .map(|index| {
            let (mut a, mut b) = (lo, hi);
            for _ in 0..400 {
                if b - a <= tol {
                    break;
                }
                let mid = (a + b) * T::lit(0.5);
                if sturm_count(d, e, mid, pivmin) > index {
                    b = mid;
                } else {
                    a = mid;
                }
            }
            (a + b) * T::lit(0.5)
        })
        .collect()
}

/// Givens QR of a shifted band matrix, kept for repeated solves.
struct ShiftedBandQr<T: Real> {
    n: usize,
    b: usize,
    width: usize,
    /// Row `k` holds `R[k][k - b ..= k + 2b]`.
    r: Vec<T>,
    rotations: Vec<(usize, usize, T, T)>,
    pivot_floor: T,
}

impl<T: Real> ShiftedBandQr<T> {
    fn new(a: &BandedSym<T>, shift: T) -> Self {
        let n = a.n;
        let b = a.b;
        let width = 3 * b + 1;
        let mut r = vec![T::zero(); n * width];
        let at = |row: usize, col: usize| row * width + (col + b - row);
        for i in 0..n {
            for j in i.saturating_sub(b)..=(i + b).min(n - 1) {
                let mut v = a.get(i, j);
                if i == j {
                    v -= shift;
                }
                r[at(i, j)] = v;
            }
        }
        let mut rotations = Vec::with_capacity(n * b);
        for k in 0..n {
            for i in k + 1..=(k + b).min(n - 1) {
                let y = r[at(i, k)];
                if y == T::zero() {
                    continue;
                }
                let x = r[at(k, k)];
                let h = x.hypot(y);
                let (c, s) = (x / h, y / h);
                for col in k..=(k + 2 * b).min(n - 1) {
                    let rk = r[at(k, col)];
                    let ri = if col <= i + 2 * b {
                        r[at(i, col)]
                    } else {
                        T::zero()
                    };
                    r[at(k, col)] = c * rk + s * ri;
                    if col <= i + 2 * b {
                        r[at(i, col)] = c * ri - s * rk;
                    }
                }
                r[at(i, k)] = T::zero();
                rotations.push((k, i, c, s));
            }
        }
        let pivot_floor = T::eps() * a.norm_inf().max(T::one());
        Self {
            n,
            b,
            width,
            r,
            rotations,
            pivot_floor,
        }
    }

    fn solve(&self, rhs: &mut [T]) {
        for &(k, i, c, s) in &self.rotations {
            let (yk, yi) = (rhs[k], rhs[i]);
            rhs[k] = c * yk + s * yi;
            rhs[i] = c * yi - s * yk;
        }
        let at = |row: usize, col: usize| row * self.width + (col + self.b - row);
        for k in (0..self.n).rev() {
            let mut acc = rhs[k];
            for col in k + 1..=(k + 2 * self.b).min(self.n - 1) {
                acc -= self.r[at(k, col)] * rhs[col];
            }
            let mut piv = self.r[at(k, k)];
            if piv.abs() < self.pivot_floor {
                piv = if piv < T::zero() {
                    -self.pivot_floor
                } else {
                    self.pivot_floor
                };
            }
            rhs[k] = acc / piv;
        }
    }
}

fn normalize<T: Real>(v: &mut [T]) -> T {
    let norm = v.iter().fold(T::zero(), |a, &x| a + x * x).sqrt();
    if norm > T::zero() {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    norm
}

fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Deterministic start vector for inverse iteration.
fn start_vector<T: Real>(n: usize, salt: u64) -> Vec<T> {
    let mut state = 0x9E37_79B9_7F4A_7C15u64 ^ salt.wrapping_mul(0xD1B5_4A32_D192_ED03);
    (0..n)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            T::lit((state >> 11) as f64 / (1u64 << 53) as f64 - 0.5)
        })
        .collect()
}

/// Eigenpairs of a band matrix with eigenvalues inside `(lo, hi)`.
///
/// Eigenvalues closer than `1e-3 ‖A‖` are treated as a cluster and their
/// vectors are re-orthogonalized during inverse iteration, which yields an
/// orthonormal basis even for exactly degenerate eigenspaces.
pub fn banded_eigenpairs_in<T: Real>(a: &BandedSym<T>, lo: T, hi: T) -> SymEigen<T> {
    let n = a.dim();
    let (d, e) = a.tridiagonalize();
    let values = tridiagonal_eigenvalues_in(&d, &e, lo, hi);
    let norm = a.norm_inf().max(T::one());
    let cluster_gap = T::lit(1e-3) * norm;
    let mut vectors: Vec<Vec<T>> = Vec::with_capacity(values.len());
    let mut cluster_start = 0;
    for (idx, &lambda) in values.iter().enumerate() {
        if idx > 0 && lambda - values[idx - 1] > cluster_gap {
            cluster_start = idx;
        }
        let qr = ShiftedBandQr::new(a, lambda);
        let mut x = start_vector::<T>(n, idx as u64 + 1);
        normalize(&mut x);
        for _ in 0..4 {
            qr.solve(&mut x);
            for prev in &vectors[cluster_start..idx] {
                let proj = dot(prev, &x);
                for (xi, &pi) in x.iter_mut().zip(prev) {
                    *xi -= proj * pi;
                }
            }
            normalize(&mut x);
        }
        vectors.push(x);
    }
    let mut refined = Vec::with_capacity(values.len());
    let mut mat = DMatrix::zeros(n, values.len());
    for (c, v) in vectors.iter().enumerate() {
        let av = a.matvec(v);
        refined.push(dot(v, &av));
        mat.set_column(c, &DVector::from_column_slice(v));
    }
    SymEigen {
        values: refined,
        vectors: mat,
    }
}
