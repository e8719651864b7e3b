//! Small dense linear algebra kit: vectors, row-major matrices, order-3
//! tensors, vector mode products, CP evaluation and a reproducible RNG.
//!
//! Axis convention for order-3 tensors: `t[i, j, k]` is stored at
//! `(i * d2 + j) * d3 + k`. Contracting a vector along mode `m` removes
//! that axis; the two remaining axes keep their original relative order,
//! so `mode_product(t, v, 1)` is a `d2 × d3` matrix with entry
//! `(j, k) = Σ_i t[i, j, k] v[i]`.
//!
//! A recurrent weight tensor uses axis 1 for the previous hidden state,
//! axis 2 for the layer input and axis 3 for the output unit, so the
//! bilinear term of a second-order layer is `(A ×₁ h)ᵀ u`.

use serde::{Deserialize, Serialize};

use crate::error::{mismatch, Error, Result};

fn check_finite(data: &[f64], context: &str) -> Result<()> {
    if data.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite {
            context: context.to_string(),
        })
    }
}

/// Dense real vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Vector {
    data: Vec<f64>,
}

impl Vector {
    /// Wraps `data`, rejecting non-finite entries.
    pub fn new(data: Vec<f64>) -> Result<Self> {
        check_finite(&data, "vector")?;
        Ok(Self { data })
    }

    pub(crate) fn from_vec_unchecked(data: Vec<f64>) -> Self {
        Self { data }
    }

    pub fn zeros(dim: usize) -> Self {
        Self {
            data: vec![0.0; dim],
        }
    }

    pub fn ones(dim: usize) -> Self {
        Self {
            data: vec![1.0; dim],
        }
    }

    /// Standard basis vector `e_index` (0-based).
    pub fn basis(dim: usize, index: usize) -> Self {
        let mut v = Self::zeros(dim);
        v.data[index] = 1.0;
        v
    }

    pub fn dim(&self) -> usize {
        self.data.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn dot(&self, other: &Vector) -> f64 {
        dot(&self.data, &other.data)
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

impl std::ops::Index<usize> for Vector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.data[i]
    }
}

impl std::ops::IndexMut<usize> for Vector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.data[i]
    }
}

/// Dense row-major matrix. Zero-sized shapes are allowed so that rank-0
/// CP factors are representable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(mismatch("matrix storage", rows * cols, data.len()));
        }
        check_finite(&data, "matrix")?;
        Ok(Self { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    /// `rows × cols` matrix with ones on the leading diagonal.
    pub fn eye(rows: usize, cols: usize) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows.min(cols) {
            m.data[i * cols + i] = 1.0;
        }
        m
    }

    pub fn diag(v: &Vector) -> Self {
        let n = v.dim();
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = v[i];
        }
        m
    }

    pub fn outer(u: &Vector, v: &Vector) -> Self {
        let mut m = Self::zeros(u.dim(), v.dim());
        for i in 0..u.dim() {
            for j in 0..v.dim() {
                m.data[i * v.dim() + j] = u[i] * v[j];
            }
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub fn set(&mut self, i: usize, j: usize, value: f64) {
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vector {
        Vector::from_vec_unchecked((0..self.rows).map(|i| self.get(i, j)).collect())
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&x| x == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }
}

/// Dense order-3 tensor, row-major over `(i, j, k)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor3 {
    dims: [usize; 3],
    data: Vec<f64>,
}

impl Tensor3 {
    pub fn new(dims: [usize; 3], data: Vec<f64>) -> Result<Self> {
        let len = dims[0] * dims[1] * dims[2];
        if len != data.len() {
            return Err(mismatch("tensor storage", len, data.len()));
        }
        check_finite(&data, "tensor")?;
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 3]) -> Self {
        Self {
            dims,
            data: vec![0.0; dims[0] * dims[1] * dims[2]],
        }
    }

    /// Kronecker delta `δ_ijk` on the leading `min(d1, d2, d3)` indices.
    pub fn delta(dims: [usize; 3]) -> Self {
        let mut t = Self::zeros(dims);
        for i in 0..dims[0].min(dims[1]).min(dims[2]) {
            t.set(i, i, i, 1.0);
        }
        t
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut(usize, usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(dims[0] * dims[1] * dims[2]);
        for i in 0..dims[0] {
            for j in 0..dims[1] {
                for k in 0..dims[2] {
                    data.push(f(i, j, k));
                }
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn offset(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.dims[1] + j) * self.dims[2] + k
    }

    pub fn get(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.offset(i, j, k)]
    }

    pub fn set(&mut self, i: usize, j: usize, k: usize, value: f64) {
        let o = self.offset(i, j, k);
        self.data[o] = value;
    }
}

/// Contracts `t` with `v` along `mode` (1, 2 or 3).
pub fn mode_product(t: &Tensor3, v: &Vector, mode: usize) -> Result<Matrix> {
    if !(1..=3).contains(&mode) {
        return Err(Error::InvalidArgument(format!(
            "mode must be 1, 2 or 3, got {mode}"
        )));
    }
    let [d1, d2, d3] = t.dims;
    if v.dim() != t.dims[mode - 1] {
        return Err(mismatch(
            "mode_product",
            format!("vector of dim {} for mode {mode} of {d1}x{d2}x{d3}", t.dims[mode - 1]),
            format!("dim {}", v.dim()),
        ));
    }
    let out = match mode {
        1 => {
            let mut m = Matrix::zeros(d2, d3);
            for i in 0..d1 {
                let vi = v[i];
                let slab = &t.data[i * d2 * d3..(i + 1) * d2 * d3];
                for (o, x) in m.data.iter_mut().zip(slab) {
                    *o += vi * x;
                }
            }
            m
        }
        2 => Matrix::from_fn(d1, d3, |i, k| (0..d2).map(|j| t.get(i, j, k) * v[j]).sum()),
        _ => Matrix::from_fn(d1, d2, |i, j| (0..d3).map(|k| t.get(i, j, k) * v[k]).sum()),
    };
    Ok(out)
}

/// CP factors `⟦A, B, C⟧` of an order-3 tensor: `A` is `d1 × R`, `B` is
/// `d2 × R`, `C` is `d3 × R`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CpFactors {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
}

impl CpFactors {
    pub fn new(a: Matrix, b: Matrix, c: Matrix) -> Result<Self> {
        if a.cols != b.cols || a.cols != c.cols {
            return Err(mismatch(
                "cp factor rank",
                format!("equal column counts (A has {})", a.cols),
                format!("B has {}, C has {}", b.cols, c.cols),
            ));
        }
        Ok(Self { a, b, c })
    }

    pub fn zeros(d1: usize, d2: usize, d3: usize, rank: usize) -> Self {
        Self {
            a: Matrix::zeros(d1, rank),
            b: Matrix::zeros(d2, rank),
            c: Matrix::zeros(d3, rank),
        }
    }

    pub fn rank(&self) -> usize {
        self.a.cols
    }

    /// Materializes `Σ_r a_r ∘ b_r ∘ c_r`.
    pub fn reconstruct(&self) -> Tensor3 {
        cp_reconstruct(&self.a, &self.b, &self.c)
    }
}

/// Full tensor `Σ_r a_r ∘ b_r ∘ c_r` from factor matrices with matching
/// column counts.
pub fn cp_reconstruct(a: &Matrix, b: &Matrix, c: &Matrix) -> Tensor3 {
    let r = a.cols;
    Tensor3::from_fn([a.rows, b.rows, c.rows], |i, j, k| {
        (0..r).map(|q| a.get(i, q) * b.get(j, q) * c.get(k, q)).sum()
    })
}

/// `C · diag(Aᵀh) · Bᵀ`, the `d3 × d2` matrix equal to
/// `mode_product(⟦A,B,C⟧, h, 1)ᵀ`.
pub fn cp_matrix(a: &Matrix, b: &Matrix, c: &Matrix, h: &Vector) -> Result<Matrix> {
    if a.cols != b.cols || a.cols != c.cols {
        return Err(mismatch(
            "cp_matrix rank",
            format!("equal column counts (A has {})", a.cols),
            format!("B has {}, C has {}", b.cols, c.cols),
        ));
    }
    if h.dim() != a.rows {
        return Err(mismatch("cp_matrix state", a.rows, h.dim()));
    }
    let r = a.cols;
    let mut s = vec![0.0; r];
    for i in 0..a.rows {
        for (q, sq) in s.iter_mut().enumerate() {
            *sq += a.get(i, q) * h[i];
        }
    }
    Ok(Matrix::from_fn(c.rows, b.rows, |k, j| {
        (0..r).map(|q| c.get(k, q) * s[q] * b.get(j, q)).sum()
    }))
}

pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(mismatch(
            "matmul",
            format!("inner dims equal ({}x{} · ?)", a.rows, a.cols),
            format!("{}x{}", b.rows, b.cols),
        ));
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b.data[k * b.cols..(k + 1) * b.cols];
            let orow = &mut out.data[i * b.cols..(i + 1) * b.cols];
            for (o, x) in orow.iter_mut().zip(brow) {
                *o += aik * x;
            }
        }
    }
    Ok(out)
}

pub fn matvec(a: &Matrix, v: &Vector) -> Result<Vector> {
    if a.cols != v.dim() {
        return Err(mismatch("matvec", a.cols, v.dim()));
    }
    let mut out = vec![0.0; a.rows];
    gemv_acc(&a.data, a.rows, a.cols, &v.data, &mut out);
    Ok(Vector::from_vec_unchecked(out))
}

pub fn add(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.shape() != b.shape() {
        return Err(mismatch("add", format!("{:?}", a.shape()), format!("{:?}", b.shape())));
    }
    let data = a.data.iter().zip(&b.data).map(|(x, y)| x + y).collect();
    Ok(Matrix {
        rows: a.rows,
        cols: a.cols,
        data,
    })
}

/// Default relative tolerance for [`rank`].
pub const RANK_TOL: f64 = 1e-9;

/// Numerical rank: number of singular values above `tol · σ_max`.
pub fn rank(m: &Matrix, tol: f64) -> Result<usize> {
    if tol <= 0.0 {
        return Err(Error::InvalidArgument(format!("rank tolerance must be > 0, got {tol}")));
    }
    let sv = singular_values(m)?;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|&&s| s > tol * smax).count())
}

/// Singular values, unsorted.
pub fn singular_values(m: &Matrix) -> Result<Vec<f64>> {
    check_finite(&m.data, "rank input")?;
    if m.rows == 0 || m.cols == 0 {
        return Ok(Vec::new());
    }
    let dm = nalgebra::DMatrix::from_row_slice(m.rows, m.cols, &m.data);
    Ok(dm.singular_values().iter().cloned().collect())
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out += M v` for a row-major `rows × cols` matrix.
#[inline]
pub(crate) fn gemv_acc(m: &[f64], rows: usize, cols: usize, v: &[f64], out: &mut [f64]) {
    debug_assert_eq!(m.len(), rows * cols);
    for (i, o) in out.iter_mut().enumerate().take(rows) {
        *o += dot(&m[i * cols..(i + 1) * cols], v);
    }
}

/// `out += Mᵀ v` for a row-major `rows × cols` matrix.
#[inline]
pub(crate) fn gemv_t_acc(m: &[f64], rows: usize, cols: usize, v: &[f64], out: &mut [f64]) {
    for (i, &vi) in v.iter().enumerate().take(rows) {
        if vi == 0.0 {
            continue;
        }
        for (o, x) in out.iter_mut().zip(&m[i * cols..(i + 1) * cols]) {
            *o += vi * x;
        }
    }
}

/// `M += a bᵀ`.
#[inline]
pub(crate) fn ger(m: &mut [f64], a: &[f64], b: &[f64]) {
    let cols = b.len();
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        for (o, x) in m[i * cols..(i + 1) * cols].iter_mut().zip(b) {
            *o += ai * x;
        }
    }
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// SplitMix64 generator.
///
/// Draw `i` (1-based) is `mix64(seed + i · 0x9E3779B97F4A7C15)` with the
/// standard SplitMix64 finalizer, so the stream is a pure function of the
/// seed and a counter. Seed `1234567` yields
/// `6457827717110365317, 3203168211198807973, 9817491932198370423, ...`.
///
/// Derived distributions:
/// * `uniform()`: `(next_u64() >> 11) · 2⁻⁵³` in `[0, 1)`.
/// * `normal()`: Box–Muller cosine branch, `√(−2 ln(1 − u₁)) · cos(2π u₂)`,
///   consuming two draws per sample.
/// * `substream(key)`: a new generator seeded with
///   `mix64(seed ^ mix64(key + 0x9E3779B97F4A7C15))`, independent of how
///   many draws the parent has made.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rng {
    seed: u64,
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Self {
        Self { seed, state: seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn substream(&self, key: u64) -> Rng {
        Rng::new(mix64(self.seed ^ mix64(key.wrapping_add(GOLDEN_GAMMA))))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    pub fn uniform(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn normal(&mut self) -> f64 {
        let u1 = 1.0 - self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Uniform integer in `0..n`.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn normal_vec(&mut self, len: usize) -> Vec<f64> {
        (0..len).map(|_| self.normal()).collect()
    }

    pub fn uniform_vec(&mut self, len: usize, lo: f64, hi: f64) -> Vec<f64> {
        (0..len).map(|_| self.uniform_range(lo, hi)).collect()
    }

    pub fn normal_vector(&mut self, dim: usize) -> Vector {
        Vector::from_vec_unchecked(self.normal_vec(dim))
    }

    pub fn normal_matrix(&mut self, rows: usize, cols: usize) -> Matrix {
        Matrix {
            rows,
            cols,
            data: self.normal_vec(rows * cols),
        }
    }

    pub fn normal_tensor(&mut self, dims: [usize; 3]) -> Tensor3 {
        Tensor3 {
            dims,
            data: self.normal_vec(dims[0] * dims[1] * dims[2]),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_mode_product(t: &Tensor3, v: &Vector, mode: usize) -> Vec<f64> {
        let [d1, d2, d3] = t.dims();
        let mut out = Vec::new();
        match mode {
            1 => {
                for j in 0..d2 {
                    for k in 0..d3 {
                        let mut s = 0.0;
                        for i in 0..d1 {
                            s += t.get(i, j, k) * v[i];
                        }
                        out.push(s);
                    }
                }
            }
            2 => {
                for i in 0..d1 {
                    for k in 0..d3 {
                        let mut s = 0.0;
                        for j in 0..d2 {
                            s += t.get(i, j, k) * v[j];
                        }
                        out.push(s);
                    }
                }
            }
            _ => {
                for i in 0..d1 {
                    for j in 0..d2 {
                        let mut s = 0.0;
                        for k in 0..d3 {
                            s += t.get(i, j, k) * v[k];
                        }
                        out.push(s);
                    }
                }
            }
        }
        out
    }

    #[test]
    fn splitmix_reference_vector() {
        let mut rng = Rng::new(1234567);
        let draws: Vec<u64> = (0..5).map(|_| rng.next_u64()).collect();
        assert_eq!(
            draws,
            vec![
                6457827717110365317,
                3203168211198807973,
                9817491932198370423,
                4593380528125082431,
                16408922859458223821,
            ]
        );
    }

    #[test]
    fn rng_streams_reproducible() {
        let mut a = Rng::new(99);
        let mut b = Rng::new(99);
        for _ in 0..100_000 {
            assert_eq!(a.next_u64().to_le_bytes(), b.next_u64().to_le_bytes());
        }
        assert_ne!(Rng::new(99).substream(0), Rng::new(99).substream(1));
        let mut used = Rng::new(5);
        used.next_u64();
        assert_eq!(used.substream(3), Rng::new(5).substream(3));
    }

    #[test]
    fn zero_tensor_mode_product() {
        let t = Tensor3::zeros([2, 2, 2]);
        let m = mode_product(&t, &Vector::ones(2), 1).unwrap();
        assert_eq!(m, Matrix::zeros(2, 2));
    }

    #[test]
    fn delta_mode_product_is_diag() {
        let t = Tensor3::delta([2, 2, 2]);
        let v = Vector::new(vec![2.5, -3.0]).unwrap();
        let m = mode_product(&t, &v, 1).unwrap();
        assert_eq!(m, Matrix::diag(&v));
    }

    #[test]
    fn mode_two_with_basis_is_slice() {
        let mut rng = Rng::new(7);
        let t = rng.normal_tensor([2, 3, 2]);
        let e2 = Vector::basis(3, 1);
        let m = mode_product(&t, &e2, 2).unwrap();
        assert_eq!(m.shape(), (2, 2));
        for i in 0..2 {
            for k in 0..2 {
                assert_eq!(m.get(i, k), t.get(i, 1, k));
            }
        }
        assert_eq!(m.as_slice(), naive_mode_product(&t, &e2, 2).as_slice());
    }

    #[test]
    fn mode_product_rejects_mismatch() {
        let t = Tensor3::zeros([2, 3, 4]);
        let err = mode_product(&t, &Vector::zeros(2), 3).unwrap_err();
        assert!(err.to_string().contains("2x3x4"), "{err}");
        assert!(mode_product(&t, &Vector::zeros(2), 4).is_err());
    }

    #[test]
    fn mode_product_matches_naive_loops() {
        let mut rng = Rng::new(11);
        for trial in 0..60 {
            let dims = [1 + rng.below(5), 1 + rng.below(5), 1 + rng.below(5)];
            let t = rng.normal_tensor(dims);
            let mode = 1 + trial % 3;
            let v = rng.normal_vector(dims[mode - 1]);
            let fast = mode_product(&t, &v, mode).unwrap();
            let slow = naive_mode_product(&t, &v, mode);
            let scale = slow.iter().fold(1e-300_f64, |m, x| m.max(x.abs()));
            for (a, b) in fast.as_slice().iter().zip(&slow) {
                assert!((a - b).abs() / scale < 1e-12);
            }
        }
    }

    #[test]
    fn cp_matrix_identity_factors() {
        let i2 = Matrix::identity(2);
        let m = cp_matrix(&i2, &i2, &i2, &Vector::ones(2)).unwrap();
        assert_eq!(m, Matrix::identity(2));
        let h = Vector::new(vec![2.0, 3.0]).unwrap();
        let m = cp_matrix(&i2, &i2, &i2, &h).unwrap();
        assert_eq!(m, Matrix::diag(&h));
    }

    #[test]
    fn cp_matrix_matches_rank_one_sum() {
        let mut rng = Rng::new(3);
        let (n, d, r) = (3, 2, 2);
        let a = rng.normal_matrix(n, r);
        let b = rng.normal_matrix(d, r);
        let c = rng.normal_matrix(n, r);
        let h = rng.normal_vector(n);
        let m = cp_matrix(&a, &b, &c, &h).unwrap();
        let mut oracle = Matrix::zeros(n, d);
        for q in 0..r {
            let ar = a.column(q);
            let w = ar.dot(&h);
            let outer = Matrix::outer(&c.column(q), &b.column(q));
            for i in 0..n {
                for j in 0..d {
                    oracle.set(i, j, oracle.get(i, j) + w * outer.get(i, j));
                }
            }
        }
        for (x, y) in m.as_slice().iter().zip(oracle.as_slice()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn cp_matrix_matches_reconstructed_contraction() {
        let mut rng = Rng::new(21);
        for _ in 0..40 {
            let (n, d, r) = (1 + rng.below(5), 1 + rng.below(5), rng.below(7));
            let f = CpFactors::new(
                rng.normal_matrix(n, r),
                rng.normal_matrix(d, r),
                rng.normal_matrix(n, r),
            )
            .unwrap();
            let h = rng.normal_vector(n);
            let fast = cp_matrix(&f.a, &f.b, &f.c, &h).unwrap();
            let slow = mode_product(&f.reconstruct(), &h, 1).unwrap().transpose();
            let scale = slow.max_abs().max(1e-300);
            for (x, y) in fast.as_slice().iter().zip(slow.as_slice()) {
                assert!((x - y).abs() / scale < 1e-12);
            }
        }
    }

    #[test]
    fn cp_matrix_rejects_rank_mismatch() {
        let a = Matrix::zeros(2, 2);
        let b = Matrix::zeros(2, 3);
        assert!(cp_matrix(&a, &b, &a, &Vector::zeros(2)).is_err());
    }

    #[test]
    fn rank_examples() {
        assert_eq!(rank(&Matrix::identity(3), RANK_TOL).unwrap(), 3);
        let u = Vector::new(vec![1.0, -2.0, 0.5]).unwrap();
        let v = Vector::new(vec![3.0, 1.0]).unwrap();
        assert_eq!(rank(&Matrix::outer(&u, &v), RANK_TOL).unwrap(), 1);
        assert_eq!(rank(&Matrix::zeros(3, 3), RANK_TOL).unwrap(), 0);

        let mut rng = Rng::new(8);
        let c = rng.normal_matrix(4, 2);
        let b = rng.normal_matrix(4, 2);
        let w = Vector::new(vec![1.5, -0.7]).unwrap();
        let m = matmul(&matmul(&c, &Matrix::diag(&w)).unwrap(), &b.transpose()).unwrap();
        assert_eq!(rank(&m, RANK_TOL).unwrap(), 2);
    }

    #[test]
    fn rank_rejects_nonfinite() {
        let mut m = Matrix::zeros(2, 2);
        m.as_mut_slice()[0] = f64::NAN;
        assert!(rank(&m, RANK_TOL).is_err());
        assert!(Matrix::new(1, 1, vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn matmul_matvec_agree() {
        let mut rng = Rng::new(1);
        let a = rng.normal_matrix(3, 4);
        let b = rng.normal_matrix(4, 2);
        let x = rng.normal_vector(2);
        let ab = matmul(&a, &b).unwrap();
        let lhs = matvec(&ab, &x).unwrap();
        let rhs = matvec(&a, &matvec(&b, &x).unwrap()).unwrap();
        for i in 0..3 {
            assert!((lhs[i] - rhs[i]).abs() < 1e-12);
        }
        assert!(matmul(&a, &a).is_err());
    }
}
