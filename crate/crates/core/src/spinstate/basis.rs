//! Eigenbasis of `J_x` in the Dicke basis.
//!
//! `J_x` is a real symmetric tridiagonal matrix with off-diagonal entries
//! `c_i / 2`, where `c_i = sqrt((N - i)(i + 1))` is the `J_+` matrix element
//! between indices `i` and `i + 1`. Its eigenvalues are exactly
//! `mu - N/2` for `mu = 0..=N`, so only the eigenvectors need computing.
//!
//! Each eigenvector is obtained in O(N) from the three-term recurrence
//! started at the `m = -N/2` edge and run to the middle index; the other half
//! follows from reflection symmetry `v[N - i] = (-1)^(N - mu) v[i]` (the
//! eigenvectors of a persymmetric Jacobi matrix alternate in parity, the
//! top one being even). Starting from the edge keeps the recurrence on its
//! growing solution through the classically forbidden region, where it is
//! stable. The sign convention is `v[0] > 0` (or `v[0]` underflowed to 0).
//!
//! Small and medium `N` keep the full matrix (column `mu` contiguous) so that
//! batched basis changes can use a matrix product. For large `N` the columns
//! are regenerated on the fly, which costs the same O(N^2) per basis change
//! without the memory.

use std::sync::{Arc, Mutex, OnceLock};

use ndarray::{Array2, ArrayView2};
use num_complex::Complex64;

use crate::par;

/// Largest dense eigenvector matrix kept, in bytes.
const DENSE_MAX_BYTES: usize = 640 << 20;
/// Total byte budget for cached dense matrices.
const CACHE_BUDGET_BYTES: usize = 1536 << 20;
/// Columns processed per work item.
const COLUMN_BLOCK: usize = 64;
/// Residuals per matrix product in batched distributions; fixed so results
/// do not depend on the thread count.
const RESIDUAL_BLOCK: usize = 64;
/// Fixed number of partial sums used when expanding back to the Dicke basis.
const EXPAND_PARTS: usize = 16;

/// `J_+` matrix elements `c_i = <i+1|J_+|i>`, `i = 0..N`.
pub fn ladder_coefficients(n: usize) -> Vec<f64> {
    (0..n).map(|i| (((n - i) * (i + 1)) as f64).sqrt()).collect()
}

/// Writes the normalised `J_x` eigenvector with eigenvalue `mu - N/2` into
/// `out` (length `N + 1`).
pub fn fill_eigenvector(n: usize, ladder: &[f64], mu: usize, out: &mut [f64]) {
    debug_assert_eq!(out.len(), n + 1);
    debug_assert!(mu <= n);
    out[0] = 1.0;
    if n == 0 {
        return;
    }
    let two_lambda = 2.0 * mu as f64 - n as f64;
    let half = n / 2;
    for i in 0..half {
        let prev = if i == 0 { 0.0 } else { ladder[i - 1] * out[i - 1] };
        let next = (two_lambda * out[i] - prev) / ladder[i];
        out[i + 1] = next;
        if next.abs() > 1e200 {
            for v in &mut out[..=i + 1] {
                *v *= 1e-200;
            }
        }
    }
    let parity = if (n - mu).is_multiple_of(2) { 1.0 } else { -1.0 };
    for i in 0..(n - half) {
        out[n - i] = parity * out[i];
    }
    // Scale by the largest entry first so the sum of squares cannot overflow.
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let norm = peak * out.iter().map(|v| (v / peak).powi(2)).sum::<f64>().sqrt();
    for v in out.iter_mut() {
        *v /= norm;
    }
}

/// The `J_x` eigenbasis for one particle number.
#[derive(Debug)]
pub struct XBasis {
    n: usize,
    ladder: Vec<f64>,
    /// Column-major eigenvector matrix `V[i, mu]` at `mu * (N+1) + i`, when
    /// small enough to keep.
    dense: Option<Vec<f64>>,
}

impl XBasis {
    /// Builds the basis, storing the dense matrix if it fits the size cap.
    pub fn new(n: usize) -> Self {
        let dim = n + 1;
        let ladder = ladder_coefficients(n);
        let dense = if dim * dim * 8 <= DENSE_MAX_BYTES {
            let mut v = vec![0.0; dim * dim];
            par::for_each_chunk_mut(&mut v, dim * COLUMN_BLOCK, |block, chunk| {
                for (j, col) in chunk.chunks_mut(dim).enumerate() {
                    fill_eigenvector(n, &ladder, block * COLUMN_BLOCK + j, col);
                }
            });
            Some(v)
        } else {
            None
        };
        XBasis { n, ladder, dense }
    }

    /// Particle number.
    pub fn n_particles(&self) -> usize {
        self.n
    }

    /// Whether the eigenvector matrix is stored.
    pub fn is_dense(&self) -> bool {
        self.dense.is_some()
    }

    /// Eigenvalue of column `mu`.
    pub fn eigenvalue(&self, mu: usize) -> f64 {
        mu as f64 - self.n as f64 / 2.0
    }

    fn bytes(&self) -> usize {
        self.dense.as_ref().map_or(0, |d| d.len() * 8) + self.ladder.len() * 8
    }

    /// Runs `f(mu, column)` for `mu` in `range`, regenerating columns if
    /// the matrix is not stored.
    fn with_columns<F>(&self, range: std::ops::Range<usize>, mut f: F)
    where
        F: FnMut(usize, &[f64]),
    {
        let dim = self.n + 1;
        match &self.dense {
            Some(v) => {
                for mu in range {
                    f(mu, &v[mu * dim..(mu + 1) * dim]);
                }
            }
            None => {
                let mut buf = vec![0.0; dim];
                for mu in range {
                    fill_eigenvector(self.n, &self.ladder, mu, &mut buf);
                    f(mu, &buf);
                }
            }
        }
    }

    /// Copies eigenvector `mu` into a new vector.
    pub fn eigenvector(&self, mu: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.n + 1];
        self.with_columns(mu..mu + 1, |_, c| out.copy_from_slice(c));
        out
    }

    /// Coefficients `c_mu = sum_i V[i, mu] psi_i` of `psi` in the eigenbasis.
    pub fn project(&self, psi: &[Complex64]) -> Vec<Complex64> {
        let dim = self.n + 1;
        assert_eq!(psi.len(), dim);
        let blocks = dim.div_ceil(COLUMN_BLOCK);
        let parts = par::map_range(blocks, |b| {
            let lo = b * COLUMN_BLOCK;
            let hi = (lo + COLUMN_BLOCK).min(dim);
            let mut out = Vec::with_capacity(hi - lo);
            self.with_columns(lo..hi, |_, col| {
                let mut re = 0.0;
                let mut im = 0.0;
                for (v, p) in col.iter().zip(psi) {
                    re += v * p.re;
                    im += v * p.im;
                }
                out.push(Complex64::new(re, im));
            });
            out
        });
        parts.concat()
    }

    /// Inverse of [`project`](Self::project): `psi_i = sum_mu V[i, mu] c_mu`.
    pub fn expand(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        let dim = self.n + 1;
        assert_eq!(coeffs.len(), dim);
        let parts_n = EXPAND_PARTS.min(dim);
        let partials = par::map_range(parts_n, |p| {
            let lo = p * dim / parts_n;
            let hi = (p + 1) * dim / parts_n;
            let mut acc = vec![Complex64::new(0.0, 0.0); dim];
            self.with_columns(lo..hi, |mu, col| {
                let c = coeffs[mu];
                for (a, v) in acc.iter_mut().zip(col) {
                    a.re += v * c.re;
                    a.im += v * c.im;
                }
            });
            acc
        });
        let mut out = vec![Complex64::new(0.0, 0.0); dim];
        for part in &partials {
            for (o, a) in out.iter_mut().zip(part) {
                *o += a;
            }
        }
        out
    }

    /// `|project(phased_b)|^2` for a batch of already-phased input vectors,
    /// one distribution per input, in input order.
    pub fn batch_probabilities(&self, inputs: &[Vec<Complex64>]) -> Vec<Vec<f64>> {
        let dim = self.n + 1;
        let blocks = inputs.len().div_ceil(RESIDUAL_BLOCK);
        let per_block = par::map_range(blocks, |b| {
            let lo = b * RESIDUAL_BLOCK;
            let hi = (lo + RESIDUAL_BLOCK).min(inputs.len());
            let batch = &inputs[lo..hi];
            match &self.dense {
                Some(v) => dense_block_probabilities(v, dim, batch),
                None => batch
                    .iter()
                    .map(|psi| self.project(psi).iter().map(|c| c.norm_sqr()).collect())
                    .collect(),
            }
        });
        per_block.into_iter().flatten().collect()
    }
}

fn dense_block_probabilities(v: &[f64], dim: usize, batch: &[Vec<Complex64>]) -> Vec<Vec<f64>> {
    let k = batch.len();
    let mut z = Array2::<f64>::zeros((dim, 2 * k));
    for (b, psi) in batch.iter().enumerate() {
        for (i, p) in psi.iter().enumerate() {
            z[[i, b]] = p.re;
            z[[i, k + b]] = p.im;
        }
    }
    // Column-major V read row-major is V^T: row mu holds eigenvector mu.
    let vt = ArrayView2::from_shape((dim, dim), v).expect("square eigenvector matrix");
    let a = vt.dot(&z);
    (0..k)
        .map(|b| (0..dim).map(|mu| a[[mu, b]].powi(2) + a[[mu, k + b]].powi(2)).collect())
        .collect()
}

struct CacheEntry {
    n: usize,
    basis: Arc<XBasis>,
    last_use: u64,
}

#[derive(Default)]
struct Cache {
    entries: Vec<CacheEntry>,
    clock: u64,
}

fn cache() -> &'static Mutex<Cache> {
    static CACHE: OnceLock<Mutex<Cache>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(Cache::default()))
}

/// Shared, lazily built `J_x` eigenbasis for `n` particles. Recently used
/// bases are kept up to a fixed memory budget.
pub fn x_basis(n: usize) -> Arc<XBasis> {
    {
        let mut c = cache().lock().expect("basis cache poisoned");
        c.clock += 1;
        let now = c.clock;
        if let Some(e) = c.entries.iter_mut().find(|e| e.n == n) {
            e.last_use = now;
            return Arc::clone(&e.basis);
        }
    }
    // Build outside the lock; a concurrent builder of the same N only
    // wastes work, the first insert wins.
    let built = Arc::new(XBasis::new(n));
    let mut c = cache().lock().expect("basis cache poisoned");
    c.clock += 1;
    let now = c.clock;
    if let Some(e) = c.entries.iter_mut().find(|e| e.n == n) {
        e.last_use = now;
        return Arc::clone(&e.basis);
    }
    let incoming = built.bytes();
    loop {
        let used: usize = c.entries.iter().map(|e| e.basis.bytes()).sum();
        if used + incoming <= CACHE_BUDGET_BYTES || c.entries.is_empty() {
            break;
        }
        let oldest = c
            .entries
            .iter()
            .enumerate()
            .min_by_key(|(_, e)| e.last_use)
            .map(|(i, _)| i)
            .expect("non-empty");
        c.entries.swap_remove(oldest);
    }
    c.entries.push(CacheEntry {
        n,
        basis: Arc::clone(&built),
        last_use: now,
    });
    built
}
