//! Dense-matrix oracle shared by the integration tests: collective spin
//! operators and their exponentials built with a generic Hermitian
//! eigensolver, independent of the banded code paths under test.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use num_complex::Complex64;
use spinsqueeze::estimator::{EnsembleSpec, ProtocolSpec};

pub fn c(re: f64) -> Complex64 {
    Complex64::new(re, 0.0)
}

/// `J_z` (diagonal), `J_x`, `J_y` in the `J_z` basis ordered by `m = -N/2..N/2`.
pub fn spin_ops(n: usize) -> [DMatrix<Complex64>; 3] {
    let d = n + 1;
    let j = n as f64 / 2.0;
    let mut jx = DMatrix::zeros(d, d);
    let mut jy = DMatrix::zeros(d, d);
    let mut jz = DMatrix::zeros(d, d);
    for i in 0..d {
        let m = i as f64 - j;
        jz[(i, i)] = c(m);
        if i + 1 < d {
            // <m+1| J+ |m> = sqrt(j(j+1) - m(m+1))
            let up = (j * (j + 1.0) - m * (m + 1.0)).sqrt();
            jx[(i + 1, i)] = c(up / 2.0);
            jx[(i, i + 1)] = c(up / 2.0);
            jy[(i + 1, i)] = Complex64::new(0.0, -up / 2.0);
            jy[(i, i + 1)] = Complex64::new(0.0, up / 2.0);
        }
    }
    [jx, jy, jz]
}

/// `exp(-i theta H)` for Hermitian `H`.
pub fn unitary(h: &DMatrix<Complex64>, theta: f64) -> DMatrix<Complex64> {
    let eig = SymmetricEigen::new(h.clone());
    let phases = DMatrix::from_diagonal(&DVector::from_iterator(
        h.nrows(),
        eig.eigenvalues.iter().map(|&e| Complex64::from_polar(1.0, -theta * e)),
    ));
    &eig.eigenvectors * phases * eig.eigenvectors.adjoint()
}

/// Eigenpairs of a Hermitian operator sorted by eigenvalue.
pub fn sorted_eigen(h: &DMatrix<Complex64>) -> (Vec<f64>, DMatrix<Complex64>) {
    let eig = SymmetricEigen::new(h.clone());
    let mut order: Vec<usize> = (0..h.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = DMatrix::from_columns(&order.iter().map(|&k| eig.eigenvectors.column(k).into_owned()).collect::<Vec<_>>());
    (values, vectors)
}

pub fn expect(op: &DMatrix<Complex64>, psi: &DVector<Complex64>) -> f64 {
    (psi.adjoint() * op * psi)[(0, 0)].re
}

pub fn to_vector(amplitudes: &[Complex64]) -> DVector<Complex64> {
    DVector::from_column_slice(amplitudes)
}

/// `|J_x = N/2>` by brute force: top eigenvector of the dense `J_x`.
pub fn dense_coherent_x(n: usize) -> DVector<Complex64> {
    let [jx, _, _] = spin_ops(n);
    let (_, vecs) = sorted_eigen(&jx);
    let v = vecs.column(n).into_owned();
    // Fix the global phase so that the largest component is real positive.
    let k = v.iter().enumerate().max_by(|a, b| a.1.norm().total_cmp(&b.1.norm())).unwrap().0;
    let phase = v[k] / v[k].norm();
    v / phase
}

/// Relative gap `|a - b| / |b|`.
pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

/// Gauss-Hermite rule for a zero-mean Gaussian of standard deviation
/// `sigma` by the Golub-Welsch eigenvalue method.
pub fn golub_welsch(nodes: usize, sigma: f64) -> Vec<(f64, f64)> {
    let mut jacobi = DMatrix::<f64>::zeros(nodes, nodes);
    for k in 1..nodes {
        let b = (k as f64 / 2.0).sqrt();
        jacobi[(k, k - 1)] = b;
        jacobi[(k - 1, k)] = b;
    }
    let eig = SymmetricEigen::new(jacobi);
    (0..nodes)
        .map(|q| (2f64.sqrt() * sigma * eig.eigenvalues[q], eig.eigenvectors[(0, q)].powi(2)))
        .collect()
}

/// `J_y` outcome probabilities of `R_z(r)|psi>` from dense matrices.
pub struct DenseEnsemble {
    n: usize,
    psi: nalgebra::DVector<Complex64>,
    jy_vectors: DMatrix<Complex64>,
}

impl DenseEnsemble {
    pub fn new(spec: &EnsembleSpec) -> Self {
        let n = spec.n_particles();
        let [_, jy, _] = spin_ops(n);
        DenseEnsemble {
            n,
            psi: to_vector(spec.state().amplitudes()),
            jy_vectors: sorted_eigen(&jy).1,
        }
    }

    pub fn probabilities(&self, r: f64) -> Vec<f64> {
        let j = self.n as f64 / 2.0;
        let rotated = nalgebra::DVector::from_iterator(
            self.n + 1,
            self.psi
                .iter()
                .enumerate()
                .map(|(i, a)| a * Complex64::from_polar(1.0, -r * (i as f64 - j))),
        );
        (self.jy_vectors.adjoint() * rotated).iter().map(|c| c.norm_sqr()).collect()
    }
}

/// Direct enumeration of the Bayesian mean squared error over quadrature
/// nodes and every outcome record, for a prior centred on `delta` with
/// every ensemble pre-rotated by `-delta`.
pub fn brute_force(protocol: &ProtocolSpec, nodes: usize, delta: f64) -> f64 {
    let ensembles: Vec<DenseEnsemble> = protocol.ensembles().iter().map(DenseEnsemble::new).collect();
    fn recurse(ens: &[DenseEnsemble], phi: f64, weight: f64, estimate: f64) -> f64 {
        match ens.split_first() {
            None => weight * (phi - estimate).powi(2),
            Some((e, rest)) => e
                .probabilities(phi - estimate)
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(i, &p)| recurse(rest, phi, weight * p, estimate + 2.0 * (i as f64 - e.n as f64 / 2.0) / e.n as f64))
                .sum(),
        }
    }
    golub_welsch(nodes, protocol.prior_sigma)
        .into_iter()
        .map(|(phi, w)| recurse(&ensembles, delta + phi, w, delta))
        .sum()
}
