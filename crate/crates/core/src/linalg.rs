//! Small dense complex linear-algebra helpers shared by every module.

use nalgebra::{DMatrix, DVector};
pub use num_complex::Complex64 as C64;

pub type CMat = DMatrix<C64>;
pub type CVec = DVector<C64>;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

pub fn zeros(n: usize) -> CMat {
    CMat::zeros(n, n)
}

pub fn identity(n: usize) -> CMat {
    CMat::identity(n, n)
}

pub fn dagger(m: &CMat) -> CMat {
    m.adjoint()
}

pub fn commutator(a: &CMat, b: &CMat) -> CMat {
    a * b - b * a
}

pub fn trace(m: &CMat) -> C64 {
    m.diagonal().iter().sum()
}

/// `(m + m†)/2`.
pub fn hermitian_part(m: &CMat) -> CMat {
    (m + m.adjoint()).scale(0.5)
}

/// Largest entry-wise modulus of `m - m†`.
pub fn hermiticity_defect(m: &CMat) -> f64 {
    let d = m - m.adjoint();
    d.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

pub fn kron(a: &CMat, b: &CMat) -> CMat {
    a.kronecker(b)
}

/// Frobenius norm.
pub fn fro(m: &CMat) -> f64 {
    m.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Eigen-decomposition of a Hermitian matrix with eigenvalues sorted
/// ascending. Columns of the returned matrix are the eigenvectors.
pub fn eigh(h: &CMat) -> (Vec<f64>, CMat) {
    let n = h.nrows();
    let eig = hermitian_part(h).symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = CMat::from_fn(n, n, |i, j| eig.eigenvectors[(i, order[j])]);
    (values, vectors)
}

/// `exp(-i h dt)` for Hermitian `h`.
pub fn expm_hermitian(h: &CMat, dt: f64) -> CMat {
    let (values, vecs) = eigh(h);
    let n = h.nrows();
    let phases = CMat::from_fn(n, n, |i, j| {
        if i == j {
            C64::from_polar(1.0, -values[i] * dt)
        } else {
            ZERO
        }
    });
    &vecs * phases * vecs.adjoint()
}

/// Smallest eigenvalue of the Hermitian part of `m`.
pub fn min_eigenvalue(m: &CMat) -> f64 {
    let eig = hermitian_part(m).symmetric_eigen();
    eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Annihilation operator truncated to `d` Fock levels.
pub fn annihilation(d: usize) -> CMat {
    CMat::from_fn(d, d, |i, j| {
        if j == i + 1 {
            C64::from(((i + 1) as f64).sqrt())
        } else {
            ZERO
        }
    })
}

pub fn number_op(d: usize) -> CMat {
    CMat::from_fn(d, d, |i, j| if i == j { C64::from(i as f64) } else { ZERO })
}

/// `|i⟩⟨j|` in dimension `n`.
pub fn ket_bra(n: usize, i: usize, j: usize) -> CMat {
    let mut m = zeros(n);
    m[(i, j)] = ONE;
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expm_of_pauli_x_is_rotation() {
        let x = CMat::from_row_slice(2, 2, &[ZERO, ONE, ONE, ZERO]);
        let u = expm_hermitian(&x, 0.3);
        assert!((u[(0, 0)] - C64::from(0.3f64.cos())).norm() < 1e-14);
        assert!((u[(0, 1)] - C64::new(0.0, -(0.3f64.sin()))).norm() < 1e-14);
        let id = &u * u.adjoint();
        assert!(fro(&(id - identity(2))) < 1e-14);
    }

    #[test]
    fn eigh_sorts_ascending() {
        let h = CMat::from_diagonal(&CVec::from_vec(vec![
            C64::from(3.0),
            C64::from(-1.0),
            C64::from(0.5),
        ]));
        let (vals, vecs) = eigh(&h);
        assert_eq!(vals, vec![-1.0, 0.5, 3.0]);
        assert!((vecs[(1, 0)].norm() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn ladder_commutator_below_cutoff() {
        let a = annihilation(4);
        let c = &a * a.adjoint() - a.adjoint() * &a;
        for k in 0..3 {
            assert!((c[(k, k)] - ONE).norm() < 1e-14);
        }
    }
}
