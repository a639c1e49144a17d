//! Dense complex linear algebra support: Hermitian eigendecomposition,
//! distance/fidelity measures and Schmidt spectra.
//!
//! Everything here works on bare `ndarray` matrices; measure factors
//! (`dt` weights) are passed explicitly by callers so the routines stay
//! convention-free. The eigensolver is a cyclic complex Jacobi iteration:
//! deterministic, dependency-free and more than fast enough for the grid
//! sizes this crate targets (n <= a few hundred).

use ndarray::{Array1, Array2};
use num_complex::Complex64 as C64;
use thiserror::Error;

/// Errors from dense matrix routines.
#[derive(Debug, Error)]
pub enum LinalgError {
    /// Returned when a square matrix is required.
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },

    /// Returned when a Hermitian matrix is required and the input is not
    /// Hermitian within `tol`.
    #[error("matrix is not Hermitian (max asymmetry {asymmetry:.3e}, tolerance {tol:.3e})")]
    NotHermitian { asymmetry: f64, tol: f64 },

    /// Returned when two operands have incompatible shapes.
    #[error("shape mismatch: {a:?} vs {b:?}")]
    ShapeMismatch { a: (usize, usize), b: (usize, usize) },

    /// Returned when the Jacobi iteration fails to converge.
    #[error("eigensolver did not converge in {sweeps} sweeps (residual {residual:.3e})")]
    NoConvergence { sweeps: usize, residual: f64 },
}

/// Largest `|A[i,j] - conj(A[j,i])|` over all pairs.
pub fn hermiticity_defect(a: &Array2<C64>) -> f64 {
    let n = a.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in i..n {
            let d = (a[(i, j)] - a[(j, i)].conj()).norm();
            worst = worst.max(d);
        }
    }
    worst
}

/// Conjugate transpose.
pub fn dagger(a: &Array2<C64>) -> Array2<C64> {
    Array2::from_shape_fn((a.ncols(), a.nrows()), |(i, j)| a[(j, i)].conj())
}

/// Inner product `sum conj(a_j) b_j * dt` of two amplitude vectors.
pub fn inner(a: &Array1<C64>, b: &Array1<C64>, dt: f64) -> C64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| x.conj() * y)
        .sum::<C64>()
        * dt
}

/// Eigendecomposition of a Hermitian matrix by cyclic complex Jacobi
/// rotations.
///
/// Returns `(values, vectors)` with eigenvalues sorted descending and the
/// matching eigenvectors as the columns of `vectors`, so that
/// `a = vectors * diag(values) * vectors^H`. The input is symmetrized as
/// `(A + A^H)/2` before iterating; it must be Hermitian to within
/// `1e-8 * max|A|` or the call fails. The tolerance has an absolute
/// floor of `1e-14` so that near-zero matrices (differences of nearly
/// equal states) are not rejected over rounding noise.
pub fn hermitian_eigen(a: &Array2<C64>) -> Result<(Array1<f64>, Array2<C64>), LinalgError> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(LinalgError::NotSquare {
            rows: n,
            cols: a.ncols(),
        });
    }
    let scale = a.iter().map(|z| z.norm()).fold(0.0f64, f64::max);
    let tol = (1e-8 * scale).max(1e-14);
    let defect = hermiticity_defect(a);
    if defect > tol {
        return Err(LinalgError::NotHermitian {
            asymmetry: defect,
            tol,
        });
    }

    let mut m = Array2::from_shape_fn((n, n), |(i, j)| (a[(i, j)] + a[(j, i)].conj()) * 0.5);
    let mut v = Array2::from_shape_fn((n, n), |(i, j)| {
        if i == j {
            C64::new(1.0, 0.0)
        } else {
            C64::new(0.0, 0.0)
        }
    });

    let off_norm = |m: &Array2<C64>| -> f64 {
        let mut s = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                s += m[(p, q)].norm_sqr();
            }
        }
        s.sqrt()
    };

    const MAX_SWEEPS: usize = 60;
    let stop = 1e-14 * scale.max(1e-300) * n as f64;
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        if off_norm(&m) <= stop {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[(p, q)];
                let mag = apq.norm();
                if mag <= stop / (n as f64) {
                    continue;
                }
                let app = m[(p, p)].re;
                let aqq = m[(q, q)].re;
                let phase = apq / mag;
                let tau = (aqq - app) / (2.0 * mag);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let sigma = phase * s;

                // Columns p, q of M and V: right-multiply by the rotation.
                for r in 0..n {
                    let mp = m[(r, p)];
                    let mq = m[(r, q)];
                    m[(r, p)] = mp * c - mq * sigma.conj();
                    m[(r, q)] = mp * sigma + mq * c;
                    let vp = v[(r, p)];
                    let vq = v[(r, q)];
                    v[(r, p)] = vp * c - vq * sigma.conj();
                    v[(r, q)] = vp * sigma + vq * c;
                }
                // Rows p, q of M: left-multiply by the adjoint rotation.
                for r in 0..n {
                    let mp = m[(p, r)];
                    let mq = m[(q, r)];
                    m[(p, r)] = mp * c - mq * sigma;
                    m[(q, r)] = mp * sigma.conj() + mq * c;
                }
                // Clean up rounding on the eliminated pair.
                m[(p, q)] = C64::new(0.0, 0.0);
                m[(q, p)] = C64::new(0.0, 0.0);
                m[(p, p)] = C64::new(m[(p, p)].re, 0.0);
                m[(q, q)] = C64::new(m[(q, q)].re, 0.0);
            }
        }
    }
    if !converged && off_norm(&m) > stop {
        return Err(LinalgError::NoConvergence {
            sweeps: MAX_SWEEPS,
            residual: off_norm(&m),
        });
    }

    let mut order: Vec<usize> = (0..n).collect();
    let diag: Vec<f64> = (0..n).map(|i| m[(i, i)].re).collect();
    order.sort_by(|&i, &j| diag[j].partial_cmp(&diag[i]).unwrap());
    let values = Array1::from_iter(order.iter().map(|&i| diag[i]));
    let vectors = Array2::from_shape_fn((n, n), |(r, c)| v[(r, order[c])]);
    Ok((values, vectors))
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(a: &Array2<C64>) -> Result<f64, LinalgError> {
    let (vals, _) = hermitian_eigen(a)?;
    Ok(vals[vals.len() - 1])
}

/// Trace distance `(1/2) Tr |A - B|` between two Hermitian kernels whose
/// trace carries the measure `dt`.
pub fn trace_distance(a: &Array2<C64>, b: &Array2<C64>, dt: f64) -> Result<f64, LinalgError> {
    if a.dim() != b.dim() {
        return Err(LinalgError::ShapeMismatch {
            a: a.dim(),
            b: b.dim(),
        });
    }
    let diff = a - b;
    let (vals, _) = hermitian_eigen(&diff)?;
    Ok(0.5 * dt * vals.iter().map(|x| x.abs()).sum::<f64>())
}

/// Overlap fidelity `<psi| rho |psi>` of a pure state with a density
/// kernel, both on a grid of step `dt`.
pub fn fidelity_pure(psi: &Array1<C64>, rho: &Array2<C64>, dt: f64) -> f64 {
    let n = psi.len();
    let mut acc = C64::new(0.0, 0.0);
    for m in 0..n {
        for k in 0..n {
            acc += psi[m].conj() * rho[(m, k)] * psi[k];
        }
    }
    (acc * dt * dt).re
}

/// Schmidt amplitudes of a two-photon amplitude matrix `amp[(j1, j2)]`
/// with grid measures `dt1`, `dt2`, sorted descending.
///
/// The squared amplitudes sum to the squared norm of the state (1 for a
/// normalized state). Computed from the Hermitian Gram matrix, accurate to
/// about the square root of machine epsilon for the smallest values.
pub fn schmidt_values(amp: &Array2<C64>, dt1: f64, dt2: f64) -> Result<Vec<f64>, LinalgError> {
    let scale = (dt1 * dt2).sqrt();
    let b = amp.mapv(|z| z * scale);
    let gram = dagger(&b).dot(&b);
    let (vals, _) = hermitian_eigen(&gram)?;
    Ok(vals.iter().map(|&l| l.max(0.0).sqrt()).collect())
}

/// Effective number of Schmidt modes `(sum s^2)^2 / sum s^4`.
pub fn schmidt_number(values: &[f64]) -> f64 {
    let s2: f64 = values.iter().map(|s| s * s).sum();
    let s4: f64 = values.iter().map(|s| s.powi(4)).sum();
    s2 * s2 / s4
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::prelude::*;

    fn random_hermitian(n: usize, seed: u64) -> Array2<C64> {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let raw = Array2::from_shape_fn((n, n), |_| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        &raw + &dagger(&raw)
    }

    #[test]
    fn known_two_by_two() {
        // [[1, i], [-i, 1]] has eigenvalues 2 and 0.
        let a = ndarray::array![
            [C64::new(1.0, 0.0), C64::new(0.0, 1.0)],
            [C64::new(0.0, -1.0), C64::new(1.0, 0.0)]
        ];
        let (vals, vecs) = hermitian_eigen(&a).unwrap();
        assert!((vals[0] - 2.0).abs() < 1e-14);
        assert!(vals[1].abs() < 1e-14);
        // A v = lambda v for the leading eigenvector.
        let v0 = vecs.column(0).to_owned();
        let av = a.dot(&v0);
        let err = av
            .iter()
            .zip(v0.iter())
            .map(|(x, y)| (x - y * vals[0]).norm())
            .fold(0.0f64, f64::max);
        assert!(err < 1e-13);
    }

    #[test]
    fn reconstructs_random_hermitian() {
        let a = random_hermitian(24, 7);
        let (vals, vecs) = hermitian_eigen(&a).unwrap();
        let lam = Array2::from_shape_fn((24, 24), |(i, j)| {
            if i == j {
                C64::new(vals[i], 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let rebuilt = vecs.dot(&lam).dot(&dagger(&vecs));
        let err = (&rebuilt - &a).iter().map(|z| z.norm()).fold(0.0f64, f64::max);
        assert!(err < 1e-10, "reconstruction error {err}");
        // Eigenvectors orthonormal.
        let gram = dagger(&vecs).dot(&vecs);
        for i in 0..24 {
            for j in 0..24 {
                let want = if i == j { 1.0 } else { 0.0 };
                assert!((gram[(i, j)] - C64::new(want, 0.0)).norm() < 1e-11);
            }
        }
    }

    #[test]
    fn identity_is_a_fixed_point() {
        let eye = Array2::from_shape_fn((8, 8), |(i, j)| {
            if i == j {
                C64::new(1.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let (vals, _) = hermitian_eigen(&eye).unwrap();
        for v in vals.iter() {
            assert!((v - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_non_hermitian() {
        let a = ndarray::array![
            [C64::new(1.0, 0.0), C64::new(1.0, 0.0)],
            [C64::new(0.0, 0.0), C64::new(1.0, 0.0)]
        ];
        assert!(matches!(
            hermitian_eigen(&a),
            Err(LinalgError::NotHermitian { .. })
        ));
    }

    #[test]
    fn trace_distance_of_orthogonal_pure_kernels_is_one() {
        // Spikes at different bins, kernel convention: rho = psi psi^H with
        // sum |psi|^2 dt = 1.
        let dt = 0.5;
        let n = 8;
        let mut a = Array2::from_elem((n, n), C64::new(0.0, 0.0));
        let mut b = a.clone();
        a[(2, 2)] = C64::new(1.0 / dt, 0.0);
        b[(5, 5)] = C64::new(1.0 / dt, 0.0);
        let d = trace_distance(&a, &b, dt).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
        assert!(trace_distance(&a, &a, dt).unwrap() < 1e-14);
    }

    #[test]
    fn schmidt_of_product_and_bell_like_states() {
        let n = 6;
        let dt = 0.3;
        // Product spike state: single Schmidt value 1.
        let mut prod = Array2::from_elem((n, n), C64::new(0.0, 0.0));
        prod[(1, 4)] = C64::new(1.0 / dt, 0.0);
        let sv = schmidt_values(&prod, dt, dt).unwrap();
        assert!((sv[0] - 1.0).abs() < 1e-12);
        assert!(sv[1] < 1e-8);
        assert!((schmidt_number(&sv) - 1.0).abs() < 1e-10);

        // Two equal diagonal spikes: two Schmidt values 1/sqrt(2).
        let mut bell = Array2::from_elem((n, n), C64::new(0.0, 0.0));
        let amp = 1.0 / (2.0f64.sqrt() * dt);
        bell[(0, 0)] = C64::new(amp, 0.0);
        bell[(3, 3)] = C64::new(amp, 0.0);
        let sv = schmidt_values(&bell, dt, dt).unwrap();
        assert!((sv[0] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((sv[1] - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-12);
        assert!((schmidt_number(&sv) - 2.0).abs() < 1e-9);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]
        #[test]
        fn eigen_reconstructs(seed in 0u64..1000) {
            let a = random_hermitian(6, seed);
            let (vals, vecs) = hermitian_eigen(&a).unwrap();
            let lam = Array2::from_shape_fn((6, 6), |(i, j)| {
                if i == j { C64::new(vals[i], 0.0) } else { C64::new(0.0, 0.0) }
            });
            let rebuilt = vecs.dot(&lam).dot(&dagger(&vecs));
            let err = (&rebuilt - &a).iter().map(|z| z.norm()).fold(0.0f64, f64::max);
            prop_assert!(err < 1e-11);
        }
    }
}
