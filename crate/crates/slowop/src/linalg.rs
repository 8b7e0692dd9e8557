//! Internal dense and iterative linear algebra helpers.

use ndarray::{Array1, Array2};
use ndarray_linalg::{Eigh, SVDDC, UPLO};
use rand::Rng;
use rand_chacha::ChaCha20Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("dense eigensolver failed: {0}")]
    Eigh(String),
    #[error("SVD failed: {0}")]
    Svd(String),
    #[error("Lanczos did not converge after {iters} iterations (residual {residual:.3e})")]
    LanczosNoConvergence { iters: usize, residual: f64 },
}

/// Dense symmetric eigendecomposition, eigenvalues ascending.
pub fn eigh(a: &Array2<f64>) -> Result<(Array1<f64>, Array2<f64>), LinalgError> {
    a.eigh(UPLO::Lower).map_err(|e| LinalgError::Eigh(e.to_string()))
}

/// Thin SVD via divide and conquer.
pub fn svd(a: &Array2<f64>) -> Result<(Array2<f64>, Array1<f64>, Array2<f64>), LinalgError> {
    let (u, s, vt) = a
        .svddc(ndarray_linalg::JobSvd::Some)
        .map_err(|e| LinalgError::Svd(e.to_string()))?;
    Ok((u.unwrap(), s, vt.unwrap()))
}

pub struct LanczosOutcome {
    pub value: f64,
    pub vector: Vec<f64>,
    pub residual: f64,
    /// Distance from the smallest to the next Ritz value.
    pub ritz_gap: f64,
    #[allow(dead_code)]
    pub iterations: usize,
    pub converged: bool,
}

pub struct LanczosConfig {
    pub max_subspace: usize,
    pub max_restarts: usize,
    pub tol: f64,
}

impl Default for LanczosConfig {
    fn default() -> Self {
        LanczosConfig { max_subspace: 300, max_restarts: 6, tol: 1e-10 }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn axpy(y: &mut [f64], alpha: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

fn project_out(v: &mut [f64], basis: &[Vec<f64>]) {
    for b in basis {
        let c = dot(v, b);
        axpy(v, -c, b);
    }
}

/// Smallest eigenpair of a symmetric operator by Lanczos iteration with full
/// reorthogonalization and plain restarts.
///
/// Every Krylov vector is kept orthogonal to the `deflate` set, so the
/// returned pair lives in the orthogonal complement of that span.
pub fn lanczos_smallest<F>(
    mut apply: F,
    dim: usize,
    start: Option<&[f64]>,
    deflate: &[Vec<f64>],
    cfg: &LanczosConfig,
    rng: &mut ChaCha20Rng,
) -> Result<LanczosOutcome, LinalgError>
where
    F: FnMut(&[f64], &mut [f64]),
{
    assert!(dim > 0);
    let effective_dim = dim.saturating_sub(deflate.len());
    let m_cap = cfg.max_subspace.min(effective_dim.max(1));

    let mut v0: Vec<f64> = match start {
        Some(s) => s.to_vec(),
        None => (0..dim).map(|_| rng.gen::<f64>() - 0.5).collect(),
    };
    project_out(&mut v0, deflate);
    let mut n0 = norm(&v0);
    if n0 < 1e-14 {
        v0 = (0..dim).map(|_| rng.gen::<f64>() - 0.5).collect();
        project_out(&mut v0, deflate);
        n0 = norm(&v0);
    }
    for x in &mut v0 {
        *x /= n0;
    }

    let mut best: Option<LanczosOutcome> = None;
    let mut total_iters = 0usize;

    for _restart in 0..=cfg.max_restarts {
        let mut basis: Vec<Vec<f64>> = vec![v0.clone()];
        let mut alphas: Vec<f64> = Vec::new();
        let mut betas: Vec<f64> = Vec::new();
        let mut w = vec![0.0; dim];
        let mut breakdown = false;

        for j in 0..m_cap {
            apply(&basis[j], &mut w);
            let alpha = dot(&w, &basis[j]);
            alphas.push(alpha);
            // Full reorthogonalization, run twice for stability.
            for _ in 0..2 {
                project_out(&mut w, deflate);
                for b in &basis {
                    let c = dot(&w, b);
                    axpy(&mut w, -c, b);
                }
            }
            let beta = norm(&w);
            total_iters += 1;
            if beta < 1e-13 || j + 1 == m_cap {
                if beta < 1e-13 {
                    breakdown = true;
                }
                break;
            }
            // Cheap early exit: the Ritz residual of the smallest pair is
            // beta * |last component of its tridiagonal eigenvector|.
            let m = alphas.len();
            if m >= 3 && (m % 4 == 0 || m == m_cap - 1) {
                let mut t = Array2::<f64>::zeros((m, m));
                for i in 0..m {
                    t[[i, i]] = alphas[i];
                    if i + 1 < m {
                        t[[i, i + 1]] = betas[i];
                        t[[i + 1, i]] = betas[i];
                    }
                }
                if let Ok((tvals, tvecs)) = eigh(&t) {
                    let scale = tvals[m - 1].abs().max(1.0);
                    if beta * tvecs[[m - 1, 0]].abs() <= 0.5 * cfg.tol * scale {
                        break;
                    }
                }
            }
            betas.push(beta);
            let next: Vec<f64> = w.iter().map(|x| x / beta).collect();
            basis.push(next);
        }

        let m = alphas.len();
        let mut t = Array2::<f64>::zeros((m, m));
        for i in 0..m {
            t[[i, i]] = alphas[i];
            if i + 1 < m {
                t[[i, i + 1]] = betas[i];
                t[[i + 1, i]] = betas[i];
            }
        }
        let (tvals, tvecs) = eigh(&t)?;
        let mut vec = vec![0.0; dim];
        for (j, b) in basis.iter().enumerate() {
            axpy(&mut vec, tvecs[[j, 0]], b);
        }
        project_out(&mut vec, deflate);
        let nv = norm(&vec);
        for x in &mut vec {
            *x /= nv;
        }
        let mut hv = vec![0.0; dim];
        apply(&vec, &mut hv);
        let value = dot(&vec, &hv);
        axpy(&mut hv, -value, &vec);
        project_out(&mut hv, deflate);
        let residual = norm(&hv);
        let ritz_gap = if m > 1 { tvals[1] - tvals[0] } else { f64::INFINITY };

        let scale = tvals[m - 1].abs().max(1.0);
        let converged = residual <= cfg.tol * scale;
        let outcome = LanczosOutcome { value, vector: vec, residual, ritz_gap, iterations: total_iters, converged };
        let improved = best.as_ref().map(|b| outcome.value < b.value || outcome.residual < b.residual).unwrap_or(true);
        if improved {
            v0 = outcome.vector.clone();
            best = Some(outcome);
        }
        let b = best.as_ref().unwrap();
        if b.converged || breakdown || effective_dim <= m {
            break;
        }
    }

    best.ok_or(LinalgError::LanczosNoConvergence { iters: total_iters, residual: f64::NAN })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;

    #[test]
    fn lanczos_matches_dense_on_random_matrix() {
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let n = 60;
        let mut a = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..=i {
                let v: f64 = rng.gen::<f64>() - 0.5;
                a[[i, j]] = v;
                a[[j, i]] = v;
            }
        }
        let (vals, _) = eigh(&a).unwrap();
        let out = lanczos_smallest(
            |x, y| {
                for (i, yi) in y.iter_mut().enumerate() {
                    *yi = (0..n).map(|j| a[[i, j]] * x[j]).sum();
                }
            },
            n,
            None,
            &[],
            &LanczosConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert!(out.converged);
        assert_abs_diff_eq!(out.value, vals[0], epsilon = 1e-9);
    }

    #[test]
    fn lanczos_respects_deflation() {
        // diag(0, 1, 2, ...) with e0 deflated: smallest becomes 1.
        let n = 40;
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let mut e0 = vec![0.0; n];
        e0[0] = 1.0;
        let out = lanczos_smallest(
            |x, y| {
                for i in 0..n {
                    y[i] = i as f64 * x[i];
                }
            },
            n,
            None,
            &[e0],
            &LanczosConfig::default(),
            &mut rng,
        )
        .unwrap();
        assert_abs_diff_eq!(out.value, 1.0, epsilon = 1e-9);
        assert!(out.vector[0].abs() < 1e-10);
    }

    #[test]
    fn svd_reconstructs() {
        let a = ndarray::array![[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]];
        let (u, s, vt) = svd(&a).unwrap();
        let rebuilt = u.dot(&Array2::from_diag(&s)).dot(&vt);
        for (x, y) in a.iter().zip(rebuilt.iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }
}
