//! Fréchet distance between Gaussian moment pairs, with the symmetric
//! eigendecomposition route for the matrix square root.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Eigenvalues below this are an error; small negatives above it clamp to 0.
const PSD_TOL: f64 = 1e-6;

/// Cyclic Jacobi eigendecomposition of a symmetric matrix (row-major n*n).
/// Returns (eigenvalues, eigenvectors as rows of V so that A = V^T D V).
pub fn sym_eig(a: &[f64], n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if a.len() != n * n {
        return Err(Error::Numeric {
            detail: format!("sym_eig wants {n}x{n}, got {} entries", a.len()),
        });
    }
    let mut m = a.to_vec();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..64 {
        let mut off = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                off += m[i * n + j] * m[i * n + j];
            }
        }
        if off.sqrt() < 1e-14 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let app = m[p * n + p];
                let aqq = m[q * n + q];
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[k * n + p];
                    let mkq = m[k * n + q];
                    m[k * n + p] = c * mkp - s * mkq;
                    m[k * n + q] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[p * n + k];
                    let mqk = m[q * n + k];
                    m[p * n + k] = c * mpk - s * mqk;
                    m[q * n + k] = s * mpk + c * mqk;
                }
                for k in 0..n {
                    let vpk = v[p * n + k];
                    let vqk = v[q * n + k];
                    v[p * n + k] = c * vpk - s * vqk;
                    v[q * n + k] = s * vpk + c * vqk;
                }
            }
        }
    }
    let eig = (0..n).map(|i| m[i * n + i]).collect();
    Ok((eig, v))
}

fn matmul_sq(a: &[f64], b: &[f64], n: usize) -> Vec<f64> {
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        for k in 0..n {
            let av = a[i * n + k];
            if av == 0.0 {
                continue;
            }
            for j in 0..n {
                c[i * n + j] += av * b[k * n + j];
            }
        }
    }
    c
}

/// Symmetric PSD square root via eigendecomposition.
fn sqrt_psd(a: &[f64], n: usize, what: &str) -> Result<Vec<f64>> {
    let (eig, v) = sym_eig(a, n)?;
    let mut roots = vec![0.0; n];
    for (i, &l) in eig.iter().enumerate() {
        if l < -PSD_TOL {
            return Err(Error::Numeric {
                detail: format!("{what} is not PSD: eigenvalue {l:.3e}"),
            });
        }
        roots[i] = l.max(0.0).sqrt();
    }
    // A^(1/2) = V^T diag(sqrt(l)) V  (V rows are eigenvectors)
    let mut sd = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            sd[i * n + j] = roots[i] * v[i * n + j];
        }
    }
    let mut vt = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            vt[i * n + j] = v[j * n + i];
        }
    }
    Ok(matmul_sq(&vt, &sd, n))
}

/// ||mu1 - mu2||^2 + Tr(S1 + S2 - 2 sqrt(S1^(1/2) S2 S1^(1/2))).
///
/// The product square root is taken on the symmetrized congruence
/// A = S1^(1/2) S2 S1^(1/2); eigenvalues below -1e-6 are an error and small
/// negatives clamp to zero.
pub fn frechet_distance(
    mu1: &[f64],
    sigma1: &[f64],
    mu2: &[f64],
    sigma2: &[f64],
) -> Result<f64> {
    let n = mu1.len();
    if mu2.len() != n || sigma1.len() != n * n || sigma2.len() != n * n {
        return Err(Error::Numeric {
            detail: "frechet_distance: dimension mismatch".into(),
        });
    }
    let mean_term: f64 = mu1
        .iter()
        .zip(mu2)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();

    let s1_half = sqrt_psd(sigma1, n, "sigma1")?;
    let inner = matmul_sq(&matmul_sq(&s1_half, sigma2, n), &s1_half, n);
    // Symmetrize against float drift before the second eig.
    let mut sym = inner.clone();
    for i in 0..n {
        for j in 0..n {
            sym[i * n + j] = 0.5 * (inner[i * n + j] + inner[j * n + i]);
        }
    }
    let (eig, _) = sym_eig(&sym, n)?;
    let mut tr_sqrt = 0.0;
    for &l in &eig {
        if l < -PSD_TOL {
            return Err(Error::Numeric {
                detail: format!("product matrix is not PSD: eigenvalue {l:.3e}"),
            });
        }
        tr_sqrt += l.max(0.0).sqrt();
    }
    let tr1: f64 = (0..n).map(|i| sigma1[i * n + i]).sum();
    let tr2: f64 = (0..n).map(|i| sigma2[i * n + i]).sum();
    Ok((mean_term + tr1 + tr2 - 2.0 * tr_sqrt).max(0.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobi_recovers_diagonal_and_known_matrix() {
        let (eig, _) = sym_eig(&[3.0, 0.0, 0.0, 7.0], 2).unwrap();
        let mut e = eig.clone();
        e.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((e[0] - 3.0).abs() < 1e-12 && (e[1] - 7.0).abs() < 1e-12);

        // [[2,1],[1,2]] has eigenvalues 1 and 3.
        let (eig, v) = sym_eig(&[2.0, 1.0, 1.0, 2.0], 2).unwrap();
        let mut e = eig.clone();
        e.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert!((e[0] - 1.0).abs() < 1e-12 && (e[1] - 3.0).abs() < 1e-12);
        // Reconstruct A = V^T D V.
        let n = 2;
        let mut recon = [0.0; 4];
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..n {
                    acc += v[k * n + i] * eig[k] * v[k * n + j];
                }
                recon[i * n + j] = acc;
            }
        }
        for (r, w) in recon.iter().zip([2.0, 1.0, 1.0, 2.0]) {
            assert!((r - w).abs() < 1e-10);
        }
    }

    #[test]
    fn identical_distributions_have_zero_distance() {
        let mu = [0.3, -0.7, 1.1];
        let sigma = [1.0, 0.2, 0.1, 0.2, 2.0, 0.0, 0.1, 0.0, 0.5];
        let d = frechet_distance(&mu, &sigma, &mu, &sigma).unwrap();
        assert!(d.abs() < 1e-8);
    }

    #[test]
    fn identity_covariances_norm2_shift_gives_4() {
        let mu1 = [0.0, 0.0];
        let mu2 = [2.0, 0.0];
        let eye = [1.0, 0.0, 0.0, 1.0];
        let d = frechet_distance(&mu1, &eye, &mu2, &eye).unwrap();
        assert!((d - 4.0).abs() < 1e-9);
    }

    /// Commuting diagonal case has the closed form sum (sqrt(a)-sqrt(b))^2.
    #[test]
    fn diagonal_closed_form_matches_eigen_path() {
        let mu = [0.0, 0.0];
        let s1 = [1.0, 0.0, 0.0, 4.0];
        let s2 = [9.0, 0.0, 0.0, 16.0];
        let d = frechet_distance(&mu, &s1, &mu, &s2).unwrap();
        // (1-3)^2 + (2-4)^2 = 8
        assert!((d - 8.0).abs() < 1e-9, "got {d}");
    }

    #[test]
    fn symmetric_in_the_two_distributions() {
        let mu1 = [0.1, 0.5];
        let mu2 = [-0.3, 0.2];
        let s1 = [1.5, 0.3, 0.3, 0.8];
        let s2 = [0.6, -0.1, -0.1, 1.1];
        let a = frechet_distance(&mu1, &s1, &mu2, &s2).unwrap();
        let b = frechet_distance(&mu2, &s2, &mu1, &s1).unwrap();
        assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn non_psd_input_is_an_error() {
        let mu = [0.0, 0.0];
        let bad = [1.0, 0.0, 0.0, -1.0];
        let eye = [1.0, 0.0, 0.0, 1.0];
        assert!(frechet_distance(&mu, &bad, &mu, &eye).is_err());
    }
}
