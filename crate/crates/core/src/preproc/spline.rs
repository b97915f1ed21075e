//! Spherical-spline interpolation of scalp potentials (order m = 4, seven
//! Legendre terms).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const SPLINE_ORDER: i32 = 4;
pub const LEGENDRE_TERMS: usize = 7;

/// g(x) = 1/(4π) Σ_{n=1..7} (2n+1) / (n(n+1))^m · P_n(x)
pub fn spline_kernel(cos_angle: f64) -> f64 {
    let x = cos_angle.clamp(-1.0, 1.0);
    let (mut p_prev, mut p) = (1.0, x);
    let mut sum = 0.0;
    for n in 1..=LEGENDRE_TERMS {
        let nf = n as f64;
        sum += (2.0 * nf + 1.0) / (nf * (nf + 1.0)).powi(SPLINE_ORDER) * p;
        let next = ((2.0 * nf + 1.0) * x * p - nf * p_prev) / (nf + 1.0);
        p_prev = p;
        p = next;
    }
    sum / (4.0 * std::f64::consts::PI)
}

fn dot(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

/// Weights `W` (targets × sources) such that the spline fitted to values at
/// `sources`, evaluated at `targets`, is `W · values`.
///
/// With seven Legendre terms the kernel matrix has rank at most 63, so dense
/// montages make the system singular; the minimum-norm solution (SVD
/// pseudo-inverse) is used throughout.
pub fn interpolation_matrix(sources: &[[f64; 3]], targets: &[[f64; 3]]) -> Result<Vec<Vec<f64>>> {
    let n = sources.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!(
            "spline interpolation needs at least 2 source channels, got {n}"
        )));
    }
    let mut a = DMatrix::<f64>::zeros(n + 1, n + 1);
    for i in 0..n {
        for j in 0..n {
            a[(i, j)] = spline_kernel(dot(&sources[i], &sources[j]));
        }
        a[(i, n)] = 1.0;
        a[(n, i)] = 1.0;
    }
    let pinv = a
        .svd(true, true)
        .pseudo_inverse(1e-12)
        .map_err(|e| Error::InvalidInput(format!("spline system: {e}")))?;
    Ok(targets
        .iter()
        .map(|t| {
            let mut rhs = DVector::<f64>::zeros(n + 1);
            for j in 0..n {
                rhs[j] = spline_kernel(dot(t, &sources[j]));
            }
            rhs[n] = 1.0;
            // the system matrix is symmetric, so row weights are pinv · rhs
            let w = &pinv * rhs;
            w.as_slice()[..n].to_vec()
        })
        .collect())
}
