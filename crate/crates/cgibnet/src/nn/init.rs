//! Weight initialization: uniform fan-in scaling for feed-forward weights,
//! orthogonal for recurrent kernels.

use crate::rng::Pcg;

/// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)).
pub fn fan_in_uniform(rng: &mut Pcg, fan_in: usize) -> impl FnMut() -> f64 + '_ {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    move || rng.uniform_in(-bound, bound)
}

/// Random orthogonal rows x cols matrix (row-major), via modified
/// Gram-Schmidt on a Gaussian matrix. For non-square shapes the rows (or
/// columns, whichever is smaller) form an orthonormal set.
pub fn orthogonal(rng: &mut Pcg, rows: usize, cols: usize) -> Vec<f64> {
    let transpose = rows < cols;
    let (m, n) = if transpose { (cols, rows) } else { (rows, cols) };
    // m >= n: orthonormalize n columns of an m x n Gaussian matrix
    let mut a = vec![0.0; m * n];
    rng.fill_normal(&mut a);
    for j in 0..n {
        for k in 0..j {
            let mut dot = 0.0;
            for i in 0..m {
                dot += a[i * n + j] * a[i * n + k];
            }
            for i in 0..m {
                a[i * n + j] -= dot * a[i * n + k];
            }
        }
        let norm: f64 = (0..m).map(|i| a[i * n + j] * a[i * n + j]).sum::<f64>().sqrt();
        let inv = if norm > 1e-12 { 1.0 / norm } else { 0.0 };
        for i in 0..m {
            a[i * n + j] *= inv;
        }
    }
    if transpose {
        let mut out = vec![0.0; rows * cols];
        for i in 0..m {
            for j in 0..n {
                out[j * cols + i] = a[i * n + j];
            }
        }
        out
    } else {
        a
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orthogonal_square_has_orthonormal_columns() {
        let mut rng = Pcg::from_seed_u64(5);
        let n = 16;
        let q = orthogonal(&mut rng, n, n);
        for c1 in 0..n {
            for c2 in c1..n {
                let dot: f64 = (0..n).map(|r| q[r * n + c1] * q[r * n + c2]).sum();
                let expect = if c1 == c2 { 1.0 } else { 0.0 };
                assert!((dot - expect).abs() < 1e-10, "cols {c1},{c2}: {dot}");
            }
        }
    }

    #[test]
    fn fan_in_bound_respected() {
        let mut rng = Pcg::from_seed_u64(9);
        let mut init = fan_in_uniform(&mut rng, 64);
        for _ in 0..100 {
            let v = init();
            assert!(v.abs() <= 0.125);
        }
    }
}
