//! Small dense linear algebra used by the topology and model modules.

use nalgebra::DMatrix;

/// Square row-major matrix.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Square {
    n: usize,
    data: Vec<f64>,
}

impl Square {
    pub fn zeros(n: usize) -> Self {
        Square { n, data: vec![0.0; n * n] }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Option<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return None;
        }
        Some(Square { n, data: rows.concat() })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.n + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.n..(i + 1) * self.n]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.n.max(1)).take(self.n).map(|r| r.to_vec()).collect()
    }

    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
        }
    }

    /// `self - 11ᵀ/n`
    pub fn deflate_uniform(&self) -> Square {
        let mut out = self.clone();
        let shift = 1.0 / self.n as f64;
        out.data.iter_mut().for_each(|v| *v -= shift);
        out
    }

    pub fn to_nalgebra(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n, self.n, &self.data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct PowerIterationFailed {
    pub iterations: usize,
    pub last_estimate: f64,
}

/// Largest absolute eigenvalue of a symmetric matrix by power iteration.
///
/// The estimate at each step is `‖A x‖` for the current unit iterate `x`,
/// which converges to the spectral radius even when `±ρ` are both
/// eigenvalues (the iterate then oscillates but its image norm does not).
pub(crate) fn power_iteration_abs_max(
    a: &Square,
    tol: f64,
    max_iter: usize,
) -> Result<f64, PowerIterationFailed> {
    let n = a.size();
    if n == 0 {
        return Ok(0.0);
    }
    // Fixed, generic start vector: irrational increments avoid accidental
    // orthogonality with structured eigenvectors.
    let mut x: Vec<f64> = (0..n)
        .map(|i| 1.0 + ((i as f64 + 1.0) * 0.618_033_988_749_895).fract())
        .collect();
    normalize(&mut x);
    let mut y = vec![0.0; n];
    let mut prev = f64::NAN;
    for _ in 0..max_iter {
        a.mul_vec(&x, &mut y);
        let est = norm(&y);
        if est == 0.0 {
            return Ok(0.0);
        }
        if (est - prev).abs() < tol {
            return Ok(est);
        }
        prev = est;
        y.iter_mut().for_each(|v| *v /= est);
        std::mem::swap(&mut x, &mut y);
    }
    Err(PowerIterationFailed { iterations: max_iter, last_estimate: prev })
}

/// All eigenvalues of a symmetric matrix, ascending.
pub(crate) fn symmetric_eigenvalues(a: &DMatrix<f64>) -> Vec<f64> {
    let mut values: Vec<f64> = a.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
    values.sort_by(f64::total_cmp);
    values
}

/// Largest eigenvalue of `XᵀX / scale` where `X` has the given rows.
///
/// Uses whichever of the two Gram forms (`XᵀX` or `XXᵀ`) is smaller; both
/// share their nonzero spectrum.
pub(crate) fn gram_max_eigenvalue(rows: &[&[f64]], scale: f64) -> f64 {
    let n = rows.len();
    if n == 0 {
        return 0.0;
    }
    let m = rows[0].len();
    let gram = if n <= m {
        DMatrix::from_fn(n, n, |i, j| rows[i].iter().zip(rows[j]).map(|(a, b)| a * b).sum())
    } else {
        let mut g = DMatrix::zeros(m, m);
        for r in rows {
            for a in 0..m {
                if r[a] == 0.0 {
                    continue;
                }
                for b in a..m {
                    g[(a, b)] += r[a] * r[b];
                }
            }
        }
        for a in 0..m {
            for b in 0..a {
                g[(a, b)] = g[(b, a)];
            }
        }
        g
    };
    symmetric_eigenvalues(&gram).last().copied().unwrap_or(0.0).max(0.0) / scale
}

pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn normalize(x: &mut [f64]) {
    let n = norm(x);
    x.iter_mut().for_each(|v| *v /= n);
}
