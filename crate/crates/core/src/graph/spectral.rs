//! Laplacians, spectral radius and Chebyshev polynomial bases.

use serde::{Deserialize, Serialize};

use super::{GraphError, LevelGraph};

/// Dense square matrix, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl SquareMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            data: vec![0.0; n * n],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let n = rows.len();
        assert!(rows.iter().all(|r| r.len() == n), "matrix must be square");
        Self {
            n,
            data: rows.concat(),
        }
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn matmul(&self, other: &SquareMatrix) -> SquareMatrix {
        let n = self.n;
        let mut out = SquareMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.data[i * n + k];
                if a == 0.0 {
                    continue;
                }
                for j in 0..n {
                    out.data[i * n + j] += a * other.data[k * n + j];
                }
            }
        }
        out
    }

    pub fn mul_vec(&self, v: &[f64]) -> Vec<f64> {
        self.data
            .chunks(self.n)
            .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// `a·self + b·other`
    pub fn axpby(&self, a: f64, other: &SquareMatrix, b: f64) -> SquareMatrix {
        SquareMatrix {
            n: self.n,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(x, y)| a * x + b * y)
                .collect(),
        }
    }

    pub fn max_abs_diff(&self, other: &SquareMatrix) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        (0..self.n).all(|i| (0..i).all(|j| (self.get(i, j) - self.get(j, i)).abs() <= tol))
    }
}

/// Combinatorial Laplacian `L = D - A`.
pub fn laplacian(g: &LevelGraph) -> SquareMatrix {
    let n = g.len();
    let mut l = SquareMatrix::zeros(n);
    for i in 0..n {
        for j in 0..n {
            if g.has_edge(i, j) {
                l.data[i * n + j] = -1.0;
                l.data[i * n + i] += 1.0;
            }
        }
    }
    l
}

const POWER_TOL: f64 = 1e-10;
const POWER_MAX_ITERS: usize = 10_000;

/// Largest eigenvalue of a symmetric matrix by power iteration on the shifted
/// matrix `L + cI`, where `c` is the largest absolute row sum, so every
/// shifted eigenvalue is non-negative.
pub fn max_eigenvalue(l: &SquareMatrix) -> Result<f64, GraphError> {
    if !l.is_symmetric(1e-12) {
        return Err(GraphError::Numeric("max_eigenvalue requires a symmetric matrix".into()));
    }
    let n = l.n;
    if n == 0 {
        return Err(GraphError::Parameter("empty matrix".into()));
    }
    let shift = l
        .data
        .chunks(n)
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    if shift == 0.0 {
        return Ok(0.0);
    }
    let shifted = l.axpby(1.0, &SquareMatrix::identity(n), shift);

    // Deterministic start with no special alignment to graph eigenvectors.
    let mut v: Vec<f64> = (0..n).map(|i| 1.0 + ((i as f64 + 1.0) * 0.7071).sin()).collect();
    normalize(&mut v);
    for _ in 0..POWER_MAX_ITERS {
        let mut w = shifted.mul_vec(&v);
        let rho: f64 = w.iter().zip(&v).map(|(a, b)| a * b).sum();
        let residual = w
            .iter()
            .zip(&v)
            .map(|(a, b)| (a - rho * b).powi(2))
            .sum::<f64>()
            .sqrt();
        // The eigenvalue error is of order residual² / gap.
        if residual <= POWER_TOL * rho.abs().max(1.0) {
            return Ok(rho - shift);
        }
        if normalize(&mut w) == 0.0 {
            return Ok(-shift);
        }
        v = w;
    }
    Err(GraphError::Numeric(format!(
        "power iteration did not converge in {POWER_MAX_ITERS} iterations"
    )))
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Rescaled Laplacian `2L/λ_max - I`. Graphs without edges have `λ_max = 0`;
/// they get `-I`, the value the expression takes for `L = 0` with any
/// positive scale.
pub fn normalized_laplacian(g: &LevelGraph) -> Result<SquareMatrix, GraphError> {
    let l = laplacian(g);
    let lambda = max_eigenvalue(&l)?;
    let eye = SquareMatrix::identity(g.len());
    if lambda <= 1e-12 {
        return Ok(eye.axpby(-1.0, &eye, 0.0));
    }
    Ok(l.axpby(2.0 / lambda, &eye, -1.0))
}

/// `[T_0(L̃), …, T_d(L̃)]` generated by the Chebyshev recurrence.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChebBasis {
    pub matrices: Vec<SquareMatrix>,
}

impl ChebBasis {
    pub fn degree(&self) -> usize {
        self.matrices.len() - 1
    }

    pub fn nodes(&self) -> usize {
        self.matrices[0].n
    }
}

pub fn chebyshev_basis(l_tilde: &SquareMatrix, degree: usize) -> Result<ChebBasis, GraphError> {
    if !l_tilde.is_symmetric(1e-12) {
        return Err(GraphError::Parameter(
            "chebyshev_basis requires a symmetric matrix".into(),
        ));
    }
    let n = l_tilde.n;
    let mut matrices = vec![SquareMatrix::identity(n)];
    if degree >= 1 {
        matrices.push(l_tilde.clone());
    }
    for k in 2..=degree {
        let next = l_tilde
            .matmul(&matrices[k - 1])
            .axpby(2.0, &matrices[k - 2], -1.0);
        matrices.push(next);
    }
    Ok(ChebBasis { matrices })
}
