//! Least-squares state-value baselines.

/// Weighted ridge regression `min Σ w (y − βᵀx)² + λ‖β‖²`, with `λ` a small
/// multiple of the mean diagonal of the Gram matrix.
#[derive(Debug, Clone)]
pub struct RidgeFit {
    gram: Vec<f64>,
    rhs: Vec<f64>,
    dim: usize,
}

impl RidgeFit {
    pub fn new(dim: usize) -> RidgeFit {
        RidgeFit {
            gram: vec![0.0; dim * dim],
            rhs: vec![0.0; dim],
            dim,
        }
    }

    #[allow(clippy::needless_range_loop)]
    pub fn add(&mut self, x: &[f64], y: f64, w: f64) {
        let d = self.dim;
        for i in 0..d {
            let wx = w * x[i];
            self.rhs[i] += wx * y;
            for j in 0..=i {
                self.gram[i * d + j] += wx * x[j];
            }
        }
    }

    /// Coefficients, or `None` when no data was added.
    pub fn solve(&self, ridge: f64) -> Option<Vec<f64>> {
        let d = self.dim;
        let trace: f64 = (0..d).map(|i| self.gram[i * d + i]).sum();
        if !(trace > 0.0) {
            return None;
        }
        let lam = ridge * trace / d as f64;
        let mut l = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                let mut s = self.gram[i * d + j] + if i == j { lam } else { 0.0 };
                for k in 0..j {
                    s -= l[i * d + k] * l[j * d + k];
                }
                if i == j {
                    if !(s > 0.0) {
                        return None;
                    }
                    l[i * d + i] = s.sqrt();
                } else {
                    l[i * d + j] = s / l[j * d + j];
                }
            }
        }
        let mut z = self.rhs.clone();
        for i in 0..d {
            for k in 0..i {
                z[i] -= l[i * d + k] * z[k];
            }
            z[i] /= l[i * d + i];
        }
        for i in (0..d).rev() {
            for k in i + 1..d {
                z[i] -= l[k * d + i] * z[k];
            }
            z[i] /= l[i * d + i];
        }
        Some(z)
    }
}

pub fn predict(beta: &[f64], x: &[f64]) -> f64 {
    beta.iter().zip(x).map(|(a, b)| a * b).sum()
}
