//! Paired comparison of per-episode objective contributions.

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{config_err, HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairedTest {
    pub n: usize,
    /// Mean of `a − b`.
    pub mean_difference: f64,
    pub standard_error: f64,
    pub t: f64,
    /// Two-sided.
    pub p_value: f64,
}

impl PairedTest {
    /// `***`, `**` or `*` at the 0.1%, 1% and 5% levels.
    pub fn stars(&self) -> &'static str {
        stars(self.p_value)
    }
}

pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// Two-sided paired t-test of `mean(a − b) = 0`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTest> {
    if a.len() != b.len() {
        return Err(HarnessError::LengthMismatch(a.len(), b.len()));
    }
    let n = a.len();
    if n < 2 {
        return config_err("a paired test needs at least two episodes");
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nf = n as f64;
    let mean = d.iter().sum::<f64>() / nf;
    let var = d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
    let se = (var / nf).sqrt();
    let (t, p) = if se == 0.0 {
        if mean == 0.0 {
            (0.0, 1.0)
        } else {
            (mean.signum() * f64::INFINITY, 0.0)
        }
    } else {
        let t = mean / se;
        let dist = StudentsT::new(0.0, 1.0, nf - 1.0).expect("positive degrees of freedom");
        (t, 2.0 * dist.sf(t.abs()))
    };
    Ok(PairedTest {
        n,
        mean_difference: mean,
        standard_error: se,
        t,
        p_value: p,
    })
}
