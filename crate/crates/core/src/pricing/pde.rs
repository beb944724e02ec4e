#![allow(clippy::needless_range_loop)]
//! CVA for correlated FX and intensity via a 2-D finite-difference PDE.
//!
//! In time-to-maturity `τ = T − t` and `x = ln φ` the CVA `ψ` solves
//!
//! ```text
//! ∂τψ = (μ − σ²/2)ψx + σ²/2 ψxx + k(θ − λ)ψλ + σλ²λ/2 ψλλ
//!       + ρσσλ√λ ψxλ − (r + λ)ψ − (1 − rec)λ·max(E(x, t), 0)
//! ```
//!
//! with `ψ = 0` at `τ = 0`. The Douglas ADI scheme (θ = ½) treats the mixed
//! derivative explicitly. At `λ = 0` the diffusion vanishes and the drift
//! term is upwinded. Far-field Dirichlet values come from the independent
//! quadrature pricer.

use super::cva::{CvaSlice, CVA_QUADRATURE_NODES};
use super::exposure_unchecked;
use crate::config::MarketParams;
use crate::error::{invalid, CoreError, Result};

/// Grid and time-stepping controls.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PdeSettings {
    pub nx: usize,
    pub ny: usize,
    /// φ ranges over `[φ₀/span, φ₀·span]`.
    pub phi_span: f64,
    /// λ ranges over `[0, lam_mult·max(θ_ℚ, λ₀)]`.
    pub lam_mult: f64,
    /// Largest time step outside the requested valuation times.
    pub max_dt: f64,
    /// Steps between consecutive requested valuation times.
    pub substeps: usize,
}

impl Default for PdeSettings {
    fn default() -> Self {
        PdeSettings {
            nx: 200,
            ny: 120,
            phi_span: 3.0,
            lam_mult: 8.0,
            max_dt: 7.0 / 365.0,
            substeps: 2,
        }
    }
}

/// Solution slices of the CVA PDE at a set of valuation times.
#[derive(Debug, Clone)]
pub struct CvaPde {
    times: Vec<f64>,
    x0: f64,
    dx: f64,
    nx: usize,
    dlam: f64,
    ny: usize,
    slices: Vec<Vec<f64>>,
}

struct Coefs {
    ax: f64,
    bx: f64,
    k: f64,
    theta: f64,
    s2_lam: f64,
    mixed: f64,
    r: f64,
}

fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &mut [f64], scratch: &mut [f64]) {
    let n = diag.len();
    scratch[0] = upper[0] / diag[0];
    rhs[0] /= diag[0];
    for i in 1..n {
        let m = diag[i] - lower[i] * scratch[i - 1];
        scratch[i] = upper[i] / m;
        rhs[i] = (rhs[i] - lower[i] * rhs[i - 1]) / m;
    }
    for i in (0..n - 1).rev() {
        rhs[i] -= scratch[i] * rhs[i + 1];
    }
}

impl CvaPde {
    /// Solve backward from the forward's maturity, keeping slices at `times`
    /// (ascending, each before maturity).
    pub fn solve(params: &MarketParams, times: &[f64], settings: PdeSettings) -> Result<CvaPde> {
        params.validate()?;
        let maturity = params.forward.maturity;
        if times.is_empty() || times.windows(2).any(|w| w[0] >= w[1]) {
            return invalid("valuation times must be non-empty and increasing");
        }
        if *times.last().unwrap() >= maturity || times[0] < 0.0 {
            return invalid("valuation times must lie in [0, maturity)");
        }
        if settings.nx < 4 || settings.ny < 4 || settings.substeps == 0 || !(settings.max_dt > 0.0) {
            return invalid("PDE grid too small");
        }
        let (nx, ny) = (settings.nx, settings.ny);
        let phi0 = params.fx.initial;
        let x0 = (phi0 / settings.phi_span).ln();
        let dx = 2.0 * settings.phi_span.ln() / (nx - 1) as f64;
        let q = &params.intensity.risk_neutral;
        let lam_max = settings.lam_mult * q.long_run_mean.max(params.intensity.initial);
        if !(lam_max > 0.0) {
            return invalid("intensity grid has zero width");
        }
        let dlam = lam_max / (ny - 1) as f64;
        let fx = &params.fx.risk_neutral;
        let c = Coefs {
            ax: fx.drift - 0.5 * fx.volatility * fx.volatility,
            bx: 0.5 * fx.volatility * fx.volatility,
            k: q.mean_reversion,
            theta: q.long_run_mean,
            s2_lam: q.volatility * q.volatility,
            mixed: params.correlation.risk_neutral * fx.volatility * q.volatility,
            r: params.rates.eur,
        };
        let mut boundary_params = params.clone();
        boundary_params.correlation.risk_neutral = 0.0;

        let mut solver = Solver {
            nx,
            ny,
            dx,
            dlam,
            c,
            lgd: 1.0 - params.forward.recovery,
            params,
            boundary_params: &boundary_params,
            phis: (0..nx).map(|i| (x0 + i as f64 * dx).exp()).collect(),
            u: vec![0.0; nx * ny],
            y: vec![0.0; nx * ny],
        };

        let mut slices = vec![Vec::new(); times.len()];
        let mut t_now = maturity;
        for k in (0..times.len()).rev() {
            let target = times[k];
            let gap = t_now - target;
            let n_steps = if k + 1 == times.len() {
                (gap / settings.max_dt).ceil().max(1.0) as usize
            } else {
                settings.substeps.max((gap / settings.max_dt).ceil() as usize)
            };
            let dt = gap / n_steps as f64;
            for s in 0..n_steps {
                let t_hi = t_now - s as f64 * dt;
                let t_lo = if s + 1 == n_steps { target } else { t_hi - dt };
                solver.step(t_hi, t_lo)?;
            }
            t_now = target;
            slices[k] = solver.u.clone();
        }
        Ok(CvaPde {
            times: times.to_vec(),
            x0,
            dx,
            nx,
            dlam,
            ny,
            slices,
        })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Bilinear interpolation of the slice at `times()[k]`.
    pub fn value(&self, k: usize, phi: f64, lam: f64) -> Result<f64> {
        let slice = self
            .slices
            .get(k)
            .ok_or_else(|| CoreError::InvalidArgument(format!("no PDE slice {k}")))?;
        let x = phi.ln();
        let fx = (x - self.x0) / self.dx;
        let fy = lam / self.dlam;
        let tol = 1e-9;
        if !(fx >= -tol && fx <= (self.nx - 1) as f64 + tol && fy >= -tol && fy <= (self.ny - 1) as f64 + tol) {
            return Err(CoreError::Extrapolation(format!("(φ={phi}, λ={lam})")));
        }
        let i = (fx.floor().max(0.0) as usize).min(self.nx - 2);
        let j = (fy.floor().max(0.0) as usize).min(self.ny - 2);
        let (wx, wy) = (fx - i as f64, fy - j as f64);
        let at = |i: usize, j: usize| slice[i * self.ny + j];
        Ok((1.0 - wx) * ((1.0 - wy) * at(i, j) + wy * at(i, j + 1))
            + wx * ((1.0 - wy) * at(i + 1, j) + wy * at(i + 1, j + 1)))
    }

    /// Value at a stored valuation time.
    pub fn value_at(&self, t: f64, phi: f64, lam: f64) -> Result<f64> {
        let k = self
            .times
            .iter()
            .position(|&s| (s - t).abs() < 1e-12)
            .ok_or_else(|| CoreError::InvalidArgument(format!("t={t} is not a solved valuation time")))?;
        self.value(k, phi, lam)
    }
}

struct Solver<'a> {
    nx: usize,
    ny: usize,
    dx: f64,
    dlam: f64,
    c: Coefs,
    lgd: f64,
    params: &'a MarketParams,
    boundary_params: &'a MarketParams,
    phis: Vec<f64>,
    u: Vec<f64>,
    y: Vec<f64>,
}

impl Solver<'_> {
    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.ny + j
    }

    fn lam(&self, j: usize) -> f64 {
        j as f64 * self.dlam
    }

    /// `A1·U` (x-direction) at an interior x node.
    #[inline]
    fn a1(&self, u: &[f64], i: usize, j: usize) -> f64 {
        let (m, c, p) = (u[self.idx(i - 1, j)], u[self.idx(i, j)], u[self.idx(i + 1, j)]);
        self.c.ax * (p - m) / (2.0 * self.dx) + self.c.bx * (p - 2.0 * c + m) / (self.dx * self.dx)
    }

    #[inline]
    fn a2(&self, u: &[f64], i: usize, j: usize) -> f64 {
        let lam = self.lam(j);
        let c = u[self.idx(i, j)];
        if j == 0 {
            let p = u[self.idx(i, 1)];
            return self.c.k * self.c.theta * (p - c) / self.dlam - self.c.r * c;
        }
        let (m, p) = (u[self.idx(i, j - 1)], u[self.idx(i, j + 1)]);
        self.c.k * (self.c.theta - lam) * (p - m) / (2.0 * self.dlam)
            + 0.5 * self.c.s2_lam * lam * (p - 2.0 * c + m) / (self.dlam * self.dlam)
            - (self.c.r + lam) * c
    }

    #[inline]
    fn a0(&self, u: &[f64], i: usize, j: usize) -> f64 {
        if j == 0 || self.c.mixed == 0.0 {
            return 0.0;
        }
        let v = u[self.idx(i + 1, j + 1)] - u[self.idx(i + 1, j - 1)] - u[self.idx(i - 1, j + 1)]
            + u[self.idx(i - 1, j - 1)];
        self.c.mixed * self.lam(j).sqrt() * v / (4.0 * self.dx * self.dlam)
    }

    fn boundary(&self, t: f64) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        // values at x = x_min, x = x_max (all λ) and λ = λ_max (all x)
        let s = CvaSlice::new(t, self.boundary_params, CVA_QUADRATURE_NODES)?;
        let n = s.n_nodes();
        let dot = |a: &[f64], b: &[f64]| -a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let mut calls = vec![0.0; n];
        let mut incs = vec![0.0; n];
        let increments: Vec<Vec<f64>> = (0..self.ny)
            .map(|j| {
                s.default_increments(self.lam(j), &mut incs);
                incs.clone()
            })
            .collect();
        s.calls(self.phis[0], &mut calls);
        let lo = increments.iter().map(|q| dot(&calls, q)).collect();
        s.calls(self.phis[self.nx - 1], &mut calls);
        let hi = increments.iter().map(|q| dot(&calls, q)).collect();
        let q_top = &increments[self.ny - 1];
        let top = self
            .phis
            .iter()
            .map(|&phi| {
                s.calls(phi, &mut calls);
                dot(&calls, q_top)
            })
            .collect();
        Ok((lo, hi, top))
    }

    /// One Douglas step from valuation time `t_hi` back to `t_lo`.
    fn step(&mut self, t_hi: f64, t_lo: f64) -> Result<()> {
        let (nx, ny) = (self.nx, self.ny);
        let dt = t_hi - t_lo;
        let t_mid = 0.5 * (t_hi + t_lo);
        let half = 0.5 * dt;
        let (lo, hi, top) = self.boundary(t_lo)?;
        // source −(1 − rec)·λ·max(a·φ − b, 0) at the mid time
        let a_mid = exposure_unchecked(self.params, 1.0, t_mid) - exposure_unchecked(self.params, 0.0, t_mid);
        let b_mid = -exposure_unchecked(self.params, 0.0, t_mid);

        // explicit predictor Y0 = U + dt(AU + g)
        let mut y = std::mem::take(&mut self.y);
        for i in 1..nx - 1 {
            let loss = self.lgd * (a_mid * self.phis[i] - b_mid).max(0.0);
            for j in 0..ny - 1 {
                let k = self.idx(i, j);
                let a = self.a0(&self.u, i, j) + self.a1(&self.u, i, j) + self.a2(&self.u, i, j);
                y[k] = self.u[k] + dt * (a - loss * self.lam(j));
            }
        }

        // x-sweeps: (I − ½dt·A1)Y1 = Y0 − ½dt·A1·U
        let n = nx - 2;
        let (mut lower, mut diag, mut upper) = (vec![0.0; n], vec![0.0; n], vec![0.0; n]);
        let (mut rhs, mut scratch) = (vec![0.0; n], vec![0.0; n]);
        let cm = half * (-self.c.ax / (2.0 * self.dx) + self.c.bx / (self.dx * self.dx));
        let cc = half * (-2.0 * self.c.bx / (self.dx * self.dx));
        let cp = half * (self.c.ax / (2.0 * self.dx) + self.c.bx / (self.dx * self.dx));
        for j in 0..ny - 1 {
            for r in 0..n {
                let i = r + 1;
                lower[r] = -cm;
                diag[r] = 1.0 - cc;
                upper[r] = -cp;
                rhs[r] = y[self.idx(i, j)] - half * self.a1(&self.u, i, j);
            }
            rhs[0] += cm * lo[j];
            rhs[n - 1] += cp * hi[j];
            thomas(&lower, &diag, &upper, &mut rhs, &mut scratch);
            for r in 0..n {
                let k = self.idx(r + 1, j);
                y[k] = rhs[r];
            }
        }

        // λ-sweeps: (I − ½dt·A2)Y2 = Y1 − ½dt·A2·U
        let m = ny - 1;
        let (mut lower, mut diag, mut upper) = (vec![0.0; m], vec![0.0; m], vec![0.0; m]);
        let (mut rhs, mut scratch) = (vec![0.0; m], vec![0.0; m]);
        for i in 1..nx - 1 {
            for j in 0..m {
                let k = self.idx(i, j);
                rhs[j] = y[k] - half * self.a2(&self.u, i, j);
                if j == 0 {
                    let conv = self.c.k * self.c.theta / self.dlam;
                    lower[0] = 0.0;
                    diag[0] = 1.0 + half * (conv + self.c.r);
                    upper[0] = -half * conv;
                } else {
                    let lam = self.lam(j);
                    let conv = self.c.k * (self.c.theta - lam) / (2.0 * self.dlam);
                    let diff = 0.5 * self.c.s2_lam * lam / (self.dlam * self.dlam);
                    lower[j] = -half * (diff - conv);
                    diag[j] = 1.0 + half * (2.0 * diff + self.c.r + lam);
                    upper[j] = -half * (diff + conv);
                }
            }
            rhs[m - 1] -= upper[m - 1] * top[i];
            upper[m - 1] = 0.0;
            thomas(&lower, &diag, &upper, &mut rhs, &mut scratch);
            for j in 0..m {
                let k = self.idx(i, j);
                self.u[k] = rhs[j];
            }
        }
        for j in 0..ny {
            let (a, b) = (self.idx(0, j), self.idx(nx - 1, j));
            self.u[a] = lo[j];
            self.u[b] = hi[j];
        }
        for i in 0..nx {
            let k = self.idx(i, ny - 1);
            self.u[k] = top[i];
        }
        self.y = y;
        Ok(())
    }
}

/// CVA at a single point by solving the PDE down to `t`.
pub fn cva_pde(phi: f64, lam: f64, t: f64, params: &MarketParams) -> Result<f64> {
    CvaPde::solve(params, &[t], PdeSettings::default())?.value(0, phi, lam)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::presets;

    #[test]
    fn thomas_solves_tridiagonal_system() {
        let lower = [0.0, -1.0, 0.5, 2.0];
        let diag = [4.0, 5.0, 6.0, 7.0];
        let upper = [1.0, 1.5, -2.0, 0.0];
        let x = [1.0, -2.0, 3.0, 0.5];
        let mut rhs: Vec<f64> = (0..4)
            .map(|i| {
                let l = if i > 0 { lower[i] * x[i - 1] } else { 0.0 };
                let u = if i < 3 { upper[i] * x[i + 1] } else { 0.0 };
                l + diag[i] * x[i] + u
            })
            .collect();
        let mut scratch = [0.0; 4];
        thomas(&lower, &diag, &upper, &mut rhs, &mut scratch);
        for (a, b) in rhs.iter().zip(x) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn coarse_grid_is_close_and_slices_are_addressable() {
        let p = presets::load("nodefault-100bp").unwrap().market;
        let coarse = PdeSettings {
            nx: 60,
            ny: 40,
            ..PdeSettings::default()
        };
        let pde = CvaPde::solve(&p, &[0.0, 0.5], coarse).unwrap();
        assert_eq!(pde.times(), &[0.0, 0.5]);
        let q = crate::pricing::cva::cva_quadrature(1.0, p.intensity.initial, 0.5, &p).unwrap();
        let v = pde.value_at(0.5, 1.0, p.intensity.initial).unwrap();
        assert!((v / q - 1.0).abs() < 0.02, "{v} vs {q}");
        assert!(pde.value_at(0.25, 1.0, 0.01).is_err());
        assert!(pde.value(2, 1.0, 0.01).is_err());
    }

    #[test]
    fn rejects_bad_requests() {
        let p = presets::load("nodefault-100bp").unwrap().market;
        let s = PdeSettings::default();
        assert!(CvaPde::solve(&p, &[], s).is_err());
        assert!(CvaPde::solve(&p, &[0.5, 0.1], s).is_err());
        assert!(CvaPde::solve(&p, &[p.forward.maturity], s).is_err());
        assert!(CvaPde::solve(&p, &[0.0], PdeSettings { nx: 3, ..s }).is_err());
    }
}
