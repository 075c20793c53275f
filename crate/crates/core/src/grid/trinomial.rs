use rayon::prelude::*;

use super::{along_y, SchemeConfig, SliceOperator, StateGrid, ValueSlice};
use crate::error::{Error, Result};
use crate::model::PpdeProblem;

/// Trinomial tree scheme: `ζ ∈ {±1/√p, 0}` with weights `(p/2, p/2, 1-p)`, reference volatility `σ0`.
#[derive(Debug)]
pub struct Trinomial<'a> {
    problem: &'a PpdeProblem,
    grid: &'a StateGrid,
    h: f64,
    p: f64,
    sigma0: f64,
    /// Atoms as `(x shift, weight, K1, K2)`.
    atoms: [(f64, f64, f64, f64); 3],
}

/// Kernels `(K0, K1, K2)` at atom `zeta`.
pub fn trinomial_kernels(zeta: f64, p: f64, sigma0: f64, h: f64) -> (f64, f64, f64) {
    let k1 = zeta / (sigma0 * h.sqrt());
    let k2 = 2.0 * p * (zeta * zeta - 1.0) / (sigma0 * sigma0 * (1.0 - p) * h);
    (1.0, k1, k2)
}

/// Atoms `(ζ, probability)` of the trinomial variable.
pub fn trinomial_atoms(p: f64) -> [(f64, f64); 3] {
    let s = 1.0 / p.sqrt();
    [(-s, 0.5 * p), (0.0, 1.0 - p), (s, 0.5 * p)]
}

impl<'a> Trinomial<'a> {
    pub fn new(problem: &'a PpdeProblem, grid: &'a StateGrid, config: &SchemeConfig) -> Result<Self> {
        let p = config.trinomial_p;
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Config(format!("trinomial p must lie in (0, 1), got {p}")));
        }
        let sigma0 = config.trinomial_sigma0(problem);
        if !(sigma0 > 0.0) || !sigma0.is_finite() {
            return Err(Error::Parameter(format!(
                "trinomial kernels are singular for sigma0 = {sigma0}"
            )));
        }
        let h = config.h;
        let gmax = problem.constants.gamma_grad_max;
        if gmax > sigma0 * sigma0 / (2.0 * p) {
            return Err(Error::Parameter(format!(
                "trinomial scheme is not monotone: sup G_gamma = {gmax} exceeds sigma0^2/(2p) = {}",
                sigma0 * sigma0 / (2.0 * p)
            )));
        }
        let mut atoms = [(0.0, 0.0, 0.0, 0.0); 3];
        for (slot, (zeta, w)) in atoms.iter_mut().zip(trinomial_atoms(p)) {
            let (_, k1, k2) = trinomial_kernels(zeta, p, sigma0, h);
            *slot = (sigma0 * h.sqrt() * zeta, w, k1, k2);
        }
        Ok(Self {
            problem,
            grid,
            h,
            p,
            sigma0,
            atoms,
        })
    }

    pub fn sigma0(&self) -> f64 {
        self.sigma0
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    /// True when the outer atoms sit exactly on neighbouring nodes.
    fn on_grid(&self) -> bool {
        (self.atoms[2].0 - self.grid.x.step).abs() <= 1e-9 * self.grid.x.step
    }
}

impl SliceOperator for Trinomial<'_> {
    fn name(&self) -> &'static str {
        "trinomial"
    }

    fn grid(&self) -> &StateGrid {
        self.grid
    }

    fn problem(&self) -> &PpdeProblem {
        self.problem
    }

    fn h(&self) -> f64 {
        self.h
    }

    fn step(&self, next: &ValueSlice, t: f64) -> Result<ValueSlice> {
        let grid = self.grid;
        let (nx, h) = (grid.x.count, self.h);
        let half_var = 0.5 * self.sigma0 * self.sigma0;
        let on_grid = self.on_grid();
        let v = &next.values;
        let mut out = vec![0.0; grid.len()];
        out.par_chunks_mut(nx).enumerate().try_for_each(|(iy, row)| {
            let yb = grid.y.coord(iy);
            for ix in 1..nx - 1 {
                let x = grid.x.coord(ix);
                let (j, wy) = grid.y.locate(yb + x * h);
                let read = |shift: f64, k: usize| {
                    if on_grid {
                        along_y(v, nx, j, wy, ix + k - 1)
                    } else {
                        let (i, wx) = grid.x.locate(x + shift);
                        (1.0 - wx) * along_y(v, nx, j, wy, i) + wx * along_y(v, nx, j, wy, i + 1)
                    }
                };
                // kernels have zero mean, so expectations are taken of differences to the
                // centre value; constants then pass through exactly
                let centre = read(0.0, 1);
                let (mut d0, mut d1, mut d2) = (0.0, 0.0, 0.0);
                for (k, &(shift, w, k1, k2)) in self.atoms.iter().enumerate() {
                    let dv = read(shift, k) - centre;
                    d0 += w * dv;
                    d1 += w * dv * k1;
                    d2 += w * dv * k2;
                }
                let d0 = centre + d0;
                let f = self.problem.g1(t, x, yb, d0, d1, d2) - half_var * d2;
                let u = d0 + h * f;
                if !u.is_finite() {
                    return Err(Error::NonFinite {
                        value: u,
                        location: format!("trinomial node (x = {x:.6}, ybar = {yb:.6})"),
                    });
                }
                row[ix] = u;
            }
            Ok(())
        })?;
        grid.apply_boundaries(&mut out, t, self.problem)?;
        Ok(ValueSlice { t, values: out })
    }
}

/// One trinomial step from the slice at `t + h` to `t`.
pub fn trinomial_step(
    slice: &ValueSlice,
    problem: &PpdeProblem,
    grid: &StateGrid,
    config: &SchemeConfig,
) -> Result<ValueSlice> {
    let op = Trinomial::new(problem, grid, config)?;
    op.step(slice, slice.t - config.h)
}
