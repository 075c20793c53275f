use rayon::prelude::*;

use super::{along_y, SchemeConfig, SliceOperator, StateGrid, ValueSlice};
use crate::error::{Error, Result};
use crate::model::PpdeProblem;

/// Explicit three-point finite difference scheme with forward first difference.
#[derive(Debug)]
pub struct FiniteDifference<'a> {
    problem: &'a PpdeProblem,
    grid: &'a StateGrid,
    h: f64,
    ratio: f64,
}

impl<'a> FiniteDifference<'a> {
    /// Refuses to build outside the CFL band `eps <= h |∇_γ G| / dx^2 <= 1/2 - eps`.
    pub fn new(problem: &'a PpdeProblem, grid: &'a StateGrid, config: &SchemeConfig) -> Result<Self> {
        let ratio = check_cfl(problem, grid.x.step, config)?;
        Ok(Self {
            problem,
            grid,
            h: config.h,
            ratio,
        })
    }

    /// `h |∇_γ G| / dx^2` on this grid.
    pub fn cfl_ratio(&self) -> f64 {
        self.ratio
    }
}

pub(crate) fn check_cfl(problem: &PpdeProblem, dx: f64, config: &SchemeConfig) -> Result<f64> {
    let h = config.h;
    let eps = config.cfl_eps;
    let gmax = problem.constants.gamma_grad_max;
    let ratio = h * gmax / (dx * dx);
    let upper = 0.5 - eps;
    let lower = if gmax > 0.0 { eps } else { 0.0 };
    if ratio > upper || ratio < lower {
        let suggested_dx = if gmax > 0.0 {
            (h * gmax / config.cfl_theta).sqrt()
        } else {
            h.sqrt()
        };
        return Err(Error::Cfl {
            ratio,
            lower,
            upper,
            suggested_dx,
        });
    }
    Ok(ratio)
}

impl SliceOperator for FiniteDifference<'_> {
    fn name(&self) -> &'static str {
        "fd"
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
        let (nx, h, dx) = (grid.x.count, self.h, grid.x.step);
        let v = &next.values;
        let mut out = vec![0.0; grid.len()];
        out.par_chunks_mut(nx).enumerate().try_for_each(|(iy, row)| {
            let yb = grid.y.coord(iy);
            for ix in 1..nx - 1 {
                let x = grid.x.coord(ix);
                let (j, wy) = grid.y.locate(yb + x * h);
                let vm = along_y(v, nx, j, wy, ix - 1);
                let v0 = along_y(v, nx, j, wy, ix);
                let vp = along_y(v, nx, j, wy, ix + 1);
                let d1 = (vp - v0) / dx;
                let d2 = (vp - 2.0 * v0 + vm) / (dx * dx);
                let g = self.problem.g1(t, x, yb, v0, d1, d2);
                let u = v0 + h * g;
                if !u.is_finite() {
                    return Err(Error::NonFinite {
                        value: u,
                        location: format!("fd node (x = {x:.6}, ybar = {yb:.6})"),
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

/// One finite difference step from the slice at `t + h` to `t`.
pub fn fd_step(
    slice: &ValueSlice,
    problem: &PpdeProblem,
    grid: &StateGrid,
    config: &SchemeConfig,
) -> Result<ValueSlice> {
    let op = FiniteDifference::new(problem, grid, config)?;
    op.step(slice, slice.t - config.h)
}
