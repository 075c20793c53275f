//! Classical explicit finite differences for the Markovian PDE in `(x, y)` obtained by adding
//! the running integral as a state variable: `-∂_t v - x ∂_y v - G(v, ∂_x v, ∂_xx v) = 0`.
//! Used as an independent reference for the path-dependent solvers.

use super::{
    backward_solve, default_boundaries, Axis, Domain, SliceOperator, StateGrid, ValueSlice,
};
use crate::error::{Error, Result};
use crate::model::PpdeProblem;

#[derive(Debug, Clone, PartialEq)]
pub struct PdeReferenceConfig {
    pub h: f64,
    /// Diffusive CFL ratio `h sup G_γ / dx^2`.
    pub theta: f64,
    pub dy: f64,
    pub domain: Domain,
}

impl Default for PdeReferenceConfig {
    fn default() -> Self {
        Self {
            h: 0.0025,
            theta: 0.25,
            dy: 0.005,
            domain: Domain {
                x: (-0.8, 0.8),
                y: (-0.8, 0.8),
            },
        }
    }
}

/// Central differences in `x`, upwind differences for the transport in `y`.
struct UpwindPde<'a> {
    problem: &'a PpdeProblem,
    grid: StateGrid,
    h: f64,
}

impl SliceOperator for UpwindPde<'_> {
    fn name(&self) -> &'static str {
        "pde-reference"
    }

    fn grid(&self) -> &StateGrid {
        &self.grid
    }

    fn problem(&self) -> &PpdeProblem {
        self.problem
    }

    fn h(&self) -> f64 {
        self.h
    }

    fn step(&self, next: &ValueSlice, t: f64) -> Result<ValueSlice> {
        let g = &self.grid;
        let (nx, ny) = (g.x.count, g.y.count);
        let (dx, dy, h) = (g.x.step, g.y.step, self.h);
        let v = &next.values;
        let mut out = v.clone();
        for iy in 0..ny {
            let yb = g.y.coord(iy);
            for ix in 1..nx - 1 {
                let x = g.x.coord(ix);
                let k = iy * nx + ix;
                let v0 = v[k];
                let transport = if x > 0.0 && iy + 1 < ny {
                    x * (v[k + nx] - v0) / dy
                } else if x < 0.0 && iy > 0 {
                    x * (v0 - v[k - nx]) / dy
                } else {
                    0.0
                };
                let d1 = (v[k + 1] - v[k - 1]) / (2.0 * dx);
                let d2 = (v[k + 1] - 2.0 * v0 + v[k - 1]) / (dx * dx);
                let u = v0 + h * (transport + self.problem.g1(t, x, yb, v0, d1, d2));
                if !u.is_finite() {
                    return Err(Error::NonFinite {
                        value: u,
                        location: format!("pde reference node (x = {x:.6}, y = {yb:.6})"),
                    });
                }
                out[k] = u;
            }
        }
        g.apply_boundaries(&mut out, t, self.problem)?;
        Ok(ValueSlice { t, values: out })
    }
}

/// `v(0, 0, 0)` of the Markovian PDE form on a fine grid.
pub fn example2_pde_reference(problem: &PpdeProblem, config: &PdeReferenceConfig) -> Result<f64> {
    let n = (problem.horizon / config.h).round().max(1.0);
    let h = problem.horizon / n;
    let gmax = problem.constants.gamma_grad_max;
    if !(gmax > 0.0) || !(config.theta > 0.0 && config.theta < 0.5) {
        return Err(Error::Config(format!(
            "pde reference needs sup G_gamma > 0 and theta in (0, 1/2), got {gmax}, {}",
            config.theta
        )));
    }
    let x = Axis::fit(config.domain.x.0, config.domain.x.1, (h * gmax / config.theta).sqrt())?;
    let y = Axis::fit(config.domain.y.0, config.domain.y.1, config.dy)?;
    let xmax = x.min.abs().max(x.max.abs());
    let ratio = xmax * h / y.step + 2.0 * gmax * h / (x.step * x.step);
    if ratio > 1.0 + 1e-9 {
        return Err(Error::Config(format!(
            "pde reference stencil has negative weights (ratio {ratio:.3}); refine h or coarsen dy"
        )));
    }
    let (xf, yf) = default_boundaries(problem, &config.domain);
    let grid = StateGrid::new(x, y, xf, yf)?;
    let op = UpwindPde { problem, grid, h };
    let sol = backward_solve(&op, false)?;
    Ok(sol.value_at(&op.grid, 0.0, 0.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::linear_validation_problem;

    #[test]
    fn linear_problem_reference_matches_closed_form() {
        let p = linear_validation_problem(0.1, 0.04, 1.0).unwrap();
        let cfg = PdeReferenceConfig {
            h: 0.01,
            dy: 0.05,
            domain: Domain { x: (-2.0, 2.0), y: (-2.0, 2.0) },
            ..Default::default()
        };
        let v = example2_pde_reference(&p, &cfg).unwrap();
        assert!((v - 0.05).abs() < 5e-3, "{v}");
    }
}
