use rayon::prelude::*;

use super::{along_y, SchemeConfig, SliceOperator, StateGrid, ValueSlice};
use crate::error::{Error, Result};
use crate::model::{GameCoefficients, GameSpec, PpdeProblem, StateFn};
use crate::path::StateRef;

/// Semi-Lagrangian scheme for Bellman-Isaacs generators: inf over drift controls of sup over
/// variance controls of the shifted expectation.
#[derive(Debug)]
pub struct SemiLagrangian<'a> {
    problem: &'a PpdeProblem,
    grid: &'a StateGrid,
    game: &'a GameSpec,
    h: f64,
    k1: Vec<f64>,
    k2: Vec<f64>,
    atoms: &'static [(f64, f64)],
}

/// Precomputed per-control-pair stencil when the coefficients do not depend on the state.
struct PairStencil {
    /// `(cell offset, fraction, weight)` per atom.
    taps: Vec<(isize, f64, f64)>,
    c: f64,
    f: f64,
}

struct FlatPair<const A: usize> {
    idx: [usize; A],
    frac: [f64; A],
    w: [f64; A],
    /// `c h` and `f h`.
    c: f64,
    f: f64,
}

impl<'a> SemiLagrangian<'a> {
    pub fn new(problem: &'a PpdeProblem, grid: &'a StateGrid, config: &SchemeConfig) -> Result<Self> {
        let game = problem.game.as_ref().ok_or_else(|| {
            Error::Config(format!(
                "problem '{}' has no inf-sup game form for the semi-Lagrangian scheme",
                problem.name
            ))
        })?;
        let k1 = game.drift_controls.lattice(config.control_points);
        let k2 = game.variance_controls.lattice(config.control_points);
        if k1.is_empty() || k2.is_empty() {
            return Err(Error::Config("empty control lattice".into()));
        }
        Ok(Self {
            problem,
            grid,
            game,
            h: config.h,
            k1,
            k2,
            atoms: config.sl_quadrature.atoms(),
        })
    }

    fn coefficients(&self, state: &StateRef, u: f64, v: f64) -> Result<GameCoefficients> {
        let c = (self.game.coefficients)(state, u, v);
        if !(c.a >= 0.0) {
            return Err(Error::Parameter(format!(
                "negative variance coefficient a = {} for controls ({u}, {v})",
                c.a
            )));
        }
        Ok(c)
    }

    fn stencils(&self, t: f64) -> Result<Vec<PairStencil>> {
        let (x0, y0) = (0.0, 0.0);
        let state = StateRef {
            t,
            x: std::slice::from_ref(&x0),
            features: std::slice::from_ref(&y0),
        };
        let dx = self.grid.x.step;
        let mut out = Vec::with_capacity(self.k1.len() * self.k2.len());
        for &u in &self.k1 {
            for &v in &self.k2 {
                let c = self.coefficients(&state, u, v)?;
                let taps = self
                    .atoms
                    .iter()
                    .map(|&(z, w)| {
                        let pos = ((c.a * self.h).sqrt() * z + c.b * self.h) / dx;
                        let m = pos.floor();
                        (m as isize, pos - m, w)
                    })
                    .collect();
                out.push(PairStencil { taps, c: c.c, f: c.f });
            }
        }
        Ok(out)
    }

    /// Step for state-independent coefficients: the stencil of every control pair is a fixed
    /// column offset and fraction, so each node blends a short window of y-interpolated
    /// columns once and reuses it for all pairs.
    fn separable_step<const A: usize>(
        &self,
        v: &[f64],
        t: f64,
        out: &mut [f64],
        source: &StateFn,
        stencils: &[PairStencil],
    ) -> Result<()> {
        let grid = self.grid;
        let nx = grid.x.count;
        let h = self.h;
        let n2 = self.k2.len();
        let lo = stencils
            .iter()
            .flat_map(|s| s.taps.iter().map(|t| t.0))
            .min()
            .unwrap_or(0)
            .min(0);
        let hi = stencils
            .iter()
            .flat_map(|s| s.taps.iter().map(|t| t.0 + 1))
            .max()
            .unwrap_or(0)
            .max(0);
        let width = (hi - lo + 1) as usize;
        let flat: Vec<FlatPair<A>> = stencils
            .iter()
            .map(|s| {
                let mut fp = FlatPair {
                    idx: [0; A],
                    frac: [0.0; A],
                    w: [0.0; A],
                    c: s.c * h,
                    f: s.f * h,
                };
                for (k, &(m, frac, w)) in s.taps.iter().enumerate() {
                    fp.idx[k] = (m - lo) as usize;
                    fp.frac[k] = frac;
                    fp.w[k] = w;
                }
                fp
            })
            .collect();
        let centre = (-lo) as usize;
        out.par_chunks_mut(nx).enumerate().try_for_each(|(iy, row)| {
            let yb = grid.y.coord(iy);
            let mut window = vec![0.0; width + 1];
            for ix in 1..nx - 1 {
                let first = ix as isize + lo;
                let last = ix as isize + hi;
                let u = if first < 0 || last >= nx as isize {
                    self.node_generic(v, t, ix, iy)?
                } else {
                    let x = grid.x.coord(ix);
                    let (j, wy) = grid.y.locate(yb + x * h);
                    for (k, slot) in window[..width].iter_mut().enumerate() {
                        *slot = along_y(v, nx, j, wy, first as usize + k);
                    }
                    let here = window[centre];
                    let mut best = f64::INFINITY;
                    for block in flat.chunks_exact(n2) {
                        let mut inner = f64::NEG_INFINITY;
                        for s in block {
                            let mut e = 0.0;
                            for k in 0..A {
                                let i = s.idx[k];
                                let fr = s.frac[k];
                                e += s.w[k] * ((1.0 - fr) * window[i] + fr * window[i + 1]);
                            }
                            let val = e + s.c * here + s.f;
                            if val > inner {
                                inner = val;
                                // this drift control can no longer lower the minimum
                                if inner >= best {
                                    break;
                                }
                            }
                        }
                        if inner < best {
                            best = inner;
                        }
                    }
                    let st = StateRef {
                        t,
                        x: std::slice::from_ref(&x),
                        features: std::slice::from_ref(&yb),
                    };
                    best + source(&st) * h
                };
                if !u.is_finite() {
                    return Err(nonfinite(u, grid, ix, iy));
                }
                row[ix] = u;
            }
            Ok(())
        })
    }

    /// Value at one node for the generic (state-dependent) coefficients.
    fn node_generic(&self, v: &[f64], t: f64, ix: usize, iy: usize) -> Result<f64> {
        let grid = self.grid;
        let nx = grid.x.count;
        let (x, yb) = (grid.x.coord(ix), grid.y.coord(iy));
        let (j, wy) = grid.y.locate(yb + x * self.h);
        let state = StateRef {
            t,
            x: std::slice::from_ref(&x),
            features: std::slice::from_ref(&yb),
        };
        let read = |xs: f64| {
            let (i, wx) = grid.x.locate(xs);
            (1.0 - wx) * along_y(v, nx, j, wy, i) + wx * along_y(v, nx, j, wy, i + 1)
        };
        let here = along_y(v, nx, j, wy, ix);
        let mut best = f64::INFINITY;
        for &u in &self.k1 {
            let mut inner = f64::NEG_INFINITY;
            for &w2 in &self.k2 {
                let c = self.coefficients(&state, u, w2)?;
                let sd = (c.a * self.h).sqrt();
                let mut e = 0.0;
                for &(z, w) in self.atoms {
                    e += w * read(x + sd * z + c.b * self.h);
                }
                let val = e + (c.c * here + c.f) * self.h;
                if val > inner {
                    inner = val;
                    if inner >= best {
                        break;
                    }
                }
            }
            if inner < best {
                best = inner;
            }
        }
        let source = self.game.source.as_ref().map_or(0.0, |s| s(&state));
        Ok(best + source * self.h)
    }
}

impl SliceOperator for SemiLagrangian<'_> {
    fn name(&self) -> &'static str {
        "semilagrangian"
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
        let nx = grid.x.count;
        let v = &next.values;
        let mut out = vec![0.0; grid.len()];
        let source = self.game.source.as_ref();

        if let Some(source) = source {
            let stencils = self.stencils(t)?;
            match self.atoms.len() {
                2 => self.separable_step::<2>(v, t, &mut out, source.as_ref(), &stencils)?,
                3 => self.separable_step::<3>(v, t, &mut out, source.as_ref(), &stencils)?,
                n => unreachable!("no quadrature with {n} atoms"),
            }
        } else {
            out.par_chunks_mut(nx).enumerate().try_for_each(|(iy, row)| {
                for ix in 1..nx - 1 {
                    let u = self.node_generic(v, t, ix, iy)?;
                    if !u.is_finite() {
                        return Err(nonfinite(u, grid, ix, iy));
                    }
                    row[ix] = u;
                }
                Ok(())
            })?;
        }
        grid.apply_boundaries(&mut out, t, self.problem)?;
        Ok(ValueSlice { t, values: out })
    }
}

fn nonfinite(value: f64, grid: &StateGrid, ix: usize, iy: usize) -> Error {
    Error::NonFinite {
        value,
        location: format!(
            "semi-Lagrangian node (x = {:.6}, ybar = {:.6})",
            grid.x.coord(ix),
            grid.y.coord(iy)
        ),
    }
}

/// One semi-Lagrangian step from the slice at `t + h` to `t`.
pub fn semilagrangian_step(
    slice: &ValueSlice,
    problem: &PpdeProblem,
    grid: &StateGrid,
    config: &SchemeConfig,
) -> Result<ValueSlice> {
    let op = SemiLagrangian::new(problem, grid, config)?;
    op.step(slice, slice.t - config.h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{Axis, Boundary, SlQuadrature};
    use crate::model::{example1_problem, example2_problem, linear_validation_problem, Example1Params};

    fn grid() -> StateGrid {
        let x = Axis::fit(-1.0, 1.0, 0.02).unwrap();
        let y = Axis::fit(-1.0, 1.0, 0.05).unwrap();
        StateGrid::new(
            x,
            y,
            [Boundary::NeumannZero, Boundary::NeumannZero],
            [Boundary::Free, Boundary::Free],
        )
        .unwrap()
    }

    #[test]
    fn singleton_controls_shift_affine_slice() {
        let (mu, a, h) = (0.1, 0.04, 0.01);
        let p = linear_validation_problem(mu, a, 1.0).unwrap();
        let g = grid();
        for quad in [SlQuadrature::TwoPoint, SlQuadrature::GaussHermite3] {
            let cfg = SchemeConfig { h, sl_quadrature: quad, ..Default::default() };
            let values = (0..g.len())
                .map(|i| 1.5 * g.x.coord(i % g.x.count) + 0.25 * g.y.coord(i / g.x.count))
                .collect();
            let out = semilagrangian_step(&ValueSlice { t: 1.0, values }, &p, &g, &cfg).unwrap();
            for iy in 3..g.y.count - 3 {
                for ix in 5..g.x.count - 5 {
                    let (x, yb) = (g.x.coord(ix), g.y.coord(iy));
                    let expect = 1.5 * (x + mu * h) + 0.25 * (yb + x * h);
                    assert!((out.values[g.index(ix, iy)] - expect).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn fast_and_generic_paths_agree() {
        let p = example1_problem(Example1Params::default()).unwrap();
        let g = grid();
        let cfg = SchemeConfig { h: 0.01, control_points: 5, ..Default::default() };
        let op = SemiLagrangian::new(&p, &g, &cfg).unwrap();
        let values: Vec<f64> = (0..g.len())
            .map(|i| (g.x.coord(i % g.x.count) + g.y.coord(i / g.x.count)).cos())
            .collect();
        let out = op.step(&ValueSlice { t: 1.0, values: values.clone() }, 0.99).unwrap();
        for iy in 0..g.y.count {
            for ix in 1..g.x.count - 1 {
                let slow = op.node_generic(&values, 0.99, ix, iy).unwrap();
                assert!((out.values[g.index(ix, iy)] - slow).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn needs_game_form() {
        let p = example2_problem(Default::default()).unwrap();
        assert!(SemiLagrangian::new(&p, &grid(), &SchemeConfig::default()).is_err());
    }
}
