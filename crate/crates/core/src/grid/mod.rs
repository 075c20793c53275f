//! Lattice schemes on the lifted state grid `(x, ybar)` and the shared backward driver.
//!
//! Every scheme reads the slice at `t + h` and writes the slice at `t`. The running
//! integral moves deterministically to `ybar + x h` during a step; that transport is
//! realised by piecewise-linear interpolation along the `ybar` axis inside each step.

mod fd;
mod reference;
mod semilagrangian;
mod trinomial;

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::PpdeProblem;

pub use fd::{fd_step, FiniteDifference};
pub use reference::{example2_pde_reference, PdeReferenceConfig};
pub use semilagrangian::{semilagrangian_step, SemiLagrangian};
pub use trinomial::{trinomial_step, Trinomial};

/// One uniform axis of the state grid. Coordinates are computed from indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub step: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(min: f64, max: f64, count: usize) -> Result<Self> {
        if count < 3 {
            return Err(Error::Config(format!("axis needs at least 3 nodes, got {count}")));
        }
        if !(max > min) || !min.is_finite() || !max.is_finite() {
            return Err(Error::Config(format!("invalid axis range [{min}, {max}]")));
        }
        Ok(Self {
            min,
            max,
            step: (max - min) / (count - 1) as f64,
            count,
        })
    }

    /// Fits `[min, max]` with a step no larger than `target`; symmetric ranges get an odd count
    /// so that the origin is a node.
    pub fn fit(min: f64, max: f64, target: f64) -> Result<Self> {
        if !(target > 0.0) {
            return Err(Error::Config(format!("grid step must be positive, got {target}")));
        }
        let mut intervals = ((max - min) / target - 1e-9).ceil().max(2.0) as usize;
        if (min + max).abs() < 1e-12 && intervals % 2 == 1 {
            intervals += 1;
        }
        Self::new(min, max, intervals + 1)
    }

    /// Symmetric axis with exactly the given step, covering at least `[-half_width, half_width]`.
    pub fn with_step(half_width: f64, step: f64) -> Result<Self> {
        if !(step > 0.0) {
            return Err(Error::Config(format!("grid step must be positive, got {step}")));
        }
        let m = ((half_width / step) - 1e-9).ceil().max(1.0) as usize;
        Ok(Self {
            min: -(m as f64) * step,
            max: m as f64 * step,
            step,
            count: 2 * m + 1,
        })
    }

    #[inline]
    pub fn coord(&self, i: usize) -> f64 {
        if i == 0 {
            self.min
        } else if i + 1 == self.count {
            self.max
        } else {
            // centred so that the midpoint of a symmetric axis is exactly zero
            let mid = 0.5 * (self.count - 1) as f64;
            0.5 * (self.min + self.max) + (i as f64 - mid) * self.step
        }
    }

    /// Cell index and weight for linear interpolation, clamped at the faces.
    #[inline]
    pub fn locate(&self, x: f64) -> (usize, f64) {
        if x <= self.min {
            return (0, 0.0);
        }
        if x >= self.max {
            return (self.count - 2, 1.0);
        }
        let mut pos = (x - self.min) / self.step;
        // reads that land on a node up to rounding are taken from the node itself
        let r = pos.round();
        if (pos - r).abs() < 1e-9 {
            pos = r;
        }
        let i = (pos.floor() as usize).min(self.count - 2);
        (i, (pos - i as f64).clamp(0.0, 1.0))
    }

    /// Index of the node closest to `x`.
    pub fn nearest(&self, x: f64) -> usize {
        (((x - self.min) / self.step).round().max(0.0) as usize).min(self.count - 1)
    }
}

pub type DirichletFn = dyn Fn(f64, f64, f64) -> f64 + Send + Sync;

/// Policy for one face of the grid.
#[derive(Clone)]
pub enum Boundary {
    /// Prescribed value `g(t, x, ybar)`.
    Dirichlet(Arc<DirichletFn>),
    /// Copy of the adjacent interior node.
    NeumannZero,
    /// The problem's exact solution.
    ExactClamp,
    /// Keep the scheme's own value (only meaningful on `ybar` faces).
    Free,
}

impl fmt::Debug for Boundary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Boundary::Dirichlet(_) => write!(f, "Dirichlet"),
            Boundary::NeumannZero => write!(f, "NeumannZero"),
            Boundary::ExactClamp => write!(f, "ExactClamp"),
            Boundary::Free => write!(f, "Free"),
        }
    }
}

/// Lifted state grid over `(x, ybar)` with per-face boundary policies `[low, high]`.
#[derive(Debug, Clone)]
pub struct StateGrid {
    pub x: Axis,
    pub y: Axis,
    pub x_faces: [Boundary; 2],
    pub y_faces: [Boundary; 2],
}

impl StateGrid {
    pub fn new(x: Axis, y: Axis, x_faces: [Boundary; 2], y_faces: [Boundary; 2]) -> Result<Self> {
        if x_faces.iter().any(|b| matches!(b, Boundary::Free)) {
            return Err(Error::Config("x faces need a Dirichlet, Neumann or exact policy".into()));
        }
        Ok(Self { x, y, x_faces, y_faces })
    }

    pub fn len(&self) -> usize {
        self.x.count * self.y.count
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.x.count + ix
    }

    /// Value at `(x, ybar)` by bilinear interpolation, clamped at the faces.
    pub fn interpolate(&self, values: &[f64], x: f64, ybar: f64) -> f64 {
        let (i, wx) = self.x.locate(x);
        let (j, wy) = self.y.locate(ybar);
        let nx = self.x.count;
        let v = |ix: usize, iy: usize| values[iy * nx + ix];
        let lo = (1.0 - wx) * v(i, j) + wx * v(i + 1, j);
        let hi = (1.0 - wx) * v(i, j + 1) + wx * v(i + 1, j + 1);
        (1.0 - wy) * lo + wy * hi
    }

    /// Fills the face nodes of `values` at time `t`: `x` faces first, then `ybar` faces.
    pub fn apply_boundaries(&self, values: &mut [f64], t: f64, problem: &PpdeProblem) -> Result<()> {
        let nx = self.x.count;
        let ny = self.y.count;
        for (side, policy) in self.x_faces.iter().enumerate() {
            let (ix, inner) = if side == 0 { (0, 1) } else { (nx - 1, nx - 2) };
            let x = self.x.coord(ix);
            for iy in 0..ny {
                let yb = self.y.coord(iy);
                values[iy * nx + ix] = match policy {
                    Boundary::Dirichlet(g) => g(t, x, yb),
                    Boundary::NeumannZero => values[iy * nx + inner],
                    Boundary::ExactClamp => exact_or_err(problem, t, x, yb)?,
                    Boundary::Free => unreachable!("rejected at construction"),
                };
            }
        }
        for (side, policy) in self.y_faces.iter().enumerate() {
            let (iy, inner) = if side == 0 { (0, 1) } else { (ny - 1, ny - 2) };
            let yb = self.y.coord(iy);
            for ix in 0..nx {
                let x = self.x.coord(ix);
                let v = match policy {
                    Boundary::Dirichlet(g) => g(t, x, yb),
                    Boundary::NeumannZero => values[inner * nx + ix],
                    Boundary::ExactClamp => exact_or_err(problem, t, x, yb)?,
                    Boundary::Free => continue,
                };
                values[iy * nx + ix] = v;
            }
        }
        Ok(())
    }

    /// Largest difference quotient along `x` and along `ybar`.
    pub fn lipschitz(&self, values: &[f64]) -> (f64, f64) {
        let nx = self.x.count;
        let ny = self.y.count;
        let mut lx: f64 = 0.0;
        let mut ly: f64 = 0.0;
        for iy in 0..ny {
            for ix in 0..nx {
                let v = values[iy * nx + ix];
                if ix + 1 < nx {
                    lx = lx.max((values[iy * nx + ix + 1] - v).abs() / self.x.step);
                }
                if iy + 1 < ny {
                    ly = ly.max((values[(iy + 1) * nx + ix] - v).abs() / self.y.step);
                }
            }
        }
        (lx, ly)
    }
}

fn exact_or_err(problem: &PpdeProblem, t: f64, x: f64, yb: f64) -> Result<f64> {
    problem.exact1(t, x, yb).ok_or_else(|| {
        Error::Config(format!("problem '{}' has no exact solution to clamp to", problem.name))
    })
}

/// Value function at one time level over the grid nodes (row-major in `ybar`).
#[derive(Debug, Clone, PartialEq)]
pub struct ValueSlice {
    pub t: f64,
    pub values: Vec<f64>,
}

impl ValueSlice {
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Reads `v(column, ybar_j + w (ybar_{j+1} - ybar_j))` from a row-major slice.
#[inline]
pub(crate) fn along_y(values: &[f64], nx: usize, j: usize, wy: f64, column: usize) -> f64 {
    let lo = values[j * nx + column];
    if wy == 0.0 {
        lo
    } else {
        (1.0 - wy) * lo + wy * values[(j + 1) * nx + column]
    }
}

/// Random variable used for the semi-Lagrangian expectation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SlQuadrature {
    /// `±1` with probability one half each.
    #[default]
    TwoPoint,
    /// Three-point Gauss-Hermite rule for `N(0, 1)`.
    GaussHermite3,
}

impl SlQuadrature {
    pub fn atoms(&self) -> &'static [(f64, f64)] {
        const TWO: [(f64, f64); 2] = [(-1.0, 0.5), (1.0, 0.5)];
        // nodes ±√3 and 0
        const GH3: [(f64, f64); 3] = [
            (-1.732_050_807_568_877_2, 1.0 / 6.0),
            (0.0, 2.0 / 3.0),
            (1.732_050_807_568_877_2, 1.0 / 6.0),
        ];
        match self {
            SlQuadrature::TwoPoint => &TWO,
            SlQuadrature::GaussHermite3 => &GH3,
        }
    }
}

/// Which one-step operator to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SchemeKind {
    Fd,
    Trinomial,
    SemiLagrangian,
    Ftw,
}

pub const SCHEME_NAMES: &[&str] = &["fd", "trinomial", "semilagrangian", "ftw"];

impl SchemeKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "fd" => Ok(SchemeKind::Fd),
            "trinomial" => Ok(SchemeKind::Trinomial),
            "semilagrangian" | "sl" => Ok(SchemeKind::SemiLagrangian),
            "ftw" => Ok(SchemeKind::Ftw),
            other => Err(Error::Resolution {
                kind: "scheme",
                name: other.into(),
                valid: SCHEME_NAMES.join(", "),
            }),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SchemeKind::Fd => "fd",
            SchemeKind::Trinomial => "trinomial",
            SchemeKind::SemiLagrangian => "semilagrangian",
            SchemeKind::Ftw => "ftw",
        }
    }
}

impl fmt::Display for SchemeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Discretisation parameters shared by the lattice schemes.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeConfig {
    pub h: f64,
    /// Explicit space step; derived from `h` when absent.
    pub dx: Option<f64>,
    /// Explicit `ybar` step; `dy_factor * h` when absent.
    pub dy: Option<f64>,
    /// Target CFL ratio `h |∇_γ G| / dx^2` for the finite difference scheme.
    pub cfl_theta: f64,
    /// CFL slack: the ratio must lie in `[eps, 1/2 - eps]`.
    pub cfl_eps: f64,
    pub trinomial_p: f64,
    /// Trinomial reference volatility; `sqrt(2 sup ∇_γ G)` when absent.
    pub trinomial_sigma0: Option<f64>,
    /// Lattice size for continuous control intervals.
    pub control_points: usize,
    /// Semi-Lagrangian space step as a multiple of `h`.
    pub sl_dx_factor: f64,
    pub dy_factor: f64,
    pub sl_quadrature: SlQuadrature,
}

impl Default for SchemeConfig {
    fn default() -> Self {
        Self {
            h: 0.01,
            dx: None,
            dy: None,
            cfl_theta: 0.4,
            cfl_eps: 0.05,
            trinomial_p: 2.0 / 3.0,
            trinomial_sigma0: None,
            control_points: 21,
            sl_dx_factor: 1.0,
            dy_factor: 1.0,
            sl_quadrature: SlQuadrature::TwoPoint,
        }
    }
}

impl SchemeConfig {
    pub fn with_h(h: f64) -> Self {
        Self { h, ..Default::default() }
    }

    /// Finite difference space step tied to `h` through the target CFL ratio.
    pub fn fd_dx(&self, problem: &PpdeProblem) -> f64 {
        let gmax = problem.constants.gamma_grad_max;
        if gmax > 0.0 {
            (self.h * gmax / self.cfl_theta).sqrt()
        } else {
            self.h.sqrt()
        }
    }

    pub fn trinomial_sigma0(&self, problem: &PpdeProblem) -> f64 {
        self.trinomial_sigma0.unwrap_or_else(|| {
            let g = problem.constants.gamma_grad_max;
            if g > 0.0 {
                (2.0 * g).sqrt()
            } else {
                problem.reference_variance.sqrt()
            }
        })
    }

    pub fn dx_for(&self, kind: SchemeKind, problem: &PpdeProblem) -> f64 {
        if let Some(dx) = self.dx {
            return dx;
        }
        match kind {
            SchemeKind::Fd | SchemeKind::Ftw => self.fd_dx(problem),
            SchemeKind::Trinomial => {
                self.trinomial_sigma0(problem) * (self.h / self.trinomial_p).sqrt()
            }
            SchemeKind::SemiLagrangian => self.sl_dx_factor * self.h,
        }
    }

    pub fn dy(&self) -> f64 {
        self.dy.unwrap_or(self.dy_factor * self.h)
    }

    /// Returns `h` rounded so that `horizon / h` is an integer, with the step count.
    pub fn aligned_step(&self, horizon: f64) -> Result<(f64, usize)> {
        if !(self.h > 0.0) || !(horizon > 0.0) {
            return Err(Error::Config(format!("invalid time step {} for horizon {horizon}", self.h)));
        }
        let n = (horizon / self.h).round().max(1.0) as usize;
        Ok((horizon / n as f64, n))
    }
}

/// Rectangular domain `[x_min, x_max] x [y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

/// Default domain and face policies for a named problem.
pub fn default_domain(problem: &PpdeProblem) -> Domain {
    match problem.name.as_str() {
        "example2" => Domain {
            x: (-0.8, 0.8),
            y: (-0.8, 0.8),
        },
        _ => Domain {
            x: (-2.0, 2.0),
            y: (-2.0, 2.0),
        },
    }
}

/// Domain for `kind`: the semi-Lagrangian solve of the first example uses `[-1, 1]^2`, which
/// holds over three standard deviations of both coordinates and quarters the node count.
pub fn default_domain_for(problem: &PpdeProblem, kind: SchemeKind) -> Domain {
    if kind == SchemeKind::SemiLagrangian && problem.name == "example1" {
        Domain {
            x: (-1.0, 1.0),
            y: (-1.0, 1.0),
        }
    } else {
        default_domain(problem)
    }
}

/// Exact clamp where an exact solution exists; otherwise Neumann in `x` and, for the
/// clipped-average payoff, its floor and cap as Dirichlet data in `ybar`.
pub fn default_boundaries(problem: &PpdeProblem, domain: &Domain) -> ([Boundary; 2], [Boundary; 2]) {
    if problem.exact.is_some() {
        return (
            [Boundary::ExactClamp, Boundary::ExactClamp],
            [Boundary::ExactClamp, Boundary::ExactClamp],
        );
    }
    let x_faces = [Boundary::NeumannZero, Boundary::NeumannZero];
    let terminal = problem.terminal.clone();
    let horizon = problem.horizon;
    let (ylo, yhi) = domain.y;
    let face = move |ybar: f64| {
        let terminal = terminal.clone();
        Boundary::Dirichlet(Arc::new(move |_t: f64, x: f64, _y: f64| {
            terminal(&crate::path::StateRef {
                t: horizon,
                x: std::slice::from_ref(&x),
                features: std::slice::from_ref(&ybar),
            })
        }))
    };
    (x_faces, [face(ylo), face(yhi)])
}

/// Grid for `kind` on `domain`, with the step sizes implied by `config`.
pub fn build_grid(
    problem: &PpdeProblem,
    kind: SchemeKind,
    config: &SchemeConfig,
    domain: &Domain,
) -> Result<StateGrid> {
    let dx = config.dx_for(kind, problem);
    let x = if kind == SchemeKind::Trinomial && config.dx.is_none() {
        let half = domain.x.0.abs().max(domain.x.1.abs());
        Axis::with_step(half, dx)?
    } else {
        Axis::fit(domain.x.0, domain.x.1, dx)?
    };
    let y = Axis::fit(domain.y.0, domain.y.1, config.dy())?;
    let (xf, yf) = default_boundaries(problem, domain);
    StateGrid::new(x, y, xf, yf)
}

/// A one-step operator `T_h` mapping the slice at `t + h` to the slice at `t`.
pub trait SliceOperator: Send + Sync {
    fn name(&self) -> &'static str;
    fn grid(&self) -> &StateGrid;
    fn problem(&self) -> &PpdeProblem;
    fn h(&self) -> f64;
    fn step(&self, next: &ValueSlice, t: f64) -> Result<ValueSlice>;
}

/// Builds the operator for a lattice scheme.
pub fn make_operator<'a>(
    kind: SchemeKind,
    problem: &'a PpdeProblem,
    grid: &'a StateGrid,
    config: &SchemeConfig,
) -> Result<Box<dyn SliceOperator + 'a>> {
    Ok(match kind {
        SchemeKind::Fd => Box::new(FiniteDifference::new(problem, grid, config)?),
        SchemeKind::Trinomial => Box::new(Trinomial::new(problem, grid, config)?),
        SchemeKind::SemiLagrangian => Box::new(SemiLagrangian::new(problem, grid, config)?),
        SchemeKind::Ftw => {
            return Err(Error::Config(
                "the probabilistic scheme runs on simulated paths, not on a grid".into(),
            ))
        }
    })
}

/// Sup norm, maximum and minimum of one slice of the backward sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelStats {
    pub t: f64,
    pub sup: f64,
    pub max: f64,
    pub min: f64,
}

#[derive(Debug, Clone)]
pub struct BackwardSolution {
    pub initial: ValueSlice,
    /// Slices from `t = 0` to `t = T`, when retained.
    pub slices: Option<Vec<ValueSlice>>,
    pub stats: Vec<LevelStats>,
    pub h: f64,
    pub steps: usize,
}

impl BackwardSolution {
    /// `u^h(0, x, ybar)` by interpolation on the grid.
    pub fn value_at(&self, grid: &StateGrid, x: f64, ybar: f64) -> f64 {
        grid.interpolate(&self.initial.values, x, ybar)
    }
}

/// Terminal slice `ξ` on the grid nodes.
pub fn terminal_slice(problem: &PpdeProblem, grid: &StateGrid) -> ValueSlice {
    let nx = grid.x.count;
    let mut values = vec![0.0; grid.len()];
    for (iy, row) in values.chunks_exact_mut(nx).enumerate() {
        let yb = grid.y.coord(iy);
        for (ix, v) in row.iter_mut().enumerate() {
            *v = problem.terminal1(grid.x.coord(ix), yb);
        }
    }
    ValueSlice {
        t: problem.horizon,
        values,
    }
}

/// Iterates `op` from `T` down to `0`; `op.h()` must divide the horizon.
pub fn backward_solve(op: &dyn SliceOperator, retain: bool) -> Result<BackwardSolution> {
    let problem = op.problem();
    let h = op.h();
    let steps = (problem.horizon / h).round() as usize;
    if steps == 0 || (steps as f64 * h - problem.horizon).abs() > 1e-9 * problem.horizon {
        return Err(Error::Config(format!(
            "time step {h} does not divide the horizon {}",
            problem.horizon
        )));
    }
    let mut slice = terminal_slice(problem, op.grid());
    let stats_of = |s: &ValueSlice| LevelStats {
        t: s.t,
        sup: s.sup_norm(),
        max: s.max(),
        min: s.min(),
    };
    let mut stats = vec![stats_of(&slice)];
    let mut kept = retain.then(|| vec![slice.clone()]);
    for k in (0..steps).rev() {
        let t = k as f64 * h;
        slice = op.step(&slice, t).map_err(|e| e.at_level(k, t))?;
        stats.push(stats_of(&slice));
        if let Some(v) = kept.as_mut() {
            v.push(slice.clone());
        }
    }
    stats.reverse();
    if let Some(v) = kept.as_mut() {
        v.reverse();
    }
    Ok(BackwardSolution {
        initial: slice,
        slices: kept,
        stats,
        h,
        steps,
    })
}

/// Builds grid and operator for `kind` and returns `u^h(0, 0, 0)` with the solution.
pub fn solve_at_origin(
    problem: &PpdeProblem,
    kind: SchemeKind,
    config: &SchemeConfig,
    domain: &Domain,
) -> Result<(f64, StateGrid, BackwardSolution)> {
    let (h, _) = config.aligned_step(problem.horizon)?;
    let config = SchemeConfig { h, ..config.clone() };
    let grid = build_grid(problem, kind, &config, domain)?;
    let op = make_operator(kind, problem, &grid, &config)?;
    let sol = backward_solve(op.as_ref(), false)?;
    drop(op);
    let v = sol.value_at(&grid, 0.0, 0.0);
    Ok((v, grid, sol))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{constant_problem, heat_problem, linear_validation_problem};

    #[test]
    fn axis_fit_keeps_origin_on_grid() {
        let a = Axis::fit(-0.8, 0.8, 0.07).unwrap();
        assert_eq!(a.count % 2, 1);
        assert!(a.step <= 0.07);
        assert!(a.coord(a.count / 2).abs() < 1e-15);
        assert!(((a.count - 1) as f64 * a.step - 1.6).abs() < 1e-12);
        assert_eq!(a.coord(a.count - 1), 0.8);
    }

    #[test]
    fn axis_with_exact_step() {
        let a = Axis::with_step(1.0, 0.3).unwrap();
        assert_eq!(a.count, 9);
        assert!((a.max - 1.2).abs() < 1e-12);
        assert!((a.step - 0.3).abs() < 1e-15);
    }

    #[test]
    fn axis_rejects_tiny_counts() {
        assert!(Axis::new(0.0, 1.0, 2).is_err());
    }

    #[test]
    fn locate_clamps() {
        let a = Axis::new(-1.0, 1.0, 5).unwrap();
        assert_eq!(a.locate(-3.0), (0, 0.0));
        assert_eq!(a.locate(3.0), (3, 1.0));
        let (i, w) = a.locate(0.25);
        assert_eq!(i, 2);
        assert!((w - 0.5).abs() < 1e-12);
    }

    #[test]
    fn constant_terminal_is_preserved() {
        let p = constant_problem(0.7, 1.0);
        for kind in [SchemeKind::Fd, SchemeKind::Trinomial, SchemeKind::SemiLagrangian] {
            let cfg = SchemeConfig::with_h(0.05);
            let dom = Domain { x: (-1.0, 1.0), y: (-1.0, 1.0) };
            let (v, _, sol) = solve_at_origin(&p, kind, &cfg, &dom).unwrap();
            assert_eq!(v, 0.7, "{kind}");
            assert!(sol.initial.values.iter().all(|x| *x == 0.7));
        }
    }

    #[test]
    fn fd_linear_problem_error_decreases() {
        let p = linear_validation_problem(0.1, 0.04, 1.0).unwrap();
        let dom = default_domain(&p);
        let mut last = f64::INFINITY;
        for h in [0.05, 0.02, 0.01] {
            let (v, _, _) = solve_at_origin(&p, SchemeKind::Fd, &SchemeConfig::with_h(h), &dom).unwrap();
            let err = (v - 0.05).abs();
            assert!(err < last, "h={h} err={err} last={last}");
            last = err;
        }
        assert!(last < 5e-3);
    }

    #[test]
    fn fd_heat_problem_matches_closed_form() {
        let p = heat_problem(0.04, 1.0).unwrap();
        let (v, _, _) =
            solve_at_origin(&p, SchemeKind::Fd, &SchemeConfig::with_h(0.01), &default_domain(&p))
                .unwrap();
        assert!((v - 0.04).abs() < 1e-2);
    }

    #[test]
    fn retained_slices_cover_all_levels() {
        let p = heat_problem(0.04, 1.0).unwrap();
        let cfg = SchemeConfig::with_h(0.1);
        let dom = Domain { x: (-1.0, 1.0), y: (-1.0, 1.0) };
        let grid = build_grid(&p, SchemeKind::Fd, &cfg, &dom).unwrap();
        let op = FiniteDifference::new(&p, &grid, &cfg).unwrap();
        let sol = backward_solve(&op, true).unwrap();
        let slices = sol.slices.unwrap();
        assert_eq!(slices.len(), 11);
        assert!((slices[0].t).abs() < 1e-12 && (slices[10].t - 1.0).abs() < 1e-12);
        assert_eq!(sol.stats.len(), 11);
    }

    #[test]
    fn step_count_is_rounded() {
        let cfg = SchemeConfig::with_h(0.03);
        let (h, n) = cfg.aligned_step(1.0).unwrap();
        assert_eq!(n, 33);
        assert!((h * 33.0 - 1.0).abs() < 1e-12);
    }
}
