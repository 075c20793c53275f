//! Regression Monte Carlo: forward Euler ensembles of `(X, A)` with `A` the running integral,
//! local quadratic least squares on a per-level partition, and the backward recursion with
//! Malliavin-type weights for the first and second derivatives.

use std::io::{Read, Write};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::PpdeProblem;

pub const MIN_PATHS: usize = 1000;

/// Diffusion simulated forward: `X_{k+1} = X_k + μ h + σ ΔW_k`, `A_{k+1} = A_k + X_k h`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulationSpec {
    pub mu: f64,
    pub sigma: f64,
    pub h: f64,
    pub steps: usize,
}

impl SimulationSpec {
    /// Driftless simulation with the problem's reference variance over its horizon.
    pub fn for_problem(problem: &PpdeProblem, h: f64) -> Result<Self> {
        let steps = (problem.horizon / h).round().max(1.0) as usize;
        Ok(Self {
            mu: 0.0,
            sigma: problem.reference_variance.sqrt(),
            h: problem.horizon / steps as f64,
            steps,
        })
    }
}

/// Simulated paths stored level-major: entry `k * n_paths + i` is path `i` at `t_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub n_paths: usize,
    pub spec: SimulationSpec,
    pub x: Vec<f64>,
    pub a: Vec<f64>,
    /// Brownian increment over `[t_k, t_{k+1}]`, `steps` levels.
    pub dw: Vec<f64>,
}

impl PathEnsemble {
    pub fn level_x(&self, k: usize) -> &[f64] {
        &self.x[k * self.n_paths..(k + 1) * self.n_paths]
    }

    pub fn level_a(&self, k: usize) -> &[f64] {
        &self.a[k * self.n_paths..(k + 1) * self.n_paths]
    }

    pub fn level_dw(&self, k: usize) -> &[f64] {
        &self.dw[k * self.n_paths..(k + 1) * self.n_paths]
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.spec.h
    }

    /// Writes `path,time,X,A,W` rows, one per path and level; `W` is the increment leaving the
    /// level and is 0 at the final time.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["path", "time", "X", "A", "W"]).map_err(csv_err)?;
        let n = self.n_paths;
        for i in 0..n {
            for k in 0..=self.spec.steps {
                let dw = if k < self.spec.steps { self.dw[k * n + i] } else { 0.0 };
                w.write_record(&[
                    i.to_string(),
                    format!("{:e}", self.time(k)),
                    format!("{:e}", self.x[k * n + i]),
                    format!("{:e}", self.a[k * n + i]),
                    format!("{:e}", dw),
                ])
                .map_err(csv_err)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Reads an ensemble written by [`Self::write_csv`]; `mu` and `sigma` are not stored and
    /// must be supplied.
    pub fn read_csv<R: Read>(input: R, mu: f64, sigma: f64) -> Result<Self> {
        let mut r = csv::Reader::from_reader(input);
        let headers = r.headers().map_err(csv_err)?.clone();
        if headers.iter().collect::<Vec<_>>() != ["path", "time", "X", "A", "W"] {
            return Err(Error::Malformed(format!("unexpected ensemble header {headers:?}")));
        }
        let mut rows: Vec<(usize, f64, f64, f64, f64)> = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(csv_err)?;
            let num = |j: usize| -> Result<f64> {
                rec[j]
                    .parse::<f64>()
                    .map_err(|e| Error::Malformed(format!("column {j}: {e}")))
            };
            let path = rec[0]
                .parse::<usize>()
                .map_err(|e| Error::Malformed(format!("path index: {e}")))?;
            rows.push((path, num(1)?, num(2)?, num(3)?, num(4)?));
        }
        let n_paths = rows.iter().map(|r| r.0).max().map_or(0, |m| m + 1);
        if n_paths == 0 || rows.len() % n_paths != 0 {
            return Err(Error::Malformed("ragged ensemble file".into()));
        }
        let levels = rows.len() / n_paths;
        if levels < 2 {
            return Err(Error::Malformed("ensemble needs at least two time levels".into()));
        }
        let steps = levels - 1;
        let h = rows[1].1 - rows[0].1;
        let mut x = vec![0.0; rows.len()];
        let mut a = vec![0.0; rows.len()];
        let mut dw = vec![0.0; steps * n_paths];
        for (idx, &(i, t, xv, av, wv)) in rows.iter().enumerate() {
            let k = idx % levels;
            if i != idx / levels || (t - k as f64 * h).abs() > 1e-9 * (1.0 + t) {
                return Err(Error::Malformed(format!("row {idx} out of order")));
            }
            x[k * n_paths + i] = xv;
            a[k * n_paths + i] = av;
            if k < steps {
                dw[k * n_paths + i] = wv;
            }
        }
        Ok(Self {
            n_paths,
            spec: SimulationSpec { mu, sigma, h, steps },
            x,
            a,
            dw,
        })
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::Malformed(e.to_string())
}

/// Simulates `n_paths` Euler paths; path `i` draws from its own ChaCha stream `i` under `seed`.
pub fn simulate_ensemble(spec: &SimulationSpec, n_paths: usize, seed: u64) -> Result<PathEnsemble> {
    if n_paths < MIN_PATHS {
        return Err(Error::Config(format!(
            "regression needs at least {MIN_PATHS} paths, got {n_paths}"
        )));
    }
    if !(spec.sigma >= 0.0) || !(spec.h > 0.0) || spec.steps == 0 {
        return Err(Error::Config(format!("invalid simulation spec {spec:?}")));
    }
    let steps = spec.steps;
    let sqrt_h = spec.h.sqrt();
    let mut by_path = vec![0.0; n_paths * steps];
    by_path
        .par_chunks_mut(steps)
        .enumerate()
        .for_each(|(i, row)| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            for slot in row.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *slot = sqrt_h * z;
            }
        });
    let mut dw = vec![0.0; n_paths * steps];
    for i in 0..n_paths {
        for k in 0..steps {
            dw[k * n_paths + i] = by_path[i * steps + k];
        }
    }
    let mut x = vec![0.0; n_paths * (steps + 1)];
    let mut a = vec![0.0; n_paths * (steps + 1)];
    for k in 0..steps {
        let (cur, next) = (k * n_paths, (k + 1) * n_paths);
        for i in 0..n_paths {
            let xk = x[cur + i];
            x[next + i] = xk + spec.mu * spec.h + spec.sigma * dw[cur + i];
            a[next + i] = a[cur + i] + xk * spec.h;
        }
    }
    Ok(PathEnsemble {
        n_paths,
        spec: *spec,
        x,
        a,
        dw,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegressionConfig {
    pub x_cells: usize,
    pub a_cells: usize,
    /// Cells with fewer points are merged with neighbours.
    pub min_points: usize,
}

impl Default for RegressionConfig {
    fn default() -> Self {
        Self {
            x_cells: 20,
            a_cells: 28,
            min_points: 200,
        }
    }
}

const N_BASIS: usize = 6;

/// Per-level partition of the empirical `(X, A)` box into merged cells, each with a
/// factorised local quadratic design.
#[derive(Debug, Clone)]
pub struct RegressionBasis {
    x_lo: f64,
    x_step: f64,
    a_lo: f64,
    a_step: f64,
    x_cells: usize,
    a_cells: usize,
    /// Group id of each raw cell, `ix * a_cells + ia`.
    cell_group: Vec<usize>,
    groups: Vec<Group>,
    /// Group id of every sample point.
    point_group: Vec<usize>,
    /// Which monomials `1, x, a, x², a², xa` are active.
    active: [bool; N_BASIS],
    /// Normalised basis values per point, `N_BASIS` per point (inactive entries zero).
    design: Vec<f64>,
}

#[derive(Debug, Clone)]
struct Group {
    count: usize,
    mx: f64,
    sx: f64,
    ma: f64,
    sa: f64,
    /// Lower Cholesky factor of the active normal matrix, or `None` for the mean fallback.
    chol: Option<Vec<f64>>,
    n_active: usize,
}

/// Fitted regression function.
#[derive(Debug, Clone)]
pub struct RegressionFn<'a> {
    basis: &'a RegressionBasis,
    coef: Vec<[f64; N_BASIS]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RegressionDiagnostics {
    pub groups: usize,
    pub merged_cells: usize,
    /// Groups that fell back to their mean because the local design was rank deficient.
    pub rank_deficient: usize,
}

fn group_consecutive(counts: &[usize], min_points: usize) -> Vec<usize> {
    let mut ids = vec![0; counts.len()];
    let mut gid = 0;
    let mut acc = 0;
    let mut open = false;
    let mut last_closed: Option<usize> = None;
    for (i, &c) in counts.iter().enumerate() {
        ids[i] = gid;
        acc += c;
        open = true;
        if acc >= min_points {
            last_closed = Some(gid);
            gid += 1;
            acc = 0;
            open = false;
        }
    }
    if open {
        // short tail joins the previous group
        if let Some(prev) = last_closed {
            for id in ids.iter_mut().rev() {
                if *id == gid {
                    *id = prev;
                } else {
                    break;
                }
            }
        }
    }
    ids
}

fn monomials(u: f64, v: f64) -> [f64; N_BASIS] {
    [1.0, u, v, u * u, v * v, u * v]
}

impl RegressionBasis {
    pub fn new(xs: &[f64], avals: &[f64], config: &RegressionConfig) -> Result<Self> {
        let n = xs.len();
        if n == 0 || avals.len() != n {
            return Err(Error::Dimension(format!(
                "regression inputs of lengths {} and {}",
                xs.len(),
                avals.len()
            )));
        }
        if config.x_cells == 0 || config.a_cells == 0 {
            return Err(Error::Config("regression partition needs at least one cell".into()));
        }
        let range = |v: &[f64]| {
            v.iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
        };
        let (x_lo, x_hi) = range(xs);
        let (a_lo, a_hi) = range(avals);
        if !(x_lo.is_finite() && x_hi.is_finite() && a_lo.is_finite() && a_hi.is_finite()) {
            return Err(Error::NonFinite {
                value: f64::NAN,
                location: "regression inputs".into(),
            });
        }
        let degenerate = |lo: f64, hi: f64| hi - lo <= 1e-14 * (1.0 + lo.abs().max(hi.abs()));
        let x_flat = degenerate(x_lo, x_hi);
        let a_flat = degenerate(a_lo, a_hi);
        let x_cells = if x_flat { 1 } else { config.x_cells };
        let a_cells = if a_flat { 1 } else { config.a_cells };
        let x_step = if x_flat { 1.0 } else { (x_hi - x_lo) / x_cells as f64 };
        let a_step = if a_flat { 1.0 } else { (a_hi - a_lo) / a_cells as f64 };
        let active = [true, !x_flat, !a_flat, !x_flat, !a_flat, !x_flat && !a_flat];

        let cell_index = |x: f64, a: f64| {
            let ix = (((x - x_lo) / x_step).floor().max(0.0) as usize).min(x_cells - 1);
            let ia = (((a - a_lo) / a_step).floor().max(0.0) as usize).min(a_cells - 1);
            ix * a_cells + ia
        };
        let point_cell: Vec<usize> = xs.iter().zip(avals).map(|(&x, &a)| cell_index(x, a)).collect();
        let mut counts = vec![0usize; x_cells * a_cells];
        for &c in &point_cell {
            counts[c] += 1;
        }

        // merge sparse columns, then sparse cells along A within each merged column
        let col_counts: Vec<usize> = counts.chunks(a_cells).map(|c| c.iter().sum()).collect();
        let col_group = group_consecutive(&col_counts, config.min_points);
        let n_colgroups = col_group.iter().max().map_or(0, |m| m + 1);
        let mut cell_group = vec![0; x_cells * a_cells];
        let mut next = 0;
        for cg in 0..n_colgroups {
            let cols: Vec<usize> = (0..x_cells).filter(|&ix| col_group[ix] == cg).collect();
            let row_counts: Vec<usize> = (0..a_cells)
                .map(|ia| cols.iter().map(|&ix| counts[ix * a_cells + ia]).sum())
                .collect();
            let rows = group_consecutive(&row_counts, config.min_points);
            let used = rows.iter().max().map_or(0, |m| m + 1);
            for &ix in &cols {
                for ia in 0..a_cells {
                    cell_group[ix * a_cells + ia] = next + rows[ia];
                }
            }
            next += used;
        }
        let n_groups = next;
        let point_group: Vec<usize> = point_cell.iter().map(|&c| cell_group[c]).collect();

        let mut sums = vec![[0.0f64; 5]; n_groups];
        for (i, &g) in point_group.iter().enumerate() {
            let s = &mut sums[g];
            s[0] += 1.0;
            s[1] += xs[i];
            s[2] += avals[i];
        }
        for s in sums.iter_mut() {
            if s[0] > 0.0 {
                s[1] /= s[0];
                s[2] /= s[0];
            }
        }
        for (i, &g) in point_group.iter().enumerate() {
            let s = &mut sums[g];
            s[3] += (xs[i] - s[1]).powi(2);
            s[4] += (avals[i] - s[2]).powi(2);
        }
        let mut groups: Vec<Group> = sums
            .iter()
            .map(|s| {
                let n = s[0].max(1.0);
                let sd = |v: f64| {
                    let sd = (v / n).sqrt();
                    if sd > 0.0 {
                        sd
                    } else {
                        1.0
                    }
                };
                Group {
                    count: s[0] as usize,
                    mx: s[1],
                    sx: sd(s[3]),
                    ma: s[2],
                    sa: sd(s[4]),
                    chol: None,
                    n_active: 0,
                }
            })
            .collect();

        let mut design = vec![0.0; n * N_BASIS];
        let mut normal = vec![[0.0f64; N_BASIS * N_BASIS]; n_groups];
        for (i, &g) in point_group.iter().enumerate() {
            let gr = &groups[g];
            let mut m = monomials((xs[i] - gr.mx) / gr.sx, (avals[i] - gr.ma) / gr.sa);
            for (k, on) in active.iter().enumerate() {
                if !on {
                    m[k] = 0.0;
                }
            }
            design[i * N_BASIS..(i + 1) * N_BASIS].copy_from_slice(&m);
            let nm = &mut normal[g];
            for r in 0..N_BASIS {
                for c in 0..=r {
                    nm[r * N_BASIS + c] += m[r] * m[c];
                }
            }
        }
        let idx: Vec<usize> = (0..N_BASIS).filter(|&k| active[k]).collect();
        groups.par_iter_mut().zip(normal.par_iter()).for_each(|(gr, nm)| {
            let p = idx.len();
            gr.n_active = p;
            if gr.count < p {
                return;
            }
            let mut m = vec![0.0; p * p];
            for (r, &ir) in idx.iter().enumerate() {
                for (c, &ic) in idx.iter().enumerate().take(r + 1) {
                    m[r * p + c] = nm[ir * N_BASIS + ic];
                }
            }
            gr.chol = cholesky(&m, p);
        });

        Ok(Self {
            x_lo,
            x_step,
            a_lo,
            a_step,
            x_cells,
            a_cells,
            cell_group,
            groups,
            point_group,
            active,
            design,
        })
    }

    pub fn diagnostics(&self) -> RegressionDiagnostics {
        let groups = self.groups.len();
        RegressionDiagnostics {
            groups,
            merged_cells: self.x_cells * self.a_cells - groups,
            rank_deficient: self.groups.iter().filter(|g| g.count > 0 && g.chol.is_none()).count(),
        }
    }

    pub fn n_points(&self) -> usize {
        self.point_group.len()
    }

    /// Least-squares fit of `targets` (one per sample point).
    pub fn fit(&self, targets: &[f64]) -> Result<RegressionFn<'_>> {
        Ok(self.fit_many(&[targets])?.pop().expect("one target"))
    }

    /// Fits several targets sharing the factorised designs.
    pub fn fit_many(&self, targets: &[&[f64]]) -> Result<Vec<RegressionFn<'_>>> {
        let n = self.n_points();
        for t in targets {
            if t.len() != n {
                return Err(Error::Dimension(format!(
                    "{} targets for {n} regression points",
                    t.len()
                )));
            }
            if let Some(bad) = t.iter().find(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    value: *bad,
                    location: "regression target".into(),
                });
            }
        }
        let ng = self.groups.len();
        let nt = targets.len();
        // rhs[(g * nt + j) * N_BASIS + k]; sums of targets kept for the mean fallback
        let mut rhs = vec![0.0; ng * nt * N_BASIS];
        for (i, &g) in self.point_group.iter().enumerate() {
            let m = &self.design[i * N_BASIS..(i + 1) * N_BASIS];
            for (j, t) in targets.iter().enumerate() {
                let y = t[i];
                let r = &mut rhs[(g * nt + j) * N_BASIS..(g * nt + j + 1) * N_BASIS];
                for k in 0..N_BASIS {
                    r[k] += m[k] * y;
                }
            }
        }
        let idx: Vec<usize> = (0..N_BASIS).filter(|&k| self.active[k]).collect();
        let mut out: Vec<Vec<[f64; N_BASIS]>> = vec![vec![[0.0; N_BASIS]; ng]; nt];
        for (g, gr) in self.groups.iter().enumerate() {
            for (j, coefs) in out.iter_mut().enumerate() {
                let r = &rhs[(g * nt + j) * N_BASIS..(g * nt + j + 1) * N_BASIS];
                let mut c = [0.0; N_BASIS];
                match &gr.chol {
                    Some(l) => {
                        let b: Vec<f64> = idx.iter().map(|&k| r[k]).collect();
                        let sol = cholesky_solve(l, gr.n_active, &b);
                        for (s, &k) in sol.iter().zip(&idx) {
                            c[k] = *s;
                        }
                    }
                    None if gr.count > 0 => c[0] = r[0] / gr.count as f64,
                    None => {}
                }
                coefs[g] = c;
            }
        }
        Ok(out
            .into_iter()
            .map(|coef| RegressionFn { basis: self, coef })
            .collect())
    }

    fn group_of(&self, x: f64, a: f64) -> usize {
        let ix = (((x - self.x_lo) / self.x_step).floor().max(0.0) as usize).min(self.x_cells - 1);
        let ia = (((a - self.a_lo) / self.a_step).floor().max(0.0) as usize).min(self.a_cells - 1);
        self.cell_group[ix * self.a_cells + ia]
    }

    fn box_clamp(&self, x: f64, a: f64) -> (f64, f64) {
        let x_hi = self.x_lo + self.x_step * self.x_cells as f64;
        let a_hi = self.a_lo + self.a_step * self.a_cells as f64;
        (x.clamp(self.x_lo, x_hi), a.clamp(self.a_lo, a_hi))
    }
}

impl RegressionFn<'_> {
    /// Evaluates at `(x, a)`; points outside the fitted box are clamped onto it.
    pub fn eval(&self, x: f64, a: f64) -> f64 {
        eval_coef(self.basis, &self.coef, x, a)
    }

    /// Values at the fitted sample points.
    pub fn fitted(&self) -> Vec<f64> {
        let b = self.basis;
        b.point_group
            .par_iter()
            .enumerate()
            .map(|(i, &g)| {
                let m = &b.design[i * N_BASIS..(i + 1) * N_BASIS];
                let c = &self.coef[g];
                (0..N_BASIS).map(|k| c[k] * m[k]).sum()
            })
            .collect()
    }
}

fn eval_coef(b: &RegressionBasis, coef: &[[f64; N_BASIS]], x: f64, a: f64) -> f64 {
    let (x, a) = b.box_clamp(x, a);
    let g = b.group_of(x, a);
    let gr = &b.groups[g];
    let m = monomials((x - gr.mx) / gr.sx, (a - gr.ma) / gr.sa);
    let c = &coef[g];
    let mut s = c[0];
    for k in 1..N_BASIS {
        if b.active[k] {
            s += c[k] * m[k];
        }
    }
    s
}

/// Lower Cholesky factor of a symmetric positive definite `p x p` matrix (lower triangle
/// read), or `None` when a pivot collapses.
fn cholesky(m: &[f64], p: usize) -> Option<Vec<f64>> {
    let mut l = vec![0.0; p * p];
    for i in 0..p {
        for j in 0..=i {
            let mut s = m[i * p + j];
            for k in 0..j {
                s -= l[i * p + k] * l[j * p + k];
            }
            if i == j {
                if !(s > 1e-10 * m[i * p + i].max(f64::MIN_POSITIVE)) {
                    return None;
                }
                l[i * p + i] = s.sqrt();
            } else {
                l[i * p + j] = s / l[j * p + j];
            }
        }
    }
    Some(l)
}

fn cholesky_solve(l: &[f64], p: usize, b: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; p];
    for i in 0..p {
        let mut s = b[i];
        for k in 0..i {
            s -= l[i * p + k] * y[k];
        }
        y[i] = s / l[i * p + i];
    }
    for i in (0..p).rev() {
        let mut s = y[i];
        for k in i + 1..p {
            s -= l[k * p + i] * y[k];
        }
        y[i] = s / l[i * p + i];
    }
    y
}

/// Regression function that owns its partition.
#[derive(Debug, Clone)]
pub struct ConditionalExpectation {
    basis: RegressionBasis,
    coef: Vec<[f64; N_BASIS]>,
}

impl ConditionalExpectation {
    pub fn eval(&self, x: f64, a: f64) -> f64 {
        eval_coef(&self.basis, &self.coef, x, a)
    }

    pub fn diagnostics(&self) -> RegressionDiagnostics {
        self.basis.diagnostics()
    }
}

/// Regresses per-path `targets` on the level-`k` states of `ensemble`.
pub fn regress_conditional(
    ensemble: &PathEnsemble,
    k: usize,
    targets: &[f64],
    config: &RegressionConfig,
) -> Result<ConditionalExpectation> {
    if k > ensemble.spec.steps {
        return Err(Error::Horizon {
            requested: ensemble.time(k),
            horizon: ensemble.time(ensemble.spec.steps),
        });
    }
    let basis = RegressionBasis::new(ensemble.level_x(k), ensemble.level_a(k), config)?;
    let coef = basis.fit(targets)?.coef;
    Ok(ConditionalExpectation { basis, coef })
}

/// Weights `H1 = ΔW / (σ h)` and `H2 = (ΔW² - h) / (σ² h²)` for one increment.
#[inline]
pub fn ftw_weights(dw: f64, sigma: f64, h: f64) -> (f64, f64) {
    (dw / (sigma * h), (dw * dw - h) / (sigma * sigma * h * h))
}

/// How the derivative regressions are centred before weighting.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Centring {
    /// Regress `u_{k+1} H_i` directly.
    None,
    /// Regress `(u_{k+1} - D0(X_k, A_k)) H_i`; `D0` is level-`k` measurable and the weights
    /// have conditional mean zero, so the estimator targets the same quantity.
    Value,
    /// As `Value`, and the second-derivative target also subtracts the first-order term
    /// `D1(X_k, A_k) σ ΔW`, whose product with `H2` has conditional mean zero as well.
    #[default]
    ValueAndGradient,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FtwConfig {
    pub h: f64,
    pub n_paths: usize,
    pub seed: u64,
    pub regression: RegressionConfig,
    pub centring: Centring,
}

impl Default for FtwConfig {
    fn default() -> Self {
        Self {
            h: 0.02,
            n_paths: 100_000,
            seed: 42,
            regression: RegressionConfig::default(),
            centring: Centring::ValueAndGradient,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FtwResult {
    pub value: f64,
    pub h: f64,
    pub steps: usize,
    /// `sup_i |u_k(path i)|` per level, `k = 0..=steps`.
    pub level_sup: Vec<f64>,
    pub rank_deficient: usize,
    pub merged_cells: usize,
}

/// Backward recursion `u_k = E_k[u_{k+1}] + h F(t_k, X_k, A_k, E_k[u_{k+1}], E_k[u_{k+1} H1],
/// E_k[u_{k+1} H2])` with `F = G - σ² γ / 2`, conditional expectations by regression.
pub fn ftw_backward(problem: &PpdeProblem, ensemble: &PathEnsemble, config: &FtwConfig) -> Result<FtwResult> {
    let spec = ensemble.spec;
    let (h, sigma, steps, n) = (spec.h, spec.sigma, spec.steps, ensemble.n_paths);
    if !(sigma > 0.0) {
        return Err(Error::Config("the probabilistic scheme needs sigma > 0".into()));
    }
    let f_gamma = problem.constants.gamma_grad_max - 0.5 * sigma * sigma;
    if f_gamma > sigma * sigma * (1.0 + 1e-12) {
        // the weights only dominate the nonlinearity when ∇_γ F <= σ²
        return Err(Error::Config(format!(
            "sup F_gamma = {f_gamma} exceeds sigma^2 = {}; simulate with a larger sigma",
            sigma * sigma
        )));
    }
    let half_var = 0.5 * sigma * sigma;
    let horizon = steps as f64 * h;

    let mut u: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| problem.terminal1(ensemble.x[steps * n + i], ensemble.a[steps * n + i]))
        .collect();
    let xi_sup = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let f0_sup = (0..steps)
        .flat_map(|k| (0..n).step_by((n / 1000).max(1)).map(move |i| (k, i)))
        .fold(0.0f64, |m, (k, i)| {
            let (x, a) = (ensemble.x[k * n + i], ensemble.a[k * n + i]);
            m.max(problem.g1(ensemble.time(k), x, a, 0.0, 0.0, 0.0).abs())
        });
    let bound = 10.0 * (xi_sup + horizon * f0_sup) * (problem.constants.bound * horizon).exp();
    let mut level_sup = vec![0.0; steps + 1];
    level_sup[steps] = xi_sup;
    let (mut rank_deficient, mut merged_cells) = (0, 0);

    for k in (0..steps).rev() {
        let t = ensemble.time(k);
        let xs = ensemble.level_x(k);
        let avals = ensemble.level_a(k);
        let dw = ensemble.level_dw(k);
        let basis = RegressionBasis::new(xs, avals, &config.regression)
            .map_err(|e| e.at_level(k, t))?;
        let d0 = basis.fit(&u).map_err(|e| e.at_level(k, t))?.fitted();
        let (t1, t2): (Vec<f64>, Vec<f64>) = (0..n)
            .into_par_iter()
            .map(|i| {
                let (h1, h2) = ftw_weights(dw[i], sigma, h);
                let base = match config.centring {
                    Centring::None => u[i],
                    Centring::Value | Centring::ValueAndGradient => u[i] - d0[i],
                };
                (base * h1, base * h2)
            })
            .unzip();
        let fits = basis.fit_many(&[&t1, &t2]).map_err(|e| e.at_level(k, t))?;
        let d1 = fits[0].fitted();
        let d2 = if config.centring == Centring::ValueAndGradient {
            let t2: Vec<f64> = (0..n)
                .into_par_iter()
                .map(|i| {
                    let (_, h2) = ftw_weights(dw[i], sigma, h);
                    (u[i] - d0[i] - d1[i] * sigma * dw[i]) * h2
                })
                .collect();
            basis.fit(&t2).map_err(|e| e.at_level(k, t))?.fitted()
        } else {
            fits[1].fitted()
        };
        let diag = basis.diagnostics();
        rank_deficient += diag.rank_deficient;
        merged_cells += diag.merged_cells;
        u = (0..n)
            .into_par_iter()
            .map(|i| {
                let g = problem.g1(t, xs[i], avals[i], d0[i], d1[i], d2[i]);
                d0[i] + h * (g - half_var * d2[i])
            })
            .collect();
        let sup = u.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !sup.is_finite() {
            return Err(Error::NonFinite {
                value: sup,
                location: "probabilistic scheme values".into(),
            }
            .at_level(k, t));
        }
        if sup > bound {
            return Err(Error::Stability {
                level: k,
                norm: sup,
                bound,
            });
        }
        level_sup[k] = sup;
    }
    let value = u.iter().sum::<f64>() / n as f64;
    Ok(FtwResult {
        value,
        h,
        steps,
        level_sup,
        rank_deficient,
        merged_cells,
    })
}

/// Simulates the reference diffusion of `problem` and runs the backward recursion.
pub fn ftw_solve(problem: &PpdeProblem, config: &FtwConfig) -> Result<FtwResult> {
    let spec = SimulationSpec::for_problem(problem, config.h)?;
    let ens = simulate_ensemble(&spec, config.n_paths, config.seed)?;
    ftw_backward(problem, &ens, config)
}

/// One step of the probabilistic scheme applied to a smooth function `phi(x, ybar)` at a single
/// state, with expectations over `ΔW = √h ζ` computed by a quadrature rule `(ζ, weight)`.
pub fn ftw_step_quadrature(
    problem: &PpdeProblem,
    sigma: f64,
    atoms: &[(f64, f64)],
    phi: impl Fn(f64, f64) -> f64,
    t: f64,
    x: f64,
    ybar: f64,
    h: f64,
) -> f64 {
    let yp = ybar + x * h;
    let (mut d0, mut d1, mut d2) = (0.0, 0.0, 0.0);
    for &(z, w) in atoms {
        let dw = h.sqrt() * z;
        let v = phi(x + sigma * dw, yp);
        let (h1, h2) = ftw_weights(dw, sigma, h);
        d0 += w * v;
        d1 += w * v * h1;
        d2 += w * v * h2;
    }
    d0 + h * (problem.g1(t, x, ybar, d0, d1, d2) - 0.5 * sigma * sigma * d2)
}
