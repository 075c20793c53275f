//! Problem definitions: generators, terminal functionals, feature lifts and exact solutions.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::path::{FeatureRule, FeatureState, StateRef};

/// `G(t, state, y, z, gamma)`; `z` has length `d`, `gamma` is a row-major `d x d` matrix.
pub type GeneratorFn = dyn Fn(&StateRef, f64, &[f64], &[f64]) -> f64 + Send + Sync;
pub type StateFn = dyn Fn(&StateRef) -> f64 + Send + Sync;
pub type CoefficientFn = dyn Fn(&StateRef, f64, f64) -> GameCoefficients + Send + Sync;

/// Structural constants of a problem, used for CFL sizing, slack terms and stability bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProblemConstants {
    /// Bound on drift and diffusion coefficients.
    pub bound: f64,
    pub lip_y: f64,
    pub lip_z: f64,
    pub lip_gamma: f64,
    /// `sup |∇_γ G|`.
    pub gamma_grad_max: f64,
    /// `inf ∇_γ G`.
    pub gamma_grad_min: f64,
}

/// Control set of a Bellman-Isaacs generator.
#[derive(Debug, Clone, PartialEq)]
pub enum ControlSet {
    Interval(f64, f64),
    Finite(Vec<f64>),
}

impl ControlSet {
    /// Uniform lattice with both endpoints for intervals; finite sets are returned as is.
    pub fn lattice(&self, count: usize) -> Vec<f64> {
        match self {
            ControlSet::Finite(v) => v.clone(),
            ControlSet::Interval(lo, hi) => {
                if count <= 1 || lo == hi {
                    return vec![*lo];
                }
                let n = count - 1;
                (0..=n)
                    .map(|i| if i == n { *hi } else { lo + (hi - lo) * i as f64 / n as f64 })
                    .collect()
            }
        }
    }
}

/// Coefficients `(a, b, c, f)` of one control pair.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GameCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub f: f64,
}

/// Bellman-Isaacs form `inf_{k1} sup_{k2} (a/2 γ + b z + c y + f)`.
#[derive(Clone)]
pub struct GameSpec {
    pub drift_controls: ControlSet,
    pub variance_controls: ControlSet,
    pub coefficients: Arc<CoefficientFn>,
    /// Set when the coefficients do not depend on the state and the only state-dependent
    /// term is this control-free source, which then factors out of the inf-sup.
    pub source: Option<Arc<StateFn>>,
}

impl GameSpec {
    /// Evaluates the inf-sup generator over the given lattices.
    pub fn generator_on(
        &self,
        k1: &[f64],
        k2: &[f64],
        state: &StateRef,
        y: f64,
        z: f64,
        gamma: f64,
    ) -> f64 {
        let source = self.source.as_ref().map_or(0.0, |s| s(state));
        let mut best = f64::INFINITY;
        for &u in k1 {
            let mut inner = f64::NEG_INFINITY;
            for &v in k2 {
                let c = (self.coefficients)(state, u, v);
                inner = inner.max(0.5 * c.a * gamma + c.b * z + c.c * y + c.f);
            }
            best = best.min(inner);
        }
        best + source
    }
}

impl fmt::Debug for GameSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("GameSpec")
            .field("drift_controls", &self.drift_controls)
            .field("variance_controls", &self.variance_controls)
            .field("separable", &self.source.is_some())
            .finish()
    }
}

/// A path-dependent PDE `-∂_t u - G(t, ω, u, ∂_ω u, ∂²_ωω u) = 0`, `u(T, ·) = ξ`.
#[derive(Clone)]
pub struct PpdeProblem {
    pub name: String,
    pub dim: usize,
    pub horizon: f64,
    pub generator: Arc<GeneratorFn>,
    pub terminal: Arc<StateFn>,
    pub feature_rule: FeatureRule,
    pub constants: ProblemConstants,
    pub game: Option<GameSpec>,
    pub exact: Option<Arc<StateFn>>,
    /// Variance of the driftless diffusion simulated by the probabilistic scheme.
    pub reference_variance: f64,
}

impl fmt::Debug for PpdeProblem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PpdeProblem")
            .field("name", &self.name)
            .field("dim", &self.dim)
            .field("horizon", &self.horizon)
            .field("feature_rule", &self.feature_rule)
            .field("constants", &self.constants)
            .field("game", &self.game)
            .field("has_exact", &self.exact.is_some())
            .finish()
    }
}

impl PpdeProblem {
    /// Scalar generator for `d = 1` on the lifted state `(t, x, ybar)`.
    #[inline]
    pub fn g1(&self, t: f64, x: f64, ybar: f64, y: f64, z: f64, gamma: f64) -> f64 {
        let st = StateRef {
            t,
            x: std::slice::from_ref(&x),
            features: std::slice::from_ref(&ybar),
        };
        (self.generator)(&st, y, std::slice::from_ref(&z), std::slice::from_ref(&gamma))
    }

    #[inline]
    pub fn terminal1(&self, x: f64, ybar: f64) -> f64 {
        let st = StateRef {
            t: self.horizon,
            x: std::slice::from_ref(&x),
            features: std::slice::from_ref(&ybar),
        };
        (self.terminal)(&st)
    }

    pub fn exact1(&self, t: f64, x: f64, ybar: f64) -> Option<f64> {
        self.exact.as_ref().map(|u| {
            u(&StateRef {
                t,
                x: std::slice::from_ref(&x),
                features: std::slice::from_ref(&ybar),
            })
        })
    }

    pub fn exact_at(&self, state: &FeatureState) -> Option<f64> {
        self.exact.as_ref().map(|u| u(&state.as_ref()))
    }
}

fn pos(v: f64) -> f64 {
    v.max(0.0)
}

fn neg(v: f64) -> f64 {
    (-v).max(0.0)
}

/// Parameters of the controlled-drift / controlled-volatility game with a cosine solution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Example1Params {
    pub mu_lo: f64,
    pub mu_hi: f64,
    pub a_lo: f64,
    pub a_hi: f64,
    pub horizon: f64,
}

impl Default for Example1Params {
    fn default() -> Self {
        Self {
            mu_lo: -0.2,
            mu_hi: 0.2,
            a_lo: 0.04,
            a_hi: 0.09,
            horizon: 1.0,
        }
    }
}

impl Example1Params {
    /// Source term making `cos(x + ybar)` an exact solution.
    ///
    /// The transport of the running integral contributes `x sin(x + ybar)`, and the
    /// drift control attains `max_μ μ sin`, hence the `(x + μ_lo)` factor on the negative part.
    pub fn source(&self, x: f64, ybar: f64) -> f64 {
        let s = (x + ybar).sin();
        let c = (x + ybar).cos();
        (x + self.mu_hi) * pos(s) - (x + self.mu_lo) * neg(s) + 0.5 * self.a_lo * pos(c)
            - 0.5 * self.a_hi * neg(c)
    }

    /// `min_μ μ z + max_a a γ / 2`, evaluated by the sign of `z` and `γ`.
    #[inline]
    pub fn hamiltonian(&self, z: f64, gamma: f64) -> f64 {
        let mu = if z >= 0.0 { self.mu_lo } else { self.mu_hi };
        let a = if gamma >= 0.0 { self.a_hi } else { self.a_lo };
        mu * z + 0.5 * a * gamma
    }
}

pub fn example1_problem(params: Example1Params) -> Result<PpdeProblem> {
    let p = params;
    if !(p.mu_lo <= p.mu_hi) || !(p.a_lo > 0.0 && p.a_lo <= p.a_hi) || !(p.horizon > 0.0) {
        return Err(Error::Parameter(format!(
            "example1 requires mu_lo <= mu_hi, 0 < a_lo <= a_hi and T > 0, got {p:?}"
        )));
    }
    let game = GameSpec {
        drift_controls: ControlSet::Interval(p.mu_lo, p.mu_hi),
        variance_controls: ControlSet::Interval(p.a_lo, p.a_hi),
        coefficients: Arc::new(|_: &StateRef, mu: f64, a: f64| GameCoefficients {
            a,
            b: mu,
            c: 0.0,
            f: 0.0,
        }),
        source: Some(Arc::new(move |s: &StateRef| p.source(s.x[0], s.features[0]))),
    };
    let bound = p.mu_lo.abs().max(p.mu_hi.abs()).max(p.a_hi);
    Ok(PpdeProblem {
        name: "example1".into(),
        dim: 1,
        horizon: p.horizon,
        generator: Arc::new(move |s: &StateRef, _y: f64, z: &[f64], g: &[f64]| {
            p.hamiltonian(z[0], g[0]) + p.source(s.x[0], s.features[0])
        }),
        terminal: Arc::new(|s: &StateRef| (s.x[0] + s.features[0]).cos()),
        feature_rule: FeatureRule::RunningIntegral,
        constants: ProblemConstants {
            bound,
            lip_y: 0.0,
            lip_z: p.mu_lo.abs().max(p.mu_hi.abs()),
            lip_gamma: 0.5 * p.a_hi,
            gamma_grad_max: 0.5 * p.a_hi,
            gamma_grad_min: 0.5 * p.a_lo,
        },
        game: Some(game),
        exact: Some(Arc::new(|s: &StateRef| (s.x[0] + s.features[0]).cos())),
        reference_variance: p.a_lo,
    })
}

/// Parameters of the robust-utility example with a clipped running-average payoff.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Example2Params {
    pub k_lo: f64,
    pub k_hi: f64,
    pub a_lo: f64,
    pub a_hi: f64,
    pub b: f64,
    pub horizon: f64,
}

impl Default for Example2Params {
    fn default() -> Self {
        Self {
            k_lo: -0.2,
            k_hi: 0.2,
            a_lo: 0.04,
            a_hi: 0.09,
            b: 0.05,
            horizon: 1.0,
        }
    }
}

impl Example2Params {
    /// `f(y, z, a) = ((√a z + b/√a)^-)^2 / 2 - z b - b^2 / (2a)`.
    #[inline]
    pub fn penalty(&self, z: f64, a: f64) -> f64 {
        let sa = a.sqrt();
        let w = neg(sa * z + self.b / sa);
        0.5 * w * w - z * self.b - self.b * self.b / (2.0 * a)
    }

    #[inline]
    fn objective(&self, z: f64, gamma: f64, a: f64) -> f64 {
        0.5 * a * gamma - self.penalty(z, a)
    }

    /// `max_{a in [a_lo, a_hi]} (a γ / 2 - f(y, z, a))`.
    ///
    /// The objective is convex in `a` where `a z + b >= 0` and linear elsewhere, with a
    /// single switch at `a = -b / z`; its maximum is attained at an interval end or at that switch.
    #[inline]
    pub fn generator(&self, z: f64, gamma: f64) -> f64 {
        let mut best = self.objective(z, gamma, self.a_lo).max(self.objective(z, gamma, self.a_hi));
        if z != 0.0 {
            let switch = -self.b / z;
            if switch > self.a_lo && switch < self.a_hi {
                best = best.max(self.objective(z, gamma, switch));
            }
        }
        best
    }

    /// Grid search over `a` followed by golden-section refinement; independent of [`Self::generator`].
    pub fn generator_by_search(&self, z: f64, gamma: f64, points: usize, tol: f64) -> f64 {
        let n = points.max(2) - 1;
        let grid: Vec<f64> = (0..=n)
            .map(|i| self.a_lo + (self.a_hi - self.a_lo) * i as f64 / n as f64)
            .collect();
        let obj = |a: f64| self.objective(z, gamma, a);
        let (mut best_i, mut best) = (0, f64::NEG_INFINITY);
        for (i, &a) in grid.iter().enumerate() {
            let v = obj(a);
            if v > best {
                best = v;
                best_i = i;
            }
        }
        let mut lo = grid[best_i.saturating_sub(1)];
        let mut hi = grid[(best_i + 1).min(n)];
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        let mut c = hi - phi * (hi - lo);
        let mut d = lo + phi * (hi - lo);
        while hi - lo > tol {
            if obj(c) > obj(d) {
                hi = d;
            } else {
                lo = c;
            }
            c = hi - phi * (hi - lo);
            d = lo + phi * (hi - lo);
        }
        best.max(obj(0.5 * (lo + hi)))
    }

    /// `K1 + (ybar - K1)^+ - (ybar - K2)^+`.
    pub fn payoff(&self, ybar: f64) -> f64 {
        // K1 + (y - K1)^+ - (y - K2)^+
        ybar.clamp(self.k_lo, self.k_hi)
    }
}

pub fn example2_problem(params: Example2Params) -> Result<PpdeProblem> {
    let p = params;
    if !(p.k_lo < p.k_hi) {
        return Err(Error::Parameter(format!(
            "example2 requires K1 < K2, got K1 = {}, K2 = {}",
            p.k_lo, p.k_hi
        )));
    }
    if !(p.a_lo > 0.0 && p.a_lo <= p.a_hi) || !(p.horizon > 0.0) || !p.b.is_finite() {
        return Err(Error::Parameter(format!(
            "example2 requires 0 < a_lo <= a_hi, finite b and T > 0, got {p:?}"
        )));
    }
    Ok(PpdeProblem {
        name: "example2".into(),
        dim: 1,
        horizon: p.horizon,
        generator: Arc::new(move |_s: &StateRef, _y: f64, z: &[f64], g: &[f64]| {
            p.generator(z[0], g[0])
        }),
        terminal: Arc::new(move |s: &StateRef| p.payoff(s.features[0])),
        feature_rule: FeatureRule::RunningIntegral,
        constants: ProblemConstants {
            bound: p.a_hi.max(p.b.abs()),
            lip_y: 0.0,
            // quadratic in z: no global Lipschitz constant
            lip_z: f64::INFINITY,
            lip_gamma: 0.5 * p.a_hi,
            gamma_grad_max: 0.5 * p.a_hi,
            gamma_grad_min: 0.5 * p.a_lo,
        },
        game: None,
        exact: None,
        reference_variance: p.a_lo,
    })
}

/// `G = c y + μ z + a γ / 2 + f` with constant coefficients and terminal `ξ`.
fn constant_coefficient_problem(
    name: &str,
    c: f64,
    mu: f64,
    a: f64,
    f: f64,
    horizon: f64,
    terminal: Arc<StateFn>,
    exact: Option<Arc<StateFn>>,
) -> PpdeProblem {
    PpdeProblem {
        name: name.into(),
        dim: 1,
        horizon,
        generator: Arc::new(move |_s: &StateRef, y: f64, z: &[f64], g: &[f64]| {
            c * y + mu * z[0] + 0.5 * a * g[0] + f
        }),
        terminal,
        feature_rule: FeatureRule::RunningIntegral,
        constants: ProblemConstants {
            bound: mu.abs().max(a),
            lip_y: c.abs(),
            lip_z: mu.abs(),
            lip_gamma: 0.5 * a,
            gamma_grad_max: 0.5 * a,
            gamma_grad_min: 0.5 * a,
        },
        game: Some(GameSpec {
            drift_controls: ControlSet::Finite(vec![mu]),
            variance_controls: ControlSet::Finite(vec![a]),
            coefficients: Arc::new(move |_: &StateRef, m: f64, v: f64| GameCoefficients {
                a: v,
                b: m,
                c,
                f,
            }),
            source: Some(Arc::new(|_: &StateRef| 0.0)),
        }),
        exact,
        reference_variance: a,
    }
}

/// Drifted Brownian motion with the running integral as terminal functional.
pub fn linear_validation_problem(mu: f64, a: f64, horizon: f64) -> Result<PpdeProblem> {
    if !(a >= 0.0) || !(horizon > 0.0) {
        return Err(Error::Parameter(format!(
            "linear problem requires a >= 0 and T > 0, got a = {a}, T = {horizon}"
        )));
    }
    let exact = move |s: &StateRef| {
        let tau = horizon - s.t;
        s.features[0] + s.x[0] * tau + 0.5 * mu * tau * tau
    };
    Ok(constant_coefficient_problem(
        "linear",
        0.0,
        mu,
        a,
        0.0,
        horizon,
        Arc::new(|s: &StateRef| s.features[0]),
        Some(Arc::new(exact)),
    ))
}

/// Heat equation `G = a γ / 2` with `ξ = ω_T^2`.
pub fn heat_problem(a: f64, horizon: f64) -> Result<PpdeProblem> {
    if !(a >= 0.0) || !(horizon > 0.0) {
        return Err(Error::Parameter(format!(
            "heat problem requires a >= 0 and T > 0, got a = {a}, T = {horizon}"
        )));
    }
    Ok(constant_coefficient_problem(
        "heat",
        0.0,
        0.0,
        a,
        0.0,
        horizon,
        Arc::new(|s: &StateRef| s.x[0] * s.x[0]),
        Some(Arc::new(move |s: &StateRef| s.x[0] * s.x[0] + a * (horizon - s.t))),
    ))
}

/// `G ≡ 0`, `ξ ≡ value`.
pub fn constant_problem(value: f64, horizon: f64) -> PpdeProblem {
    let mut p = constant_coefficient_problem(
        "constant",
        0.0,
        0.0,
        0.0,
        0.0,
        horizon,
        Arc::new(move |_: &StateRef| value),
        Some(Arc::new(move |_: &StateRef| value)),
    );
    p.reference_variance = 0.04;
    p
}

/// Affine generator with a `y` term, used by the consistency checks.
pub fn affine_problem(c: f64, mu: f64, a: f64, f: f64, horizon: f64) -> PpdeProblem {
    constant_coefficient_problem(
        "affine",
        c,
        mu,
        a,
        f,
        horizon,
        Arc::new(|s: &StateRef| s.x[0]),
        None,
    )
}

pub const PROBLEM_NAMES: &[&str] = &["example1", "example2", "linear", "heat", "constant"];

/// Default linear and heat problem coefficients.
pub const LINEAR_DEFAULT_MU: f64 = 0.1;
pub const LINEAR_DEFAULT_A: f64 = 0.04;

/// Resolves a problem by its CLI name with default parameters.
pub fn problem_by_name(name: &str) -> Result<PpdeProblem> {
    match name {
        "example1" => example1_problem(Example1Params::default()),
        "example2" => example2_problem(Example2Params::default()),
        "linear" => linear_validation_problem(LINEAR_DEFAULT_MU, LINEAR_DEFAULT_A, 1.0),
        "heat" => heat_problem(LINEAR_DEFAULT_A, 1.0),
        "constant" => Ok(constant_problem(1.0, 1.0)),
        other => Err(Error::Resolution {
            kind: "problem",
            name: other.into(),
            valid: PROBLEM_NAMES.join(", "),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// `-∂_t u - G` for `u = cos(x + ybar)` with derivatives taken by hand:
    /// `∂_t u = -x sin`, `∂_x u = -sin`, `∂_xx u = -cos`.
    fn example1_residual(p: &PpdeProblem, t: f64, x: f64, ybar: f64) -> f64 {
        let s = (x + ybar).sin();
        let c = (x + ybar).cos();
        let u = c;
        let dt = -x * s;
        -dt - p.g1(t, x, ybar, u, -s, -c)
    }

    #[test]
    fn example1_exact_solution_values() {
        let p = example1_problem(Example1Params::default()).unwrap();
        assert_eq!(p.exact1(0.0, 0.0, 0.0).unwrap(), 1.0);
        assert!(p.exact1(0.3, 1.0, std::f64::consts::FRAC_PI_2 - 1.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn example1_residual_vanishes() {
        let p = example1_problem(Example1Params::default()).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let t = rng.random_range(0.0..1.0);
            let x = rng.random_range(-3.0..3.0);
            let y = rng.random_range(-3.0..3.0);
            let r = example1_residual(&p, t, x, y);
            assert!(r.abs() < 1e-9, "residual {r} at ({t}, {x}, {y})");
        }
    }

    #[test]
    fn example1_lattice_game_matches_closed_form() {
        let p = example1_problem(Example1Params::default()).unwrap();
        let game = p.game.as_ref().unwrap();
        let k1 = game.drift_controls.lattice(21);
        let k2 = game.variance_controls.lattice(21);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..200 {
            let (x, y) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let (z, g) = (rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
            let st = StateRef { t: 0.0, x: &[x], features: &[y] };
            let lattice = game.generator_on(&k1, &k2, &st, 0.0, z, g);
            assert!((lattice - p.g1(0.0, x, y, 0.0, z, g)).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let bad = Example1Params { mu_lo: 0.3, ..Default::default() };
        assert!(matches!(example1_problem(bad), Err(Error::Parameter(_))));
        let bad = Example2Params { k_lo: 0.2, k_hi: 0.2, ..Default::default() };
        assert!(matches!(example2_problem(bad), Err(Error::Parameter(_))));
        assert!(matches!(problem_by_name("nope"), Err(Error::Resolution { .. })));
    }

    #[test]
    fn example2_terminal_values() {
        let p = Example2Params::default();
        assert!((p.payoff(0.0) - 0.0).abs() < 1e-15);
        assert_eq!(p.payoff(0.35), 0.2);
        assert_eq!(p.payoff(-0.5), -0.2);
        let prob = example2_problem(p).unwrap();
        assert!((prob.terminal1(0.4, 0.0)).abs() < 1e-15);
    }

    #[test]
    fn example2_penalty_inactive_part() {
        let p = Example2Params::default();
        for &(z, a) in &[(0.5, 0.04), (0.0, 0.09), (2.0, 0.06)] {
            let expected = -z * p.b - p.b * p.b / (2.0 * a);
            assert!((p.penalty(z, a) - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn example2_closed_form_max_agrees_with_search() {
        let p = Example2Params::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..2000 {
            let z = rng.random_range(-4.0..4.0);
            let g = rng.random_range(-20.0..20.0);
            let exact = p.generator(z, g);
            let searched = p.generator_by_search(z, g, 65, 1e-8);
            assert!(exact >= searched - 1e-12, "closed form below search at z={z}, g={g}");
            assert!((exact - searched).abs() < 1e-7, "z={z} g={g}: {exact} vs {searched}");
        }
    }

    #[test]
    fn example2_generator_monotone_and_convex_in_gamma() {
        let p = Example2Params::default();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let z = rng.random_range(-3.0..3.0);
            let g1 = rng.random_range(-10.0..10.0);
            let g2 = g1 + rng.random_range(0.0..5.0);
            assert!(p.generator(z, g2) >= p.generator(z, g1));
            let mid = p.generator(z, 0.5 * (g1 + g2));
            assert!(mid <= 0.5 * (p.generator(z, g1) + p.generator(z, g2)) + 1e-12);
        }
    }

    #[test]
    fn example1_generator_monotone_and_lipschitz() {
        let prob = example1_problem(Example1Params::default()).unwrap();
        let k = prob.constants;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..1000 {
            let (x, yb) = (rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0));
            let (z, z2) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let (g, g2): (f64, f64) = (rng.random_range(-3.0..3.0), rng.random_range(-3.0..3.0));
            let lo = prob.g1(0.1, x, yb, 0.0, z, g.min(g2));
            let hi = prob.g1(0.1, x, yb, 0.0, z, g.max(g2));
            assert!(hi >= lo);
            let diff = (prob.g1(0.1, x, yb, 0.0, z, g) - prob.g1(0.1, x, yb, 0.0, z2, g2)).abs();
            let bound = k.lip_z * (z - z2).abs() + k.lip_gamma * (g - g2).abs();
            assert!(diff <= bound + 1e-12);
        }
    }

    #[test]
    fn linear_exact_solution() {
        let p = linear_validation_problem(0.0, 0.04, 1.0).unwrap();
        assert_eq!(p.exact1(0.0, 0.0, 0.0).unwrap(), 0.0);
        let p = linear_validation_problem(0.1, 0.04, 1.0).unwrap();
        assert!((p.exact1(0.0, 0.0, 0.0).unwrap() - 0.05).abs() < 1e-15);
        let c = 0.7;
        // ξ of the constant path ω ≡ c over [0, T]: running integral c T.
        let st = FeatureState { t: 1.0, x: vec![c], features: vec![c * 1.0] };
        assert!(((p.terminal)(&st.as_ref()) - c).abs() < 1e-15);
        for &(x, y) in &[(0.3, -0.2), (-1.0, 0.5)] {
            assert_eq!(p.exact1(1.0, x, y).unwrap(), p.terminal1(x, y));
        }
    }

    #[test]
    fn linear_exact_matches_monte_carlo() {
        use rand_distr::{Distribution, StandardNormal};
        let (mu, a, n_steps) = (0.1, 0.04, 50usize);
        let h = 1.0 / n_steps as f64;
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let n = 200_000;
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for _ in 0..n {
            let (mut x, mut integral) = (0.0f64, 0.0f64);
            for _ in 0..n_steps {
                let w: f64 = StandardNormal.sample(&mut rng);
                // exact integral of a Brownian bridge segment is not needed: use fine trapezoid
                let next = x + mu * h + (a * h).sqrt() * w;
                integral += 0.5 * (x + next) * h;
                x = next;
            }
            sum += integral;
            sum2 += integral * integral;
        }
        let mean = sum / n as f64;
        let se = ((sum2 / n as f64 - mean * mean) / n as f64).sqrt();
        assert!((mean - 0.05).abs() < 3.0 * se + 1e-4, "mean {mean} se {se}");
    }
}
