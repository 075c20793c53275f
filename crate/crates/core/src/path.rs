//! Discrete paths on a uniform time grid and the path algebra used by the schemes.
//!
//! Times are carried as step indices internally; the public constructors accept
//! real grid times and reject anything that is not a multiple of `dt`.

use crate::error::{Error, Result};

const GRID_TOL: f64 = 1e-9;

/// A `dim`-dimensional path sampled at `t_k = k * dt`, starting at the origin.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePath {
    dim: usize,
    dt: f64,
    values: Vec<f64>,
}

impl DiscretePath {
    /// Builds a path from row-major points (`values.len() == (steps + 1) * dim`).
    pub fn new(dim: usize, dt: f64, values: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Dimension("path dimension must be positive".into()));
        }
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(Error::Parameter(format!("time step must be positive, got {dt}")));
        }
        if values.is_empty() || values.len() % dim != 0 {
            return Err(Error::Dimension(format!(
                "{} values do not form points of dimension {dim}",
                values.len()
            )));
        }
        if values[..dim].iter().any(|v| *v != 0.0) {
            return Err(Error::Malformed("paths must start at the origin".into()));
        }
        Ok(Self { dim, dt, values })
    }

    /// The constant zero path on `[0, steps * dt]`.
    pub fn zero(dim: usize, dt: f64, steps: usize) -> Self {
        Self {
            dim,
            dt,
            values: vec![0.0; (steps + 1) * dim],
        }
    }

    /// Samples a scalar function of time; `f(0)` is shifted so the path starts at zero.
    pub fn from_scalar_fn(dt: f64, steps: usize, f: impl Fn(f64) -> f64) -> Result<Self> {
        let origin = f(0.0);
        let values = (0..=steps).map(|k| f(k as f64 * dt) - origin).collect();
        Self::new(1, dt, values)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.values.len() / self.dim - 1
    }

    pub fn t_end(&self) -> f64 {
        self.steps() as f64 * self.dt
    }

    /// The point `omega_{t_k}`.
    pub fn point(&self, k: usize) -> &[f64] {
        &self.values[k * self.dim..(k + 1) * self.dim]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Converts a grid time to its step index.
    pub fn index_of(&self, t: f64) -> Result<usize> {
        let k = (t / self.dt).round();
        if k < 0.0 || (t - k * self.dt).abs() > GRID_TOL * self.dt.max(1.0) {
            return Err(Error::GridAlignment { time: t, dt: self.dt });
        }
        let k = k as usize;
        if k > self.steps() {
            return Err(Error::Horizon {
                requested: t,
                horizon: self.t_end(),
            });
        }
        Ok(k)
    }

    fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.dim != other.dim {
            return Err(Error::Dimension(format!(
                "path dimensions differ: {} vs {}",
                self.dim, other.dim
            )));
        }
        if (self.dt - other.dt).abs() > GRID_TOL * self.dt {
            return Err(Error::Dimension(format!(
                "path time steps differ: {} vs {}",
                self.dt, other.dt
            )));
        }
        Ok(())
    }

    /// `omega (x)_t omega'`: follows `self` up to `t`, then `omega_t + omega'_{s - t}`.
    pub fn concat(&self, t: f64, other: &DiscretePath) -> Result<DiscretePath> {
        self.check_compatible(other)?;
        let k = self.index_of(t)?;
        Ok(self.concat_at(k, other))
    }

    pub(crate) fn concat_at(&self, k: usize, other: &DiscretePath) -> DiscretePath {
        let d = self.dim;
        let mut values = Vec::with_capacity((k + other.steps() + 1) * d);
        values.extend_from_slice(&self.values[..(k + 1) * d]);
        let anchor = self.point(k).to_vec();
        for j in 1..=other.steps() {
            values.extend(other.point(j).iter().zip(&anchor).map(|(w, a)| a + w));
        }
        DiscretePath {
            dim: d,
            dt: self.dt,
            values,
        }
    }

    /// `omega (x)_t^h z` with `h = dt`: the path reaches `omega_t + z` at `t + h` and stays there.
    pub fn bump(&self, t: f64, h: f64, z: &[f64]) -> Result<DiscretePath> {
        if z.len() != self.dim {
            return Err(Error::Dimension(format!(
                "bump of dimension {} on a path of dimension {}",
                z.len(),
                self.dim
            )));
        }
        if (h - self.dt).abs() > GRID_TOL * self.dt {
            return Err(Error::Parameter(format!(
                "bump duration {h} must equal the path step {}",
                self.dt
            )));
        }
        let k = self.index_of(t)?;
        if k + 1 > self.steps() {
            return Err(Error::Horizon {
                requested: t + h,
                horizon: self.t_end(),
            });
        }
        let d = self.dim;
        let mut values = self.values.clone();
        let target: Vec<f64> = self.point(k).iter().zip(z).map(|(a, b)| a + b).collect();
        for row in values[(k + 1) * d..].chunks_exact_mut(d) {
            row.copy_from_slice(&target);
        }
        Ok(DiscretePath {
            dim: d,
            dt: self.dt,
            values,
        })
    }

    /// The stopped path `omega_{t_k ∧ ·}` on the original horizon.
    pub fn stopped(&self, k: usize) -> DiscretePath {
        let d = self.dim;
        let k = k.min(self.steps());
        let mut values = self.values.clone();
        let frozen = self.point(k).to_vec();
        for row in values[(k + 1) * d..].chunks_exact_mut(d) {
            row.copy_from_slice(&frozen);
        }
        DiscretePath {
            dim: d,
            dt: self.dt,
            values,
        }
    }

    /// The increment path `s -> omega_{t_k + s} - omega_{t_k}` on `[0, t_end - t_k]`.
    pub fn shifted_from(&self, k: usize) -> DiscretePath {
        let d = self.dim;
        let anchor = self.point(k).to_vec();
        let values = self.values[k * d..]
            .chunks_exact(d)
            .flat_map(|row| row.iter().zip(&anchor).map(|(v, a)| v - a).collect::<Vec<_>>())
            .collect();
        DiscretePath {
            dim: d,
            dt: self.dt,
            values,
        }
    }
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Dupire pseudo-distance `|t - t'| + sup_s |omega_{t∧s} - omega'_{t'∧s}|`.
pub fn dupire_distance(p: (f64, &DiscretePath), q: (f64, &DiscretePath)) -> Result<f64> {
    let (t, w) = p;
    let (s, v) = q;
    w.check_compatible(v)?;
    let kw = w.index_of(t)?;
    let kv = v.index_of(s)?;
    let sup = (0..=kw.max(kv))
        .map(|j| euclid(w.point(j.min(kw)), v.point(j.min(kv))))
        .fold(0.0, f64::max);
    Ok((t - s).abs() + sup)
}

/// Path functionals carried alongside the current point to make the value function Markovian.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureRule {
    /// No path functionals.
    Plain,
    /// Running integral `∫_0^t omega_s ds` per coordinate, left-endpoint quadrature.
    RunningIntegral,
}

impl FeatureRule {
    pub fn feature_dim(&self, dim: usize) -> usize {
        match self {
            FeatureRule::Plain => 0,
            FeatureRule::RunningIntegral => dim,
        }
    }

    pub fn initial(&self, dim: usize) -> FeatureState {
        FeatureState {
            t: 0.0,
            x: vec![0.0; dim],
            features: vec![0.0; self.feature_dim(dim)],
        }
    }

    /// Advances `state` by one step of length `h` with increment `z`.
    pub fn update(&self, state: &FeatureState, z: &[f64], h: f64) -> FeatureState {
        let features = match self {
            FeatureRule::Plain => Vec::new(),
            FeatureRule::RunningIntegral => state
                .features
                .iter()
                .zip(&state.x)
                .map(|(a, x)| a + x * h)
                .collect(),
        };
        FeatureState {
            t: state.t + h,
            x: state.x.iter().zip(z).map(|(x, dz)| x + dz).collect(),
            features,
        }
    }

    /// Recomputes the state at step `k` directly from the full path.
    pub fn from_path(&self, path: &DiscretePath, k: usize) -> FeatureState {
        let d = path.dim();
        let features = match self {
            FeatureRule::Plain => Vec::new(),
            FeatureRule::RunningIntegral => (0..d)
                .map(|i| (0..k).map(|j| path.point(j)[i]).sum::<f64>() * path.dt())
                .collect(),
        };
        FeatureState {
            t: k as f64 * path.dt(),
            x: path.point(k).to_vec(),
            features,
        }
    }
}

/// Current time, current path value and the path functionals of the lift.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureState {
    pub t: f64,
    pub x: Vec<f64>,
    pub features: Vec<f64>,
}

impl FeatureState {
    pub fn as_ref(&self) -> StateRef<'_> {
        StateRef {
            t: self.t,
            x: &self.x,
            features: &self.features,
        }
    }
}

/// Borrowed view of a [`FeatureState`]; lets the grid loops evaluate generators without allocating.
#[derive(Debug, Clone, Copy)]
pub struct StateRef<'a> {
    pub t: f64,
    pub x: &'a [f64],
    pub features: &'a [f64],
}

impl<'a> StateRef<'a> {
    pub fn to_owned(&self) -> FeatureState {
        FeatureState {
            t: self.t,
            x: self.x.to_vec(),
            features: self.features.to_vec(),
        }
    }
}

/// Incremental feature update; see [`FeatureRule::update`].
pub fn update_features(state: &FeatureState, rule: FeatureRule, z: &[f64], h: f64) -> FeatureState {
    rule.update(state, z, h)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn concat_of_zero_paths_is_zero() {
        let w = DiscretePath::zero(1, 0.25, 4);
        let tail = DiscretePath::zero(1, 0.25, 2);
        let out = w.concat(0.5, &tail).unwrap();
        assert_eq!(out, DiscretePath::zero(1, 0.25, 4));
    }

    #[test]
    fn concat_hand_evaluation() {
        let w = DiscretePath::from_scalar_fn(0.25, 4, |s| s).unwrap();
        let tail = DiscretePath::from_scalar_fn(0.25, 2, |s| 2.0 * s).unwrap();
        let out = w.concat(0.5, &tail).unwrap();
        assert!(close(out.values(), &[0.0, 0.25, 0.5, 1.0, 1.5]));
        assert!((out.t_end() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn concat_with_own_tail_is_identity() {
        let w = DiscretePath::from_scalar_fn(0.1, 10, |s| (3.0 * s).sin()).unwrap();
        let k = 4;
        let out = w.concat(0.4, &w.shifted_from(k)).unwrap();
        assert!(close(out.values(), w.values()));
    }

    #[test]
    fn concat_errors() {
        let w = DiscretePath::zero(1, 0.25, 4);
        let other_dt = DiscretePath::zero(1, 0.1, 4);
        let other_dim = DiscretePath::zero(2, 0.25, 4);
        assert!(matches!(w.concat(0.5, &other_dt), Err(Error::Dimension(_))));
        assert!(matches!(w.concat(0.5, &other_dim), Err(Error::Dimension(_))));
        assert!(matches!(
            w.concat(0.3, &DiscretePath::zero(1, 0.25, 1)),
            Err(Error::GridAlignment { .. })
        ));
    }

    #[test]
    fn zero_bump_freezes_path() {
        let w = DiscretePath::from_scalar_fn(0.1, 5, |s| s * s).unwrap();
        let out = w.bump(0.2, 0.1, &[0.0]).unwrap();
        assert_eq!(out, w.stopped(2));
    }

    #[test]
    fn bump_from_origin() {
        let w = DiscretePath::zero(1, 0.1, 4);
        let out = w.bump(0.0, 0.1, &[0.3]).unwrap();
        assert!(close(out.values(), &[0.0, 0.3, 0.3, 0.3, 0.3]));
    }

    #[test]
    fn bump_is_additive_in_two_dimensions() {
        let w = DiscretePath::new(2, 0.5, vec![0.0, 0.0, 0.2, -0.1, 0.4, 0.3]).unwrap();
        let out = w.bump(0.5, 0.5, &[1.0, -1.0]).unwrap();
        let diff: Vec<f64> = out.point(2).iter().zip(out.point(1)).map(|(a, b)| a - b).collect();
        assert!(close(&diff, &[1.0, -1.0]));
    }

    #[test]
    fn bump_beyond_horizon() {
        let w = DiscretePath::zero(1, 0.1, 3);
        assert!(matches!(w.bump(0.3, 0.1, &[1.0]), Err(Error::Horizon { .. })));
    }

    #[test]
    fn distance_examples() {
        let zero = DiscretePath::zero(1, 0.1, 10);
        assert_eq!(dupire_distance((0.5, &zero), (0.5, &zero)).unwrap(), 0.0);
        let d = dupire_distance((0.5, &zero), (0.7, &zero)).unwrap();
        assert!((d - 0.2).abs() < 1e-12);
        let a = DiscretePath::from_scalar_fn(0.1, 10, |s| s).unwrap();
        let b = DiscretePath::from_scalar_fn(0.1, 10, |s| 2.0 * s).unwrap();
        let d = dupire_distance((1.0, &a), (1.0, &b)).unwrap();
        assert!((d - 1.0).abs() < 1e-12);
    }

    #[test]
    fn running_integral_updates() {
        let rule = FeatureRule::RunningIntegral;
        let st = FeatureState { t: 0.0, x: vec![0.0], features: vec![0.0] };
        assert_eq!(rule.update(&st, &[0.7], 0.1).features, vec![0.0]);

        let st = FeatureState { t: 0.0, x: vec![1.0], features: vec![0.5] };
        let next = update_features(&st, rule, &[0.0], 0.1);
        assert!((next.features[0] - 0.6).abs() < 1e-15);

        let c = 1.3;
        let mut st = FeatureState { t: 0.0, x: vec![c], features: vec![0.0] };
        for _ in 0..7 {
            st = rule.update(&st, &[0.0], 0.05);
        }
        assert!((st.features[0] - c * 7.0 * 0.05).abs() < 1e-12);
    }

    #[test]
    fn path_must_start_at_origin() {
        assert!(DiscretePath::new(1, 0.1, vec![1.0, 2.0]).is_err());
    }
}
