//! Control systems `ẋ = f(x, u, d)` on boxes `X`, `U`, `D`, with disturbance
//! signals restricted to a Lipschitz class of constant `κ_d`.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{Dims, Expr, Program};
use crate::geometry::{inf_norm, Rect};

/// Tolerance for the `f(0,0,0) = 0` check.
pub const EQUILIBRIUM_TOL: f64 = 1e-9;

/// JSON form of a system definition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    pub n: usize,
    pub m: usize,
    pub l: usize,
    #[serde(rename = "X")]
    pub x: Vec<[f64; 2]>,
    #[serde(rename = "U")]
    pub u: Vec<[f64; 2]>,
    #[serde(rename = "D")]
    pub d: Vec<[f64; 2]>,
    pub kappa_d: f64,
    pub f: Vec<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub constants: BTreeMap<String, f64>,
}

/// The right-hand side `f`, one expression per state component.
#[derive(Debug, Clone)]
pub struct VectorField {
    sources: Vec<String>,
    exprs: Vec<Expr>,
    programs: Vec<Program>,
    dims: Dims,
}

impl VectorField {
    pub fn parse(sources: &[String], dims: Dims, constants: &BTreeMap<String, f64>) -> Result<Self> {
        if sources.len() != dims.n {
            return Err(Error::DimensionMismatch(format!(
                "{} field expressions for n = {}",
                sources.len(),
                dims.n
            )));
        }
        let exprs = sources
            .iter()
            .map(|s| Expr::parse_with(s, dims, constants))
            .collect::<Result<Vec<_>>>()?;
        let programs = exprs.iter().map(Expr::compile).collect();
        Ok(VectorField {
            sources: sources.to_vec(),
            exprs,
            programs,
            dims,
        })
    }

    pub fn exprs(&self) -> &[Expr] {
        &self.exprs
    }

    pub fn sources(&self) -> &[String] {
        &self.sources
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    /// Evaluates into `out` without checking finiteness.
    #[inline]
    pub fn eval_into(&self, x: &[f64], u: &[f64], d: &[f64], out: &mut [f64]) {
        for (o, p) in out.iter_mut().zip(&self.programs) {
            *o = p.eval(x, u, d);
        }
    }
}

/// `Σ = (X, U, D, f)` together with the disturbance Lipschitz constant.
#[derive(Debug, Clone)]
pub struct SystemDef {
    pub name: String,
    pub state_box: Rect,
    pub control_box: Rect,
    pub disturbance_box: Rect,
    pub field: VectorField,
    pub kappa_d: f64,
    config: SystemConfig,
}

impl SystemDef {
    pub fn from_config(cfg: &SystemConfig) -> Result<Self> {
        let dims = Dims {
            n: cfg.n,
            m: cfg.m,
            l: cfg.l,
        };
        if cfg.n == 0 || cfg.m == 0 || cfg.l == 0 {
            return Err(Error::invalid("n, m and l must all be positive"));
        }
        let check_len = |name: &str, got: usize, want: usize| {
            if got != want {
                Err(Error::DimensionMismatch(format!(
                    "{name} has {got} intervals, expected {want}"
                )))
            } else {
                Ok(())
            }
        };
        check_len("X", cfg.x.len(), cfg.n)?;
        check_len("U", cfg.u.len(), cfg.m)?;
        check_len("D", cfg.d.len(), cfg.l)?;
        let state_box = Rect::from_intervals(&cfg.x)?;
        let control_box = Rect::from_intervals(&cfg.u)?;
        let disturbance_box = Rect::from_intervals(&cfg.d)?;
        for (name, b) in [("X", &state_box), ("U", &control_box), ("D", &disturbance_box)] {
            if !b.has_origin_interior() {
                return Err(Error::invalid(format!(
                    "{name} must contain the origin in its interior"
                )));
            }
        }
        if !(cfg.kappa_d > 0.0) || !cfg.kappa_d.is_finite() {
            return Err(Error::DegenerateClass(format!(
                "kappa_d must be positive and finite, got {}",
                cfg.kappa_d
            )));
        }
        let field = VectorField::parse(&cfg.f, dims, &cfg.constants)?;
        let sys = SystemDef {
            name: cfg.name.clone().unwrap_or_else(|| "custom".into()),
            state_box,
            control_box,
            disturbance_box,
            field,
            kappa_d: cfg.kappa_d,
            config: cfg.clone(),
        };
        let mut f0 = vec![0.0; cfg.n];
        sys.field
            .eval_into(&vec![0.0; cfg.n], &vec![0.0; cfg.m], &vec![0.0; cfg.l], &mut f0);
        let r = if f0.iter().all(|v| v.is_finite()) { inf_norm(&f0) } else { f64::NAN };
        if !(r <= EQUILIBRIUM_TOL) {
            return Err(Error::NonZeroEquilibrium(r));
        }
        Ok(sys)
    }

    pub fn config(&self) -> &SystemConfig {
        &self.config
    }

    pub fn n(&self) -> usize {
        self.state_box.dim()
    }

    pub fn m(&self) -> usize {
        self.control_box.dim()
    }

    pub fn l(&self) -> usize {
        self.disturbance_box.dim()
    }

    /// `M = sup ‖d‖∞` over the disturbance box.
    pub fn disturbance_sup(&self) -> f64 {
        self.disturbance_box.sup_norm()
    }

    /// `f(x, u, d)`, rejecting non-finite results.
    pub fn eval_field(&self, x: &[f64], u: &[f64], d: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n() || u.len() != self.m() || d.len() != self.l() {
            return Err(Error::DimensionMismatch(format!(
                "eval_field got ({}, {}, {}) for ({}, {}, {})",
                x.len(),
                u.len(),
                d.len(),
                self.n(),
                self.m(),
                self.l()
            )));
        }
        let mut out = vec![0.0; self.n()];
        self.field.eval_into(x, u, d, &mut out);
        if out.iter().all(|v| v.is_finite()) {
            Ok(out)
        } else {
            Err(Error::NumericDomain(format!(
                "f({x:?}, {u:?}, {d:?}) = {out:?}"
            )))
        }
    }
}

/// Parses a JSON system definition, reporting syntax errors by position.
pub fn parse_system(text: &str) -> Result<SystemDef> {
    let cfg: SystemConfig = serde_json::from_str(text).map_err(|e| Error::Config {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    SystemDef::from_config(&cfg)
}

/// JSON text of the pendulum with horizontal wind acceleration.
pub const PENDULUM_JSON: &str = r#"{
  "name": "pendulum",
  "n": 2, "m": 1, "l": 1,
  "X": [[-0.7853981633974483, 0.7853981633974483], [-0.5, 0.5]],
  "U": [[-1.5, 1.5]],
  "D": [[-0.01, 0.02]],
  "kappa_d": 0.002,
  "constants": { "g": 9.8, "l": 0.5, "m": 0.6, "k": 2 },
  "f": [
    "x2",
    "-(g/l)*sin(x1) - (k/m)*x2 + u1/(m*l^2) + d1*cos(x1)"
  ]
}"#;

/// The damped pendulum: `g = 9.8`, `l = 0.5`, `m = 0.6`, `k = 2`,
/// `X = [−π/4, π/4] × [−0.5, 0.5]`, `U = [−1.5, 1.5]`, `D = [−0.01, 0.02]`,
/// `κ_d = 0.002`.
pub fn pendulum_preset() -> SystemDef {
    parse_system(PENDULUM_JSON).expect("built-in pendulum definition is valid")
}

/// Looks up a built-in system by name.
pub fn preset(name: &str) -> Result<SystemDef> {
    match name {
        "pendulum" => Ok(pendulum_preset()),
        other => Err(Error::invalid(format!("unknown system preset `{other}`"))),
    }
}

/// A disturbance input `d : [0, τ] → D`.
pub trait Disturbance: Send + Sync {
    fn dim(&self) -> usize;
    fn eval(&self, t: f64, out: &mut [f64]);
    /// Declared Lipschitz constant in the infinity norm.
    fn lipschitz(&self) -> f64;

    fn value(&self, t: f64) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.eval(t, &mut out);
        out
    }
}

impl<T: Disturbance + ?Sized> Disturbance for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }
    fn eval(&self, t: f64, out: &mut [f64]) {
        (**self).eval(t, out)
    }
    fn lipschitz(&self) -> f64 {
        (**self).lipschitz()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstantDisturbance(pub Vec<f64>);

impl Disturbance for ConstantDisturbance {
    fn dim(&self) -> usize {
        self.0.len()
    }
    fn eval(&self, _t: f64, out: &mut [f64]) {
        out.copy_from_slice(&self.0);
    }
    fn lipschitz(&self) -> f64 {
        0.0
    }
}

/// `d(t) = a·cos(ω t + φ) + c` (scalar).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CosineDisturbance {
    pub amplitude: f64,
    pub frequency: f64,
    pub phase: f64,
    pub offset: f64,
}

impl Disturbance for CosineDisturbance {
    fn dim(&self) -> usize {
        1
    }
    fn eval(&self, t: f64, out: &mut [f64]) {
        out[0] = self.amplitude * (self.frequency * t + self.phase).cos() + self.offset;
    }
    fn lipschitz(&self) -> f64 {
        (self.amplitude * self.frequency).abs()
    }
}

/// The wind realization that sweeps `D = [d̲, d̄]` at the maximal slope:
/// `d(t) = (d̄−d̲)/2 · cos(2κ_d t/(d̄−d̲)) + (d̄+d̲)/2`.
pub fn cosine_disturbance(sys: &SystemDef) -> Result<CosineDisturbance> {
    if sys.l() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "cosine disturbance needs l = 1, system has l = {}",
            sys.l()
        )));
    }
    let lo = sys.disturbance_box.lower()[0];
    let hi = sys.disturbance_box.upper()[0];
    let width = hi - lo;
    Ok(CosineDisturbance {
        amplitude: width / 2.0,
        frequency: 2.0 * sys.kappa_d / width,
        phase: 0.0,
        offset: (hi + lo) / 2.0,
    })
}

/// `t ↦ d(t + offset)`: the restriction of a long signal to one sampling period.
pub struct Shifted<D> {
    pub inner: D,
    pub offset: f64,
}

impl<D: Disturbance> Disturbance for Shifted<D> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }
    fn eval(&self, t: f64, out: &mut [f64]) {
        self.inner.eval(t + self.offset, out)
    }
    fn lipschitz(&self) -> f64 {
        self.inner.lipschitz()
    }
}

/// Piecewise-linear interpolation through `(times[i], values[i])`, held
/// constant outside the knot range.
#[derive(Debug, Clone, PartialEq)]
pub struct PiecewiseLinear {
    times: Vec<f64>,
    values: Vec<Vec<f64>>,
    lipschitz: f64,
}

impl PiecewiseLinear {
    pub fn new(times: Vec<f64>, values: Vec<Vec<f64>>) -> Result<Self> {
        if times.is_empty() || times.len() != values.len() {
            return Err(Error::invalid("piecewise-linear signal needs matching, nonempty knots"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::invalid("knot times must be strictly increasing"));
        }
        let dim = values[0].len();
        if values.iter().any(|v| v.len() != dim) {
            return Err(Error::DimensionMismatch("knot values differ in dimension".into()));
        }
        let lipschitz = times
            .windows(2)
            .zip(values.windows(2))
            .map(|(t, v)| {
                v[1].iter()
                    .zip(&v[0])
                    .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()))
                    / (t[1] - t[0])
            })
            .fold(0.0, f64::max);
        Ok(PiecewiseLinear {
            times,
            values,
            lipschitz,
        })
    }
}

impl Disturbance for PiecewiseLinear {
    fn dim(&self) -> usize {
        self.values[0].len()
    }
    fn eval(&self, t: f64, out: &mut [f64]) {
        let n = self.times.len();
        if t <= self.times[0] || n == 1 {
            out.copy_from_slice(&self.values[0]);
            return;
        }
        if t >= self.times[n - 1] {
            out.copy_from_slice(&self.values[n - 1]);
            return;
        }
        let j = self.times.partition_point(|&s| s <= t) - 1;
        let w = (t - self.times[j]) / (self.times[j + 1] - self.times[j]);
        for (i, o) in out.iter_mut().enumerate() {
            *o = (1.0 - w) * self.values[j][i] + w * self.values[j + 1][i];
        }
    }
    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

/// Dense-grid estimate of `sup ‖d(t)‖`-style quantities: returns the samples
/// of `d` on `points` equally spaced instants of `[0, tau]` (both ends).
pub fn sample_signal(d: &dyn Disturbance, tau: f64, points: usize) -> Vec<Vec<f64>> {
    let points = points.max(2);
    (0..points)
        .map(|i| d.value(tau * i as f64 / (points - 1) as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn pendulum_preset_shape() {
        let sys = pendulum_preset();
        assert_eq!((sys.n(), sys.m(), sys.l()), (2, 1, 1));
        assert_eq!(sys.control_box.intervals(), vec![[-1.5, 1.5]]);
        assert_eq!(sys.kappa_d, 0.002);
        assert_eq!(sys.disturbance_sup(), 0.02);
        assert_eq!(sys.state_box.upper()[0], PI / 4.0);
    }

    #[test]
    fn pendulum_field_values() {
        let sys = pendulum_preset();
        assert_eq!(sys.eval_field(&[0.0, 0.0], &[0.0], &[0.0]).unwrap(), vec![0.0, 0.0]);
        let v = sys.eval_field(&[0.0, 0.0], &[0.09], &[0.0]).unwrap();
        assert_eq!(v[0], 0.0);
        assert!((v[1] - 0.6).abs() < 1e-12);
        let v = sys.eval_field(&[PI / 4.0, 0.0], &[0.0], &[0.02]).unwrap();
        let want = -(9.8 / 0.5) * (PI / 4.0).sin() + 0.02 * (PI / 4.0).cos();
        assert!((v[1] - want).abs() < 1e-12);
    }

    #[test]
    fn config_errors() {
        let bad_json = "{ \"n\": 2, ";
        assert!(matches!(parse_system(bad_json), Err(Error::Config { .. })));

        let shifted = PENDULUM_JSON.replace("\"x2\",", "\"x2 + 1\",");
        assert!(matches!(parse_system(&shifted), Err(Error::NonZeroEquilibrium(_))));

        let wrong_dim = PENDULUM_JSON.replace("\"n\": 2", "\"n\": 3");
        assert!(matches!(parse_system(&wrong_dim), Err(Error::DimensionMismatch(_))));

        let bad_var = PENDULUM_JSON.replace("d1*cos(x1)", "d2*cos(x1)");
        assert!(matches!(parse_system(&bad_var), Err(Error::UnknownVariable { .. })));

        let unclosed = PENDULUM_JSON.replace("d1*cos(x1)", "d1*cos(x1");
        assert!(matches!(parse_system(&unclosed), Err(Error::Syntax { .. })));

        let off_origin = PENDULUM_JSON.replace("[[-1.5, 1.5]]", "[[0.1, 1.5]]");
        assert!(matches!(parse_system(&off_origin), Err(Error::InvalidInput(_))));
    }

    #[test]
    fn non_finite_field_value() {
        let cfg = PENDULUM_JSON.replace("\"x2\",", "\"x2/x1\",");
        // 0/0 at the origin is NaN, caught by the equilibrium check
        assert!(parse_system(&cfg).is_err());
        let cfg = PENDULUM_JSON.replace("\"x2\",", "\"x2*log(x1+1)\",");
        let sys = parse_system(&cfg).unwrap();
        assert!(matches!(
            sys.eval_field(&[-1.5, 0.1], &[0.0], &[0.0]),
            Err(Error::NumericDomain(_))
        ));
    }

    #[test]
    fn cosine_realization() {
        let sys = pendulum_preset();
        let d = cosine_disturbance(&sys).unwrap();
        assert!((d.value(0.0)[0] - 0.02).abs() < 1e-15);
        assert!((d.lipschitz() - 0.002).abs() < 1e-15);
        // sweep a long horizon so the full range and slope are visited
        let horizon = 100.0;
        let samples = sample_signal(&d, horizon, 10_001);
        let dt = horizon / 10_000.0;
        let mut max_slope: f64 = 0.0;
        for w in samples.windows(2) {
            assert!(w[0][0] >= -0.01 - 1e-15 && w[0][0] <= 0.02 + 1e-15);
            max_slope = max_slope.max((w[1][0] - w[0][0]).abs() / dt);
        }
        assert!(max_slope <= 0.002);
    }

    #[test]
    fn piecewise_linear_signal() {
        let s = PiecewiseLinear::new(vec![0.0, 1.0, 3.0], vec![vec![0.0], vec![1.0], vec![0.0]]).unwrap();
        assert_eq!(s.value(0.5), vec![0.5]);
        assert_eq!(s.value(2.0), vec![0.5]);
        assert_eq!(s.value(5.0), vec![0.0]);
        assert_eq!(s.lipschitz(), 1.0);
    }
}
