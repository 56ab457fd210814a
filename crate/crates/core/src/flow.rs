//! Sampled-time trajectories `ξ_{x u d}(τ)` by fixed-step classical RK4.
//!
//! Controls are constant over the sampling period; the disturbance is
//! evaluated at every RK4 stage time, which is exact for piecewise-linear
//! splines.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::system::{Disturbance, SystemDef};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub tau: f64,
    pub substeps: usize,
}

impl FlowConfig {
    pub const DEFAULT_SUBSTEPS: usize = 64;

    pub fn new(tau: f64, substeps: usize) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::invalid(format!("sampling time must be positive, got {tau}")));
        }
        if substeps == 0 {
            return Err(Error::invalid("at least one integration substep is required"));
        }
        Ok(FlowConfig { tau, substeps })
    }
}

struct Rk4Scratch {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
    dv: Vec<f64>,
}

impl Rk4Scratch {
    fn new(n: usize, l: usize) -> Self {
        Rk4Scratch {
            k1: vec![0.0; n],
            k2: vec![0.0; n],
            k3: vec![0.0; n],
            k4: vec![0.0; n],
            tmp: vec![0.0; n],
            dv: vec![0.0; l],
        }
    }
}

#[inline]
fn rk4_step(
    sys: &SystemDef,
    x: &mut [f64],
    u: &[f64],
    d: &dyn Disturbance,
    t: f64,
    h: f64,
    s: &mut Rk4Scratch,
) {
    let f = &sys.field;
    d.eval(t, &mut s.dv);
    f.eval_into(x, u, &s.dv, &mut s.k1);
    for i in 0..x.len() {
        s.tmp[i] = x[i] + 0.5 * h * s.k1[i];
    }
    d.eval(t + 0.5 * h, &mut s.dv);
    f.eval_into(&s.tmp, u, &s.dv, &mut s.k2);
    for i in 0..x.len() {
        s.tmp[i] = x[i] + 0.5 * h * s.k2[i];
    }
    f.eval_into(&s.tmp, u, &s.dv, &mut s.k3);
    for i in 0..x.len() {
        s.tmp[i] = x[i] + h * s.k3[i];
    }
    d.eval(t + h, &mut s.dv);
    f.eval_into(&s.tmp, u, &s.dv, &mut s.k4);
    for i in 0..x.len() {
        x[i] += h / 6.0 * (s.k1[i] + 2.0 * s.k2[i] + 2.0 * s.k3[i] + s.k4[i]);
    }
}

fn check_args(sys: &SystemDef, x0: &[f64], u: &[f64], d: &dyn Disturbance) -> Result<()> {
    if x0.len() != sys.n() || u.len() != sys.m() || d.dim() != sys.l() {
        return Err(Error::DimensionMismatch(format!(
            "integrate got state {}, control {}, disturbance {} for ({}, {}, {})",
            x0.len(),
            u.len(),
            d.dim(),
            sys.n(),
            sys.m(),
            sys.l()
        )));
    }
    Ok(())
}

/// RK4 approximation of `ξ_{x0, u, d}(τ)`.
pub fn integrate(
    sys: &SystemDef,
    x0: &[f64],
    u: &[f64],
    d: &dyn Disturbance,
    cfg: &FlowConfig,
) -> Result<Vec<f64>> {
    check_args(sys, x0, u, d)?;
    let mut x = x0.to_vec();
    let mut s = Rk4Scratch::new(sys.n(), sys.l());
    let h = cfg.tau / cfg.substeps as f64;
    for step in 0..cfg.substeps {
        let t = step as f64 * h;
        rk4_step(sys, &mut x, u, d, t, h, &mut s);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::BlowUp { time: t + h });
        }
    }
    Ok(x)
}

/// States at `samples` equally spaced instants `τ/samples, 2τ/samples, …, τ`.
///
/// Each sample interval takes `ceil(substeps / samples)` RK4 steps, so the last
/// entry coincides with [`integrate`] whenever `samples` divides `substeps`.
pub fn integrate_trace(
    sys: &SystemDef,
    x0: &[f64],
    u: &[f64],
    d: &dyn Disturbance,
    cfg: &FlowConfig,
    samples: usize,
) -> Result<Vec<Vec<f64>>> {
    check_args(sys, x0, u, d)?;
    if samples == 0 {
        return Err(Error::invalid("trace needs at least one sample"));
    }
    let per = cfg.substeps.div_ceil(samples);
    let total = per * samples;
    let h = cfg.tau / total as f64;
    let mut x = x0.to_vec();
    let mut s = Rk4Scratch::new(sys.n(), sys.l());
    let mut out = Vec::with_capacity(samples);
    for step in 0..total {
        let t = step as f64 * h;
        rk4_step(sys, &mut x, u, d, t, h, &mut s);
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::BlowUp { time: t + h });
        }
        if (step + 1) % per == 0 {
            out.push(x.clone());
        }
    }
    Ok(out)
}

/// Writes a trace as CSV rows `t, x1, …, xn`, starting with `x0` at `t = 0`.
pub fn write_trace_csv<W: std::io::Write>(
    mut w: W,
    x0: &[f64],
    trace: &[Vec<f64>],
    tau: f64,
) -> Result<()> {
    let header: Vec<String> = std::iter::once("t".to_string())
        .chain((1..=x0.len()).map(|i| format!("x{i}")))
        .collect();
    writeln!(w, "{}", header.join(","))?;
    let samples = trace.len().max(1);
    let row = |t: f64, x: &[f64]| {
        std::iter::once(t.to_string())
            .chain(x.iter().map(|v| v.to_string()))
            .collect::<Vec<_>>()
            .join(",")
    };
    writeln!(w, "{}", row(0.0, x0))?;
    for (i, x) in trace.iter().enumerate() {
        writeln!(w, "{}", row(tau * (i + 1) as f64 / samples as f64, x))?;
    }
    Ok(())
}
