//! Browser demo bindings.
//!
//! Every export takes plain numbers and returns a JSON string so the page
//! needs no glue beyond `JSON.parse`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use wasm_bindgen::prelude::*;

use symabs::abstraction::{check_params, ParameterVector};
use symabs::flow::{integrate_trace, FlowConfig};
use symabs::lyapunov::{pendulum_cert, pendulum_verified_cert};
use symabs::spline::{approximate_disturbance, random_lipschitz_signal, rho_theta, sup_distance, ApproxParams};
use symabs::system::{cosine_disturbance, pendulum_preset, sample_signal, Shifted};

const PLOT_POINTS: usize = 200;

#[derive(Serialize)]
pub struct SplineView {
    pub times: Vec<f64>,
    pub signal: Vec<f64>,
    pub witness: Vec<f64>,
    pub nodes: Vec<f64>,
    pub rho: f64,
    pub theta_bound: f64,
    pub distance: f64,
}

/// Draws a random signal with slope at most `kappa_d` in the pendulum's
/// disturbance interval and rounds it to a lattice spline.
pub fn spline_view(seed: u64, kappa_d: f64, n: usize, mu_d: f64) -> Result<SplineView, String> {
    let sys = pendulum_preset();
    let dbox = sys.disturbance_box.clone();
    let tau = 1.0;
    let m = sys.disturbance_sup();
    let (rho, theta) = rho_theta(n, mu_d, kappa_d, tau, m).map_err(|e| e.to_string())?;
    let p = ApproxParams::explicit(n, mu_d, None, kappa_d, tau, &dbox).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = random_lipschitz_signal(&mut rng, &dbox, kappa_d, tau, 6);
    let z = approximate_disturbance(&d, &p, &dbox).map_err(|e| e.to_string())?;
    let first = |v: Vec<Vec<f64>>| v.into_iter().map(|x| x[0]).collect::<Vec<_>>();
    Ok(SplineView {
        times: (0..=PLOT_POINTS).map(|i| tau * i as f64 / PLOT_POINTS as f64).collect(),
        signal: first(sample_signal(&d, tau, PLOT_POINTS + 1)),
        witness: first(sample_signal(&z, tau, PLOT_POINTS + 1)),
        nodes: first(z.nodes().to_vec()),
        rho,
        theta_bound: theta,
        distance: sup_distance(&d, &z, tau, 10_000),
    })
}

#[derive(Serialize)]
pub struct MarginPoint {
    pub epsilon: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

/// The decay-budget inequality for fixed quantization parameters across a
/// range of precisions.
pub fn margin_curve(
    certificate: &str,
    mu_x: f64,
    mu_u: f64,
    mu_d: f64,
    theta_d: f64,
    eps_max: f64,
    points: usize,
) -> Result<Vec<MarginPoint>, String> {
    let cert = match certificate {
        "published" => pendulum_cert(),
        "verified" => pendulum_verified_cert(),
        other => return Err(format!("unknown certificate {other:?}")),
    };
    let sys = pendulum_preset();
    let p = ParameterVector { tau: 1.0, mu_x, mu_u, mu_d, n: 0, theta_d };
    (1..=points.max(1))
        .map(|i| {
            let eps = eps_max * i as f64 / points.max(1) as f64;
            let r = check_params(&p, &cert, &sys, eps).map_err(|e| e.to_string())?;
            Ok(MarginPoint { epsilon: eps, lhs: r.lhs, rhs: r.rhs, holds: r.verdict })
        })
        .collect()
}

/// Pendulum states over `periods` sampling periods with a constant input and
/// the slowest sinusoidal wind, 16 samples per period.
pub fn trajectory(theta0: f64, omega0: f64, u: f64, periods: usize) -> Result<Vec<[f64; 3]>, String> {
    let sys = pendulum_preset();
    let flow = FlowConfig::new(1.0, 64).map_err(|e| e.to_string())?;
    let wind = cosine_disturbance(&sys).map_err(|e| e.to_string())?;
    let mut x = vec![theta0, omega0];
    let mut out = vec![[0.0, x[0], x[1]]];
    for k in 0..periods {
        let d = Shifted { inner: wind, offset: k as f64 };
        let tr = integrate_trace(&sys, &x, &[u], &d, &flow, 16).map_err(|e| e.to_string())?;
        for (i, s) in tr.iter().enumerate() {
            out.push([k as f64 + (i + 1) as f64 / 16.0, s[0], s[1]]);
        }
        x = tr.last().cloned().unwrap_or(x);
    }
    Ok(out)
}

fn to_js<T: Serialize>(r: Result<T, String>) -> Result<String, JsValue> {
    r.and_then(|v| serde_json::to_string(&v).map_err(|e| e.to_string()))
        .map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn spline_demo(seed: u32, kappa_d: f64, n: u32, mu_d: f64) -> Result<String, JsValue> {
    to_js(spline_view(seed as u64, kappa_d, n as usize, mu_d))
}

#[wasm_bindgen]
pub fn margin_demo(
    certificate: &str,
    mu_x: f64,
    mu_u: f64,
    mu_d: f64,
    theta_d: f64,
    eps_max: f64,
    points: u32,
) -> Result<String, JsValue> {
    to_js(margin_curve(certificate, mu_x, mu_u, mu_d, theta_d, eps_max, points as usize))
}

#[wasm_bindgen]
pub fn trajectory_demo(theta0: f64, omega0: f64, u: f64, periods: u32) -> Result<String, JsValue> {
    to_js(trajectory(theta0, omega0, u, periods as usize))
}
