//! Quadratic δ-ISS Lyapunov certificates `V(x, y) = (x−y)ᵀ P (x−y)` and sampled
//! checks of the sandwich bound, the dissipation inequality and the
//! Lipschitz-type bound `V(x,x′) − V(x,x″) ≤ γ(‖x′−x″‖)`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{inf_dist, inf_norm, Rect};
use crate::par;
use crate::system::SystemDef;

/// Default sample count and tolerance of the sampled checks.
pub const DEFAULT_SAMPLES: usize = 10_000;
pub const DEFAULT_TOL: f64 = 1e-9;

/// Class-K∞ functions of the restricted form `c·r` or `c·r²`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KInf {
    Linear(f64),
    Quadratic(f64),
}

impl KInf {
    pub fn eval(&self, r: f64) -> f64 {
        match *self {
            KInf::Linear(c) => c * r,
            KInf::Quadratic(c) => c * r * r,
        }
    }

    pub fn inverse(&self, v: f64) -> f64 {
        match *self {
            KInf::Linear(c) => v / c,
            KInf::Quadratic(c) => (v / c).sqrt(),
        }
    }

    pub fn coefficient(&self) -> f64 {
        match *self {
            KInf::Linear(c) | KInf::Quadratic(c) => c,
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        let c = self.coefficient();
        if !(c > 0.0) || !c.is_finite() {
            return Err(Error::invalid(format!("{name} must have a positive coefficient, got {c}")));
        }
        Ok(())
    }
}

/// A symmetric positive-definite matrix, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticForm {
    n: usize,
    p: Vec<f64>,
}

impl QuadraticForm {
    pub fn new(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if n == 0 || rows.iter().any(|r| r.len() != n) {
            return Err(Error::DimensionMismatch("Lyapunov matrix must be square".into()));
        }
        let p: Vec<f64> = rows.iter().flatten().copied().collect();
        for i in 0..n {
            for j in 0..i {
                if (p[i * n + j] - p[j * n + i]).abs() > 1e-12 * (1.0 + p[i * n + j].abs()) {
                    return Err(Error::invalid("Lyapunov matrix is not symmetric"));
                }
            }
        }
        // Cholesky: every pivot positive iff positive definite
        let mut l = vec![0.0; n * n];
        for j in 0..n {
            let mut s = p[j * n + j];
            for k in 0..j {
                s -= l[j * n + k] * l[j * n + k];
            }
            if !(s > 0.0) {
                return Err(Error::invalid("Lyapunov matrix is not positive definite"));
            }
            l[j * n + j] = s.sqrt();
            for i in j + 1..n {
                let mut s = p[i * n + j];
                for k in 0..j {
                    s -= l[i * n + k] * l[j * n + k];
                }
                l[i * n + j] = s / l[j * n + j];
            }
        }
        Ok(QuadraticForm { n, p })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.p.chunks(self.n).map(|r| r.to_vec()).collect()
    }

    /// `δᵀ P δ`.
    pub fn eval(&self, delta: &[f64]) -> f64 {
        let n = self.n;
        let mut s = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += self.p[i * n + j] * delta[j];
            }
            s += delta[i] * row;
        }
        s
    }

    /// `2 P δ`.
    pub fn grad(&self, delta: &[f64]) -> Vec<f64> {
        let n = self.n;
        (0..n)
            .map(|i| 2.0 * (0..n).map(|j| self.p[i * n + j] * delta[j]).sum::<f64>())
            .collect()
    }

    pub fn scaled(&self, c: f64) -> QuadraticForm {
        QuadraticForm {
            n: self.n,
            p: self.p.iter().map(|v| v * c).collect(),
        }
    }
}

/// How `γ` is obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GammaRule {
    /// Slope `sup ‖∂V/∂y‖∞` over `X × X`.
    SupNorm,
    /// Slope `sup ‖∂V/∂y‖₁` over `X × X`, the dual of the state norm.
    DualNorm,
    Explicit(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub form: QuadraticForm,
    pub lambda: f64,
    pub alpha_lo: KInf,
    pub alpha_hi: KInf,
    pub sigma_u: KInf,
    pub sigma_d: KInf,
    pub gamma: GammaRule,
}

/// JSON form of a certificate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertConfig {
    #[serde(rename = "P")]
    pub p: Vec<Vec<f64>>,
    pub lambda: f64,
    pub alpha_lo: KInf,
    pub alpha_hi: KInf,
    pub sigma_u: KInf,
    pub sigma_d: KInf,
    #[serde(default = "default_gamma")]
    pub gamma: GammaRule,
}

fn default_gamma() -> GammaRule {
    GammaRule::SupNorm
}

impl Certificate {
    pub fn from_config(cfg: &CertConfig) -> Result<Self> {
        let form = QuadraticForm::new(&cfg.p)?;
        if !(cfg.lambda > 0.0) || !cfg.lambda.is_finite() {
            return Err(Error::invalid(format!("lambda must be positive, got {}", cfg.lambda)));
        }
        cfg.alpha_lo.validate("alpha_lo")?;
        cfg.alpha_hi.validate("alpha_hi")?;
        cfg.sigma_u.validate("sigma_u")?;
        cfg.sigma_d.validate("sigma_d")?;
        if let GammaRule::Explicit(s) = cfg.gamma {
            if !(s > 0.0) || !s.is_finite() {
                return Err(Error::invalid(format!("explicit gamma slope must be positive, got {s}")));
            }
        }
        Ok(Certificate {
            form,
            lambda: cfg.lambda,
            alpha_lo: cfg.alpha_lo,
            alpha_hi: cfg.alpha_hi,
            sigma_u: cfg.sigma_u,
            sigma_d: cfg.sigma_d,
            gamma: cfg.gamma,
        })
    }

    pub fn config(&self) -> CertConfig {
        CertConfig {
            p: self.form.rows(),
            lambda: self.lambda,
            alpha_lo: self.alpha_lo,
            alpha_hi: self.alpha_hi,
            sigma_u: self.sigma_u,
            sigma_d: self.sigma_d,
            gamma: self.gamma,
        }
    }

    pub fn with_gamma(mut self, gamma: GammaRule) -> Self {
        self.gamma = gamma;
        self
    }

    pub fn v(&self, x: &[f64], y: &[f64]) -> f64 {
        let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        self.form.eval(&d)
    }

    pub fn grad_x(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).collect();
        self.form.grad(&d)
    }

    pub fn grad_y(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        self.grad_x(x, y).into_iter().map(|g| -g).collect()
    }

    /// Slope of the linear `γ` selected by the certificate's rule.
    pub fn gamma_slope(&self, x: &Rect) -> Result<f64> {
        match self.gamma {
            GammaRule::SupNorm => gamma_sup(self, x),
            GammaRule::DualNorm => gamma_dual(self, x),
            GammaRule::Explicit(s) => Ok(s),
        }
    }
}

/// The certificate published for the pendulum: `P = [1.5 0.3; 0.3 1.5]`,
/// `λ = 0.77`, `α̲ = 1.2r²`, `ᾱ = 3.6r²`, `σ_u = 8.76r`, `σ_d = 1.31r`.
pub fn pendulum_cert() -> Certificate {
    Certificate::from_config(&CertConfig {
        p: vec![vec![1.5, 0.3], vec![0.3, 1.5]],
        lambda: 0.77,
        alpha_lo: KInf::Quadratic(1.2),
        alpha_hi: KInf::Quadratic(3.6),
        sigma_u: KInf::Linear(8.76),
        sigma_d: KInf::Linear(1.31),
        gamma: GammaRule::SupNorm,
    })
    .expect("published certificate is well formed")
}

/// A certificate for the pendulum whose dissipation inequality holds on
/// `X × X × U × U × D × D` (checked by dense sampling).
pub fn pendulum_verified_cert() -> Certificate {
    Certificate::from_config(&CertConfig {
        p: vec![vec![16.0, 0.6], vec![0.6, 1.05]],
        lambda: 0.9,
        alpha_lo: KInf::Quadratic(1.0),
        alpha_hi: KInf::Quadratic(18.25),
        sigma_u: KInf::Linear(26.6),
        sigma_d: KInf::Linear(4.0),
        gamma: GammaRule::DualNorm,
    })
    .expect("verified certificate is well formed")
}

/// Outcome of a sampled inequality check. `max_violation` is the largest
/// `lhs − rhs` seen; the check passes iff it is at most the tolerance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleReport {
    pub samples: usize,
    pub max_violation: f64,
    pub worst: Vec<f64>,
    pub tolerance: f64,
    pub pass: bool,
}

fn uniform_in<R: Rng>(rng: &mut R, b: &Rect, out: &mut Vec<f64>) {
    for i in 0..b.dim() {
        out.push(rng.gen_range(b.lower()[i]..=b.upper()[i]));
    }
}

/// Runs `eval` on `samples` seeded draws split into fixed-size chunks; each
/// chunk has its own ChaCha stream so results do not depend on thread count.
fn sampled<F>(samples: usize, seed: u64, tol: f64, eval: F) -> SampleReport
where
    F: Fn(&mut ChaCha8Rng) -> (f64, Vec<f64>) + Sync + Send,
{
    let chunks = samples.div_ceil(par::SAMPLE_CHUNK);
    let results = par::map_range(chunks, |c| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(c as u64);
        let count = par::SAMPLE_CHUNK.min(samples - c * par::SAMPLE_CHUNK);
        let mut best = (f64::NEG_INFINITY, Vec::new());
        for _ in 0..count {
            let (v, point) = eval(&mut rng);
            if v > best.0 || v.is_nan() {
                best = (v, point);
            }
        }
        best
    });
    let mut best = (f64::NEG_INFINITY, Vec::new());
    for r in results {
        if r.0 > best.0 || r.0.is_nan() {
            best = r;
        }
    }
    SampleReport {
        samples,
        max_violation: best.0,
        worst: best.1,
        tolerance: tol,
        pass: best.0 <= tol,
    }
}

/// Sandwich bound `α̲(‖x−y‖) ≤ V(x,y) ≤ ᾱ(‖x−y‖)` over `X × X`.
pub fn check_condition_i(cert: &Certificate, x: &Rect, samples: usize, seed: u64) -> SampleReport {
    sampled(samples, seed, DEFAULT_TOL, |rng| {
        let mut p = Vec::with_capacity(2 * x.dim());
        uniform_in(rng, x, &mut p);
        uniform_in(rng, x, &mut p);
        let (a, b) = p.split_at(x.dim());
        let r = inf_dist(a, b);
        let v = cert.v(a, b);
        let viol = (cert.alpha_lo.eval(r) - v).max(v - cert.alpha_hi.eval(r));
        (viol, p)
    })
}

/// Sample layout for the dissipation check: `x₁, x₂, u₁, u₂, d₁, d₂`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputSharing {
    Independent,
    /// `u₁ = u₂` and `d₁ = d₂`, leaving the decay-only inequality.
    Shared,
}

/// Dissipation inequality
/// `∂V/∂x₁ f(x₁,u₁,d₁) + ∂V/∂x₂ f(x₂,u₂,d₂) ≤ −λV + σ_u(‖u₁−u₂‖) + σ_d(‖d₁−d₂‖)`.
pub fn check_condition_ii(
    cert: &Certificate,
    sys: &SystemDef,
    samples: usize,
    seed: u64,
    sharing: InputSharing,
) -> SampleReport {
    let (n, m, l) = (sys.n(), sys.m(), sys.l());
    sampled(samples, seed, DEFAULT_TOL, |rng| {
        let mut p = Vec::with_capacity(2 * (n + m + l));
        uniform_in(rng, &sys.state_box, &mut p);
        uniform_in(rng, &sys.state_box, &mut p);
        uniform_in(rng, &sys.control_box, &mut p);
        if sharing == InputSharing::Shared {
            p.extend_from_within(2 * n..2 * n + m);
        } else {
            uniform_in(rng, &sys.control_box, &mut p);
        }
        uniform_in(rng, &sys.disturbance_box, &mut p);
        if sharing == InputSharing::Shared {
            p.extend_from_within(2 * n + 2 * m..2 * n + 2 * m + l);
        } else {
            uniform_in(rng, &sys.disturbance_box, &mut p);
        }
        let viol = dissipation_gap(cert, sys, &p);
        (viol, p)
    })
}

/// `lhs − rhs` of the dissipation inequality at a packed sample.
pub fn dissipation_gap(cert: &Certificate, sys: &SystemDef, p: &[f64]) -> f64 {
    let (n, m, l) = (sys.n(), sys.m(), sys.l());
    let x1 = &p[..n];
    let x2 = &p[n..2 * n];
    let u1 = &p[2 * n..2 * n + m];
    let u2 = &p[2 * n + m..2 * n + 2 * m];
    let d1 = &p[2 * n + 2 * m..2 * n + 2 * m + l];
    let d2 = &p[2 * n + 2 * m + l..];
    let mut f1 = vec![0.0; n];
    let mut f2 = vec![0.0; n];
    sys.field.eval_into(x1, u1, d1, &mut f1);
    sys.field.eval_into(x2, u2, d2, &mut f2);
    let g = cert.grad_x(x1, x2);
    let lhs: f64 = g.iter().zip(f1.iter().zip(&f2)).map(|(gi, (a, b))| gi * (a - b)).sum();
    let rhs = -cert.lambda * cert.v(x1, x2)
        + cert.sigma_u.eval(inf_dist(u1, u2))
        + cert.sigma_d.eval(inf_dist(d1, d2));
    lhs - rhs
}

fn corner_max(cert: &Certificate, x: &Rect, norm: impl Fn(&[f64]) -> f64) -> Result<f64> {
    if x.dim() != cert.form.dim() {
        return Err(Error::DimensionMismatch(format!(
            "certificate has dimension {}, state box {}",
            cert.form.dim(),
            x.dim()
        )));
    }
    if !(x.sup_norm().is_finite()) {
        return Err(Error::invalid("gamma needs a bounded state box"));
    }
    // ∂V/∂y = −2P(x−y) is linear in x−y ∈ X−X, so its norm peaks at a corner
    Ok(x.difference_box()
        .corners()
        .iter()
        .map(|c| norm(&cert.form.grad(c)))
        .fold(0.0, f64::max))
}

/// Slope of `γ(r) = (sup_{x,y∈X} ‖∂V/∂y(x,y)‖∞) r`.
pub fn gamma_sup(cert: &Certificate, x: &Rect) -> Result<f64> {
    corner_max(cert, x, inf_norm)
}

/// Slope `sup_{x,y∈X} ‖∂V/∂y(x,y)‖₁`. By Hölder's inequality this bounds
/// `V(x,x′) − V(x,x″)` by `slope·‖x′−x″‖∞`.
pub fn gamma_dual(cert: &Certificate, x: &Rect) -> Result<f64> {
    corner_max(cert, x, |g| g.iter().map(|v| v.abs()).sum())
}

/// Sampled check of `V(x,x′) − V(x,x″) ≤ slope·‖x′−x″‖` over `X³`.
pub fn check_gamma(cert: &Certificate, x: &Rect, slope: f64, samples: usize, seed: u64) -> SampleReport {
    let n = x.dim();
    sampled(samples, seed, DEFAULT_TOL, |rng| {
        let mut p = Vec::with_capacity(3 * n);
        uniform_in(rng, x, &mut p);
        uniform_in(rng, x, &mut p);
        uniform_in(rng, x, &mut p);
        let (a, rest) = p.split_at(n);
        let (b, c) = rest.split_at(n);
        let viol = cert.v(a, b) - cert.v(a, c) - slope * inf_dist(b, c);
        (viol, p)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::system::pendulum_preset;

    fn square() -> Rect {
        Rect::from_intervals(&[[-1.0, 1.0], [-1.0, 1.0]]).unwrap()
    }

    fn identity_cert() -> Certificate {
        Certificate::from_config(&CertConfig {
            p: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            lambda: 1.0,
            alpha_lo: KInf::Quadratic(1.0),
            alpha_hi: KInf::Quadratic(2.0),
            sigma_u: KInf::Linear(1.0),
            sigma_d: KInf::Linear(1.0),
            gamma: GammaRule::SupNorm,
        })
        .unwrap()
    }

    #[test]
    fn matrix_validation() {
        assert!(QuadraticForm::new(&[vec![1.0, 0.2], vec![0.3, 1.0]]).is_err());
        assert!(QuadraticForm::new(&[vec![1.0, 2.0], vec![2.0, 1.0]]).is_err());
        assert!(QuadraticForm::new(&[vec![1.0, 0.0]]).is_err());
        assert!(QuadraticForm::new(&[vec![2.0, 1.0], vec![1.0, 2.0]]).is_ok());
    }

    #[test]
    fn published_values() {
        let c = pendulum_cert();
        assert_eq!(c.v(&[0.3, -0.1], &[0.3, -0.1]), 0.0);
        let v = c.v(&[0.1, 0.0], &[0.0, 0.0]);
        assert!((v - 0.015).abs() < 1e-15);
        assert!(c.alpha_lo.eval(0.1) <= v && v <= c.alpha_hi.eval(0.1));
        let g = c.grad_y(&[0.2, 0.1], &[0.0, 0.3]);
        let gx = c.grad_x(&[0.2, 0.1], &[0.0, 0.3]);
        assert_eq!(g, gx.iter().map(|v| -v).collect::<Vec<_>>());
    }

    #[test]
    fn sandwich_bounds_hold() {
        let sys = pendulum_preset();
        for c in [pendulum_cert(), pendulum_verified_cert()] {
            let r = check_condition_i(&c, &sys.state_box, DEFAULT_SAMPLES, 7);
            assert!(r.pass, "{r:?}");
            for k in 0..50 {
                let r = k as f64 * 0.05;
                assert!(c.alpha_lo.eval(r) <= c.alpha_hi.eval(r));
            }
            assert_eq!(c.alpha_lo.eval(0.0), 0.0);
        }
        let mut tight = pendulum_cert();
        tight.alpha_lo = KInf::Quadratic(1.5);
        assert!(!check_condition_i(&tight, &sys.state_box, DEFAULT_SAMPLES, 7).pass);
    }

    #[test]
    fn published_dissipation_fails_on_the_pendulum() {
        // the large-|x1 - x2| corners break the published rate
        let sys = pendulum_preset();
        let r = check_condition_ii(&pendulum_cert(), &sys, DEFAULT_SAMPLES, 1, InputSharing::Independent);
        assert!(!r.pass);
        assert!(r.max_violation > 1.0);
        assert!(dissipation_gap(&pendulum_cert(), &sys, &r.worst) > 1.0);
    }

    #[test]
    fn verified_dissipation_holds() {
        let sys = pendulum_preset();
        let c = pendulum_verified_cert();
        for sharing in [InputSharing::Independent, InputSharing::Shared] {
            let r = check_condition_ii(&c, &sys, 200_000, 11, sharing);
            assert!(r.pass, "{r:?}");
        }
        let mut fast = c.clone();
        fast.lambda = 10.0;
        assert!(!check_condition_ii(&fast, &sys, DEFAULT_SAMPLES, 11, InputSharing::Independent).pass);
    }

    #[test]
    fn shared_inputs_leave_decay_only() {
        let sys = pendulum_preset();
        let c = pendulum_verified_cert();
        let r = check_condition_ii(&c, &sys, 1000, 5, InputSharing::Shared);
        let w = &r.worst;
        assert_eq!(w[4], w[5]);
        assert_eq!(w[6], w[7]);
        assert_eq!(c.sigma_u.eval(0.0) + c.sigma_d.eval(0.0), 0.0);
    }

    #[test]
    fn sup_gamma_slopes() {
        assert_eq!(gamma_sup(&identity_cert(), &square()).unwrap(), 4.0);
        let sys = pendulum_preset();
        let s = gamma_sup(&pendulum_cert(), &sys.state_box).unwrap();
        // brute force over the difference box corners
        let pi2 = std::f64::consts::FRAC_PI_2;
        let mut oracle: f64 = 0.0;
        for (a, b) in [(pi2, 1.0), (pi2, -1.0), (-pi2, 1.0), (-pi2, -1.0)] {
            let g = [2.0 * (1.5 * a + 0.3 * b), 2.0 * (0.3 * a + 1.5 * b)];
            oracle = oracle.max(g[0].abs()).max(g[1].abs());
        }
        assert!((s - oracle).abs() < 1e-12);
        assert!((s - 5.312388980384690).abs() < 1e-9);
        let scaled = Certificate {
            form: pendulum_cert().form.scaled(3.0),
            ..pendulum_cert()
        };
        assert!((gamma_sup(&scaled, &sys.state_box).unwrap() - 3.0 * s).abs() < 1e-12);
        let bad = Rect::from_intervals(&[[-1.0, 1.0]]).unwrap();
        assert!(gamma_sup(&pendulum_cert(), &bad).is_err());
    }

    #[test]
    fn dual_gamma_bounds_differences() {
        let sys = pendulum_preset();
        for c in [identity_cert(), pendulum_cert(), pendulum_verified_cert()] {
            let slope = gamma_dual(&c, &sys.state_box).unwrap();
            assert!(check_gamma(&c, &sys.state_box, slope, DEFAULT_SAMPLES, 3).pass);
        }
        assert_eq!(gamma_dual(&identity_cert(), &square()).unwrap(), 8.0);
    }

    #[test]
    fn sup_gamma_can_undershoot() {
        // with P = I on [-1,1]^2: x = (-1,-1), x' = (1,1), x'' = (1-δ,1-δ)
        let c = identity_cert();
        let slope = gamma_sup(&c, &square()).unwrap();
        let d = 1e-3;
        let diff = c.v(&[-1.0, -1.0], &[1.0, 1.0]) - c.v(&[-1.0, -1.0], &[1.0 - d, 1.0 - d]);
        assert!(diff > slope * d * 1.9);
    }

    #[test]
    fn dual_gamma_is_nearly_tight() {
        let sys = pendulum_preset();
        let c = pendulum_verified_cert();
        let slope = gamma_dual(&c, &sys.state_box).unwrap();
        let x = sys.state_box.lower().to_vec();
        let xp = sys.state_box.upper().to_vec();
        let d = 1e-6;
        let xpp: Vec<f64> = xp.iter().map(|v| v - d).collect();
        let ratio = (c.v(&x, &xp) - c.v(&x, &xpp)) / (slope * d);
        assert!(ratio > 0.95 && ratio <= 1.0 + 1e-6, "ratio {ratio}");
    }

    #[test]
    fn sampling_is_thread_independent() {
        let sys = pendulum_preset();
        let c = pendulum_verified_cert();
        let a = par::with_threads(1, || check_condition_ii(&c, &sys, 5000, 42, InputSharing::Independent));
        let b = par::with_threads(8, || check_condition_ii(&c, &sys, 5000, 42, InputSharing::Independent));
        assert_eq!(a, b);
    }

    #[test]
    fn config_round_trip() {
        let c = pendulum_verified_cert();
        let text = serde_json::to_string(&c.config()).unwrap();
        let back: CertConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(Certificate::from_config(&back).unwrap(), c);
        let parsed: CertConfig = serde_json::from_str(
            r#"{"P":[[1,0],[0,1]],"lambda":1,"alpha_lo":{"quadratic":1},"alpha_hi":{"quadratic":2},
                "sigma_u":{"linear":1},"sigma_d":{"linear":1}}"#,
        )
        .unwrap();
        assert_eq!(parsed.gamma, GammaRule::SupNorm);
        let explicit: CertConfig = serde_json::from_str(
            r#"{"P":[[1,0],[0,1]],"lambda":1,"alpha_lo":{"quadratic":1},"alpha_hi":{"quadratic":2},
                "sigma_u":{"linear":1},"sigma_d":{"linear":1},"gamma":{"explicit":3.5}}"#,
        )
        .unwrap();
        assert_eq!(explicit.gamma, GammaRule::Explicit(3.5));
    }
}
