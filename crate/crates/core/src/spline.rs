//! Hat-spline inner approximation of the Lipschitz disturbance class.
//!
//! A disturbance symbol is a sequence of `N+2` lattice points in `D`, read as
//! the piecewise-linear function `z(t) = Σ z_i s_i(t)`.

use std::collections::HashMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{mu_hat, Lattice, Rect};
use crate::system::{sample_signal, Disturbance, PiecewiseLinear};

/// Default cap on the number of enumerated sequences.
pub const DEFAULT_ENUM_CAP: usize = 10_000_000;
/// Iteration cap of the schedule search.
pub const SEARCH_CAP: usize = 1_000_000;
/// Grid resolution used for sup-norm and Lipschitz checks on `[0, τ]`.
pub const DENSE_GRID: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplineBasis {
    pub tau: f64,
    pub n: usize,
}

impl SplineBasis {
    pub fn new(tau: f64, n: usize) -> Result<Self> {
        if !(tau > 0.0) || !tau.is_finite() {
            return Err(Error::invalid(format!("spline horizon must be positive, got {tau}")));
        }
        Ok(SplineBasis { tau, n })
    }

    /// Node spacing `h = τ/(N+1)`.
    pub fn h(&self) -> f64 {
        self.tau / (self.n + 1) as f64
    }

    pub fn len(&self) -> usize {
        self.n + 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `s_i(t)`.
    pub fn eval(&self, i: usize, t: f64) -> Result<f64> {
        if i > self.n + 1 {
            return Err(Error::invalid(format!("spline index {i} exceeds N+1 = {}", self.n + 1)));
        }
        if !(t >= 0.0 && t <= self.tau) {
            return Err(Error::invalid(format!("time {t} outside [0, {}]", self.tau)));
        }
        Ok(self.hat(i, t))
    }

    #[inline]
    fn hat(&self, i: usize, t: f64) -> f64 {
        (1.0 - (t / self.h() - i as f64).abs()).max(0.0)
    }

    /// Interval index `j` and weight `w` with `z(t) = (1−w) z_j + w z_{j+1}`.
    #[inline]
    fn locate(&self, t: f64) -> (usize, f64) {
        let s = (t / self.h()).clamp(0.0, (self.n + 1) as f64);
        let j = (s.floor() as usize).min(self.n);
        (j, s - j as f64)
    }
}

/// Interpolates per-node values: `out = Σ_i values[i] s_i(t)`.
pub fn eval_nodes(basis: &SplineBasis, values: &[Vec<f64>], t: f64, out: &mut [f64]) {
    let (j, w) = basis.locate(t);
    for (k, o) in out.iter_mut().enumerate() {
        *o = (1.0 - w) * values[j][k] + w * values[j + 1][k];
    }
}

/// `ρ` and `Θ` for node count `N`, lattice half-spacing `μ`.
pub fn rho_theta(n: usize, mu: f64, kappa_d: f64, tau: f64, m: f64) -> Result<(f64, f64)> {
    if !(m > 0.0) || !(kappa_d > 0.0) {
        return Err(Error::DegenerateClass(format!(
            "need M > 0 and kappa_d > 0 (got M = {m}, kappa_d = {kappa_d})"
        )));
    }
    if !(mu > 0.0) || !(tau > 0.0) {
        return Err(Error::invalid("mu and tau must be positive"));
    }
    let h = tau / (n + 1) as f64;
    let rho = 1.0 - f64::max(mu / m, 2.0 * mu / (kappa_d * h));
    let theta = (1.0 - rho) * m + (1.0 + rho) * kappa_d * h + mu;
    Ok((rho, theta))
}

/// Upper bound on `Θ` along the schedule `μ = 1/(N+1)²`; decreasing in `N`.
pub fn schedule_bound(n: usize, kappa_d: f64, tau: f64, m: f64) -> f64 {
    let r = 1.0 / (n + 1) as f64;
    r * (f64::max(r, 2.0 * m / (kappa_d * tau)) + 2.0 * kappa_d * tau + r)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApproxParams {
    /// Target precision.
    pub theta: f64,
    /// `min(θ, μ̂_D)`.
    pub theta_hat: f64,
    pub n: usize,
    pub mu_d: f64,
    pub rho: f64,
    /// `Θ(N, μ_d)`, the guaranteed sup-norm error.
    pub theta_bound: f64,
    /// `M = sup ‖d‖∞`.
    pub m: f64,
    pub kappa_d: f64,
    pub tau: f64,
}

impl ApproxParams {
    /// Explicit `(N, μ_d)`. The target precision defaults to `Θ(N, μ_d)`
    /// itself, which is how the symbolic model fixes its disturbance labels.
    pub fn explicit(
        n: usize,
        mu_d: f64,
        theta: Option<f64>,
        kappa_d: f64,
        tau: f64,
        d: &Rect,
    ) -> Result<Self> {
        let m = d.sup_norm();
        let (rho, theta_bound) = rho_theta(n, mu_d, kappa_d, tau, m)?;
        let theta = theta.unwrap_or(theta_bound);
        let p = ApproxParams {
            theta,
            theta_hat: theta.min(mu_hat(d)),
            n,
            mu_d,
            rho,
            theta_bound,
            m,
            kappa_d,
            tau,
        };
        p.validate()?;
        Ok(p)
    }

    /// Smallest `N` on the schedule `μ = 1/(N+1)²` with `Θ ≤ θ` and `ρ > 0`.
    pub fn search(theta: f64, kappa_d: f64, tau: f64, d: &Rect) -> Result<Self> {
        if !(theta > 0.0) {
            return Err(Error::invalid(format!("precision must be positive, got {theta}")));
        }
        let m = d.sup_norm();
        for n in 0..SEARCH_CAP {
            let mu = 1.0 / ((n + 1) as f64).powi(2);
            let (rho, bound) = rho_theta(n, mu, kappa_d, tau, m)?;
            if rho > 0.0 && bound <= theta {
                return Ok(ApproxParams {
                    theta,
                    theta_hat: theta.min(mu_hat(d)),
                    n,
                    mu_d: mu,
                    rho,
                    theta_bound: bound,
                    m,
                    kappa_d,
                    tau,
                });
            }
        }
        Err(Error::NoConvergence(format!(
            "no N below {SEARCH_CAP} satisfies Theta <= {theta} and rho > 0; last schedule bound {}",
            schedule_bound(SEARCH_CAP - 1, kappa_d, tau, m)
        )))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rho > 0.0) {
            return Err(Error::Infeasible(format!(
                "scaling factor rho = {} must be positive (N = {}, mu_d = {})",
                self.rho, self.n, self.mu_d
            )));
        }
        if !(self.theta_bound <= self.theta) {
            return Err(Error::Infeasible(format!(
                "approximation bound Theta = {} exceeds the precision {}",
                self.theta_bound, self.theta
            )));
        }
        Ok(())
    }

    pub fn basis(&self) -> SplineBasis {
        SplineBasis {
            tau: self.tau,
            n: self.n,
        }
    }

    /// Largest admissible per-axis key step between consecutive nodes:
    /// `floor(κ_d h / (2μ_d))`.
    pub fn max_step(&self) -> i64 {
        let h = self.tau / (self.n + 1) as f64;
        (self.kappa_d * h / (2.0 * self.mu_d) + 1e-9).floor() as i64
    }
}

/// One disturbance symbol: the node keys `z_0, …, z_{N+1}` on the `D` lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct SplineSeq {
    pub basis: SplineBasis,
    pub mu: f64,
    /// Row-major `(N+2) × l` integer keys.
    pub keys: Vec<i64>,
    nodes: Vec<Vec<f64>>,
    lipschitz: f64,
}

impl SplineSeq {
    pub fn from_keys(basis: SplineBasis, mu: f64, l: usize, keys: Vec<i64>) -> Result<Self> {
        if keys.len() != basis.len() * l || l == 0 {
            return Err(Error::DimensionMismatch(format!(
                "{} keys for {} nodes of dimension {l}",
                keys.len(),
                basis.len()
            )));
        }
        let nodes: Vec<Vec<f64>> = keys
            .chunks(l)
            .map(|c| c.iter().map(|&k| 2.0 * mu * k as f64).collect())
            .collect();
        let max_dk = keys
            .chunks(l)
            .zip(keys.chunks(l).skip(1))
            .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
            .max()
            .unwrap_or(0);
        let lipschitz = 2.0 * mu * max_dk as f64 / basis.h();
        Ok(SplineSeq {
            basis,
            mu,
            keys,
            nodes,
            lipschitz,
        })
    }

    pub fn nodes(&self) -> &[Vec<f64>] {
        &self.nodes
    }

    /// `z(t)`; also available through [`Disturbance::eval`].
    pub fn eval_at(&self, t: f64) -> Result<Vec<f64>> {
        if !(t >= 0.0 && t <= self.basis.tau) {
            return Err(Error::invalid(format!("time {t} outside [0, {}]", self.basis.tau)));
        }
        Ok(self.value(t))
    }

    /// Checks membership and the step bound directly on the keys.
    pub fn satisfies(&self, lattice: &Lattice, max_step: i64) -> bool {
        let l = lattice.dim();
        self.keys.chunks(l).all(|k| lattice.index_of(k).is_some())
            && self
                .keys
                .chunks(l)
                .zip(self.keys.chunks(l).skip(1))
                .all(|(a, b)| a.iter().zip(b).all(|(x, y)| (x - y).abs() <= max_step))
    }
}

impl Disturbance for SplineSeq {
    fn dim(&self) -> usize {
        self.nodes[0].len()
    }
    fn eval(&self, t: f64, out: &mut [f64]) {
        eval_nodes(&self.basis, &self.nodes, t, out)
    }
    fn lipschitz(&self) -> f64 {
        self.lipschitz
    }
}

/// The finite set of disturbance symbols, in lexicographic key order.
#[derive(Debug, Clone)]
pub struct SplineSet {
    pub params: ApproxParams,
    pub lattice: Lattice,
    flat: Vec<i64>,
    stride: usize,
    index: HashMap<Vec<i64>, usize>,
}

impl SplineSet {
    pub fn len(&self) -> usize {
        if self.stride == 0 {
            0
        } else {
            self.flat.len() / self.stride
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn keys(&self, i: usize) -> &[i64] {
        &self.flat[i * self.stride..(i + 1) * self.stride]
    }

    pub fn seq(&self, i: usize) -> SplineSeq {
        SplineSeq::from_keys(
            self.params.basis(),
            self.params.mu_d,
            self.lattice.dim(),
            self.keys(i).to_vec(),
        )
        .expect("stored keys have the right shape")
    }

    pub fn index_of(&self, keys: &[i64]) -> Option<usize> {
        self.index.get(keys).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = &[i64]> {
        self.flat.chunks(self.stride)
    }

    /// One CSV row of keys per sequence.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        for k in self.iter() {
            let row: Vec<String> = k.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Number of sequences, computed per axis by dynamic programming over paths of
/// length `N+2` with bounded steps; the count is the product over axes.
pub fn count_approx(params: &ApproxParams, d: &Rect) -> Result<f64> {
    let lattice = Lattice::new(d.clone(), params.mu_d)?;
    Ok(count_on(&lattice, params.n, params.max_step()))
}

fn count_on(lattice: &Lattice, n: usize, step: i64) -> f64 {
    let mut total = 1.0;
    for axis in 0..lattice.dim() {
        let c = lattice.axis_count(axis);
        let mut ways = vec![1.0f64; c];
        for _ in 0..=n {
            let mut next = vec![0.0f64; c];
            // prefix sums give each window sum in O(1)
            let mut prefix = vec![0.0f64; c + 1];
            for j in 0..c {
                prefix[j + 1] = prefix[j] + ways[j];
            }
            for (j, nx) in next.iter_mut().enumerate() {
                let lo = (j as i64 - step).max(0) as usize;
                let hi = ((j as i64 + step).min(c as i64 - 1)) as usize;
                *nx = prefix[hi + 1] - prefix[lo];
            }
            ways = next;
        }
        total *= ways.iter().sum::<f64>();
    }
    total
}

/// All node sequences with every `z_i` on `(2μ_d Z^l) ∩ D` and consecutive
/// nodes within `κ_d τ/(N+1)`.
pub fn enumerate_approx(params: &ApproxParams, d: &Rect, cap: usize) -> Result<SplineSet> {
    params.validate()?;
    let lattice = Lattice::new(d.clone(), params.mu_d)?;
    let step = params.max_step();
    let estimate = count_on(&lattice, params.n, step);
    if estimate > cap as f64 {
        return Err(Error::CapExceeded {
            what: "disturbance sequences".into(),
            estimate,
            cap: cap as f64,
        });
    }
    let l = lattice.dim();
    let nodes = params.n + 2;
    let stride = nodes * l;
    let chunks = crate::par::map_range(lattice.len(), |first| {
        let mut out = Vec::new();
        let mut seq = vec![0i64; stride];
        lattice.key_into(first, &mut seq[..l]);
        extend(&lattice, step, &mut seq, 1, nodes, l, &mut out);
        out
    });
    let mut flat = Vec::with_capacity(estimate as usize * stride);
    for c in chunks {
        flat.extend(c);
    }
    let index = flat
        .chunks(stride)
        .enumerate()
        .map(|(i, k)| (k.to_vec(), i))
        .collect();
    Ok(SplineSet {
        params: *params,
        lattice,
        flat,
        stride,
        index,
    })
}

fn extend(
    lattice: &Lattice,
    step: i64,
    seq: &mut [i64],
    node: usize,
    nodes: usize,
    l: usize,
    out: &mut Vec<i64>,
) {
    if node == nodes {
        out.extend_from_slice(seq);
        return;
    }
    // odometer over the per-axis windows around the previous node
    let mut lo = vec![0i64; l];
    let mut hi = vec![0i64; l];
    for a in 0..l {
        let prev = seq[(node - 1) * l + a];
        let (kmin, kmax) = lattice.axis_range(a);
        lo[a] = (prev - step).max(kmin);
        hi[a] = (prev + step).min(kmax);
    }
    let base = node * l;
    seq[base..base + l].copy_from_slice(&lo);
    loop {
        extend(lattice, step, seq, node + 1, nodes, l, out);
        let mut a = l;
        loop {
            if a == 0 {
                return;
            }
            a -= 1;
            if seq[base + a] < hi[a] {
                seq[base + a] += 1;
                break;
            }
            seq[base + a] = lo[a];
        }
    }
}

/// Sampled check that `d` maps into `D` and is `κ_d`-Lipschitz on `[0, τ]`.
pub fn check_signal(d: &dyn Disturbance, dbox: &Rect, kappa_d: f64, tau: f64) -> Result<()> {
    let samples = sample_signal(d, tau, DENSE_GRID + 1);
    let dt = tau / DENSE_GRID as f64;
    for (i, s) in samples.iter().enumerate() {
        if dbox.excess(s) > 1e-12 {
            return Err(Error::InvalidSignal(format!(
                "value {s:?} at t = {} leaves D",
                dt * i as f64
            )));
        }
    }
    for (i, w) in samples.windows(2).enumerate() {
        let slope = crate::geometry::inf_dist(&w[0], &w[1]) / dt;
        if slope > kappa_d * (1.0 + 1e-9) + 1e-12 {
            return Err(Error::InvalidSignal(format!(
                "sampled slope {slope} near t = {} exceeds kappa_d = {kappa_d}",
                dt * i as f64
            )));
        }
    }
    Ok(())
}

/// The constructive witness: `z_i` is the lattice point nearest to `ρ d(ih)`.
pub fn approximate_disturbance(
    d: &dyn Disturbance,
    params: &ApproxParams,
    dbox: &Rect,
) -> Result<SplineSeq> {
    params.validate()?;
    check_signal(d, dbox, params.kappa_d, params.tau)?;
    let lattice = Lattice::new(dbox.clone(), params.mu_d)?;
    witness_on(d, params, &lattice)
}

/// As [`approximate_disturbance`] without the dense signal check, for callers
/// that validated the signal once up front.
pub fn witness_on(d: &dyn Disturbance, params: &ApproxParams, lattice: &Lattice) -> Result<SplineSeq> {
    let basis = params.basis();
    let l = lattice.dim();
    let h = basis.h();
    let mut keys = Vec::with_capacity(basis.len() * l);
    let mut target = vec![0.0; l];
    for i in 0..basis.len() {
        let t = (i as f64 * h).min(params.tau);
        d.eval(t, &mut target);
        for v in target.iter_mut() {
            *v *= params.rho;
        }
        let idx = lattice.nearest_clamped(&target);
        let key = lattice.key(idx);
        let dist = crate::geometry::inf_dist(&lattice.key_point(&key), &target);
        if dist > params.mu_d * (1.0 + 1e-9) {
            return Err(Error::DegenerateClass(format!(
                "no lattice point of D within mu_d of rho*d({t}); the box is too asymmetric for these parameters"
            )));
        }
        keys.extend(key);
    }
    let seq = SplineSeq::from_keys(basis, params.mu_d, l, keys)?;
    if !seq.satisfies(lattice, params.max_step()) {
        return Err(Error::DegenerateClass(
            "rounded nodes violate the step bound".into(),
        ));
    }
    Ok(seq)
}

/// `sup_t ‖d(t) − z(t)‖∞` on a uniform grid of `points` instants.
pub fn sup_distance(d: &dyn Disturbance, z: &dyn Disturbance, tau: f64, points: usize) -> f64 {
    let a = sample_signal(d, tau, points);
    let b = sample_signal(z, tau, points);
    a.iter()
        .zip(&b)
        .map(|(x, y)| crate::geometry::inf_dist(x, y))
        .fold(0.0, f64::max)
}

/// A random `κ_d`-Lipschitz piecewise-linear signal on `[0, τ]` inside `D`:
/// a clamped random walk whose slopes are often saturated at `±κ_d`.
pub fn random_lipschitz_signal<R: Rng>(
    rng: &mut R,
    dbox: &Rect,
    kappa_d: f64,
    tau: f64,
    knots: usize,
) -> PiecewiseLinear {
    let knots = knots.max(1);
    let dt = tau / knots as f64;
    let l = dbox.dim();
    let mut x: Vec<f64> = (0..l)
        .map(|i| rng.gen_range(dbox.lower()[i]..=dbox.upper()[i]))
        .collect();
    let mut times = vec![0.0];
    let mut values = vec![x.clone()];
    for k in 1..=knots {
        for (i, xi) in x.iter_mut().enumerate() {
            let delta = if rng.gen_bool(0.5) {
                if rng.gen_bool(0.5) {
                    kappa_d * dt
                } else {
                    -kappa_d * dt
                }
            } else {
                rng.gen_range(-kappa_d * dt..=kappa_d * dt)
            };
            *xi = (*xi + delta).clamp(dbox.lower()[i], dbox.upper()[i]);
        }
        times.push(if k == knots { tau } else { dt * k as f64 });
        values.push(x.clone());
    }
    PiecewiseLinear::new(times, values).expect("knots are increasing")
}
