//! The symbolic model `T_P(Σ)`: lattice states and controls, spline
//! disturbance symbols, and transitions `x → y` whenever the sampled flow
//! endpoint lies within `μ_x` of `y`.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::flow::{integrate, FlowConfig};
use crate::geometry::{mu_hat, Lattice};
use crate::lyapunov::{Certificate, GammaRule};
use crate::spline::{count_approx, enumerate_approx, rho_theta, ApproxParams, SplineSeq, SplineSet};
use crate::system::{SystemConfig, SystemDef};

/// Slack added to `μ_x` when collecting successors.
pub const GUARD_BAND: f64 = 1e-12;
/// Default cap on `|Q_P|·|A_P|·|B_P|` for model construction.
pub const DEFAULT_TRIPLE_CAP: usize = 50_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub tau: f64,
    pub mu_x: f64,
    pub mu_u: f64,
    pub mu_d: f64,
    #[serde(rename = "N")]
    pub n: usize,
    pub theta_d: f64,
}

impl ParameterVector {
    /// The quantization parameters used for the pendulum in the literature:
    /// `τ = 1`, `μ_x = π/2000`, `μ_u = 0.001`, `μ_d = 1.43e−4`, `N = 0`,
    /// `θ_d = 0.007`.
    pub fn pendulum_published() -> Self {
        ParameterVector {
            tau: 1.0,
            mu_x: std::f64::consts::PI / 2000.0,
            mu_u: 0.001,
            mu_d: 1.43e-4,
            n: 0,
            theta_d: 0.007,
        }
    }

    /// Positivity plus the three lattice-size conditions `μ ≤ μ̂`.
    pub fn validate(&self, sys: &SystemDef) -> Result<()> {
        for (name, v) in [
            ("tau", self.tau),
            ("mu_x", self.mu_x),
            ("mu_u", self.mu_u),
            ("mu_d", self.mu_d),
            ("theta_d", self.theta_d),
        ] {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        for (name, mu, set, hat) in [
            ("mu_x", self.mu_x, "X", mu_hat(&sys.state_box)),
            ("mu_u", self.mu_u, "U", mu_hat(&sys.control_box)),
            ("mu_d", self.mu_d, "D", mu_hat(&sys.disturbance_box)),
        ] {
            if mu > hat {
                return Err(Error::Infeasible(format!(
                    "{name} = {mu} violates {name} <= mu_hat_{set} = {hat}"
                )));
            }
        }
        Ok(())
    }

    pub fn flow(&self) -> FlowConfig {
        FlowConfig {
            tau: self.tau,
            substeps: FlowConfig::DEFAULT_SUBSTEPS,
        }
    }

    /// Spline parameters of `B_P`: `(N, μ_d)` with precision `θ_d`.
    pub fn approx(&self, sys: &SystemDef) -> Result<ApproxParams> {
        ApproxParams::explicit(
            self.n,
            self.mu_d,
            Some(self.theta_d),
            sys.kappa_d,
            self.tau,
            &sys.disturbance_box,
        )
    }
}

/// One inequality of the parameter check: holds iff `lhs ≤ rhs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inequality {
    pub name: String,
    pub statement: String,
    pub lhs: f64,
    pub rhs: f64,
    pub margin: f64,
    pub holds: bool,
}

impl Inequality {
    fn new(name: &str, statement: &str, lhs: f64, rhs: f64) -> Self {
        Inequality {
            name: name.into(),
            statement: statement.into(),
            lhs,
            rhs,
            margin: rhs - lhs,
            holds: lhs <= rhs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BisimCheckReport {
    pub epsilon: f64,
    pub params: ParameterVector,
    pub gamma_rule: GammaRule,
    pub gamma_slope: f64,
    pub control_term: f64,
    pub disturbance_term: f64,
    pub state_term: f64,
    pub lhs: f64,
    pub rhs: f64,
    pub rho: f64,
    pub theta_bound: f64,
    pub inequalities: Vec<Inequality>,
    pub verdict: bool,
    pub notes: Vec<String>,
}

impl BisimCheckReport {
    pub fn violated(&self) -> Vec<&Inequality> {
        self.inequalities.iter().filter(|i| !i.holds).collect()
    }

    /// Human-readable multi-line summary.
    pub fn render(&self) -> String {
        let mut s = format!(
            "epsilon = {}\nparameters: tau = {}, mu_x = {}, mu_u = {}, mu_d = {}, N = {}, theta_d = {}\n",
            self.epsilon,
            self.params.tau,
            self.params.mu_x,
            self.params.mu_u,
            self.params.mu_d,
            self.params.n,
            self.params.theta_d
        );
        s += &format!(
            "gamma: {:?}, slope {}\nrho = {}, Theta = {}\n",
            self.gamma_rule, self.gamma_slope, self.rho, self.theta_bound
        );
        for i in &self.inequalities {
            s += &format!(
                "[{}] {}: {} <= {}  (lhs {:.6e}, rhs {:.6e}, margin {:.6e})\n",
                if i.holds { "ok" } else { "VIOLATED" },
                i.name,
                i.statement.split(" <= ").next().unwrap_or(""),
                i.statement.split(" <= ").nth(1).unwrap_or(""),
                i.lhs,
                i.rhs,
                i.margin
            );
        }
        for n in &self.notes {
            s += &format!("note: {n}\n");
        }
        s += &format!("verdict: {}\n", if self.verdict { "PASS" } else { "FAIL" });
        s
    }
}

/// Evaluates every sufficient condition for `T_τ(Σ)` and `T_P(Σ)` to be
/// alternating `ε`-approximately bisimilar.
pub fn check_params(
    p: &ParameterVector,
    cert: &Certificate,
    sys: &SystemDef,
    epsilon: f64,
) -> Result<BisimCheckReport> {
    if !(epsilon > 0.0) {
        return Err(Error::invalid(format!("epsilon must be positive, got {epsilon}")));
    }
    if !(p.tau > 0.0) || !(p.mu_x > 0.0) || !(p.mu_u > 0.0) || !(p.mu_d > 0.0) || !(p.theta_d > 0.0) {
        return Err(Error::invalid("all quantization parameters must be positive"));
    }
    let slope = cert.gamma_slope(&sys.state_box)?;
    let control_term = cert.sigma_u.eval(p.mu_u) / cert.lambda;
    let disturbance_term = cert.sigma_d.eval(p.theta_d) / cert.lambda;
    let state_term = slope * p.mu_x / (1.0 - (-cert.lambda * p.tau).exp());
    let lhs = control_term.max(disturbance_term) + state_term;
    let rhs = cert.alpha_lo.eval(epsilon);
    let (rho, theta_bound) = rho_theta(p.n, p.mu_d, sys.kappa_d, p.tau, sys.disturbance_sup())?;
    let inequalities = vec![
        Inequality::new(
            "decay budget",
            "max(sigma_u(mu_u), sigma_d(theta_d))/lambda + gamma(mu_x)/(1 - exp(-lambda tau)) <= alpha_lo(epsilon)",
            lhs,
            rhs,
        ),
        Inequality::new("state quantization", "mu_x <= mu_hat_X", p.mu_x, mu_hat(&sys.state_box)),
        Inequality::new("control quantization", "mu_u <= mu_hat_U", p.mu_u, mu_hat(&sys.control_box)),
        Inequality::new(
            "disturbance quantization",
            "mu_d <= mu_hat_D",
            p.mu_d,
            mu_hat(&sys.disturbance_box),
        ),
        Inequality::new(
            "disturbance precision",
            "Theta(N, mu_d) <= theta_d",
            theta_bound,
            p.theta_d,
        ),
        Inequality::new("spline scaling", "-rho(N, mu_d) <= 0 (strict)", -rho, 0.0),
    ];
    let mut inequalities = inequalities;
    // rho must be strictly positive
    let last = inequalities.len() - 1;
    inequalities[last].holds = rho > 0.0;
    let mut notes = Vec::new();
    if cert.gamma == GammaRule::SupNorm {
        notes.push(
            "gamma uses the sup-norm of dV/dy; under the infinity state norm this slope does not bound \
             V(x,x') - V(x,x'') in general (the 1-norm of the gradient does, see gamma rule dual_norm)"
                .into(),
        );
    }
    let verdict = inequalities.iter().all(|i| i.holds);
    Ok(BisimCheckReport {
        epsilon,
        params: *p,
        gamma_rule: cert.gamma,
        gamma_slope: slope,
        control_term,
        disturbance_term,
        state_term,
        lhs,
        rhs,
        rho,
        theta_bound,
        inequalities,
        verdict,
        notes,
    })
}

/// Staged shrinking: first `μ_x`, `μ_u`, `θ_d` until the decay budget holds
/// (halving whichever term is largest), then the smallest `N` and the largest
/// dyadic `μ_d = μ̂_D/2^k` with `Θ(N, μ_d) ≤ θ_d` and `ρ > 0`.
pub fn suggest_params(
    cert: &Certificate,
    sys: &SystemDef,
    epsilon: f64,
    tau: f64,
) -> Result<ParameterVector> {
    const HALVINGS: usize = 200;
    if !(epsilon > 0.0) || !(tau > 0.0) {
        return Err(Error::invalid("epsilon and tau must be positive"));
    }
    let slope = cert.gamma_slope(&sys.state_box)?;
    let decay = 1.0 - (-cert.lambda * tau).exp();
    let budget = cert.alpha_lo.eval(epsilon);
    let mut mu_x = mu_hat(&sys.state_box);
    let mut mu_u = mu_hat(&sys.control_box);
    let mut theta_d = mu_hat(&sys.disturbance_box);
    let mut ok = false;
    for _ in 0..HALVINGS * 3 {
        let a = cert.sigma_u.eval(mu_u) / cert.lambda;
        let b = cert.sigma_d.eval(theta_d) / cert.lambda;
        let c = slope * mu_x / decay;
        if a.max(b) + c <= budget {
            ok = true;
            break;
        }
        if c >= a && c >= b {
            mu_x /= 2.0;
        } else if a >= b {
            mu_u /= 2.0;
        } else {
            theta_d /= 2.0;
        }
    }
    if !ok {
        return Err(Error::NoConvergence(format!(
            "decay budget still violated after {} halvings (epsilon = {epsilon})",
            HALVINGS * 3
        )));
    }
    let m = sys.disturbance_sup();
    let kappa = sys.kappa_d;
    // Θ > 2κ_d h for every μ_d, so start at the first N with 2κ_d h < θ_d
    let n0 = ((2.0 * kappa * tau / theta_d).floor() as usize).saturating_sub(1);
    for n in n0..n0 + 1000 {
        let h = tau / (n + 1) as f64;
        if 2.0 * kappa * h >= theta_d {
            continue;
        }
        let mut mu_d = mu_hat(&sys.disturbance_box);
        for _ in 0..HALVINGS {
            let (rho, th) = rho_theta(n, mu_d, kappa, tau, m)?;
            if rho > 0.0 && th <= theta_d {
                return Ok(ParameterVector {
                    tau,
                    mu_x,
                    mu_u,
                    mu_d,
                    n,
                    theta_d,
                });
            }
            mu_d /= 2.0;
        }
    }
    Err(Error::NoConvergence(format!(
        "no (N, mu_d) reaches Theta <= theta_d = {theta_d}"
    )))
}

/// Cardinalities `|Q_P|`, `|A_P|`, `|B_P|` without building transitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Counts {
    pub states: usize,
    pub controls: usize,
    pub disturbances: f64,
    pub disturbance_lattice: usize,
    pub max_key_step: i64,
}

pub fn count(sys: &SystemDef, p: &ParameterVector) -> Result<Counts> {
    p.validate(sys)?;
    let states = Lattice::new(sys.state_box.clone(), p.mu_x)?;
    let controls = Lattice::new(sys.control_box.clone(), p.mu_u)?;
    let approx = p.approx(sys)?;
    let dl = Lattice::new(sys.disturbance_box.clone(), p.mu_d)?;
    Ok(Counts {
        states: states.len(),
        controls: controls.len(),
        disturbances: count_approx(&approx, &sys.disturbance_box)?,
        disturbance_lattice: dl.len(),
        max_key_step: approx.max_step(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BuildMode {
    Materialized,
    #[serde(rename = "onthefly")]
    OnTheFly,
}

impl std::str::FromStr for BuildMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "materialized" => Ok(BuildMode::Materialized),
            "onthefly" | "on-the-fly" => Ok(BuildMode::OnTheFly),
            _ => Err(Error::invalid(format!("unknown build mode {s}"))),
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BuildOptions {
    pub mode: BuildMode,
    pub triple_cap: usize,
    pub symbol_cap: usize,
    pub cache_capacity: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            mode: BuildMode::Materialized,
            triple_cap: DEFAULT_TRIPLE_CAP,
            symbol_cap: crate::spline::DEFAULT_ENUM_CAP,
            cache_capacity: 1 << 20,
        }
    }
}

/// Compressed successor lists, one per `(state, control, disturbance)` triple
/// in row-major order. An empty list marks an out-of-domain triple.
#[derive(Debug, Clone, PartialEq, Eq)]
struct Transitions {
    offsets: Vec<u64>,
    targets: Vec<u32>,
}

struct Cache {
    map: Mutex<HashMap<(u32, u32, u32), Arc<[u32]>>>,
    capacity: usize,
}

enum Storage {
    Materialized(Transitions),
    OnTheFly(Cache),
}

pub struct SymbolicModel {
    pub sys: SystemDef,
    pub flow: FlowConfig,
    pub params: ParameterVector,
    pub states: Lattice,
    pub controls: Lattice,
    pub disturbances: SplineSet,
    symbols: Vec<SplineSeq>,
    storage: Storage,
}

impl std::fmt::Debug for SymbolicModel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SymbolicModel")
            .field("params", &self.params)
            .field("states", &self.states.len())
            .field("controls", &self.controls.len())
            .field("disturbances", &self.disturbances.len())
            .field("materialized", &self.is_materialized())
            .finish()
    }
}

/// Lattice points within `μ_x` of the flow endpoint from `x` under `(u, d)`.
pub fn successors(
    sys: &SystemDef,
    flow: &FlowConfig,
    states: &Lattice,
    x: usize,
    u: &[f64],
    d: &SplineSeq,
) -> Result<Vec<usize>> {
    let xp = states.point(x);
    let end = integrate(sys, &xp, u, d, flow)?;
    Ok(states.within(&end, states.mu() + GUARD_BAND))
}

impl SymbolicModel {
    pub fn build(
        sys: &SystemDef,
        flow: FlowConfig,
        p: &ParameterVector,
        opts: &BuildOptions,
    ) -> Result<Self> {
        p.validate(sys)?;
        if (flow.tau - p.tau).abs() > 1e-15 * p.tau.max(1.0) {
            return Err(Error::invalid("flow sampling time differs from tau in the parameter vector"));
        }
        let states = Lattice::new(sys.state_box.clone(), p.mu_x)?;
        let controls = Lattice::new(sys.control_box.clone(), p.mu_u)?;
        let approx = p.approx(sys)?;
        let disturbances = enumerate_approx(&approx, &sys.disturbance_box, opts.symbol_cap)?;
        let triples = states.len() as f64 * controls.len() as f64 * disturbances.len() as f64;
        if opts.mode == BuildMode::Materialized && triples > opts.triple_cap as f64 {
            return Err(Error::CapExceeded {
                what: "transition triples".into(),
                estimate: triples,
                cap: opts.triple_cap as f64,
            });
        }
        if states.len() > u32::MAX as usize || controls.len() > u32::MAX as usize {
            return Err(Error::CapExceeded {
                what: "lattice indices".into(),
                estimate: states.len().max(controls.len()) as f64,
                cap: u32::MAX as f64,
            });
        }
        let symbols: Vec<SplineSeq> = (0..disturbances.len()).map(|i| disturbances.seq(i)).collect();
        let mut model = SymbolicModel {
            sys: sys.clone(),
            flow,
            params: *p,
            states,
            controls,
            disturbances,
            symbols,
            storage: Storage::OnTheFly(Cache {
                map: Mutex::new(HashMap::new()),
                capacity: opts.cache_capacity,
            }),
        };
        if opts.mode == BuildMode::Materialized {
            let t = model.compute_all()?;
            model.storage = Storage::Materialized(t);
        }
        Ok(model)
    }

    fn compute_all(&self) -> Result<Transitions> {
        let nu = self.controls.len();
        let nd = self.disturbances.len();
        let controls: Vec<Vec<f64>> = (0..nu).map(|u| self.controls.point(u)).collect();
        let rows = crate::par::map_range(self.states.len(), |q| -> Result<(Vec<u32>, Vec<u32>)> {
            let mut lens = Vec::with_capacity(nu * nd);
            let mut targets = Vec::new();
            for u in &controls {
                for d in &self.symbols {
                    let s = successors(&self.sys, &self.flow, &self.states, q, u, d)?;
                    lens.push(s.len() as u32);
                    targets.extend(s.into_iter().map(|v| v as u32));
                }
            }
            Ok((lens, targets))
        });
        let mut offsets = Vec::with_capacity(self.states.len() * nu * nd + 1);
        offsets.push(0u64);
        let mut all = Vec::new();
        for r in rows {
            let (lens, targets) = r?;
            for l in lens {
                let last = *offsets.last().expect("nonempty");
                offsets.push(last + l as u64);
            }
            all.extend(targets);
        }
        Ok(Transitions {
            offsets,
            targets: all,
        })
    }

    pub fn is_materialized(&self) -> bool {
        matches!(self.storage, Storage::Materialized(_))
    }

    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_controls(&self) -> usize {
        self.controls.len()
    }

    pub fn num_disturbances(&self) -> usize {
        self.disturbances.len()
    }

    pub fn symbol(&self, d: usize) -> &SplineSeq {
        &self.symbols[d]
    }

    fn triple(&self, q: usize, u: usize, d: usize) -> usize {
        (q * self.controls.len() + u) * self.disturbances.len() + d
    }

    /// Successor indices of `(q, u, d)`; empty means the endpoint left the
    /// state lattice's `μ_x`-neighbourhood.
    pub fn post(&self, q: usize, u: usize, d: usize) -> Result<Vec<usize>> {
        let mut out = Vec::new();
        self.post_into(q, u, d, &mut out)?;
        Ok(out)
    }

    pub fn post_into(&self, q: usize, u: usize, d: usize, out: &mut Vec<usize>) -> Result<()> {
        out.clear();
        match &self.storage {
            Storage::Materialized(t) => {
                let i = self.triple(q, u, d);
                let (a, b) = (t.offsets[i] as usize, t.offsets[i + 1] as usize);
                out.extend(t.targets[a..b].iter().map(|&v| v as usize));
            }
            Storage::OnTheFly(cache) => {
                let key = (q as u32, u as u32, d as u32);
                if let Some(hit) = cache.map.lock().expect("cache lock").get(&key) {
                    out.extend(hit.iter().map(|&v| v as usize));
                    return Ok(());
                }
                let s = successors(
                    &self.sys,
                    &self.flow,
                    &self.states,
                    q,
                    &self.controls.point(u),
                    &self.symbols[d],
                )?;
                let stored: Arc<[u32]> = s.iter().map(|&v| v as u32).collect();
                let mut map = cache.map.lock().expect("cache lock");
                if map.len() >= cache.capacity {
                    map.clear();
                }
                map.insert(key, stored);
                out.extend(s);
            }
        }
        Ok(())
    }

    pub fn is_out_of_domain(&self, q: usize, u: usize, d: usize) -> Result<bool> {
        Ok(self.post(q, u, d)?.is_empty())
    }

    /// Number of stored successor entries (materialized models only).
    pub fn transition_count(&self) -> Option<usize> {
        match &self.storage {
            Storage::Materialized(t) => Some(t.targets.len()),
            Storage::OnTheFly(_) => None,
        }
    }

    fn header(&self) -> ModelHeader {
        ModelHeader {
            system: self.sys.config().clone(),
            params: self.params,
            flow: self.flow,
            states: self.states.len(),
            controls: self.controls.len(),
            disturbances: self.disturbances.len(),
        }
    }

    /// Binary serialization: magic, version, JSON header, then one
    /// run-length-encoded successor bitset per triple, then a SHA-256 of all
    /// preceding bytes. Requires a materialized model.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let t = match &self.storage {
            Storage::Materialized(t) => t,
            Storage::OnTheFly(_) => {
                return Err(Error::invalid("only materialized models can be serialized"))
            }
        };
        let mut buf = Vec::new();
        buf.extend_from_slice(MODEL_MAGIC);
        buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
        let header = serde_json::to_vec(&self.header())?;
        buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
        buf.extend_from_slice(&header);
        for i in 0..t.offsets.len() - 1 {
            let s = &t.targets[t.offsets[i] as usize..t.offsets[i + 1] as usize];
            encode_runs(s, &mut buf);
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        if buf.len() < MODEL_MAGIC.len() + 8 + 32 {
            return Err(Error::Format("model file too short".into()));
        }
        let (body, digest) = buf.split_at(buf.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Format("model checksum mismatch".into()));
        }
        if &body[..MODEL_MAGIC.len()] != MODEL_MAGIC {
            return Err(Error::Format("not a symbolic model file".into()));
        }
        let mut pos = MODEL_MAGIC.len();
        let version = u32::from_le_bytes(body[pos..pos + 4].try_into().expect("4 bytes"));
        if version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model version {version}")));
        }
        pos += 4;
        let hlen = u32::from_le_bytes(body[pos..pos + 4].try_into().expect("4 bytes")) as usize;
        pos += 4;
        let header: ModelHeader = serde_json::from_slice(
            body.get(pos..pos + hlen)
                .ok_or_else(|| Error::Format("truncated header".into()))?,
        )?;
        pos += hlen;
        let sys = SystemDef::from_config(&header.system)?;
        let mut model = SymbolicModel::build(
            &sys,
            header.flow,
            &header.params,
            &BuildOptions {
                mode: BuildMode::OnTheFly,
                ..BuildOptions::default()
            },
        )?;
        if model.states.len() != header.states
            || model.controls.len() != header.controls
            || model.disturbances.len() != header.disturbances
        {
            return Err(Error::Format("header counts disagree with the parameters".into()));
        }
        let triples = header.states * header.controls * header.disturbances;
        let mut offsets = Vec::with_capacity(triples + 1);
        offsets.push(0u64);
        let mut targets = Vec::new();
        for _ in 0..triples {
            decode_runs(body, &mut pos, header.states, &mut targets)?;
            offsets.push(targets.len() as u64);
        }
        if pos != body.len() {
            return Err(Error::Format("trailing bytes after transitions".into()));
        }
        model.storage = Storage::Materialized(Transitions { offsets, targets });
        Ok(model)
    }

    /// SHA-256 of the binary serialization.
    pub fn digest(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_binary(&mut buf)?;
        Ok(hex::encode(Sha256::digest(&buf)))
    }

    /// Debug export: `state,control,disturbance,successors` with successors
    /// separated by `;` and `sink` for out-of-domain triples.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "state,control,disturbance,successors")?;
        let mut buf = Vec::new();
        for q in 0..self.num_states() {
            for u in 0..self.num_controls() {
                for d in 0..self.num_disturbances() {
                    self.post_into(q, u, d, &mut buf)?;
                    let s = if buf.is_empty() {
                        "sink".to_string()
                    } else {
                        buf.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";")
                    };
                    writeln!(w, "{q},{u},{d},{s}")?;
                }
            }
        }
        Ok(())
    }

    /// Transition-level equality with another model over the same lattices.
    pub fn same_transitions(&self, other: &SymbolicModel) -> Result<bool> {
        if self.num_states() != other.num_states()
            || self.num_controls() != other.num_controls()
            || self.num_disturbances() != other.num_disturbances()
        {
            return Ok(false);
        }
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for q in 0..self.num_states() {
            for u in 0..self.num_controls() {
                for d in 0..self.num_disturbances() {
                    self.post_into(q, u, d, &mut a)?;
                    other.post_into(q, u, d, &mut b)?;
                    if a != b {
                        return Ok(false);
                    }
                }
            }
        }
        Ok(true)
    }
}

const MODEL_MAGIC: &[u8] = b"SYMABSMD";
const MODEL_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelHeader {
    system: SystemConfig,
    params: ParameterVector,
    flow: FlowConfig,
    states: usize,
    controls: usize,
    disturbances: usize,
}

fn put_varint(mut v: u64, out: &mut Vec<u8>) {
    loop {
        let byte = (v & 0x7f) as u8;
        v >>= 7;
        if v == 0 {
            out.push(byte);
            return;
        }
        out.push(byte | 0x80);
    }
}

fn get_varint(buf: &[u8], pos: &mut usize) -> Result<u64> {
    let mut v = 0u64;
    let mut shift = 0;
    loop {
        let b = *buf
            .get(*pos)
            .ok_or_else(|| Error::Format("truncated varint".into()))?;
        *pos += 1;
        if shift > 63 {
            return Err(Error::Format("varint overflow".into()));
        }
        v |= ((b & 0x7f) as u64) << shift;
        if b & 0x80 == 0 {
            return Ok(v);
        }
        shift += 7;
    }
}

/// Alternating zero/one run lengths of a sorted index set, prefixed by the
/// number of runs. Trailing zeros are implicit.
fn encode_runs(sorted: &[u32], out: &mut Vec<u8>) {
    let mut runs = Vec::new();
    let mut cursor = 0u64;
    let mut i = 0;
    while i < sorted.len() {
        let start = sorted[i] as u64;
        let mut end = start;
        while i + 1 < sorted.len() && sorted[i + 1] as u64 == end + 1 {
            i += 1;
            end += 1;
        }
        runs.push(start - cursor);
        runs.push(end - start + 1);
        cursor = end + 1;
        i += 1;
    }
    put_varint(runs.len() as u64, out);
    for r in runs {
        put_varint(r, out);
    }
}

fn decode_runs(buf: &[u8], pos: &mut usize, universe: usize, out: &mut Vec<u32>) -> Result<()> {
    let n = get_varint(buf, pos)?;
    if n % 2 != 0 {
        return Err(Error::Format("odd run count".into()));
    }
    let mut cursor = 0u64;
    for _ in 0..n / 2 {
        let zeros = get_varint(buf, pos)?;
        let ones = get_varint(buf, pos)?;
        let start = cursor + zeros;
        let end = start + ones;
        if ones == 0 || end > universe as u64 {
            return Err(Error::Format("run exceeds the state lattice".into()));
        }
        out.extend((start..end).map(|v| v as u32));
        cursor = end;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lyapunov::{pendulum_cert, pendulum_verified_cert};
    use crate::system::pendulum_preset;
    use std::f64::consts::PI;

    fn coarse() -> ParameterVector {
        ParameterVector {
            tau: 1.0,
            mu_x: PI / 40.0,
            mu_u: 0.15,
            mu_d: 0.0009375,
            n: 0,
            theta_d: 0.03,
        }
    }

    #[test]
    fn published_counts() {
        let sys = pendulum_preset();
        let c = count(&sys, &ParameterVector::pendulum_published()).unwrap();
        assert_eq!(c.states, 159_819);
        assert_eq!(c.controls, 1_501);
        assert_eq!(c.disturbance_lattice, 104);
        assert_eq!(c.disturbances, 1310.0);
    }

    #[test]
    fn coarse_counts_match_axis_oracle() {
        let sys = pendulum_preset();
        let c = count(&sys, &coarse()).unwrap();
        let axis = |lo: f64, hi: f64, mu: f64| {
            let s = 2.0 * mu;
            ((hi / s + 1e-9).floor() - (lo / s - 1e-9).ceil() + 1.0) as usize
        };
        assert_eq!(c.states, axis(-PI / 4.0, PI / 4.0, PI / 40.0) * axis(-0.5, 0.5, PI / 40.0));
        assert_eq!(c.states, 11 * 7);
        assert_eq!(c.controls, 11);
        let mut bad = coarse();
        bad.mu_x = 1.5;
        assert!(matches!(count(&sys, &bad), Err(Error::Infeasible(_))));
    }

    #[test]
    fn published_parameters_report() {
        let sys = pendulum_preset();
        let r = check_params(&ParameterVector::pendulum_published(), &pendulum_cert(), &sys, 0.125).unwrap();
        assert!((r.gamma_slope - 5.312388980384690).abs() < 1e-9);
        // independent evaluation of the decay budget
        let lhs = f64::max(8.76 * 0.001, 1.31 * 0.007) / 0.77
            + r.gamma_slope * (PI / 2000.0) / (1.0 - (-0.77f64).exp());
        assert!((r.lhs - lhs).abs() < 1e-15);
        assert!((r.lhs - 0.0274).abs() < 1e-4);
        assert!((r.rhs - 0.01875).abs() < 1e-15);
        assert!(!r.verdict);
        assert_eq!(r.violated().len(), 1);
        assert_eq!(r.violated()[0].name, "decay budget");
        let p = r.inequalities.iter().find(|i| i.name == "disturbance precision").unwrap();
        assert!((p.lhs - 0.006717).abs() < 1e-12 && p.margin > 0.0);
        assert!(!r.notes.is_empty());
    }

    #[test]
    fn vanishing_quantization_passes() {
        let sys = pendulum_preset();
        let p = ParameterVector {
            tau: 1.0,
            mu_x: 1e-9,
            mu_u: 1e-9,
            mu_d: 1e-6,
            n: 10,
            theta_d: 1e-3,
        };
        let r = check_params(&p, &pendulum_verified_cert(), &sys, 0.1).unwrap();
        assert!(r.lhs < 0.01 && r.verdict, "{}", r.render());
    }

    #[test]
    fn suggestions_pass_and_shrink() {
        let sys = pendulum_preset();
        let cert = pendulum_verified_cert();
        let mut prev: Option<ParameterVector> = None;
        for eps in [0.5, 0.25, 0.125] {
            let p = suggest_params(&cert, &sys, eps, 1.0).unwrap();
            assert!(check_params(&p, &cert, &sys, eps).unwrap().verdict);
            if let Some(q) = prev {
                assert!(p.mu_x <= q.mu_x && p.mu_u <= q.mu_u && p.theta_d <= q.theta_d);
            }
            prev = Some(p);
        }
        let huge = suggest_params(&cert, &sys, 100.0, 1.0).unwrap();
        assert_eq!(huge.mu_x, 1.0);
        assert_eq!(huge.mu_u, 3.0);
    }

    #[test]
    fn equilibrium_maps_to_itself() {
        let sys = pendulum_preset();
        let p = coarse();
        let states = Lattice::new(sys.state_box.clone(), p.mu_x).unwrap();
        let origin = states.nearest(&[0.0, 0.0]).unwrap();
        let zero = SplineSeq::from_keys(crate::spline::SplineBasis::new(1.0, 0).unwrap(), p.mu_d, 1, vec![0, 0]).unwrap();
        let s = successors(&sys, &p.flow(), &states, origin, &[0.0], &zero).unwrap();
        assert_eq!(s, vec![origin]);
    }

    #[test]
    fn successors_match_brute_force() {
        use rand::{Rng, SeedableRng};
        let sys = pendulum_preset();
        let model = SymbolicModel::build(&sys, coarse().flow(), &coarse(), &BuildOptions::default()).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..300 {
            let q = rng.gen_range(0..model.num_states());
            let u = rng.gen_range(0..model.num_controls());
            let d = rng.gen_range(0..model.num_disturbances());
            let end = integrate(&sys, &model.states.point(q), &model.controls.point(u), model.symbol(d), &model.flow).unwrap();
            let got = model.post(q, u, d).unwrap();
            let mut want = Vec::new();
            for y in 0..model.num_states() {
                let dist = crate::geometry::inf_dist(&model.states.point(y), &end);
                if dist <= model.params.mu_x + GUARD_BAND {
                    want.push(y);
                }
                if got.contains(&y) {
                    assert!(dist <= model.params.mu_x + GUARD_BAND);
                }
            }
            assert_eq!(got, want);
            assert!(got.len() <= 4);
        }
    }

    #[test]
    fn midpoint_ties_are_inclusive() {
        let sys = pendulum_preset();
        let states = Lattice::new(sys.state_box.clone(), 0.05).unwrap();
        // exactly between keys 0 and 1 on the first axis, on a key on the second
        let got = states.within(&[0.05, 0.0], 0.05 + GUARD_BAND);
        assert_eq!(got.len(), 2);
    }

    #[test]
    fn on_the_fly_agrees_and_round_trips() {
        use rand::{Rng, SeedableRng};
        let sys = pendulum_preset();
        let p = coarse();
        let m = SymbolicModel::build(&sys, p.flow(), &p, &BuildOptions::default()).unwrap();
        let lazy = SymbolicModel::build(
            &sys,
            p.flow(),
            &p,
            &BuildOptions {
                mode: BuildMode::OnTheFly,
                cache_capacity: 64,
                ..BuildOptions::default()
            },
        )
        .unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..10_000 {
            let q = rng.gen_range(0..m.num_states());
            let u = rng.gen_range(0..m.num_controls());
            let d = rng.gen_range(0..m.num_disturbances());
            assert_eq!(m.post(q, u, d).unwrap(), lazy.post(q, u, d).unwrap());
        }
        let mut bytes = Vec::new();
        m.write_binary(&mut bytes).unwrap();
        let back = SymbolicModel::read_binary(&bytes[..]).unwrap();
        assert!(back.same_transitions(&m).unwrap());
        assert_eq!(back.digest().unwrap(), m.digest().unwrap());
        let mut corrupt = bytes.clone();
        let mid = corrupt.len() / 2;
        corrupt[mid] ^= 1;
        assert!(matches!(SymbolicModel::read_binary(&corrupt[..]), Err(Error::Format(_))));
        assert!(lazy.write_binary(Vec::new()).is_err());
        let mut csv = Vec::new();
        m.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert_eq!(text.lines().count(), 1 + m.num_states() * m.num_controls() * m.num_disturbances());
    }

    #[test]
    fn thread_count_does_not_change_the_model() {
        let sys = pendulum_preset();
        let p = coarse();
        let a = crate::par::with_threads(1, || SymbolicModel::build(&sys, p.flow(), &p, &BuildOptions::default()).unwrap());
        let b = crate::par::with_threads(8, || SymbolicModel::build(&sys, p.flow(), &p, &BuildOptions::default()).unwrap());
        assert_eq!(a.digest().unwrap(), b.digest().unwrap());
    }

    #[test]
    fn triple_cap_is_enforced() {
        let sys = pendulum_preset();
        let p = coarse();
        let opts = BuildOptions {
            triple_cap: 100,
            ..BuildOptions::default()
        };
        assert!(matches!(
            SymbolicModel::build(&sys, p.flow(), &p, &opts),
            Err(Error::CapExceeded { .. })
        ));
    }

    #[test]
    fn run_length_round_trip() {
        for set in [vec![], vec![0], vec![3, 4, 5, 9], vec![0, 1, 2, 3], vec![1000, 70_000]] {
            let mut buf = Vec::new();
            encode_runs(&set, &mut buf);
            let mut pos = 0;
            let mut out = Vec::new();
            decode_runs(&buf, &mut pos, 100_000, &mut out).unwrap();
            assert_eq!(out, set);
            assert_eq!(pos, buf.len());
        }
    }
}
