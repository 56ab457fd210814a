//! Command implementations behind the `symabs` binary. Every command
//! resolves a [`RunConfig`], validates it, and returns the text it prints;
//! artifacts go to the output directory. Timings go to stderr only so that
//! reports stay byte-identical between runs.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::abstraction::{check_params, count, BuildMode, BuildOptions, ParameterVector, SymbolicModel};
use crate::altbisim::{run_instance, BisimInstance};
use crate::error::{Error, Result};
use crate::lyapunov::{
    check_condition_i, check_condition_ii, check_gamma, pendulum_cert, pendulum_verified_cert, CertConfig,
    Certificate, InputSharing, SampleReport,
};
use crate::synthesis::{
    check_closure, check_horizon, simulate_closed_loop, synthesize, Controller, SpecConfig, SpecMonitor,
};
use crate::system::{cosine_disturbance, preset, SystemConfig, SystemDef};

pub const DEFAULT_SEED: u64 = 20_110_601;
pub const DEFAULT_SAMPLES: usize = 100_000;
pub const DEFAULT_STEPS: usize = 20;
pub const DEFAULT_HORIZON: usize = 8;

/// Preset name, path to a JSON file, or an inline object.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Source<T> {
    Named(String),
    Inline(T),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_system")]
    pub system: Source<SystemConfig>,
    pub params: ParameterVector,
    #[serde(default = "default_cert")]
    pub certificate: Source<CertConfig>,
    pub epsilon: f64,
    #[serde(default)]
    pub spec: Option<Source<SpecConfig>>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub samples: Option<usize>,
    #[serde(default)]
    pub steps: Option<usize>,
    #[serde(default)]
    pub horizon: Option<usize>,
}

fn default_system() -> Source<SystemConfig> {
    Source::Named("pendulum".into())
}

fn default_cert() -> Source<CertConfig> {
    Source::Named("pendulum-verified".into())
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config {
            line: e.line(),
            column: e.column(),
            message: format!("run configuration: {e}"),
        })
    }

    /// Built-in runs: `pendulum` uses the published quantization and
    /// certificate at `ε = 0.125`; `pendulum-coarse` is a desk-scale
    /// parameter set that passes every inequality with the verified
    /// certificate at `ε = 2.2`.
    pub fn preset(name: &str) -> Result<Self> {
        match name {
            "pendulum" => Ok(RunConfig {
                system: default_system(),
                params: ParameterVector::pendulum_published(),
                certificate: Source::Named("pendulum-published".into()),
                epsilon: 0.125,
                spec: Some(Source::Named("pendulum".into())),
                out: None,
                threads: None,
                seed: None,
                samples: None,
                steps: None,
                horizon: None,
            }),
            "pendulum-coarse" => Ok(RunConfig {
                system: default_system(),
                params: ParameterVector {
                    tau: 1.0,
                    mu_x: 0.015625,
                    mu_u: 0.09375,
                    mu_d: 0.0009375,
                    n: 0,
                    theta_d: 0.03,
                },
                certificate: default_cert(),
                epsilon: 2.2,
                spec: Some(Source::Named("pendulum".into())),
                out: None,
                threads: None,
                seed: None,
                samples: None,
                steps: None,
                horizon: None,
            }),
            other => Err(Error::config(format!(
                "unknown preset `{other}` (expected pendulum or pendulum-coarse)"
            ))),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = RunConfig::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.rebase(base);
        Ok(cfg)
    }

    /// Makes relative file references relative to `base`.
    fn rebase(&mut self, base: &Path) {
        let fix = |s: &mut String| {
            if s.ends_with(".json") && Path::new(s.as_str()).is_relative() {
                *s = base.join(s.as_str()).to_string_lossy().into_owned();
            }
        };
        if let Source::Named(s) = &mut self.system {
            fix(s);
        }
        if let Source::Named(s) = &mut self.certificate {
            fix(s);
        }
        if let Some(Source::Named(s)) = &mut self.spec {
            fix(s);
        }
        if let Some(o) = &mut self.out {
            if o.is_relative() {
                *o = base.join(&*o);
            }
        }
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let sys = match &self.system {
            Source::Inline(c) => SystemDef::from_config(c)?,
            Source::Named(n) if n.ends_with(".json") => crate::system::parse_system(&read(n)?)?,
            Source::Named(n) => preset(n).map_err(|_| Error::config(format!("unknown system `{n}`")))?,
        };
        let cert = match &self.certificate {
            Source::Inline(c) => Certificate::from_config(c)?,
            Source::Named(n) if n.ends_with(".json") => {
                let c: CertConfig = serde_json::from_str(&read(n)?)?;
                Certificate::from_config(&c)?
            }
            Source::Named(n) => match n.as_str() {
                "pendulum-published" => pendulum_cert(),
                "pendulum-verified" => pendulum_verified_cert(),
                _ => return Err(Error::config(format!("unknown certificate `{n}`"))),
            },
        };
        if cert.form.dim() != sys.n() {
            return Err(Error::DimensionMismatch(format!(
                "certificate dimension {} differs from state dimension {}",
                cert.form.dim(),
                sys.n()
            )));
        }
        let spec = match &self.spec {
            None => None,
            Some(Source::Inline(s)) => Some(s.clone()),
            Some(Source::Named(n)) if n.ends_with(".json") => Some(serde_json::from_str(&read(n)?)?),
            Some(Source::Named(n)) if n == "pendulum" => Some(SpecConfig::pendulum()),
            Some(Source::Named(n)) => return Err(Error::config(format!("unknown specification `{n}`"))),
        };
        if !(self.epsilon > 0.0) || !self.epsilon.is_finite() {
            return Err(Error::invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        self.params.validate(&sys)?;
        Ok(Resolved {
            sys,
            cert,
            params: self.params,
            epsilon: self.epsilon,
            spec,
            out: self.out.clone().unwrap_or_else(|| PathBuf::from("out")),
            seed: self.seed.unwrap_or(DEFAULT_SEED),
            samples: self.samples.unwrap_or(DEFAULT_SAMPLES),
            steps: self.steps.unwrap_or(DEFAULT_STEPS),
            horizon: self.horizon.unwrap_or(DEFAULT_HORIZON),
        })
    }
}

fn read(path: &str) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::config(format!("cannot read {path}: {e}")))
}

pub struct Resolved {
    pub sys: SystemDef,
    pub cert: Certificate,
    pub params: ParameterVector,
    pub epsilon: f64,
    pub spec: Option<SpecConfig>,
    pub out: PathBuf,
    pub seed: u64,
    pub samples: usize,
    pub steps: usize,
    pub horizon: usize,
}

impl Resolved {
    fn spec(&self) -> SpecConfig {
        self.spec.clone().unwrap_or_else(SpecConfig::pendulum)
    }

    fn out_dir(&self) -> Result<&Path> {
        fs::create_dir_all(&self.out)?;
        Ok(&self.out)
    }
}

/// Wall-clock and peak-memory line for stderr.
pub fn stats(label: &str, start: Instant) -> String {
    let peak = fs::read_to_string("/proc/self/status")
        .ok()
        .and_then(|s| s.lines().find(|l| l.starts_with("VmHWM:")).map(|l| l[6..].trim().to_string()))
        .unwrap_or_else(|| "n/a".into());
    format!("{label}: {:.3} s, peak memory {peak}", start.elapsed().as_secs_f64())
}

#[derive(Debug, Clone, Serialize)]
pub struct CountReport {
    pub params: ParameterVector,
    pub states: usize,
    pub controls: usize,
    pub disturbances: f64,
    pub disturbance_lattice: usize,
    pub max_key_step: i64,
    pub note: String,
}

pub fn cmd_count(r: &Resolved) -> Result<String> {
    let c = count(&r.sys, &r.params)?;
    let rep = CountReport {
        params: r.params,
        states: c.states,
        controls: c.controls,
        disturbances: c.disturbances,
        disturbance_lattice: c.disturbance_lattice,
        max_key_step: c.max_key_step,
        note: format!(
            "disturbances counts node sequences on the D lattice whose consecutive keys differ by at most {} per axis",
            c.max_key_step
        ),
    };
    Ok(serde_json::to_string_pretty(&rep)? + "\n")
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckOutput {
    pub inequalities: crate::abstraction::BisimCheckReport,
    pub sandwich: SampleReport,
    pub dissipation: SampleReport,
    pub dissipation_shared_inputs: SampleReport,
    pub gamma: SampleReport,
    pub seed: u64,
}

/// Inequality report plus seeded sampling of the certificate conditions.
/// Returns the text, the JSON report and whether every check passed.
pub fn cmd_check(r: &Resolved) -> Result<(String, String, bool)> {
    let rep = check_params(&r.params, &r.cert, &r.sys, r.epsilon)?;
    let slope = r.cert.gamma_slope(&r.sys.state_box)?;
    let out = CheckOutput {
        sandwich: check_condition_i(&r.cert, &r.sys.state_box, r.samples, r.seed),
        dissipation: check_condition_ii(&r.cert, &r.sys, r.samples, r.seed, InputSharing::Independent),
        dissipation_shared_inputs: check_condition_ii(&r.cert, &r.sys, r.samples, r.seed, InputSharing::Shared),
        gamma: check_gamma(&r.cert, &r.sys.state_box, slope, r.samples, r.seed),
        seed: r.seed,
        inequalities: rep,
    };
    let ok = out.inequalities.verdict && out.sandwich.pass && out.dissipation.pass && out.gamma.pass;
    let mut text = out.inequalities.render();
    for (name, s) in [
        ("sandwich bounds", &out.sandwich),
        ("dissipation inequality", &out.dissipation),
        ("dissipation inequality, shared inputs", &out.dissipation_shared_inputs),
        ("gamma bound", &out.gamma),
    ] {
        text += &format!(
            "sampled {name}: {} over {} samples (max violation {:.6e})\n",
            if s.pass { "ok" } else { "VIOLATED" },
            s.samples,
            s.max_violation
        );
    }
    text += &format!("overall: {}\n", if ok { "PASS" } else { "FAIL" });
    let json = serde_json::to_string_pretty(&out)? + "\n";
    Ok((text, json, ok))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelReport {
    pub params: ParameterVector,
    pub states: usize,
    pub controls: usize,
    pub disturbances: usize,
    pub transitions: Option<usize>,
    pub out_of_domain: usize,
    pub sha256: Option<String>,
}

pub fn build_model(r: &Resolved, mode: BuildMode) -> Result<SymbolicModel> {
    let start = Instant::now();
    let m = SymbolicModel::build(
        &r.sys,
        r.params.flow(),
        &r.params,
        &BuildOptions {
            mode,
            ..BuildOptions::default()
        },
    )?;
    eprintln!("{}", stats("abstraction", start));
    Ok(m)
}

fn model_report(m: &SymbolicModel) -> Result<ModelReport> {
    let mut sinks = 0;
    if m.is_materialized() {
        for q in 0..m.num_states() {
            for u in 0..m.num_controls() {
                for d in 0..m.num_disturbances() {
                    if m.is_out_of_domain(q, u, d)? {
                        sinks += 1;
                    }
                }
            }
        }
    }
    Ok(ModelReport {
        params: m.params,
        states: m.num_states(),
        controls: m.num_controls(),
        disturbances: m.num_disturbances(),
        transitions: m.transition_count(),
        out_of_domain: sinks,
        sha256: if m.is_materialized() { Some(m.digest()?) } else { None },
    })
}

/// Builds the model and writes `model.bin`, `model.json` and, on request,
/// `transitions.csv`, `states.csv` and `disturbances.csv`.
pub fn cmd_abstract(r: &Resolved, mode: BuildMode, csv: bool) -> Result<String> {
    let m = build_model(r, mode)?;
    let dir = r.out_dir()?;
    if m.is_materialized() {
        m.write_binary(fs::File::create(dir.join("model.bin"))?)?;
    }
    let rep = model_report(&m)?;
    let json = serde_json::to_string_pretty(&rep)? + "\n";
    fs::write(dir.join("model.json"), &json)?;
    if csv {
        m.write_csv(std::io::BufWriter::new(fs::File::create(dir.join("transitions.csv"))?))?;
        m.states.write_csv(fs::File::create(dir.join("states.csv"))?)?;
        m.disturbances.write_csv(fs::File::create(dir.join("disturbances.csv"))?)?;
    }
    Ok(json)
}

pub fn load_or_build(r: &Resolved, model: Option<&Path>, mode: BuildMode) -> Result<SymbolicModel> {
    match model {
        Some(p) => {
            let m = SymbolicModel::read_binary(std::io::BufReader::new(fs::File::open(p)?))?;
            if m.params != r.params {
                return Err(Error::config("model file was built with different parameters"));
            }
            Ok(m)
        }
        None => build_model(r, mode),
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisOutput {
    pub spec: SpecConfig,
    pub spec_sha256: String,
    pub report: crate::synthesis::SynthesisReport,
    pub closure: crate::synthesis::ClosureReport,
    pub horizon: crate::synthesis::HorizonReport,
    pub controller_sha256: String,
}

pub fn synthesize_model(r: &Resolved, m: &SymbolicModel) -> Result<(Controller, SpecMonitor, SynthesisOutput)> {
    let start = Instant::now();
    let spec = r.spec();
    let (ctrl, mon, report) = synthesize(m, &spec)?;
    eprintln!("{}", stats("synthesis", start));
    let closure = check_closure(m, &mon, &ctrl)?;
    let horizon = check_horizon(m, &mon, &ctrl, r.horizon)?;
    let out = SynthesisOutput {
        spec_sha256: spec.hash()?,
        spec,
        report,
        closure,
        horizon,
        controller_sha256: ctrl.digest()?,
    };
    Ok((ctrl, mon, out))
}

/// Writes `controller.bin` and `synthesis.json`.
pub fn cmd_synthesize(r: &Resolved, model: Option<&Path>, mode: BuildMode) -> Result<String> {
    let m = load_or_build(r, model, mode)?;
    let (ctrl, _, out) = synthesize_model(r, &m)?;
    let dir = r.out_dir()?;
    ctrl.write_binary(fs::File::create(dir.join("controller.bin"))?)?;
    let json = serde_json::to_string_pretty(&out)? + "\n";
    fs::write(dir.join("synthesis.json"), &json)?;
    Ok(json)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SimulationOutput {
    pub x0: Vec<f64>,
    pub steps: usize,
    pub final_mode: String,
    pub satisfied: bool,
    pub max_distance: f64,
    pub epsilon: f64,
    pub within_epsilon: bool,
    pub modes: Vec<String>,
}

/// Closed loop under the sinusoidal disturbance spanning `D`; writes
/// `trace.csv` and `simulation.json`. Uses `controller.bin` when given.
pub fn cmd_simulate(r: &Resolved, model: Option<&Path>, controller: Option<&Path>, mode: BuildMode) -> Result<String> {
    let m = load_or_build(r, model, mode)?;
    let spec = r.spec();
    let (ctrl, mon) = match controller {
        Some(p) => {
            let c = Controller::read_binary(std::io::BufReader::new(fs::File::open(p)?))?;
            if c.header.spec_sha256 != spec.hash()? {
                return Err(Error::config("controller was synthesized for a different specification"));
            }
            let mon = SpecMonitor::from_config(&spec, &m.states, m.params.tau)?;
            (c, mon)
        }
        None => {
            let (c, mon, _) = synthesize_model(r, &m)?;
            (c, mon)
        }
    };
    let d = cosine_disturbance(&r.sys)?;
    let x0 = spec.x0.clone().unwrap_or_else(|| vec![0.0; r.sys.n()]);
    let start = Instant::now();
    let trace = simulate_closed_loop(&m, &mon, &ctrl, &r.cert, &d, &x0, r.steps)?;
    eprintln!("{}", stats("simulation", start));
    let dir = r.out_dir()?;
    trace.write_csv(std::io::BufWriter::new(fs::File::create(dir.join("trace.csv"))?))?;
    let out = SimulationOutput {
        x0,
        steps: r.steps,
        final_mode: trace.final_mode.clone(),
        satisfied: trace.satisfied,
        max_distance: trace.max_distance,
        epsilon: r.epsilon,
        within_epsilon: trace.max_distance <= r.epsilon,
        modes: trace.rows.iter().map(|row| row.mode.clone()).collect(),
    };
    let json = serde_json::to_string_pretty(&out)? + "\n";
    fs::write(dir.join("simulation.json"), &json)?;
    Ok(json)
}

pub fn cmd_bisim_check(input: &Path) -> Result<String> {
    let text = fs::read_to_string(input)
        .map_err(|e| Error::config(format!("cannot read {}: {e}", input.display())))?;
    let inst = BisimInstance::from_json(&text)?;
    Ok(serde_json::to_string_pretty(&run_instance(&inst)?)? + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_resolve() {
        for name in ["pendulum", "pendulum-coarse"] {
            let r = RunConfig::preset(name).unwrap().resolve().unwrap();
            assert_eq!(r.sys.n(), 2);
        }
        assert!(matches!(RunConfig::preset("cartpole"), Err(Error::Config { .. })));
    }

    #[test]
    fn config_round_trip_and_validation() {
        let cfg = RunConfig::preset("pendulum-coarse").unwrap();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
        let mut bad = cfg.clone();
        bad.params.mu_x = 2.0;
        assert!(matches!(bad.resolve(), Err(Error::Infeasible(_))));
        assert!(matches!(RunConfig::from_json("{\"epsilon\": 1}"), Err(Error::Config { .. })));
        let inline = r#"{"system": {"n":1,"m":1,"l":1,"X":[[-1,1]],"U":[[-1,1]],"D":[[-0.1,0.1]],
            "kappa_d":0.1,"f":["-x1+u1+d1"]},
            "certificate": {"P":[[1]],"lambda":1,"alpha_lo":{"quadratic":1},"alpha_hi":{"quadratic":1},
            "sigma_u":{"linear":2},"sigma_d":{"linear":2},"gamma":"dual_norm"},
            "params": {"tau":1,"mu_x":0.1,"mu_u":0.1,"mu_d":0.01,"N":3,"theta_d":0.1}, "epsilon": 1}"#;
        let r = RunConfig::from_json(inline).unwrap().resolve().unwrap();
        assert_eq!(r.sys.n(), 1);
    }

    #[test]
    fn count_is_fast_for_the_published_parameters() {
        let r = RunConfig::preset("pendulum").unwrap().resolve().unwrap();
        let t = Instant::now();
        let text = cmd_count(&r).unwrap();
        assert!(t.elapsed().as_secs_f64() < 1.0);
        let v: serde_json::Value = serde_json::from_str(&text).unwrap();
        assert_eq!(v["states"], 159_819);
        assert_eq!(v["controls"], 1_501);
    }
}
