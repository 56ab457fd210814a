//! Controller synthesis on the symbolic model: controllable predecessors,
//! safety and reachability fixed points, the reach/dwell/stay monitor and
//! closed-loop refinement.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::abstraction::{ParameterVector, SymbolicModel};
use crate::altbisim::FiniteTS;
use crate::error::{Error, Result};
use crate::flow::integrate;
use crate::geometry::{inf_dist, Lattice, Rect};
use crate::lyapunov::Certificate;
use crate::spline::witness_on;
use crate::system::{Disturbance, Shifted};

/// A finite two-player arena: the controller picks `u`, the adversary picks
/// `d` and one of the successors.
pub trait Game: Sync {
    fn num_states(&self) -> usize;
    fn num_controls(&self) -> usize;
    fn num_disturbances(&self) -> usize;
    /// Successors of `(q, u, d)`. Empty means the move leaves the domain.
    fn post(&self, q: usize, u: usize, d: usize, out: &mut Vec<usize>) -> Result<()>;
}

impl Game for SymbolicModel {
    fn num_states(&self) -> usize {
        SymbolicModel::num_states(self)
    }
    fn num_controls(&self) -> usize {
        SymbolicModel::num_controls(self)
    }
    fn num_disturbances(&self) -> usize {
        SymbolicModel::num_disturbances(self)
    }
    fn post(&self, q: usize, u: usize, d: usize, out: &mut Vec<usize>) -> Result<()> {
        self.post_into(q, u, d, out)
    }
}

impl Game for FiniteTS {
    fn num_states(&self) -> usize {
        self.states
    }
    fn num_controls(&self) -> usize {
        self.controls
    }
    fn num_disturbances(&self) -> usize {
        self.disturbances
    }
    fn post(&self, q: usize, u: usize, d: usize, out: &mut Vec<usize>) -> Result<()> {
        out.clear();
        out.extend_from_slice(FiniteTS::post(self, q, u, d));
        Ok(())
    }
}

/// `u` forces every outcome into `target`.
fn forces<G: Game + ?Sized>(g: &G, q: usize, u: usize, target: &[bool], buf: &mut Vec<usize>) -> Result<bool> {
    for d in 0..g.num_disturbances() {
        g.post(q, u, d, buf)?;
        if buf.is_empty() || buf.iter().any(|&s| !target[s]) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn first_forcing<G: Game + ?Sized>(g: &G, q: usize, target: &[bool], buf: &mut Vec<usize>) -> Result<Option<u32>> {
    for u in 0..g.num_controls() {
        if forces(g, q, u, target, buf)? {
            return Ok(Some(u as u32));
        }
    }
    Ok(None)
}

/// States with a control that, for every disturbance, has a nonempty
/// successor set inside `target`.
pub fn cpre<G: Game>(g: &G, target: &[bool]) -> Result<Vec<bool>> {
    let rows = crate::par::map_range(g.num_states(), |q| {
        let mut buf = Vec::new();
        first_forcing(g, q, target, &mut buf).map(|c| c.is_some())
    });
    rows.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GameResult {
    pub winning: Vec<bool>,
    /// Attractor rank for reachability; `Some(0)` on the target.
    pub depth: Vec<Option<u32>>,
    /// Smallest control realising the winning move.
    pub control: Vec<Option<u32>>,
    pub iterations: usize,
}

impl GameResult {
    pub fn count(&self) -> usize {
        self.winning.iter().filter(|&&w| w).count()
    }
}

/// Greatest fixed point `Z = safe ∩ cpre(Z)`.
pub fn solve_safety<G: Game>(g: &G, safe: &[bool]) -> Result<GameResult> {
    let mut z = safe.to_vec();
    let mut iterations = 0;
    loop {
        iterations += 1;
        let zr = &z;
        let next = crate::par::map_range(g.num_states(), |q| -> Result<bool> {
            if !zr[q] {
                return Ok(false);
            }
            let mut buf = Vec::new();
            Ok(first_forcing(g, q, zr, &mut buf)?.is_some())
        });
        let next: Vec<bool> = next.into_iter().collect::<Result<_>>()?;
        if next == z {
            break;
        }
        z = next;
    }
    let zr = &z;
    let control = crate::par::map_range(g.num_states(), |q| -> Result<Option<u32>> {
        if !zr[q] {
            return Ok(None);
        }
        let mut buf = Vec::new();
        first_forcing(g, q, zr, &mut buf)
    });
    let control = control.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(GameResult {
        depth: vec![None; z.len()],
        winning: z,
        control,
        iterations,
    })
}

/// Least fixed point `Z = target ∪ cpre(Z)`, optionally stopped after
/// `bound` sweeps. A state added in sweep `k` gets depth `k` and the
/// smallest control forcing into the sweep-`(k−1)` set.
pub fn solve_reach<G: Game>(g: &G, target: &[bool], bound: Option<usize>) -> Result<GameResult> {
    let n = g.num_states();
    let mut winning = target.to_vec();
    let mut depth: Vec<Option<u32>> = target.iter().map(|&t| if t { Some(0) } else { None }).collect();
    let mut control = vec![None; n];
    let mut iterations = 0;
    loop {
        if bound.is_some_and(|b| iterations >= b) {
            break;
        }
        iterations += 1;
        let w = &winning;
        let found = crate::par::map_range(n, |q| -> Result<Option<u32>> {
            if w[q] {
                return Ok(None);
            }
            let mut buf = Vec::new();
            first_forcing(g, q, w, &mut buf)
        });
        let mut changed = false;
        let mut next = winning.clone();
        for (q, f) in found.into_iter().enumerate() {
            if let Some(u) = f? {
                next[q] = true;
                depth[q] = Some(iterations as u32);
                control[q] = Some(u);
                changed = true;
            }
        }
        winning = next;
        if !changed {
            break;
        }
    }
    Ok(GameResult {
        winning,
        depth,
        control,
        iterations,
    })
}

/// Region boxes and dwell bounds of the reach/dwell/stay objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpecConfig {
    pub omega1: Vec<[f64; 2]>,
    pub omega2: Vec<[f64; 2]>,
    /// Seconds spent in the first region before moving on: `[min, max]`.
    #[serde(default)]
    pub dwell1: Option<[f64; 2]>,
    /// Upper bound on seconds spent in the second region.
    #[serde(default)]
    pub dwell2_max: Option<f64>,
    #[serde(default)]
    pub x0: Option<Vec<f64>>,
}

impl SpecConfig {
    /// Reach `[π/8, π/4]×X₂`, stay 2 to 4 s, reach `[−π/4, −π/8]×X₂`, stay at
    /// most 3 s, return to the first region and remain there.
    pub fn pendulum() -> Self {
        use std::f64::consts::PI;
        SpecConfig {
            omega1: vec![[PI / 8.0, PI / 4.0], [-0.5, 0.5]],
            omega2: vec![[-PI / 4.0, -PI / 8.0], [-0.5, 0.5]],
            dwell1: Some([2.0, 4.0]),
            dwell2_max: Some(3.0),
            x0: Some(vec![0.0, 0.0]),
        }
    }

    pub fn hash(&self) -> Result<String> {
        Ok(hex::encode(Sha256::digest(serde_json::to_vec(self)?)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    M0,
    M1(u32),
    M2,
    M3(u32),
    M4,
    M5,
    Fail,
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Mode::M1(c) => write!(f, "M1({c})"),
            Mode::M3(c) => write!(f, "M3({c})"),
            m => write!(f, "{m:?}"),
        }
    }
}

/// The deterministic monitor. Counters count transitions taken inside the
/// current region; bounds are inclusive.
#[derive(Debug, Clone, PartialEq)]
pub struct SpecMonitor {
    pub omega1: Vec<bool>,
    pub omega2: Vec<bool>,
    pub min1: u32,
    pub max1: Option<u32>,
    pub max3: Option<u32>,
    modes: Vec<Mode>,
}

impl SpecMonitor {
    /// Region masks over an index set plus dwell bounds in steps.
    pub fn new(omega1: Vec<bool>, omega2: Vec<bool>, min1: u32, max1: Option<u32>, max3: Option<u32>) -> Result<Self> {
        if omega1.len() != omega2.len() {
            return Err(Error::DimensionMismatch("region masks differ in length".into()));
        }
        if max1.is_some_and(|m| m < min1) {
            return Err(Error::invalid("dwell upper bound below the lower bound"));
        }
        let mut modes = vec![Mode::M0];
        modes.extend((0..=max1.unwrap_or(min1)).map(Mode::M1));
        modes.push(Mode::M2);
        modes.extend((0..=max3.unwrap_or(0)).map(Mode::M3));
        modes.push(Mode::M4);
        modes.push(Mode::M5);
        Ok(SpecMonitor {
            omega1,
            omega2,
            min1,
            max1,
            max3,
            modes,
        })
    }

    /// Regions as lattice-point membership; dwell seconds become steps with
    /// `⌈min/τ⌉` and `⌊max/τ⌋`.
    pub fn from_config(spec: &SpecConfig, states: &Lattice, tau: f64) -> Result<Self> {
        let r1 = Rect::from_intervals(&spec.omega1)?;
        let r2 = Rect::from_intervals(&spec.omega2)?;
        if r1.dim() != states.dim() || r2.dim() != states.dim() {
            return Err(Error::DimensionMismatch("region boxes and state space differ in dimension".into()));
        }
        let mask = |r: &Rect| (0..states.len()).map(|i| r.contains(&states.point(i))).collect::<Vec<_>>();
        let steps = |s: f64, up: bool| -> Result<u32> {
            if !(s >= 0.0) || !s.is_finite() {
                return Err(Error::invalid(format!("dwell bound {s} must be finite and nonnegative")));
            }
            let k = s / tau;
            Ok(if up { (k - 1e-9).ceil() } else { (k + 1e-9).floor() } as u32)
        };
        let (min1, max1) = match spec.dwell1 {
            Some([a, b]) => (steps(a, true)?, Some(steps(b, false)?)),
            None => (0, None),
        };
        let max3 = spec.dwell2_max.map(|b| steps(b, false)).transpose()?;
        SpecMonitor::new(mask(&r1), mask(&r2), min1, max1, max3)
    }

    pub fn modes(&self) -> &[Mode] {
        &self.modes
    }

    pub fn mode_index(&self, m: Mode) -> Option<usize> {
        self.modes.iter().position(|&x| x == m)
    }

    pub fn step(&self, m: Mode, q: usize) -> Mode {
        let in1 = self.omega1[q];
        let in2 = self.omega2[q];
        match m {
            Mode::M0 => {
                if in1 {
                    Mode::M1(0)
                } else {
                    Mode::M0
                }
            }
            Mode::M1(c) => {
                if c >= self.min1 && in2 {
                    Mode::M3(0)
                } else if in1 {
                    match self.max1 {
                        Some(mx) if c + 1 > mx => Mode::Fail,
                        Some(_) => Mode::M1(c + 1),
                        None => Mode::M1((c + 1).min(self.min1)),
                    }
                } else if c >= self.min1 {
                    Mode::M2
                } else {
                    Mode::Fail
                }
            }
            Mode::M2 => {
                if in2 {
                    Mode::M3(0)
                } else {
                    Mode::M2
                }
            }
            Mode::M3(c) => {
                if in1 {
                    Mode::M5
                } else if in2 {
                    match self.max3 {
                        Some(mx) if c + 1 > mx => Mode::Fail,
                        Some(_) => Mode::M3(c + 1),
                        None => Mode::M3(0),
                    }
                } else {
                    Mode::M4
                }
            }
            Mode::M4 => {
                if in1 {
                    Mode::M5
                } else {
                    Mode::M4
                }
            }
            Mode::M5 => {
                if in1 {
                    Mode::M5
                } else {
                    Mode::Fail
                }
            }
            Mode::Fail => Mode::Fail,
        }
    }

    /// Whether `(q, m)` can occur at all.
    pub fn consistent(&self, m: Mode, q: usize) -> bool {
        let in1 = self.omega1[q];
        let in2 = self.omega2[q];
        match m {
            Mode::M0 | Mode::M4 => !in1,
            Mode::M1(_) | Mode::M5 => in1,
            Mode::M2 => !in2,
            Mode::M3(_) => in2,
            Mode::Fail => false,
        }
    }

    /// Monitor run over a state sequence starting from `M0`.
    pub fn run(&self, states: &[usize]) -> Mode {
        states.iter().fold(Mode::M0, |m, &q| self.step(m, q))
    }
}

/// Product of a game with the monitor; moves that reach `Fail` are losing.
pub struct Product<'a, G: Game> {
    pub game: &'a G,
    pub monitor: &'a SpecMonitor,
}

impl<G: Game> Product<'_, G> {
    pub fn index(&self, q: usize, m: Mode) -> Option<usize> {
        self.monitor.mode_index(m).map(|k| q * self.monitor.modes.len() + k)
    }

    pub fn split(&self, p: usize) -> (usize, Mode) {
        let k = self.monitor.modes.len();
        (p / k, self.monitor.modes[p % k])
    }

    fn mask(&self, f: impl Fn(usize, Mode) -> bool) -> Vec<bool> {
        (0..self.num_states())
            .map(|p| {
                let (q, m) = self.split(p);
                self.monitor.consistent(m, q) && f(q, m)
            })
            .collect()
    }
}

impl<G: Game> Game for Product<'_, G> {
    fn num_states(&self) -> usize {
        self.game.num_states() * self.monitor.modes.len()
    }
    fn num_controls(&self) -> usize {
        self.game.num_controls()
    }
    fn num_disturbances(&self) -> usize {
        self.game.num_disturbances()
    }
    fn post(&self, p: usize, u: usize, d: usize, out: &mut Vec<usize>) -> Result<()> {
        let (q, m) = self.split(p);
        if !self.monitor.consistent(m, q) {
            out.clear();
            return Ok(());
        }
        self.game.post(q, u, d, out)?;
        for s in out.iter_mut() {
            match self.index(*s, self.monitor.step(m, *s)) {
                Some(i) => *s = i,
                None => {
                    out.clear();
                    return Ok(());
                }
            }
        }
        Ok(())
    }
}

/// Memoryless controller over product states.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Controller {
    pub header: ControllerHeader,
    table: Vec<Option<u32>>,
    depth: Vec<Option<u32>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ControllerHeader {
    pub params: Option<String>,
    pub spec_sha256: String,
    pub states: usize,
    pub controls: usize,
    pub modes: Vec<Mode>,
    pub initial: usize,
    pub initial_mode: Mode,
}

impl Controller {
    pub fn modes(&self) -> &[Mode] {
        &self.header.modes
    }

    fn slot(&self, q: usize, m: Mode) -> Option<usize> {
        let k = self.header.modes.iter().position(|&x| x == m)?;
        (q < self.header.states).then(|| q * self.header.modes.len() + k)
    }

    pub fn control(&self, q: usize, m: Mode) -> Option<usize> {
        self.slot(q, m).and_then(|i| self.table[i]).map(|u| u as usize)
    }

    /// Remaining steps to the stay phase; `Some(0)` inside it.
    pub fn rank(&self, q: usize, m: Mode) -> Option<u32> {
        self.slot(q, m).and_then(|i| self.depth[i])
    }

    pub fn is_winning(&self, q: usize, m: Mode) -> bool {
        self.control(q, m).is_some()
    }

    pub fn size(&self) -> usize {
        self.table.iter().filter(|c| c.is_some()).count()
    }

    /// Header JSON, then control indices bit-packed at the smallest width that
    /// holds `controls + 1` values (0 = undefined), then ranks as LEB128,
    /// then a SHA-256 of the preceding bytes.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = Vec::new();
        buf.extend_from_slice(CTRL_MAGIC);
        let header = serde_json::to_vec(&self.header)?;
        buf.extend_from_slice(&(header.len() as u32).to_le_bytes());
        buf.extend_from_slice(&header);
        let width = bit_width(self.header.controls as u64 + 1);
        let mut acc = 0u64;
        let mut filled = 0;
        for c in &self.table {
            let v = c.map_or(0, |u| u as u64 + 1);
            acc |= v << filled;
            filled += width;
            while filled >= 8 {
                buf.push(acc as u8);
                acc >>= 8;
                filled -= 8;
            }
        }
        if filled > 0 {
            buf.push(acc as u8);
        }
        for d in &self.depth {
            let mut v = d.map_or(0, |x| x as u64 + 1);
            loop {
                let b = (v & 0x7f) as u8;
                v >>= 7;
                if v == 0 {
                    buf.push(b);
                    break;
                }
                buf.push(b | 0x80);
            }
        }
        let digest = Sha256::digest(&buf);
        buf.extend_from_slice(&digest);
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut buf = Vec::new();
        r.read_to_end(&mut buf)?;
        if buf.len() < CTRL_MAGIC.len() + 4 + 32 {
            return Err(Error::Format("controller file too short".into()));
        }
        let (body, digest) = buf.split_at(buf.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Format("controller checksum mismatch".into()));
        }
        if &body[..CTRL_MAGIC.len()] != CTRL_MAGIC {
            return Err(Error::Format("not a controller file".into()));
        }
        let mut pos = CTRL_MAGIC.len();
        let hlen = u32::from_le_bytes(body[pos..pos + 4].try_into().expect("4 bytes")) as usize;
        pos += 4;
        let header: ControllerHeader = serde_json::from_slice(
            body.get(pos..pos + hlen)
                .ok_or_else(|| Error::Format("truncated controller header".into()))?,
        )?;
        pos += hlen;
        let n = header.states * header.modes.len();
        let width = bit_width(header.controls as u64 + 1);
        let packed = (n * width as usize).div_ceil(8);
        let bits = body
            .get(pos..pos + packed)
            .ok_or_else(|| Error::Format("truncated controller table".into()))?;
        pos += packed;
        let mut table = Vec::with_capacity(n);
        for i in 0..n {
            let mut v = 0u64;
            for b in 0..width as usize {
                let bit = i * width as usize + b;
                v |= ((bits[bit / 8] >> (bit % 8) & 1) as u64) << b;
            }
            if v > header.controls as u64 {
                return Err(Error::Format("control index out of range".into()));
            }
            table.push(v.checked_sub(1).map(|u| u as u32));
        }
        let mut depth = Vec::with_capacity(n);
        for _ in 0..n {
            let mut v = 0u64;
            let mut shift = 0;
            loop {
                let b = *body
                    .get(pos)
                    .ok_or_else(|| Error::Format("truncated rank table".into()))?;
                pos += 1;
                if shift > 35 {
                    return Err(Error::Format("rank overflow".into()));
                }
                v |= ((b & 0x7f) as u64) << shift;
                if b & 0x80 == 0 {
                    break;
                }
                shift += 7;
            }
            depth.push(v.checked_sub(1).map(|x| x as u32));
        }
        if pos != body.len() {
            return Err(Error::Format("trailing bytes in controller file".into()));
        }
        Ok(Controller { header, table, depth })
    }

    pub fn digest(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_binary(&mut buf)?;
        Ok(hex::encode(Sha256::digest(&buf)))
    }
}

const CTRL_MAGIC: &[u8] = b"SYMABSCT";

fn bit_width(values: u64) -> u32 {
    (64 - (values.saturating_sub(1)).leading_zeros()).max(1)
}

/// Per-mode winning counts, reported with every synthesis run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthesisReport {
    pub product_states: usize,
    pub winning: Vec<(String, usize)>,
    pub safety_iterations: usize,
    pub reach_iterations: usize,
    pub initial_state: usize,
    pub initial_mode: String,
    pub initial_rank: Option<u32>,
    pub controller_entries: usize,
}

/// Stay phase by safety, everything before it by one attractor on the
/// product. Fails with the first mode, scanning backwards from the stay
/// phase, that has no winning state.
pub fn synthesize_game<G: Game>(
    game: &G,
    monitor: &SpecMonitor,
    q0: usize,
    params: Option<String>,
    spec_sha256: String,
) -> Result<(Controller, SynthesisReport)> {
    let product = Product { game, monitor };
    let stay = product.mask(|_, m| m == Mode::M5);
    let safe = solve_safety(&product, &stay)?;
    let reach = solve_reach(&product, &safe.winning, None)?;
    let mut table = vec![None; product.num_states()];
    let mut depth = vec![None; product.num_states()];
    for p in 0..product.num_states() {
        if safe.winning[p] {
            table[p] = safe.control[p];
            depth[p] = Some(0);
        } else if reach.winning[p] {
            table[p] = reach.control[p];
            depth[p] = reach.depth[p];
        }
    }
    let order = ["M5", "M4", "M3", "M2", "M1", "M0"];
    let mut winning = Vec::new();
    for name in order {
        let count = (0..product.num_states())
            .filter(|&p| reach.winning[p] && mode_family(product.split(p).1) == name)
            .count();
        winning.push((name.to_string(), count));
    }
    let m0 = monitor.step(Mode::M0, q0);
    let p0 = product
        .index(q0, m0)
        .ok_or_else(|| Error::SynthesisFailure {
            mode: m0.to_string(),
            detail: "the initial state already violates the specification".into(),
        })?;
    let report = SynthesisReport {
        product_states: product.num_states(),
        winning: winning.clone(),
        safety_iterations: safe.iterations,
        reach_iterations: reach.iterations,
        initial_state: q0,
        initial_mode: m0.to_string(),
        initial_rank: depth[p0],
        controller_entries: table.iter().filter(|c| c.is_some()).count(),
    };
    if !reach.winning[p0] {
        let (mode, detail) = match winning.iter().find(|(_, c)| *c == 0) {
            Some((name, _)) => (name.clone(), format!("no product state in mode {name} is winning")),
            None => (
                m0.to_string(),
                format!("every mode has winning states, but not the initial state {q0} in {m0}"),
            ),
        };
        return Err(Error::SynthesisFailure { mode, detail });
    }
    let ctrl = Controller {
        header: ControllerHeader {
            params,
            spec_sha256,
            states: game.num_states(),
            controls: game.num_controls(),
            modes: monitor.modes.clone(),
            initial: q0,
            initial_mode: m0,
        },
        table,
        depth,
    };
    Ok((ctrl, report))
}

fn mode_family(m: Mode) -> &'static str {
    match m {
        Mode::M0 => "M0",
        Mode::M1(_) => "M1",
        Mode::M2 => "M2",
        Mode::M3(_) => "M3",
        Mode::M4 => "M4",
        Mode::M5 => "M5",
        Mode::Fail => "Fail",
    }
}

pub fn synthesize(model: &SymbolicModel, spec: &SpecConfig) -> Result<(Controller, SpecMonitor, SynthesisReport)> {
    let monitor = SpecMonitor::from_config(spec, &model.states, model.params.tau)?;
    let x0 = spec.x0.clone().unwrap_or_else(|| vec![0.0; model.states.dim()]);
    let q0 = model.states.nearest(&x0)?;
    let params = serde_json::to_string(&model.params)?;
    let (c, r) = synthesize_game(model, &monitor, q0, Some(params), spec.hash()?)?;
    Ok((c, monitor, r))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosureReport {
    pub checked_states: usize,
    pub checked_moves: usize,
    pub violations: usize,
    pub first_violation: Option<String>,
}

/// Every controlled move from every winning product state lands in a winning
/// state of strictly smaller rank (or stays in the stay phase).
pub fn check_closure<G: Game>(game: &G, monitor: &SpecMonitor, ctrl: &Controller) -> Result<ClosureReport> {
    let product = Product { game, monitor };
    let rows = crate::par::map_range(product.num_states(), |p| -> Result<(usize, usize, Option<String>)> {
        let (q, m) = product.split(p);
        let Some(u) = ctrl.control(q, m) else {
            return Ok((0, 0, None));
        };
        let rank = ctrl.rank(q, m).expect("ranked");
        let mut buf = Vec::new();
        let mut moves = 0;
        for d in 0..game.num_disturbances() {
            game.post(q, u, d, &mut buf)?;
            if buf.is_empty() {
                return Ok((1, moves, Some(format!("({q}, {m}) control {u} disturbance {d}: leaves the domain"))));
            }
            for &s in &buf {
                moves += 1;
                let m2 = monitor.step(m, s);
                let ok = match ctrl.rank(s, m2) {
                    Some(r2) if ctrl.is_winning(s, m2) => {
                        if rank == 0 {
                            r2 == 0
                        } else {
                            r2 < rank
                        }
                    }
                    _ => false,
                };
                if !ok {
                    return Ok((1, moves, Some(format!("({q}, {m}) control {u} disturbance {d} -> ({s}, {m2})"))));
                }
            }
        }
        Ok((1, moves, None))
    });
    let mut rep = ClosureReport {
        checked_states: 0,
        checked_moves: 0,
        violations: 0,
        first_violation: None,
    };
    for r in rows {
        let (s, mv, v) = r?;
        rep.checked_states += s;
        rep.checked_moves += mv;
        if let Some(v) = v {
            rep.violations += 1;
            rep.first_violation.get_or_insert(v);
        }
    }
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorizonReport {
    pub horizon: usize,
    /// Distinct product states reached at each depth.
    pub frontier: Vec<usize>,
    /// Number of (disturbance, successor) sequences covered, as a float.
    pub sequences: f64,
    pub violations: usize,
    pub first_violation: Option<String>,
    pub reached_stay: bool,
}

/// All closed-loop runs of length `horizon` from the initial product state,
/// over every disturbance symbol and successor choice. Runs are grouped by
/// product state, which the memoryless controller makes exact.
pub fn check_horizon<G: Game>(game: &G, monitor: &SpecMonitor, ctrl: &Controller, horizon: usize) -> Result<HorizonReport> {
    use std::collections::BTreeMap;
    let mut layer: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let m0 = ctrl.header.initial_mode;
    let k0 = monitor.mode_index(m0).ok_or_else(|| Error::invalid("initial mode not in the monitor"))?;
    layer.insert((ctrl.header.initial, k0), 1.0);
    let mut rep = HorizonReport {
        horizon,
        frontier: vec![1],
        sequences: 0.0,
        violations: 0,
        first_violation: None,
        reached_stay: m0 == Mode::M5,
    };
    let mut buf = Vec::new();
    for step in 0..horizon {
        let mut next: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (&(q, k), &paths) in &layer {
            let m = monitor.modes[k];
            let Some(u) = ctrl.control(q, m) else {
                rep.violations += 1;
                rep.first_violation
                    .get_or_insert(format!("step {step}: no control at ({q}, {m})"));
                continue;
            };
            for d in 0..game.num_disturbances() {
                game.post(q, u, d, &mut buf)?;
                if buf.is_empty() {
                    rep.violations += 1;
                    rep.first_violation
                        .get_or_insert(format!("step {step}: ({q}, {m}) leaves the domain under disturbance {d}"));
                }
                for &s in &buf {
                    let m2 = monitor.step(m, s);
                    if m2 == Mode::Fail || !ctrl.is_winning(s, m2) {
                        rep.violations += 1;
                        rep.first_violation
                            .get_or_insert(format!("step {step}: ({q}, {m}) -> ({s}, {m2})"));
                        continue;
                    }
                    rep.reached_stay |= m2 == Mode::M5;
                    let k2 = monitor.mode_index(m2).expect("live mode");
                    *next.entry((s, k2)).or_insert(0.0) += paths;
                }
            }
        }
        rep.frontier.push(next.len());
        layer = next;
    }
    rep.sequences = layer.values().sum();
    Ok(rep)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub step: usize,
    pub mode: String,
    pub symbol: usize,
    pub symbolic: Vec<f64>,
    pub concrete: Vec<f64>,
    pub control: Vec<f64>,
    pub disturbance: Vec<f64>,
    pub disturbance_symbol: Option<usize>,
    pub distance: f64,
    pub lyapunov: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClosedLoopTrace {
    pub rows: Vec<TraceRow>,
    pub final_mode: String,
    /// The symbolic run ended in the stay phase without failing.
    pub satisfied: bool,
    pub max_distance: f64,
    pub max_lyapunov: f64,
}

impl ClosedLoopTrace {
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let n = self.rows.first().map_or(0, |r| r.concrete.len());
        let m = self.rows.first().map_or(0, |r| r.control.len());
        let l = self.rows.first().map_or(0, |r| r.disturbance.len());
        let mut head = vec!["step".to_string(), "mode".into(), "symbol".into()];
        head.extend((1..=n).map(|i| format!("y{i}")));
        head.extend((1..=n).map(|i| format!("x{i}")));
        head.extend((1..=m).map(|i| format!("u{i}")));
        head.extend((1..=l).map(|i| format!("d{i}")));
        head.push("distance".into());
        writeln!(w, "{}", head.join(","))?;
        for r in &self.rows {
            let mut cells = vec![r.step.to_string(), r.mode.clone(), r.symbol.to_string()];
            for v in r.symbolic.iter().chain(&r.concrete).chain(&r.control).chain(&r.disturbance) {
                cells.push(format!("{v:.17e}"));
            }
            cells.push(format!("{:.17e}", r.distance));
            writeln!(w, "{}", cells.join(","))?;
        }
        Ok(())
    }
}

/// Runs the controller against the concrete system. The symbolic state is
/// advanced along the abstract successor of the disturbance witness that is
/// closest to the concrete endpoint in `V`, so both traces stay related.
pub fn simulate_closed_loop(
    model: &SymbolicModel,
    monitor: &SpecMonitor,
    ctrl: &Controller,
    cert: &Certificate,
    d: &dyn Disturbance,
    x0: &[f64],
    steps: usize,
) -> Result<ClosedLoopTrace> {
    let tau = model.params.tau;
    let approx = model.params.approx(&model.sys)?;
    let dlat = model.disturbances.lattice.clone();
    let mut x = x0.to_vec();
    let mut q = model.states.nearest(x0)?;
    let mut m = monitor.step(Mode::M0, q);
    let mut rows = Vec::with_capacity(steps + 1);
    let mut buf = Vec::new();
    for k in 0..=steps {
        let y = model.states.point(q);
        let shifted = Shifted {
            inner: d,
            offset: k as f64 * tau,
        };
        let mut row = TraceRow {
            step: k,
            mode: m.to_string(),
            symbol: q,
            distance: inf_dist(&x, &y),
            lyapunov: cert.v(&x, &y),
            symbolic: y,
            concrete: x.clone(),
            control: Vec::new(),
            disturbance: shifted.value(0.0),
            disturbance_symbol: None,
        };
        if k == steps || m == Mode::Fail {
            rows.push(row);
            break;
        }
        let u = ctrl.control(q, m).ok_or_else(|| Error::Refinement {
            step: k,
            state: q,
            mode: m.to_string(),
        })?;
        let up = model.controls.point(u);
        let z = witness_on(&shifted, &approx, &dlat)?;
        let zi = model
            .disturbances
            .index_of(&z.keys)
            .ok_or_else(|| Error::DegenerateClass(format!("step {k}: witness is not a disturbance symbol")))?;
        let xn = integrate(&model.sys, &x, &up, &shifted, &model.flow)?;
        model.post_into(q, u, zi, &mut buf)?;
        let next = buf
            .iter()
            .copied()
            .min_by(|&a, &b| {
                let va = cert.v(&xn, &model.states.point(a));
                let vb = cert.v(&xn, &model.states.point(b));
                va.total_cmp(&vb).then(a.cmp(&b))
            })
            .ok_or_else(|| Error::Refinement {
                step: k,
                state: q,
                mode: m.to_string(),
            })?;
        row.control = up;
        row.disturbance_symbol = Some(zi);
        rows.push(row);
        x = xn;
        q = next;
        m = monitor.step(m, q);
    }
    let satisfied = m == Mode::M5;
    let max_distance = rows.iter().map(|r| r.distance).fold(0.0, f64::max);
    let max_lyapunov = rows.iter().map(|r| r.lyapunov).fold(0.0, f64::max);
    Ok(ClosedLoopTrace {
        rows,
        final_mode: m.to_string(),
        satisfied,
        max_distance,
        max_lyapunov,
    })
}

/// Reads the parameter vector embedded in a controller header.
pub fn controller_params(ctrl: &Controller) -> Result<Option<ParameterVector>> {
    ctrl.header
        .params
        .as_deref()
        .map(|s| serde_json::from_str(s).map_err(Error::from))
        .transpose()
}
