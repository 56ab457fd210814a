//! Alternating ε-approximate bisimulation between finite metric transition
//! systems: a checker for a given relation, the largest relation by
//! greatest fixed point, and the singleton-disturbance special case.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::inf_dist;

/// Finite alternating transition system with vector outputs compared in the
/// sup norm.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteTS {
    pub states: usize,
    pub controls: usize,
    pub disturbances: usize,
    /// One output vector per state.
    pub outputs: Vec<Vec<f64>>,
    /// `[q, a, b, q']` quadruples.
    pub transitions: Vec<[usize; 4]>,
    #[serde(skip)]
    post: Vec<Vec<usize>>,
}

impl FiniteTS {
    pub fn new(
        states: usize,
        controls: usize,
        disturbances: usize,
        outputs: Vec<Vec<f64>>,
        transitions: Vec<[usize; 4]>,
    ) -> Result<Self> {
        let mut ts = FiniteTS {
            states,
            controls,
            disturbances,
            outputs,
            transitions,
            post: Vec::new(),
        };
        ts.index()?;
        Ok(ts)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut ts: FiniteTS = serde_json::from_str(text)?;
        ts.index()?;
        Ok(ts)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn index(&mut self) -> Result<()> {
        if self.outputs.len() != self.states {
            return Err(Error::invalid(format!(
                "{} outputs for {} states",
                self.outputs.len(),
                self.states
            )));
        }
        let k = self.outputs.first().map_or(0, |o| o.len());
        if self.outputs.iter().any(|o| o.len() != k) {
            return Err(Error::DimensionMismatch("outputs have different lengths".into()));
        }
        if self.outputs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::invalid("non-finite output"));
        }
        let mut post = vec![Vec::new(); self.states * self.controls * self.disturbances];
        for &[q, a, b, r] in &self.transitions {
            if q >= self.states || r >= self.states || a >= self.controls || b >= self.disturbances {
                return Err(Error::invalid(format!("transition [{q}, {a}, {b}, {r}] out of range")));
            }
            post[(q * self.controls + a) * self.disturbances + b].push(r);
        }
        for p in &mut post {
            p.sort_unstable();
            p.dedup();
        }
        self.post = post;
        Ok(())
    }

    pub fn post(&self, q: usize, a: usize, b: usize) -> &[usize] {
        &self.post[(q * self.controls + a) * self.disturbances + b]
    }
}

/// Pairs `(q1, q2)` as a dense bit matrix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relation {
    n1: usize,
    n2: usize,
    bits: Vec<bool>,
}

impl Relation {
    pub fn empty(n1: usize, n2: usize) -> Self {
        Relation {
            n1,
            n2,
            bits: vec![false; n1 * n2],
        }
    }

    pub fn from_pairs(n1: usize, n2: usize, pairs: &[(usize, usize)]) -> Result<Self> {
        let mut r = Relation::empty(n1, n2);
        for &(a, b) in pairs {
            if a >= n1 || b >= n2 {
                return Err(Error::invalid(format!("pair ({a}, {b}) out of range")));
            }
            r.insert(a, b);
        }
        Ok(r)
    }

    pub fn identity(n: usize) -> Self {
        let mut r = Relation::empty(n, n);
        for i in 0..n {
            r.insert(i, i);
        }
        r
    }

    pub fn contains(&self, a: usize, b: usize) -> bool {
        self.bits[a * self.n2 + b]
    }

    pub fn insert(&mut self, a: usize, b: usize) {
        self.bits[a * self.n2 + b] = true;
    }

    pub fn remove(&mut self, a: usize, b: usize) {
        self.bits[a * self.n2 + b] = false;
    }

    pub fn len(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn pairs(&self) -> Vec<(usize, usize)> {
        (0..self.n1)
            .flat_map(|a| (0..self.n2).map(move |b| (a, b)))
            .filter(|&(a, b)| self.contains(a, b))
            .collect()
    }

    pub fn is_subset_of(&self, other: &Relation) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| !a || *b)
    }

    /// `R(Q1) = Q2` and `R⁻¹(Q2) = Q1`.
    pub fn is_total(&self) -> bool {
        (0..self.n1).all(|a| (0..self.n2).any(|b| self.contains(a, b)))
            && (0..self.n2).all(|b| (0..self.n1).any(|a| self.contains(a, b)))
    }
}

/// Which clause of the definition failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "condition")]
pub enum Counterexample {
    /// Outputs farther apart than `ε`.
    #[serde(rename = "output")]
    Output { q1: usize, q2: usize, distance: f64 },
    /// `∀a1 ∃a2 ∀b2 ∃b1` failed: `a1` has no answer; `refutations[a2]` is the
    /// `b2` that defeats each candidate `a2`.
    #[serde(rename = "forward")]
    Forward {
        q1: usize,
        q2: usize,
        a1: usize,
        refutations: Vec<(usize, usize)>,
    },
    /// Mirror image: `a2` has no answer `a1`; each candidate `a1` is defeated
    /// by the listed `b1`.
    #[serde(rename = "backward")]
    Backward {
        q1: usize,
        q2: usize,
        a2: usize,
        refutations: Vec<(usize, usize)>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BisimVerdict {
    pub holds: bool,
    pub counterexample: Option<Counterexample>,
}

fn related_successor(t1: &FiniteTS, t2: &FiniteTS, r: &Relation, q1: usize, a1: usize, b1: usize, q2: usize, a2: usize, b2: usize) -> bool {
    let p2 = t2.post(q2, a2, b2);
    t1.post(q1, a1, b1)
        .iter()
        .any(|&s1| p2.iter().any(|&s2| r.contains(s1, s2)))
}

/// Finds `a1` with no matching `a2`, returning the per-`a2` refutations.
fn forward_failure(t1: &FiniteTS, t2: &FiniteTS, r: &Relation, q1: usize, q2: usize) -> Option<(usize, Vec<(usize, usize)>)> {
    'a1: for a1 in 0..t1.controls {
        let mut refutations = Vec::with_capacity(t2.controls);
        'a2: for a2 in 0..t2.controls {
            for b2 in 0..t2.disturbances {
                let answered = (0..t1.disturbances)
                    .any(|b1| related_successor(t1, t2, r, q1, a1, b1, q2, a2, b2));
                if !answered {
                    refutations.push((a2, b2));
                    continue 'a2;
                }
            }
            continue 'a1;
        }
        return Some((a1, refutations));
    }
    None
}

fn backward_failure(t1: &FiniteTS, t2: &FiniteTS, r: &Relation, q1: usize, q2: usize) -> Option<(usize, Vec<(usize, usize)>)> {
    'a2: for a2 in 0..t2.controls {
        let mut refutations = Vec::with_capacity(t1.controls);
        'a1: for a1 in 0..t1.controls {
            for b1 in 0..t1.disturbances {
                let answered = (0..t2.disturbances)
                    .any(|b2| related_successor(t1, t2, r, q1, a1, b1, q2, a2, b2));
                if !answered {
                    refutations.push((a1, b1));
                    continue 'a1;
                }
            }
            continue 'a2;
        }
        return Some((a2, refutations));
    }
    None
}

fn output_distance(t1: &FiniteTS, t2: &FiniteTS, q1: usize, q2: usize) -> f64 {
    inf_dist(&t1.outputs[q1], &t2.outputs[q2])
}

fn check_pair(t1: &FiniteTS, t2: &FiniteTS, r: &Relation, eps: f64, q1: usize, q2: usize) -> Option<Counterexample> {
    let distance = output_distance(t1, t2, q1, q2);
    if distance > eps {
        return Some(Counterexample::Output { q1, q2, distance });
    }
    if let Some((a1, refutations)) = forward_failure(t1, t2, r, q1, q2) {
        return Some(Counterexample::Forward { q1, q2, a1, refutations });
    }
    if let Some((a2, refutations)) = backward_failure(t1, t2, r, q1, q2) {
        return Some(Counterexample::Backward { q1, q2, a2, refutations });
    }
    None
}

fn same_outputs(t1: &FiniteTS, t2: &FiniteTS) -> Result<()> {
    let k1 = t1.outputs.first().map(|o| o.len());
    let k2 = t2.outputs.first().map(|o| o.len());
    if let (Some(a), Some(b)) = (k1, k2) {
        if a != b {
            return Err(Error::DimensionMismatch(format!("output dimensions {a} and {b}")));
        }
    }
    Ok(())
}

/// Checks every pair of `r` against the three clauses; the counterexample is
/// the first failing pair in lexicographic order.
pub fn is_aea_bisim(t1: &FiniteTS, t2: &FiniteTS, r: &Relation, eps: f64) -> Result<BisimVerdict> {
    same_outputs(t1, t2)?;
    if r.n1 != t1.states || r.n2 != t2.states {
        return Err(Error::DimensionMismatch("relation size differs from the state counts".into()));
    }
    for (q1, q2) in r.pairs() {
        if let Some(c) = check_pair(t1, t2, r, eps, q1, q2) {
            return Ok(BisimVerdict {
                holds: false,
                counterexample: Some(c),
            });
        }
    }
    Ok(BisimVerdict {
        holds: true,
        counterexample: None,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct LargestRelation {
    pub relation: Relation,
    /// The relation covers both state sets.
    pub bisimilar: bool,
    pub sweeps: usize,
}

/// Greatest fixed point: all `ε`-close pairs, then repeated deletion sweeps
/// until nothing changes. Each sweep tests every pair against the previous
/// relation, so the result is independent of evaluation order.
pub fn largest_aea_bisim(t1: &FiniteTS, t2: &FiniteTS, eps: f64) -> Result<LargestRelation> {
    same_outputs(t1, t2)?;
    let mut r = Relation::empty(t1.states, t2.states);
    for q1 in 0..t1.states {
        for q2 in 0..t2.states {
            if output_distance(t1, t2, q1, q2) <= eps {
                r.insert(q1, q2);
            }
        }
    }
    let mut sweeps = 0;
    loop {
        sweeps += 1;
        let pairs = r.pairs();
        let failing = crate::par::map_slice(&pairs, |&(q1, q2)| {
            forward_failure(t1, t2, &r, q1, q2).is_some() || backward_failure(t1, t2, &r, q1, q2).is_some()
        });
        let mut changed = false;
        for (&(q1, q2), fail) in pairs.iter().zip(failing) {
            if fail {
                r.remove(q1, q2);
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    let bisimilar = r.is_total();
    Ok(LargestRelation {
        relation: r,
        bisimilar,
        sweeps,
    })
}

/// Plain approximate bisimilarity for systems with one disturbance label.
pub fn reduce_to_approx_bisim(t1: &FiniteTS, t2: &FiniteTS, eps: f64) -> Result<bool> {
    if t1.disturbances != 1 || t2.disturbances != 1 {
        return Err(Error::invalid(format!(
            "disturbance label sets must be singletons, got {} and {}",
            t1.disturbances, t2.disturbances
        )));
    }
    same_outputs(t1, t2)?;
    let mut rel: Vec<Vec<bool>> = (0..t1.states)
        .map(|a| (0..t2.states).map(|b| output_distance(t1, t2, a, b) <= eps).collect())
        .collect();
    let matched = |rel: &Vec<Vec<bool>>, q1: usize, a1: usize, q2: usize, a2: usize| {
        t1.post(q1, a1, 0)
            .iter()
            .any(|&s| t2.post(q2, a2, 0).iter().any(|&t| rel[s][t]))
    };
    loop {
        let mut next = rel.clone();
        for q1 in 0..t1.states {
            for q2 in 0..t2.states {
                if !rel[q1][q2] {
                    continue;
                }
                let fwd = (0..t1.controls).all(|a1| (0..t2.controls).any(|a2| matched(&rel, q1, a1, q2, a2)));
                let bwd = (0..t2.controls).all(|a2| (0..t1.controls).any(|a1| matched(&rel, q1, a1, q2, a2)));
                next[q1][q2] = fwd && bwd;
            }
        }
        if next == rel {
            break;
        }
        rel = next;
    }
    let left = rel.iter().all(|row| row.iter().any(|&b| b));
    let right = (0..t2.states).all(|b| rel.iter().any(|row| row[b]));
    Ok(left && right)
}

/// Input of the `bisim-check` command.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BisimInstance {
    pub t1: FiniteTS,
    pub t2: FiniteTS,
    pub epsilon: f64,
    #[serde(default)]
    pub relation: Option<Vec<(usize, usize)>>,
}

impl BisimInstance {
    pub fn from_json(text: &str) -> Result<Self> {
        let mut inst: BisimInstance = serde_json::from_str(text)?;
        inst.t1.index()?;
        inst.t2.index()?;
        if !(inst.epsilon >= 0.0) {
            return Err(Error::invalid(format!("epsilon must be nonnegative, got {}", inst.epsilon)));
        }
        Ok(inst)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BisimReport {
    pub epsilon: f64,
    pub given_relation: Option<BisimVerdict>,
    pub largest_relation: Vec<(usize, usize)>,
    pub bisimilar: bool,
    pub sweeps: usize,
    pub singleton_check: Option<bool>,
    pub summary: BTreeMap<String, usize>,
}

pub fn run_instance(inst: &BisimInstance) -> Result<BisimReport> {
    let given_relation = match &inst.relation {
        Some(p) => {
            let r = Relation::from_pairs(inst.t1.states, inst.t2.states, p)?;
            Some(is_aea_bisim(&inst.t1, &inst.t2, &r, inst.epsilon)?)
        }
        None => None,
    };
    let big = largest_aea_bisim(&inst.t1, &inst.t2, inst.epsilon)?;
    let singleton_check = if inst.t1.disturbances == 1 && inst.t2.disturbances == 1 {
        Some(reduce_to_approx_bisim(&inst.t1, &inst.t2, inst.epsilon)?)
    } else {
        None
    };
    let mut summary = BTreeMap::new();
    summary.insert("states_1".into(), inst.t1.states);
    summary.insert("states_2".into(), inst.t2.states);
    summary.insert("pairs".into(), big.relation.len());
    Ok(BisimReport {
        epsilon: inst.epsilon,
        given_relation,
        largest_relation: big.relation.pairs(),
        bisimilar: big.bisimilar,
        sweeps: big.sweeps,
        singleton_check,
        summary,
    })
}

/// Random system for property tests: every `(q, a, b)` gets one to three
/// successors with probability `density`, outputs on a coarse grid.
pub fn random_ts<R: rand::Rng>(rng: &mut R, states: usize, controls: usize, disturbances: usize, density: f64) -> FiniteTS {
    let outputs = (0..states).map(|_| vec![rng.gen_range(0..5) as f64 * 0.1]).collect();
    let mut transitions = Vec::new();
    for q in 0..states {
        for a in 0..controls {
            for b in 0..disturbances {
                if rng.gen_bool(density) {
                    for _ in 0..rng.gen_range(1..=3) {
                        transitions.push([q, a, b, rng.gen_range(0..states)]);
                    }
                }
            }
        }
    }
    FiniteTS::new(states, controls, disturbances, outputs, transitions).expect("valid random system")
}
