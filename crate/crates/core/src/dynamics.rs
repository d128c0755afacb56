//! Event-driven simulation of the push-block dynamics.
//!
//! Each particle (n,k) of an interlacing array carries an exponential clock
//! of rate lambda(position). When the clock of X^n_k rings the particle
//! jumps right by one, unless the same-index particle one level below sits
//! at the same site (the jump is blocked); a landing that would break
//! interlacing with the level above instead pushes the index-(k+1) particle
//! there, and the push cascades upward one particle per level. The left
//! edge (first particle of every level) and the right edge (last particle
//! of every level) are autonomous: a zero-range chain and a pushing chain,
//! simulated standalone here without materializing the array.
//!
//! The two-level variant evolves an N-row y freely (each coordinate an
//! independent birth chain) and an (N+1)-row x blocked and pushed by y,
//! killing the pair when two y-particles collide; its h-transformed version
//! replaces the y-rates by lambda(y_i) h(y+e_i)/h(y), which never dies.
//!
//! Two exact event engines are provided: total-rate categorical selection
//! and per-particle competing clocks. They sample the same law
//! (memorylessness); a two-sample test pins that equivalence. Trajectories
//! run in parallel with per-trajectory RNG substreams derived from
//! (seed, trajectory index), so results are reproducible independently of
//! the thread count.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::Exp1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::interlacing::{GibbsMeasure, GtPattern};
use crate::rate_field::RateField;
use crate::semigroups::TwoLevelState;
use crate::spectral;

/// Exact CTMC stepping strategy; both engines sample the same law.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimEngine {
    /// One exponential at the total rate, then categorical selection.
    #[default]
    TotalRate,
    /// Independent exponential per active particle; the minimum fires.
    PerParticleClocks,
}

/// Start of an array trajectory.
#[derive(Debug, Clone)]
pub enum ArrayInitial {
    /// Level k occupies sites 0..k-1.
    DenselyPacked,
    /// Draw the starting pattern from an evolved Gibbs measure.
    Gibbs(GibbsMeasure),
}

/// Outcome of one two-level trajectory. Killed outcomes keep the state at
/// the killing instant (with the colliding y-pair) and its time.
#[derive(Debug, Clone, PartialEq)]
pub enum TwoLevelOutcome {
    Alive { y: Vec<usize>, x: Vec<usize> },
    Killed { time: f64, y: Vec<usize>, x: Vec<usize> },
}

#[derive(Debug, Clone)]
pub struct ArrayResult {
    pub patterns: Vec<GtPattern>,
    pub events: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct EdgeResult {
    pub configs: Vec<Vec<usize>>,
    pub events: Vec<u64>,
}

#[derive(Debug, Clone)]
pub struct TwoLevelResult {
    pub outcomes: Vec<TwoLevelOutcome>,
    pub events: Vec<u64>,
}

impl TwoLevelResult {
    pub fn survivors(&self) -> usize {
        self.outcomes
            .iter()
            .filter(|o| matches!(o, TwoLevelOutcome::Alive { .. }))
            .count()
    }
}

/// Edge projections of the array.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EdgeKind {
    /// First particle of every level: inhomogeneous zero-range dynamics
    /// (a jump of p_n requires p_n < p_{n-1}).
    Left,
    /// Last particle of every level: inhomogeneous pushing dynamics
    /// (never blocked; landing on the next particle pushes it).
    Right,
}

/// Variant of the two-level dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TwoLevelMode {
    /// y-rows evolve as independent chains; the pair dies at a y-collision.
    #[default]
    Killed,
    /// h-transformed y-rates lambda(y_i) h(y+e_i)/h(y); immortal.
    Conditioned,
}

/// A system of competing exponential clocks. Rates may depend on the whole
/// state; `visit` enumerates only active (positive-rate) clocks.
trait Clocks {
    fn visit_rates(&self, visit: &mut dyn FnMut(usize, f64));
    fn fire(&mut self, id: usize, now: f64);
}

/// Run a clock system to the time horizon with the chosen engine; returns
/// the number of events executed. Stops early when no clock is active.
fn run_clocks(
    sys: &mut impl Clocks,
    t_end: f64,
    engine: SimEngine,
    rng: &mut ChaCha8Rng,
) -> u64 {
    let mut events = 0u64;
    let mut now = 0.0;
    loop {
        match engine {
            SimEngine::TotalRate => {
                let mut total = 0.0;
                sys.visit_rates(&mut |_, r| total += r);
                if total <= 0.0 {
                    return events;
                }
                let wait: f64 = rng.sample::<f64, _>(Exp1) / total;
                now += wait;
                if now > t_end {
                    return events;
                }
                let target = rng.gen::<f64>() * total;
                let mut acc = 0.0;
                let mut chosen = None;
                let mut last = None;
                sys.visit_rates(&mut |id, r| {
                    last = Some(id);
                    if chosen.is_none() {
                        acc += r;
                        if acc > target {
                            chosen = Some(id);
                        }
                    }
                });
                // `target` can graze the top of the cumulative walk in
                // floating point; the last active clock takes the blame.
                sys.fire(chosen.or(last).unwrap(), now);
            }
            SimEngine::PerParticleClocks => {
                let mut best: Option<(f64, usize)> = None;
                sys.visit_rates(&mut |id, r| {
                    let wait: f64 = rng.sample::<f64, _>(Exp1) / r;
                    if best.map_or(true, |(b, _)| wait < b) {
                        best = Some((wait, id));
                    }
                });
                let Some((wait, id)) = best else { return events };
                now += wait;
                if now > t_end {
                    return events;
                }
                sys.fire(id, now);
            }
        }
        events += 1;
    }
}

/// Mutable array state with the jump/block/push rules applied per event.
pub struct ArraySim<'a> {
    f: &'a RateField,
    levels: Vec<Vec<usize>>,
    index: Vec<(usize, usize)>,
}

impl<'a> ArraySim<'a> {
    pub fn new(f: &'a RateField, pattern: &GtPattern) -> Self {
        let levels: Vec<Vec<usize>> = pattern.levels().to_vec();
        let mut index = Vec::new();
        for (m, row) in levels.iter().enumerate() {
            for k in 0..row.len() {
                index.push((m, k));
            }
        }
        ArraySim { f, levels, index }
    }

    pub fn packed(f: &'a RateField, n_levels: usize) -> Self {
        Self::new(f, &GtPattern::packed(n_levels))
    }

    fn n_levels(&self) -> usize {
        self.levels.len()
    }

    /// X^{m+1}_{k+1} in 0-based (level index m, particle index k) terms.
    pub fn position(&self, m: usize, k: usize) -> usize {
        self.levels[m][k]
    }

    /// Blocked iff the same-index particle one level below sits on top.
    pub fn is_blocked(&self, m: usize, k: usize) -> bool {
        m >= 1 && k < m && self.levels[m][k] == self.levels[m - 1][k]
    }

    /// One jump of particle (m,k) plus its upward push cascade.
    pub fn jump(&mut self, m: usize, k: usize) {
        debug_assert!(!self.is_blocked(m, k));
        self.levels[m][k] += 1;
        let (mut lev, mut idx) = (m, k);
        let mut pos = self.levels[m][k];
        while lev + 1 < self.n_levels() && self.levels[lev + 1][idx + 1] == pos {
            self.levels[lev + 1][idx + 1] += 1;
            lev += 1;
            idx += 1;
            pos += 1;
        }
        debug_assert!(GtPattern::new(self.levels.clone()).is_ok(), "interlacing broken");
    }

    pub fn into_pattern(self) -> GtPattern {
        GtPattern::new(self.levels).expect("dynamics preserved interlacing")
    }
}

impl Clocks for ArraySim<'_> {
    fn visit_rates(&self, visit: &mut dyn FnMut(usize, f64)) {
        for (id, &(m, k)) in self.index.iter().enumerate() {
            if !self.is_blocked(m, k) {
                visit(id, self.f.rate(self.levels[m][k]));
            }
        }
    }

    fn fire(&mut self, id: usize, _now: f64) {
        let (m, k) = self.index[id];
        self.jump(m, k);
    }
}

struct LeftEdgeSim<'a> {
    f: &'a RateField,
    p: Vec<usize>,
}

impl Clocks for LeftEdgeSim<'_> {
    fn visit_rates(&self, visit: &mut dyn FnMut(usize, f64)) {
        for n in 0..self.p.len() {
            if n == 0 || self.p[n] < self.p[n - 1] {
                visit(n, self.f.rate(self.p[n]));
            }
        }
    }

    fn fire(&mut self, id: usize, _now: f64) {
        self.p[id] += 1;
    }
}

struct RightEdgeSim<'a> {
    f: &'a RateField,
    q: Vec<usize>,
}

impl Clocks for RightEdgeSim<'_> {
    fn visit_rates(&self, visit: &mut dyn FnMut(usize, f64)) {
        for n in 0..self.q.len() {
            visit(n, self.f.rate(self.q[n]));
        }
    }

    fn fire(&mut self, id: usize, _now: f64) {
        self.q[id] += 1;
        let mut lev = id;
        while lev + 1 < self.q.len() && self.q[lev + 1] == self.q[lev] {
            self.q[lev + 1] += 1;
            lev += 1;
        }
    }
}

struct TwoLevelSim<'a> {
    f: &'a RateField,
    y: Vec<usize>,
    x: Vec<usize>,
    mode: TwoLevelMode,
    dead: Option<f64>,
}

impl TwoLevelSim<'_> {
    fn doob_rate(&self, k: usize) -> f64 {
        let n = self.y.len();
        if k + 1 < n && self.y[k] + 1 == self.y[k + 1] {
            return 0.0;
        }
        let mut up = self.y.clone();
        up[k] += 1;
        let h = spectral::harmonic(self.f, &self.y).expect("y stays in the chamber");
        let h_up = spectral::harmonic(self.f, &up).expect("collision excluded above");
        self.f.rate(self.y[k]) * h_up / h
    }
}

impl Clocks for TwoLevelSim<'_> {
    fn visit_rates(&self, visit: &mut dyn FnMut(usize, f64)) {
        if self.dead.is_some() {
            return;
        }
        let n = self.y.len();
        for k in 0..n {
            let rate = match self.mode {
                TwoLevelMode::Killed => self.f.rate(self.y[k]),
                TwoLevelMode::Conditioned => self.doob_rate(k),
            };
            if rate > 0.0 {
                visit(k, rate);
            }
        }
        for j in 0..=n {
            let blocked = j < n && self.x[j] == self.y[j];
            if !blocked {
                visit(n + j, self.f.rate(self.x[j]));
            }
        }
    }

    fn fire(&mut self, id: usize, now: f64) {
        let n = self.y.len();
        if id < n {
            let newpos = self.y[id] + 1;
            if id + 1 < n && self.y[id + 1] == newpos {
                debug_assert!(matches!(self.mode, TwoLevelMode::Killed));
                self.y[id] = newpos;
                self.dead = Some(now);
                return;
            }
            self.y[id] = newpos;
            if self.x[id + 1] == newpos {
                self.x[id + 1] += 1;
            }
        } else {
            let j = id - n;
            debug_assert!(j == n || self.x[j] < self.y[j]);
            self.x[j] += 1;
        }
    }
}

fn trajectory_rng(seed: u64, trajectory: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trajectory);
    rng
}

/// Terminal patterns of independent array trajectories.
pub fn simulate_array(
    f: &RateField,
    n_levels: usize,
    t_end: f64,
    initial: &ArrayInitial,
    engine: SimEngine,
    seed: u64,
    trajectories: usize,
) -> ArrayResult {
    let runs: Vec<(GtPattern, u64)> = (0..trajectories)
        .into_par_iter()
        .map(|traj| {
            let mut rng = trajectory_rng(seed, traj as u64);
            let mut sim = match initial {
                ArrayInitial::DenselyPacked => ArraySim::packed(f, n_levels),
                ArrayInitial::Gibbs(measure) => ArraySim::new(f, measure.sample(&mut rng)),
            };
            let events = run_clocks(&mut sim, t_end, engine, &mut rng);
            (sim.into_pattern(), events)
        })
        .collect();
    let (patterns, events) = runs.into_iter().unzip();
    ArrayResult { patterns, events }
}

/// Terminal configurations of a standalone edge system started packed
/// (every left-edge particle at 0, right-edge particle n at n-1).
pub fn simulate_edge(
    f: &RateField,
    n_levels: usize,
    t_end: f64,
    kind: EdgeKind,
    engine: SimEngine,
    seed: u64,
    trajectories: usize,
) -> EdgeResult {
    let runs: Vec<(Vec<usize>, u64)> = (0..trajectories)
        .into_par_iter()
        .map(|traj| {
            let mut rng = trajectory_rng(seed, traj as u64);
            match kind {
                EdgeKind::Left => {
                    let mut sim = LeftEdgeSim { f, p: vec![0; n_levels] };
                    let events = run_clocks(&mut sim, t_end, engine, &mut rng);
                    (sim.p, events)
                }
                EdgeKind::Right => {
                    let mut sim = RightEdgeSim { f, q: (0..n_levels).collect() };
                    let events = run_clocks(&mut sim, t_end, engine, &mut rng);
                    (sim.q, events)
                }
            }
        })
        .collect();
    let (configs, events) = runs.into_iter().unzip();
    EdgeResult { configs, events }
}

/// Independent two-level trajectories from a fixed interlaced pair.
pub fn simulate_two_level(
    f: &RateField,
    initial: &TwoLevelState,
    t_end: f64,
    mode: TwoLevelMode,
    engine: SimEngine,
    seed: u64,
    trajectories: usize,
) -> TwoLevelResult {
    let runs: Vec<(TwoLevelOutcome, u64)> = (0..trajectories)
        .into_par_iter()
        .map(|traj| {
            let mut rng = trajectory_rng(seed, traj as u64);
            let mut sim = TwoLevelSim {
                f,
                y: initial.y().to_vec(),
                x: initial.x().to_vec(),
                mode,
                dead: None,
            };
            let events = run_clocks(&mut sim, t_end, engine, &mut rng);
            let outcome = match sim.dead {
                Some(time) => TwoLevelOutcome::Killed { time, y: sim.y, x: sim.x },
                None => TwoLevelOutcome::Alive { y: sim.y, x: sim.x },
            };
            (outcome, events)
        })
        .collect();
    let (outcomes, events) = runs.into_iter().unzip();
    TwoLevelResult { outcomes, events }
}

/// Histogram of terminal configurations keyed by their coordinates.
pub fn count_configs<I, C>(configs: I) -> BTreeMap<Vec<usize>, u64>
where
    I: IntoIterator<Item = C>,
    C: AsRef<[usize]>,
{
    let mut out = BTreeMap::new();
    for c in configs {
        *out.entry(c.as_ref().to_vec()).or_insert(0) += 1;
    }
    out
}

/// Align two histograms over the union of their keys, for two-sample tests.
pub fn aligned_counts(
    a: &BTreeMap<Vec<usize>, u64>,
    b: &BTreeMap<Vec<usize>, u64>,
) -> (Vec<u64>, Vec<u64>) {
    let keys: std::collections::BTreeSet<&Vec<usize>> = a.keys().chain(b.keys()).collect();
    let va = keys.iter().map(|k| a.get(*k).copied().unwrap_or(0)).collect();
    let vb = keys.iter().map(|k| b.get(*k).copied().unwrap_or(0)).collect();
    (va, vb)
}
