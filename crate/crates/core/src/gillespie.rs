//! Exact event-by-event simulation of the population process (direct-method SSA).
//!
//! Each trait carries four channels: clonal birth, up to two mutant-birth
//! destinations, and death. The channel table is rebuilt after every event
//! from the counts and the competition pressures `Σ_j c_ij X_j / K`; the
//! pressures themselves are updated incrementally and refreshed from scratch
//! every [`PRESSURE_REFRESH`] events.

use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{derive_landscape, ModelParams, Targets};
use crate::rng::{RandomStream, Seed, RNG_ALGORITHM};

/// Events between full recomputations of the competition pressures.
pub const PRESSURE_REFRESH: u64 = 1 << 20;

/// Default cap on recorded trajectory points per run.
pub const DEFAULT_MAX_POINTS: usize = 100_000;

const CHANNELS_PER_TRAIT: usize = 4;

#[derive(Debug, Error, Clone, PartialEq, Serialize, Deserialize)]
pub enum SimError {
    #[error("population is extinct; no event is possible")]
    Absorbed,
    #[error("total population {total} exceeded the hard cap {cap} at t = {time}")]
    RunawayPopulation { total: u64, cap: u64, time: f64 },
    #[error("initial state has {got} traits, model has {expected}")]
    StateShape { got: usize, expected: usize },
    #[error("horizon must be positive and finite (got {0})")]
    BadHorizon(f64),
    #[error("watch on trait {0} is out of range")]
    BadWatch(usize),
    #[error("thread pool: {0}")]
    ThreadPool(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PopulationState {
    pub counts: Vec<u64>,
    pub time: f64,
}

impl PopulationState {
    pub fn new(counts: Vec<u64>) -> Self {
        PopulationState { counts, time: 0.0 }
    }

    pub fn empty(n_traits: usize) -> Self {
        Self::new(vec![0; n_traits])
    }

    /// `X_0 = ⌊x̄_0 K⌋`, everything else empty.
    pub fn resident(params: &ModelParams) -> Self {
        let land = derive_landscape(params).expect("validated params have positive c_ii");
        let mut counts = vec![0; params.n_traits()];
        counts[0] = (land.xbar[0] * params.k as f64).floor() as u64;
        Self::new(counts)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum EventKind {
    ClonalBirth,
    MutantBirth { target: usize },
    Death,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EventChannel {
    pub kind: EventKind,
    /// Trait of the individual giving birth or dying.
    pub parent: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub kind: EventKind,
    pub parent: usize,
    /// Absolute time at which the event fired.
    pub time: f64,
}

impl Event {
    /// The trait whose count changes and the signed change.
    pub fn effect(&self) -> (usize, i64) {
        match self.kind {
            EventKind::ClonalBirth => (self.parent, 1),
            EventKind::MutantBirth { target } => (target, 1),
            EventKind::Death => (self.parent, -1),
        }
    }
}

/// Model constants in the form the event loop wants them.
#[derive(Debug, Clone)]
struct Rates {
    n: usize,
    clonal: Vec<f64>,
    /// Per-destination mutant birth coefficient and destination, two slots per trait.
    mutant: Vec<(f64, usize)>,
    death: Vec<f64>,
    /// `c_ij / K`, row-major.
    comp: Vec<f64>,
}

impl Rates {
    fn new(params: &ModelParams) -> Self {
        let n = params.n_traits();
        let k = params.k as f64;
        let mut mutant = Vec::with_capacity(2 * n);
        for i in 0..n {
            let m = params.mu * params.b[i];
            match params.kernel.targets(i, params.l) {
                Targets::None => mutant.extend([(0.0, i), (0.0, i)]),
                Targets::One(j) => mutant.extend([(m, j), (0.0, j)]),
                Targets::Split(a, b) => mutant.extend([(0.5 * m, a), (0.5 * m, b)]),
            }
        }
        Rates {
            n,
            clonal: params.b.iter().map(|b| (1.0 - params.mu) * b).collect(),
            mutant,
            death: params.d.clone(),
            comp: params.c.iter().map(|c| c / k).collect(),
        }
    }

    fn pressures(&self, counts: &[u64]) -> Vec<f64> {
        (0..self.n)
            .map(|i| {
                self.comp[i * self.n..(i + 1) * self.n]
                    .iter()
                    .zip(counts)
                    .map(|(c, &x)| c * x as f64)
                    .sum()
            })
            .collect()
    }
}

/// Stateful simulator for one replica.
#[derive(Debug, Clone)]
pub struct Simulator {
    rates: Rates,
    state: PopulationState,
    pressure: Vec<f64>,
    table: Vec<f64>,
    total_rate: f64,
    events: u64,
}

impl Simulator {
    pub fn new(params: &ModelParams, init: PopulationState) -> Result<Self, SimError> {
        if init.counts.len() != params.n_traits() {
            return Err(SimError::StateShape {
                got: init.counts.len(),
                expected: params.n_traits(),
            });
        }
        let rates = Rates::new(params);
        let pressure = rates.pressures(&init.counts);
        let mut sim = Simulator {
            table: vec![0.0; CHANNELS_PER_TRAIT * rates.n],
            rates,
            state: init,
            pressure,
            total_rate: 0.0,
            events: 0,
        };
        sim.rebuild_table();
        Ok(sim)
    }

    pub fn state(&self) -> &PopulationState {
        &self.state
    }

    pub fn events(&self) -> u64 {
        self.events
    }

    pub fn total_rate(&self) -> f64 {
        self.total_rate
    }

    /// Current channel table with non-zero rates.
    pub fn channels(&self) -> Vec<EventChannel> {
        let mut out = Vec::new();
        for i in 0..self.rates.n {
            let base = CHANNELS_PER_TRAIT * i;
            out.push(EventChannel {
                kind: EventKind::ClonalBirth,
                parent: i,
                rate: self.table[base],
            });
            for s in 0..2 {
                let (_, target) = self.rates.mutant[2 * i + s];
                if self.table[base + 1 + s] > 0.0 {
                    out.push(EventChannel {
                        kind: EventKind::MutantBirth { target },
                        parent: i,
                        rate: self.table[base + 1 + s],
                    });
                }
            }
            out.push(EventChannel {
                kind: EventKind::Death,
                parent: i,
                rate: self.table[base + 3],
            });
        }
        out
    }

    /// Competition pressures as maintained incrementally.
    pub fn pressures(&self) -> &[f64] {
        &self.pressure
    }

    /// Competition pressures recomputed from the counts.
    pub fn pressures_from_scratch(&self) -> Vec<f64> {
        self.rates.pressures(&self.state.counts)
    }

    /// Channel table recomputed from the counts alone.
    pub fn table_from_scratch(&self) -> Vec<f64> {
        let mut fresh = self.clone();
        fresh.pressure = fresh.pressures_from_scratch();
        fresh.rebuild_table();
        fresh.table
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    fn rebuild_table(&mut self) {
        let r = &self.rates;
        let mut total = 0.0;
        for i in 0..r.n {
            let x = self.state.counts[i] as f64;
            let base = CHANNELS_PER_TRAIT * i;
            let row = [
                r.clonal[i] * x,
                r.mutant[2 * i].0 * x,
                r.mutant[2 * i + 1].0 * x,
                (r.death[i] + self.pressure[i]) * x,
            ];
            self.table[base..base + CHANNELS_PER_TRAIT].copy_from_slice(&row);
            total += row.iter().sum::<f64>();
        }
        self.total_rate = total;
    }

    fn select(&self, target: f64) -> usize {
        let mut acc = 0.0;
        let mut last = 0;
        for (idx, &rate) in self.table.iter().enumerate() {
            if rate > 0.0 {
                acc += rate;
                last = idx;
                if target < acc {
                    return idx;
                }
            }
        }
        // Rounding left `target` at the very top of the range.
        last
    }

    /// Waiting time to the next event and the channel index that fires.
    #[inline]
    fn draw(&self, rng: &mut RandomStream) -> (f64, usize) {
        let u: f64 = 1.0 - rng.random::<f64>();
        let dt = -u.ln() / self.total_rate;
        let v: f64 = rng.random::<f64>();
        (dt, self.select(v * self.total_rate))
    }

    fn apply(&mut self, channel: usize, time: f64) -> Event {
        let parent = channel / CHANNELS_PER_TRAIT;
        let slot = channel % CHANNELS_PER_TRAIT;
        let kind = match slot {
            0 => EventKind::ClonalBirth,
            1 | 2 => EventKind::MutantBirth {
                target: self.rates.mutant[2 * parent + slot - 1].1,
            },
            _ => EventKind::Death,
        };
        let event = Event { kind, parent, time };
        let (j, delta) = event.effect();
        if delta > 0 {
            self.state.counts[j] += 1;
        } else {
            self.state.counts[j] -= 1;
        }
        self.state.time = time;
        self.events += 1;
        let n = self.rates.n;
        if self.events.is_multiple_of(PRESSURE_REFRESH) {
            self.pressure = self.rates.pressures(&self.state.counts);
        } else {
            let d = delta as f64;
            for i in 0..n {
                self.pressure[i] += d * self.rates.comp[i * n + j];
            }
        }
        self.rebuild_table();
        event
    }

    /// Fires the next event unconditionally.
    pub fn step(&mut self, rng: &mut RandomStream) -> Result<Event, SimError> {
        if self.total_rate <= 0.0 {
            return Err(SimError::Absorbed);
        }
        let (dt, channel) = self.draw(rng);
        Ok(self.apply(channel, self.state.time + dt))
    }

    /// Fires the next event if it happens no later than `until`; otherwise
    /// advances the clock to `until` and returns `None`.
    pub fn step_until(
        &mut self,
        rng: &mut RandomStream,
        until: f64,
    ) -> Result<Option<Event>, SimError> {
        if self.total_rate <= 0.0 {
            return Err(SimError::Absorbed);
        }
        let (dt, channel) = self.draw(rng);
        let t = self.state.time + dt;
        if t > until {
            self.state.time = until;
            return Ok(None);
        }
        Ok(Some(self.apply(channel, t)))
    }
}

/// One event from a state, with all rates computed from scratch.
pub fn step(
    state: &PopulationState,
    params: &ModelParams,
    rng: &mut RandomStream,
) -> Result<(PopulationState, Event), SimError> {
    let mut sim = Simulator::new(params, state.clone())?;
    let event = sim.step(rng)?;
    Ok((sim.state, event))
}

/// First time `X_trait` equals `⌊level · K⌋`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Watch {
    #[serde(rename = "trait")]
    pub trait_index: usize,
    pub level: f64,
}

impl Watch {
    pub fn new(trait_index: usize, level: f64) -> Self {
        Watch { trait_index, level }
    }

    pub fn threshold(&self, k: u64) -> u64 {
        (self.level * k as f64).floor().max(0.0) as u64
    }
}

/// Recorded hitting times; `None` when not reached before the run ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoppingTimes {
    pub hits: Vec<HitTime>,
    /// First time every trait except `L` is empty.
    pub sigma0: Option<f64>,
    /// First time `X_L > 0`.
    pub b_l: Option<f64>,
    /// Total extinction time.
    pub t0: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HitTime {
    #[serde(rename = "trait")]
    pub trait_index: usize,
    pub level: f64,
    pub threshold: u64,
    pub time: Option<f64>,
}

impl StoppingTimes {
    pub fn hit(&self, index: usize) -> Option<f64> {
        self.hits.get(index).and_then(|h| h.time)
    }

    fn get(&self, cond: Condition) -> Option<f64> {
        match cond {
            Condition::Hit(i) => self.hit(i),
            Condition::Sigma0 => self.sigma0,
            Condition::TargetBorn => self.b_l,
            Condition::Extinct => self.t0,
        }
    }
}

/// A stopping condition usable in a [`StopRule`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    /// The watch with this index has been hit.
    Hit(usize),
    Sigma0,
    TargetBorn,
    Extinct,
}

/// When to end a run early. Total extinction always ends a run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopRule {
    #[default]
    Horizon,
    AnyOf(Vec<Condition>),
    AllOf(Vec<Condition>),
}

impl StopRule {
    fn satisfied(&self, times: &StoppingTimes) -> bool {
        match self {
            StopRule::Horizon => false,
            StopRule::AnyOf(c) => c.iter().any(|&c| times.get(c).is_some()),
            StopRule::AllOf(c) => !c.is_empty() && c.iter().all(|&c| times.get(c).is_some()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub horizon: f64,
    pub watches: Vec<Watch>,
    pub stop: StopRule,
    /// Hard cap on the total count; `None` means `100 · K · max_i x̄_i`.
    pub hard_cap: Option<u64>,
    /// Trajectory recording; `0` disables it.
    pub max_points: usize,
    /// Times at which the counts are snapshotted exactly.
    pub snapshots: Vec<f64>,
}

impl RunConfig {
    pub fn new(horizon: f64) -> Self {
        RunConfig {
            horizon,
            watches: Vec::new(),
            stop: StopRule::Horizon,
            hard_cap: None,
            max_points: DEFAULT_MAX_POINTS,
            snapshots: Vec::new(),
        }
    }

    pub fn watch(mut self, w: Watch) -> Self {
        self.watches.push(w);
        self
    }

    pub fn stop(mut self, rule: StopRule) -> Self {
        self.stop = rule;
        self
    }

    pub fn no_trajectory(mut self) -> Self {
        self.max_points = 0;
        self
    }

    pub fn snapshots(mut self, times: Vec<f64>) -> Self {
        self.snapshots = times;
        self
    }

    pub fn hard_cap(mut self, cap: u64) -> Self {
        self.hard_cap = Some(cap);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Terminal {
    Horizon,
    Extinct,
    StopRule,
}

/// Down-sampled path: rows of `(time, counts)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub counts: Vec<Vec<u64>>,
    /// Events between consecutive recorded points at the end of the run.
    pub stride: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// CSV with header `t,x0,...,xL`.
    pub fn to_csv(&self, n_traits: usize) -> String {
        let mut out = String::from("t");
        for i in 0..n_traits {
            out.push_str(&format!(",x{i}"));
        }
        out.push('\n');
        for (t, row) in self.times.iter().zip(&self.counts) {
            out.push_str(&format!("{t}"));
            for x in row {
                out.push_str(&format!(",{x}"));
            }
            out.push('\n');
        }
        out
    }
}

struct Recorder {
    max_points: usize,
    stride: u64,
    traj: Trajectory,
}

impl Recorder {
    fn new(max_points: usize) -> Self {
        Recorder {
            max_points,
            stride: 1,
            traj: Trajectory::default(),
        }
    }

    fn push(&mut self, state: &PopulationState) {
        if self.max_points == 0 {
            return;
        }
        if self.traj.times.last().is_some_and(|&t| t >= state.time) {
            return;
        }
        self.traj.times.push(state.time);
        self.traj.counts.push(state.counts.clone());
        if self.traj.len() >= self.max_points {
            self.traj.times = self.traj.times.iter().copied().step_by(2).collect();
            self.traj.counts = std::mem::take(&mut self.traj.counts)
                .into_iter()
                .step_by(2)
                .collect();
            self.stride *= 2;
        }
    }

    fn offer(&mut self, state: &PopulationState, events: u64) {
        if self.max_points > 0 && events.is_multiple_of(self.stride) {
            self.push(state);
        }
    }

    fn finish(mut self, state: &PopulationState) -> Trajectory {
        if self.max_points > 0 {
            self.traj.times.push(state.time);
            self.traj.counts.push(state.counts.clone());
            if self.traj.times.len() >= 2 {
                let n = self.traj.times.len();
                if self.traj.times[n - 2] >= self.traj.times[n - 1] {
                    self.traj.times.remove(n - 2);
                    self.traj.counts.remove(n - 2);
                }
            }
        }
        self.traj.stride = self.stride;
        self.traj
    }
}

/// Event tallies per parent trait.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventCounts {
    pub clonal: Vec<u64>,
    pub mutant: Vec<u64>,
    pub death: Vec<u64>,
}

impl EventCounts {
    fn new(n: usize) -> Self {
        EventCounts {
            clonal: vec![0; n],
            mutant: vec![0; n],
            death: vec![0; n],
        }
    }

    fn record(&mut self, e: &Event) {
        match e.kind {
            EventKind::ClonalBirth => self.clonal[e.parent] += 1,
            EventKind::MutantBirth { .. } => self.mutant[e.parent] += 1,
            EventKind::Death => self.death[e.parent] += 1,
        }
    }

    pub fn births(&self, i: usize) -> u64 {
        self.clonal[i] + self.mutant[i]
    }

    pub fn total(&self) -> u64 {
        self.clonal
            .iter()
            .chain(&self.mutant)
            .chain(&self.death)
            .sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub trajectory: Trajectory,
    pub stopping_times: StoppingTimes,
    pub terminal: Terminal,
    pub final_state: PopulationState,
    pub events: EventCounts,
    /// Counts at the configured snapshot times that were reached.
    pub snapshots: Vec<Vec<u64>>,
}

fn default_cap(params: &ModelParams, init: &PopulationState) -> u64 {
    let land = derive_landscape(params).expect("validated params have positive c_ii");
    let xmax = land.xbar.iter().cloned().fold(0.0, f64::max);
    let cap = (100.0 * params.k as f64 * xmax).ceil() as u64;
    cap.max(100 * init.total()).max(100)
}

/// Simulates one path until the horizon, total extinction, or the stop rule.
pub fn run(
    params: &ModelParams,
    init: PopulationState,
    config: &RunConfig,
    rng: &mut RandomStream,
) -> Result<RunOutcome, SimError> {
    if !(config.horizon > 0.0 && config.horizon.is_finite()) {
        return Err(SimError::BadHorizon(config.horizon));
    }
    let n = params.n_traits();
    let l = params.l;
    if let Some(w) = config.watches.iter().find(|w| w.trait_index >= n) {
        return Err(SimError::BadWatch(w.trait_index));
    }
    let cap = config
        .hard_cap
        .unwrap_or_else(|| default_cap(params, &init));
    let thresholds: Vec<u64> = config
        .watches
        .iter()
        .map(|w| w.threshold(params.k))
        .collect();
    let mut times = StoppingTimes {
        hits: config
            .watches
            .iter()
            .zip(&thresholds)
            .map(|(w, &threshold)| HitTime {
                trait_index: w.trait_index,
                level: w.level,
                threshold,
                time: None,
            })
            .collect(),
        sigma0: None,
        b_l: None,
        t0: None,
    };

    let mut sim = Simulator::new(params, init)?;
    let mut total = sim.state.total();
    let mut non_target: u64 = sim.state.counts[..l].iter().sum();
    let mut tally = EventCounts::new(n);
    let mut recorder = Recorder::new(config.max_points);
    let mut snapshots = Vec::new();
    let mut next_snapshot = 0;

    let t_start = sim.state.time;
    for (h, &thr) in times.hits.iter_mut().zip(&thresholds) {
        if sim.state.counts[h.trait_index] == thr {
            h.time = Some(t_start);
        }
    }
    if non_target == 0 {
        times.sigma0 = Some(t_start);
    }
    if sim.state.counts[l] > 0 {
        times.b_l = Some(t_start);
    }
    recorder.push(&sim.state);

    let terminal = loop {
        if total == 0 {
            times.t0.get_or_insert(sim.state.time);
            break Terminal::Extinct;
        }
        if config.stop.satisfied(&times) {
            break Terminal::StopRule;
        }
        let until = config
            .snapshots
            .get(next_snapshot)
            .copied()
            .filter(|&s| s < config.horizon)
            .unwrap_or(config.horizon);
        let event = match sim.step_until(rng, until)? {
            Some(e) => e,
            None => {
                if until < config.horizon {
                    snapshots.push(sim.state.counts.clone());
                    next_snapshot += 1;
                    continue;
                }
                break Terminal::Horizon;
            }
        };
        tally.record(&event);
        let (j, delta) = event.effect();
        let now = event.time;
        if delta > 0 {
            total += 1;
            if j < l {
                non_target += 1;
            } else if times.b_l.is_none() {
                times.b_l = Some(now);
            }
            if total > cap {
                return Err(SimError::RunawayPopulation {
                    total,
                    cap,
                    time: now,
                });
            }
        } else {
            total -= 1;
            if j < l {
                non_target -= 1;
                if non_target == 0 && times.sigma0.is_none() {
                    times.sigma0 = Some(now);
                }
            }
        }
        let x = sim.state.counts[j];
        for (h, &thr) in times.hits.iter_mut().zip(&thresholds) {
            if h.time.is_none() && h.trait_index == j && x == thr {
                h.time = Some(now);
            }
        }
        recorder.offer(&sim.state, sim.events);
    };
    // Snapshots scheduled after an early end keep the terminal state when extinct.
    if terminal == Terminal::Extinct {
        while config
            .snapshots
            .get(snapshots.len())
            .is_some_and(|&s| s < config.horizon)
        {
            snapshots.push(sim.state.counts.clone());
        }
    }

    let final_state = sim.state.clone();
    Ok(RunOutcome {
        trajectory: recorder.finish(&final_state),
        stopping_times: times,
        terminal,
        final_state,
        events: tally,
        snapshots,
    })
}

/// One replica's result in an ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaRecord {
    pub replica: u64,
    pub seed: Seed,
    pub stopping_times: Option<StoppingTimes>,
    pub terminal: Option<Terminal>,
    pub events: u64,
    pub final_counts: Option<Vec<u64>>,
    pub snapshots: Vec<Vec<u64>>,
    pub error: Option<SimError>,
}

/// Ensemble metadata written as the first JSON-lines record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleMeta {
    pub model_hash: String,
    pub master_seed: u64,
    pub rng: String,
    pub n_replicas: u64,
    pub tool_version: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSummary {
    pub meta: EnsembleMeta,
    /// Sorted by replica index.
    pub records: Vec<ReplicaRecord>,
    /// Wall-clock time per replica in milliseconds; not part of the body.
    #[serde(skip)]
    pub wall_ms: Vec<u64>,
}

impl EnsembleSummary {
    /// Deterministic serialization: metadata and replica records, no timings.
    pub fn body_json(&self) -> String {
        serde_json::to_string(self).expect("summary always serializes")
    }

    /// JSON-lines: a metadata record, then one record per replica.
    pub fn to_jsonl(&self) -> String {
        let mut out = serde_json::to_string(&serde_json::json!({ "meta": self.meta }))
            .expect("metadata serializes");
        out.push('\n');
        for (rec, ms) in self.records.iter().zip(&self.wall_ms) {
            let mut v = serde_json::to_value(rec).expect("record serializes");
            v["wall_ms"] = serde_json::json!(ms);
            out.push_str(&v.to_string());
            out.push('\n');
        }
        out
    }

    pub fn resolved(&self) -> impl Iterator<Item = &StoppingTimes> {
        self.records
            .iter()
            .filter_map(|r| r.stopping_times.as_ref())
    }
}

/// Runs `n_replicas` independent replicas on `threads` worker threads.
///
/// Replica `r` draws from `Seed { master: master_seed, stream: r }`; the
/// result is identical for every thread count.
pub fn run_ensemble(
    params: &ModelParams,
    init: &PopulationState,
    config: &RunConfig,
    n_replicas: u64,
    master_seed: u64,
    threads: usize,
) -> Result<EnsembleSummary, SimError> {
    let config = RunConfig {
        max_points: 0,
        ..config.clone()
    };
    let one = |r: u64| -> (ReplicaRecord, u64) {
        let seed = Seed::new(master_seed).split(r);
        let started = Instant::now();
        let outcome = run(params, init.clone(), &config, &mut seed.rng());
        let ms = started.elapsed().as_millis() as u64;
        let rec = match outcome {
            Ok(o) => ReplicaRecord {
                replica: r,
                seed,
                events: o.events.total(),
                stopping_times: Some(o.stopping_times),
                terminal: Some(o.terminal),
                final_counts: Some(o.final_state.counts),
                snapshots: o.snapshots,
                error: None,
            },
            Err(e) => ReplicaRecord {
                replica: r,
                seed,
                stopping_times: None,
                terminal: None,
                events: 0,
                final_counts: None,
                snapshots: Vec::new(),
                error: Some(e),
            },
        };
        (rec, ms)
    };
    let results: Vec<(ReplicaRecord, u64)> = if threads <= 1 {
        (0..n_replicas).map(one).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| SimError::ThreadPool(e.to_string()))?;
        pool.install(|| (0..n_replicas).into_par_iter().map(one).collect())
    };
    let (records, wall_ms) = results.into_iter().unzip();
    Ok(EnsembleSummary {
        meta: EnsembleMeta {
            model_hash: params.model_hash(),
            master_seed,
            rng: RNG_ALGORITHM.to_string(),
            n_replicas,
            tool_version: crate::VERSION.to_string(),
        },
        records,
        wall_ms,
    })
}
