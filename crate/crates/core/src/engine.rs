//! Simulation kernel: the uniform ordered-pair scheduler, the protocol
//! contract, and discrete/continuous-time runners with stopping rules and
//! trace capture.

use std::collections::BTreeMap;
use std::io::Write;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::graph::Graph;
use crate::rng::SimRng;

/// One scheduler draw. `step` is the index of the configuration it produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub step: u64,
    pub initiator: usize,
    pub responder: usize,
}

/// Samples ordered adjacent pairs with probability `1/(2m)` each.
///
/// A single draw `k` in `[0, 2m)` picks edge `k/2`; the low bit picks the
/// orientation.
#[derive(Debug, Clone, Copy)]
pub struct Scheduler<'g> {
    edges: &'g [(u32, u32)],
    range: u64,
}

impl<'g> Scheduler<'g> {
    pub fn new(g: &'g Graph) -> Self {
        Scheduler {
            edges: g.edges(),
            range: 2 * g.m() as u64,
        }
    }

    #[inline]
    pub fn sample(&self, rng: &mut SimRng) -> (usize, usize) {
        let k = rng.random_range(0..self.range);
        let (a, b) = self.edges[(k >> 1) as usize];
        if k & 1 == 0 {
            (a as usize, b as usize)
        } else {
            (b as usize, a as usize)
        }
    }
}

/// Draws one ordered pair `(initiator, responder)`.
pub fn sample_interaction(g: &Graph, rng: &mut SimRng) -> (usize, usize) {
    Scheduler::new(g).sample(rng)
}

/// The random bit a node extracts from the scheduler: 1 iff it initiated.
pub fn scheduler_random_bit(it: &Interaction, host: usize) -> Result<bool> {
    if host == it.initiator {
        Ok(true)
    } else if host == it.responder {
        Ok(false)
    } else {
        Err(Error::Contract(format!(
            "node {host} is not part of interaction ({}, {})",
            it.initiator, it.responder
        )))
    }
}

/// Incrementally maintained summary of a configuration.
pub trait Census<S>: Clone {
    fn add(&mut self, s: &S);
    fn remove(&mut self, s: &S);
    /// Protocol-specific certificate that no reachable configuration changes
    /// any node's output.
    fn certified(&self) -> bool;
    /// Named counts for trace snapshots.
    fn counts(&self) -> BTreeMap<String, u64>;

    /// Replaces the two states of one interaction.
    #[inline]
    fn update(&mut self, before: &[S; 2], after: &[S; 2]) {
        self.remove(&before[0]);
        self.remove(&before[1]);
        self.add(&after[0]);
        self.add(&after[1]);
    }
}

/// A pairwise protocol. `interact` receives the initiator's state first.
pub trait Protocol {
    type State: Copy + PartialEq + std::fmt::Debug;
    type Census: Census<Self::State>;

    fn initial_state(&self, node: usize, input: bool) -> Self::State;
    fn interact(&self, initiator: &mut Self::State, responder: &mut Self::State);
    fn output(&self, s: &Self::State) -> bool;
    fn census(&self, n: usize) -> Self::Census;

    /// Events worth recording in a trace; `after` is indexed like `before`
    /// (initiator node first).
    fn trace_events(
        &self,
        _it: &Interaction,
        _before: &[Self::State; 2],
        _after: &[Self::State; 2],
        _out: &mut Vec<TraceEvent>,
    ) {
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Called after every applied interaction.
pub trait Observer<P: Protocol> {
    fn observe(&mut self, it: &Interaction, before: &[P::State; 2], config: &[P::State], census: &P::Census)
        -> Control;
}

/// Observer that never stops the run.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoObserver;

impl<P: Protocol> Observer<P> for NoObserver {
    #[inline]
    fn observe(&mut self, _: &Interaction, _: &[P::State; 2], _: &[P::State], _: &P::Census) -> Control {
        Control::Continue
    }
}

impl<P, F> Observer<P> for F
where
    P: Protocol,
    F: FnMut(&Interaction, &[P::State; 2], &[P::State], &P::Census) -> Control,
{
    #[inline]
    fn observe(
        &mut self,
        it: &Interaction,
        before: &[P::State; 2],
        config: &[P::State],
        census: &P::Census,
    ) -> Control {
        self(it, before, config, census)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StoppingRule {
    pub stop_on_certified: bool,
    pub max_steps: u64,
    /// Real-time horizon, continuous runs only.
    pub max_time: Option<f64>,
}

impl StoppingRule {
    pub fn horizon(max_steps: u64) -> Self {
        StoppingRule {
            stop_on_certified: false,
            max_steps,
            max_time: None,
        }
    }

    pub fn certified(max_steps: u64) -> Self {
        StoppingRule {
            stop_on_certified: true,
            max_steps,
            max_time: None,
        }
    }
}

/// `200 τ_rel ln n (Δ/δ) ln n`, the default step budget.
pub fn default_horizon(g: &Graph, tau_rel: f64) -> u64 {
    let ln_n = (g.n() as f64).ln();
    let ratio = g.max_degree() as f64 / g.min_degree() as f64;
    (200.0 * tau_rel * ln_n * ratio * ln_n).ceil() as u64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TimeMode {
    Discrete,
    /// Exponential(1/2) gaps between interactions, i.e. a rate-`1/(2m)`
    /// Poisson clock on every ordered pair.
    Continuous,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TraceMode {
    /// Snapshot every this many steps (0 disables snapshots).
    pub snapshot_every: u64,
    pub capture_events: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TraceEvent {
    Tick { step: u64, token: u32 },
    Phase { step: u64, token: u32, phase: u8 },
    Flag { step: u64, token: u32, flag: String },
    ClockCreated { step: u64, token: u32 },
    Deactivated { step: u64, token: u32 },
    Annihilation { step: u64, nodes: [usize; 2] },
}

impl TraceEvent {
    pub fn step(&self) -> u64 {
        match self {
            TraceEvent::Tick { step, .. }
            | TraceEvent::Phase { step, .. }
            | TraceEvent::Flag { step, .. }
            | TraceEvent::ClockCreated { step, .. }
            | TraceEvent::Deactivated { step, .. }
            | TraceEvent::Annihilation { step, .. } => *step,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
    pub state_counts: BTreeMap<String, u64>,
    /// Events since the previous snapshot.
    pub events: Vec<TraceEvent>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub snapshots: Vec<Snapshot>,
}

impl Trace {
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for s in &self.snapshots {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(text: &str) -> Result<Self> {
        let snapshots = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<_, _>>()?;
        Ok(Trace { snapshots })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Certified,
    Horizon,
    Observer,
}

#[derive(Debug, Clone)]
pub struct RunOutcome<S> {
    pub final_config: Vec<S>,
    /// Interactions applied.
    pub steps: u64,
    /// Real time reached (continuous runs; 0 otherwise).
    pub time: f64,
    pub reason: StopReason,
    pub certified_step: Option<u64>,
    /// Common output of all nodes at the end, if they agree.
    pub consensus: Option<bool>,
    /// First step from which every output equalled `consensus` through the
    /// end of the run.
    pub observed_stabilization: Option<u64>,
    pub trace: Option<Trace>,
}

impl<S> RunOutcome<S> {
    pub fn censored(&self) -> bool {
        self.reason == StopReason::Horizon
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunSpec {
    pub stop: StoppingRule,
    pub time: TimeMode,
    pub trace: TraceMode,
}

impl RunSpec {
    pub fn discrete(stop: StoppingRule) -> Self {
        RunSpec {
            stop,
            time: TimeMode::Discrete,
            trace: TraceMode::default(),
        }
    }

    pub fn continuous(stop: StoppingRule) -> Self {
        RunSpec {
            stop,
            time: TimeMode::Continuous,
            trace: TraceMode::default(),
        }
    }

    pub fn with_trace(mut self, trace: TraceMode) -> Self {
        self.trace = trace;
        self
    }
}

/// Initial configuration from one input bit per node.
pub fn initial_configuration<P: Protocol>(proto: &P, inputs: &[bool]) -> Vec<P::State> {
    inputs
        .iter()
        .enumerate()
        .map(|(u, &b)| proto.initial_state(u, b))
        .collect()
}

pub fn run_discrete<P: Protocol, O: Observer<P>>(
    proto: &P,
    g: &Graph,
    inputs: &[bool],
    stop: StoppingRule,
    rng: &mut SimRng,
    observer: &mut O,
) -> Result<RunOutcome<P::State>> {
    check_inputs(g, inputs)?;
    run_from(
        proto,
        g,
        initial_configuration(proto, inputs),
        &RunSpec::discrete(stop),
        rng,
        observer,
    )
}

pub fn run_continuous<P: Protocol, O: Observer<P>>(
    proto: &P,
    g: &Graph,
    inputs: &[bool],
    stop: StoppingRule,
    rng: &mut SimRng,
    observer: &mut O,
) -> Result<RunOutcome<P::State>> {
    check_inputs(g, inputs)?;
    run_from(
        proto,
        g,
        initial_configuration(proto, inputs),
        &RunSpec::continuous(stop),
        rng,
        observer,
    )
}

fn check_inputs(g: &Graph, inputs: &[bool]) -> Result<()> {
    if inputs.len() != g.n() {
        return param(format!("expected {} inputs, got {}", g.n(), inputs.len()));
    }
    Ok(())
}

#[inline]
fn pair_mut<T>(v: &mut [T], a: usize, b: usize) -> (&mut T, &mut T) {
    debug_assert_ne!(a, b);
    if a < b {
        let (lo, hi) = v.split_at_mut(b);
        (&mut lo[a], &mut hi[0])
    } else {
        let (lo, hi) = v.split_at_mut(a);
        (&mut hi[0], &mut lo[b])
    }
}

struct OutputTracker {
    n: u64,
    ones: u64,
    last_not_all_zero: Option<u64>,
    last_not_all_one: Option<u64>,
}

impl OutputTracker {
    #[inline]
    fn record(&mut self, step: u64) {
        if self.ones != 0 {
            self.last_not_all_zero = Some(step);
        }
        if self.ones != self.n {
            self.last_not_all_one = Some(step);
        }
    }

    fn consensus(&self) -> (Option<bool>, Option<u64>) {
        let after = |t: Option<u64>| Some(t.map_or(0, |t| t + 1));
        if self.ones == 0 {
            (Some(false), after(self.last_not_all_zero))
        } else if self.ones == self.n {
            (Some(true), after(self.last_not_all_one))
        } else {
            (None, None)
        }
    }
}

/// Runs `proto` from an explicit configuration.
pub fn run_from<P: Protocol, O: Observer<P>>(
    proto: &P,
    g: &Graph,
    mut config: Vec<P::State>,
    spec: &RunSpec,
    rng: &mut SimRng,
    observer: &mut O,
) -> Result<RunOutcome<P::State>> {
    let n = g.n();
    if config.len() != n {
        return param(format!("configuration has {} states for {n} nodes", config.len()));
    }
    let scheduler = Scheduler::new(g);
    let gap = Exp::new(0.5).expect("positive rate");
    let continuous = spec.time == TimeMode::Continuous;
    let stop = spec.stop;

    let mut census = proto.census(n);
    for s in &config {
        census.add(s);
    }
    let mut outputs = OutputTracker {
        n: n as u64,
        ones: config.iter().filter(|s| proto.output(s)).count() as u64,
        last_not_all_zero: None,
        last_not_all_one: None,
    };
    outputs.record(0);

    let tracing = spec.trace.snapshot_every > 0 || spec.trace.capture_events;
    let mut trace = Trace::default();
    let mut pending = Vec::new();
    if tracing {
        trace.snapshots.push(Snapshot {
            step: 0,
            time: continuous.then_some(0.0),
            state_counts: census.counts(),
            events: Vec::new(),
        });
    }

    let mut step = 0u64;
    let mut time = 0.0f64;
    let mut certified_step = None;
    let reason = if stop.stop_on_certified && census.certified() {
        certified_step = Some(0);
        StopReason::Certified
    } else {
        loop {
            if step >= stop.max_steps {
                break StopReason::Horizon;
            }
            let (u, v) = scheduler.sample(rng);
            if continuous {
                let t = time + gap.sample(rng);
                if stop.max_time.is_some_and(|h| t > h) {
                    break StopReason::Horizon;
                }
                time = t;
            }
            step += 1;
            let it = Interaction {
                step,
                initiator: u,
                responder: v,
            };
            let before = [config[u], config[v]];
            {
                let (a, b) = pair_mut(&mut config, u, v);
                proto.interact(a, b);
            }
            let after = [config[u], config[v]];
            census.update(&before, &after);
            let gained = proto.output(&after[0]) as u64 + proto.output(&after[1]) as u64;
            let lost = proto.output(&before[0]) as u64 + proto.output(&before[1]) as u64;
            outputs.ones = outputs.ones + gained - lost;
            outputs.record(step);

            if spec.trace.capture_events {
                proto.trace_events(&it, &before, &after, &mut pending);
            }
            if spec.trace.snapshot_every > 0 && step % spec.trace.snapshot_every == 0 {
                trace.snapshots.push(Snapshot {
                    step,
                    time: continuous.then_some(time),
                    state_counts: census.counts(),
                    events: std::mem::take(&mut pending),
                });
            }
            if observer.observe(&it, &before, &config, &census) == Control::Stop {
                break StopReason::Observer;
            }
            if stop.stop_on_certified && census.certified() {
                certified_step = Some(step);
                break StopReason::Certified;
            }
        }
    };

    if tracing
        && trace
            .snapshots
            .last()
            .is_none_or(|s| s.step != step || !pending.is_empty())
    {
        trace.snapshots.push(Snapshot {
            step,
            time: continuous.then_some(time),
            state_counts: census.counts(),
            events: pending,
        });
    }
    let (consensus, observed_stabilization) = outputs.consensus();
    Ok(RunOutcome {
        final_config: config,
        steps: step,
        time,
        reason,
        certified_step,
        consensus,
        observed_stabilization,
        trace: tracing.then_some(trace),
    })
}

/// Protocol whose transition is the identity; useful for testing the kernel.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

#[derive(Debug, Clone, Default)]
pub struct BitCensus {
    pub ones: u64,
    pub zeros: u64,
}

impl Census<bool> for BitCensus {
    fn add(&mut self, s: &bool) {
        if *s {
            self.ones += 1
        } else {
            self.zeros += 1
        }
    }
    fn remove(&mut self, s: &bool) {
        if *s {
            self.ones -= 1
        } else {
            self.zeros -= 1
        }
    }
    fn certified(&self) -> bool {
        false
    }
    fn counts(&self) -> BTreeMap<String, u64> {
        BTreeMap::from([("0".to_string(), self.zeros), ("1".to_string(), self.ones)])
    }
}

impl Protocol for Identity {
    type State = bool;
    type Census = BitCensus;

    fn initial_state(&self, _node: usize, input: bool) -> bool {
        input
    }
    fn interact(&self, _: &mut bool, _: &mut bool) {}
    fn output(&self, s: &bool) -> bool {
        *s
    }
    fn census(&self, _n: usize) -> BitCensus {
        BitCensus::default()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{build_graph, GraphFamily};
    use crate::rng::trial_rng;

    #[test]
    fn single_edge_orientation_is_fair() {
        let g = build_graph(GraphFamily::Path, 2, 0).unwrap();
        let mut rng = trial_rng(1, 0);
        let draws = 1_000_000;
        let forward = (0..draws)
            .filter(|_| sample_interaction(&g, &mut rng) == (0, 1))
            .count();
        assert!((forward as f64 / draws as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn triangle_ordered_pairs_are_uniform() {
        let g = build_graph(GraphFamily::Complete, 3, 0).unwrap();
        let sched = Scheduler::new(&g);
        let mut rng = trial_rng(2, 0);
        let mut counts = BTreeMap::new();
        let draws = 1_000_000u64;
        for _ in 0..draws {
            *counts.entry(sched.sample(&mut rng)).or_insert(0u64) += 1;
        }
        assert_eq!(counts.len(), 6);
        let p = 1.0 / 6.0;
        let sigma = (p * (1.0 - p) / draws as f64).sqrt();
        for (&(a, b), &c) in &counts {
            assert!(g.has_edge(a, b));
            let f = c as f64 / draws as f64;
            assert!(
                (f - p).abs() < 0.01 && (f - p).abs() < 3.0 * sigma + 1e-12,
                "{a}->{b}: {f}"
            );
        }
    }

    #[test]
    fn fixed_seed_replays_the_schedule() {
        let g = build_graph(GraphFamily::RandomRegular { degree: 3 }, 20, 3).unwrap();
        let first = |seed| {
            let mut rng = trial_rng(seed, 9);
            (0..100).map(|_| sample_interaction(&g, &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(first(5), first(5));
        assert_ne!(first(5), first(6));
    }

    #[test]
    fn random_bit_from_roles() {
        let it = Interaction {
            step: 1,
            initiator: 3,
            responder: 7,
        };
        assert!(scheduler_random_bit(&it, 3).unwrap());
        assert!(!scheduler_random_bit(&it, 7).unwrap());
        assert!(matches!(scheduler_random_bit(&it, 4), Err(Error::Contract(_))));
    }

    #[test]
    fn random_bit_is_fair_on_regular_graph() {
        let g = build_graph(GraphFamily::Cycle, 10, 0).unwrap();
        let sched = Scheduler::new(&g);
        let mut rng = trial_rng(4, 0);
        let (mut hits, mut ones) = (0u64, 0u64);
        for step in 1..=1_000_000 {
            let (u, v) = sched.sample(&mut rng);
            let it = Interaction {
                step,
                initiator: u,
                responder: v,
            };
            if u == 0 || v == 0 {
                hits += 1;
                ones += scheduler_random_bit(&it, 0).unwrap() as u64;
            }
        }
        assert!((ones as f64 / hits as f64 - 0.5).abs() < 0.01);
    }

    #[test]
    fn identity_protocol_runs_to_horizon() {
        let g = build_graph(GraphFamily::Cycle, 6, 0).unwrap();
        let inputs = [true, false, true, false, false, true];
        let out = run_discrete(
            &Identity,
            &g,
            &inputs,
            StoppingRule::certified(500),
            &mut trial_rng(0, 0),
            &mut NoObserver,
        )
        .unwrap();
        assert_eq!(out.final_config, inputs);
        assert_eq!(out.steps, 500);
        assert!(out.censored());
        assert_eq!(out.consensus, None);
    }

    #[test]
    fn interaction_touches_only_two_nodes() {
        let g = build_graph(GraphFamily::Complete, 8, 0).unwrap();
        // swap protocol: every interaction exchanges the two states
        #[derive(Clone, Copy)]
        struct Swap;
        impl Protocol for Swap {
            type State = u8;
            type Census = NullCensus;
            fn initial_state(&self, node: usize, _: bool) -> u8 {
                node as u8
            }
            fn interact(&self, a: &mut u8, b: &mut u8) {
                std::mem::swap(a, b)
            }
            fn output(&self, _: &u8) -> bool {
                false
            }
            fn census(&self, _: usize) -> NullCensus {
                NullCensus
            }
        }
        #[derive(Clone)]
        struct NullCensus;
        impl Census<u8> for NullCensus {
            fn add(&mut self, _: &u8) {}
            fn remove(&mut self, _: &u8) {}
            fn certified(&self) -> bool {
                false
            }
            fn counts(&self) -> BTreeMap<String, u64> {
                BTreeMap::new()
            }
        }
        let mut prev: Vec<u8> = (0..8).collect();
        let mut check = |it: &Interaction, before: &[u8; 2], config: &[u8], _: &NullCensus| {
            for w in 0..8 {
                if w != it.initiator && w != it.responder {
                    assert_eq!(config[w], prev[w]);
                }
            }
            assert_eq!(config[it.initiator], before[1]);
            prev = config.to_vec();
            Control::Continue
        };
        let inputs = [false; 8];
        run_discrete(
            &Swap,
            &g,
            &inputs,
            StoppingRule::horizon(2000),
            &mut trial_rng(3, 3),
            &mut check,
        )
        .unwrap();
    }

    #[test]
    fn continuous_rate_is_one_half() {
        let g = build_graph(GraphFamily::Cycle, 12, 0).unwrap();
        let stop = StoppingRule {
            stop_on_certified: false,
            max_steps: u64::MAX,
            max_time: Some(100_000.0),
        };
        let out = run_continuous(&Identity, &g, &[false; 12], stop, &mut trial_rng(8, 0), &mut NoObserver).unwrap();
        let rate = out.steps as f64 / 100_000.0;
        assert!((rate - 0.5).abs() < 0.01, "rate {rate}");
    }

    #[test]
    fn continuous_empty_horizon_has_no_events() {
        let g = build_graph(GraphFamily::Cycle, 5, 0).unwrap();
        let stop = StoppingRule {
            stop_on_certified: false,
            max_steps: u64::MAX,
            max_time: Some(0.0),
        };
        let out = run_continuous(&Identity, &g, &[false; 5], stop, &mut trial_rng(0, 0), &mut NoObserver).unwrap();
        assert_eq!(out.steps, 0);
    }

    #[test]
    fn runs_are_deterministic_and_traces_round_trip() {
        let g = build_graph(GraphFamily::Star, 7, 0).unwrap();
        let spec = RunSpec::discrete(StoppingRule::horizon(300)).with_trace(TraceMode {
            snapshot_every: 50,
            capture_events: true,
        });
        let cfg = vec![true, false, false, true, false, true, true];
        let a = run_from(&Identity, &g, cfg.clone(), &spec, &mut trial_rng(1, 1), &mut NoObserver).unwrap();
        let b = run_from(&Identity, &g, cfg, &spec, &mut trial_rng(1, 1), &mut NoObserver).unwrap();
        let (ta, tb) = (a.trace.unwrap(), b.trace.unwrap());
        assert_eq!(ta, tb);
        assert_eq!(ta.snapshots.len(), 7);
        assert!(ta.snapshots.windows(2).all(|w| w[0].step < w[1].step));
        let mut buf = Vec::new();
        ta.write_jsonl(&mut buf).unwrap();
        assert_eq!(Trace::read_jsonl(std::str::from_utf8(&buf).unwrap()).unwrap(), ta);
    }

    #[test]
    fn wrong_input_length_is_rejected() {
        let g = build_graph(GraphFamily::Cycle, 5, 0).unwrap();
        assert!(run_discrete(
            &Identity,
            &g,
            &[true; 4],
            StoppingRule::horizon(1),
            &mut trial_rng(0, 0),
            &mut NoObserver
        )
        .is_err());
    }

    #[test]
    fn default_horizon_formula() {
        let g = build_graph(GraphFamily::Star, 8, 0).unwrap();
        let ln8 = 8f64.ln();
        assert_eq!(
            default_horizon(&g, 10.0),
            (200.0 * 10.0 * ln8 * 7.0 * ln8).ceil() as u64
        );
    }
}
