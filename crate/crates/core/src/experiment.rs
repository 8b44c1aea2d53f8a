//! Seeded experiment runner: configuration, per-trial records, bound ratios
//! and state-count audits.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clock::{phase_clock_params, ClockConfig, ClockParams, GraphScale};
use crate::dynamics::{
    annihilation_config, majority_count, measure_clearing_time, measure_extinction_time_in, place_inputs,
    track_influence_with, AnnihilationProtocol, FourStateProtocol, Placement,
};
use crate::engine::{
    default_horizon, initial_configuration, run_discrete, run_from, NoObserver, RunSpec, StoppingRule, TimeMode, Trace,
    TraceMode,
};
use crate::error::{Error, Result};
use crate::graph::{build_graph, Graph, GraphFamily};
use crate::majority::{
    alg1_init, default_majority_horizon, measure_side_extinction, measure_stabilization, theta_max, MajorityProtocol,
    Variant,
};
use crate::rng::trial_rng;
use crate::spectral::tau_rel;
use crate::stats::{quantile, MetricSummary, SummaryStats};

/// Trials are run and persisted in batches of this many.
const BATCH: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolName {
    Annihilation,
    Clearing,
    FourState,
    Alg1,
    Alg2,
    Broadcast,
}

impl ProtocolName {
    pub const ALL: [ProtocolName; 6] = [
        ProtocolName::Annihilation,
        ProtocolName::Clearing,
        ProtocolName::FourState,
        ProtocolName::Alg1,
        ProtocolName::Alg2,
        ProtocolName::Broadcast,
    ];

    /// Name of the measured time in records and summaries.
    pub fn metric(self) -> &'static str {
        match self {
            ProtocolName::Annihilation => "t_ext",
            ProtocolName::Clearing => "t_clr",
            ProtocolName::FourState | ProtocolName::Alg1 | ProtocolName::Alg2 => "t_stab",
            ProtocolName::Broadcast => "t_br",
        }
    }

    fn needs_inputs(self) -> bool {
        self != ProtocolName::Broadcast
    }
}

impl fmt::Display for ProtocolName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ProtocolName::Annihilation => "annihilation",
            ProtocolName::Clearing => "clearing",
            ProtocolName::FourState => "four_state",
            ProtocolName::Alg1 => "alg1",
            ProtocolName::Alg2 => "alg2",
            ProtocolName::Broadcast => "broadcast",
        };
        f.write_str(s)
    }
}

impl FromStr for ProtocolName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ProtocolName::ALL
            .into_iter()
            .find(|p| p.to_string() == s.trim())
            .ok_or_else(|| Error::Parse(format!("unknown protocol {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    /// Family name as accepted by [`GraphFamily::from_str`].
    pub family: String,
    pub n: usize,
    /// Generator seed for random families.
    #[serde(default)]
    pub seed: u64,
}

impl GraphSpec {
    pub fn new(family: GraphFamily, n: usize, seed: u64) -> Self {
        GraphSpec {
            family: family.to_string(),
            n,
            seed,
        }
    }

    pub fn build(&self) -> Result<Graph> {
        build_graph(self.family.parse()?, self.n, self.seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSpec {
    pub count: u64,
    pub base: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OutputPaths {
    /// JSONL, one record per trial.
    pub records: Option<PathBuf>,
    /// CSV summary.
    pub summary: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub graphs: Vec<GraphSpec>,
    pub protocol: ProtocolName,
    /// Target bias; the majority gets `ceil(n(1+γ)/2)` nodes.
    #[serde(default)]
    pub gamma: Option<f64>,
    #[serde(default = "default_placement")]
    pub placement: Placement,
    /// Clearing fraction.
    #[serde(default)]
    pub epsilon: Option<f64>,
    pub seeds: SeedSpec,
    /// Step budget per trial; protocol-specific default when absent.
    #[serde(default)]
    pub horizon: Option<u64>,
    #[serde(default = "default_time_mode")]
    pub time_mode: TimeMode,
    #[serde(default)]
    pub clock: ClockConfig,
    #[serde(default)]
    pub output: OutputPaths,
}

fn default_placement() -> Placement {
    Placement::Random
}

fn default_time_mode() -> TimeMode {
    TimeMode::Discrete
}

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(msg.into()))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.graphs.is_empty() {
            return config_err("at least one graph is required");
        }
        if self.seeds.count == 0 {
            return config_err("seeds.count must be at least 1");
        }
        if self.horizon == Some(0) {
            return config_err("horizon must be positive");
        }
        for spec in &self.graphs {
            spec.family
                .parse::<GraphFamily>()
                .map_err(|e| Error::Config(e.to_string()))?;
            if spec.n < 2 {
                return config_err(format!("graph {} needs n >= 2", spec.family));
            }
            if self.protocol.needs_inputs() {
                let gamma = self
                    .gamma
                    .ok_or_else(|| Error::Config(format!("{} needs gamma", self.protocol)))?;
                let majority = majority_count(spec.n, gamma).map_err(|e| Error::Config(e.to_string()))?;
                if 2 * majority <= spec.n {
                    return config_err(format!("gamma {gamma} gives no strict majority on n={}", spec.n));
                }
            }
        }
        if self.protocol == ProtocolName::Clearing {
            match self.epsilon {
                Some(e) if e > 0.0 && e < 1.0 => {}
                _ => return config_err("clearing needs epsilon in (0,1)"),
            }
        }
        if self.time_mode == TimeMode::Continuous && self.protocol != ProtocolName::Annihilation {
            return config_err("continuous time is supported for annihilation only");
        }
        if self.clock.kappa <= 0.0 || self.clock.lambda <= 0.0 {
            return config_err("clock kappa and lambda must be positive");
        }
        Ok(())
    }
}

/// One seeded run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub protocol: ProtocolName,
    pub graph: String,
    pub n: usize,
    pub m: usize,
    pub graph_seed: u64,
    pub tau_rel: f64,
    pub base_seed: u64,
    pub trial: u64,
    /// Realized bias of the placed inputs.
    pub gamma: Option<f64>,
    pub steps: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub time: Option<f64>,
    pub t_ext: Option<u64>,
    pub t_clr: Option<u64>,
    pub t_br: Option<u64>,
    pub t_stab: Option<u64>,
    pub censored: bool,
    pub correct: Option<bool>,
    /// Theoretical time bound the measurement is compared against.
    pub bound: f64,
    pub ratio: Option<f64>,
    pub verdicts: BTreeMap<String, bool>,
}

impl TrialRecord {
    pub fn measured(&self) -> Option<u64> {
        match self.protocol.metric() {
            "t_ext" => self.t_ext,
            "t_clr" => self.t_clr,
            "t_br" => self.t_br,
            _ => self.t_stab,
        }
    }
}

pub fn write_records_jsonl<W: Write>(records: &[TrialRecord], mut w: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_records_jsonl(text: &str) -> Result<Vec<TrialRecord>> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Theoretical time bounds (natural logarithms throughout).
pub mod bounds {
    /// `(κ+1) τ_rel ln n / γ`.
    pub fn extinction(kappa: f64, tau_rel: f64, n: usize, gamma: f64) -> f64 {
        (kappa + 1.0) * tau_rel * (n as f64).ln() / gamma
    }

    /// `8 (κ+1) τ_rel ln n / ε`.
    pub fn clearing(kappa: f64, tau_rel: f64, n: usize, eps: f64) -> f64 {
        8.0 * (kappa + 1.0) * tau_rel * (n as f64).ln() / eps
    }

    /// `τ_rel ln n / γ`.
    pub fn four_state(tau_rel: f64, n: usize, gamma: f64) -> f64 {
        tau_rel * (n as f64).ln() / gamma
    }

    /// `(Δ/δ) τ_rel ln n max(1, ln(1/γ))`.
    pub fn fast_majority(max_degree: usize, min_degree: usize, tau_rel: f64, n: usize, gamma: f64) -> f64 {
        let rounds = (1.0 / gamma).ln().max(1.0);
        max_degree as f64 / min_degree as f64 * tau_rel * (n as f64).ln() * rounds
    }

    /// `τ_rel ln n`.
    pub fn broadcast(tau_rel: f64, n: usize) -> f64 {
        tau_rel * (n as f64).ln()
    }
}

/// Everything a trial needs that does not depend on the seed.
struct GraphContext {
    spec: GraphSpec,
    graph: Graph,
    tau_rel: f64,
    params: Option<ClockParams>,
}

impl GraphContext {
    fn new(spec: &GraphSpec, cfg: &ExperimentConfig) -> Result<Self> {
        let graph = spec.build()?;
        let tau = tau_rel(&graph)?;
        let params = match cfg.protocol {
            ProtocolName::Alg1 | ProtocolName::Alg2 => {
                Some(phase_clock_params(&GraphScale::with_tau_rel(&graph, tau), &cfg.clock)?)
            }
            _ => None,
        };
        Ok(GraphContext {
            spec: spec.clone(),
            graph,
            tau_rel: tau,
            params,
        })
    }

    fn horizon(&self, cfg: &ExperimentConfig) -> u64 {
        if let Some(h) = cfg.horizon {
            return h;
        }
        let base = default_horizon(&self.graph, self.tau_rel);
        match &self.params {
            Some(p) => base.max(default_majority_horizon(p)),
            None => base,
        }
    }
}

fn realized_gamma(inputs: &[bool]) -> f64 {
    let ones = inputs.iter().filter(|&&b| b).count();
    let zeros = inputs.len() - ones;
    ones.abs_diff(zeros) as f64 / inputs.len() as f64
}

fn run_trial(ctx: &GraphContext, cfg: &ExperimentConfig, stream: u64) -> Result<TrialRecord> {
    let g = &ctx.graph;
    let n = g.n();
    let mut rng = trial_rng(cfg.seeds.base, stream);
    let horizon = ctx.horizon(cfg);
    let kappa = cfg.clock.kappa;
    let inputs = if cfg.protocol.needs_inputs() {
        let majority = majority_count(n, cfg.gamma.unwrap_or_default())?;
        Some(place_inputs(g, majority, cfg.placement, &mut rng)?)
    } else {
        None
    };
    let gamma = inputs.as_deref().map(realized_gamma);
    let mut rec = TrialRecord {
        protocol: cfg.protocol,
        graph: g.family().to_string(),
        n,
        m: g.m(),
        graph_seed: ctx.spec.seed,
        tau_rel: ctx.tau_rel,
        base_seed: cfg.seeds.base,
        trial: stream,
        gamma,
        steps: 0,
        time: None,
        t_ext: None,
        t_clr: None,
        t_br: None,
        t_stab: None,
        censored: false,
        correct: None,
        bound: 0.0,
        ratio: None,
        verdicts: BTreeMap::new(),
    };
    match cfg.protocol {
        ProtocolName::Annihilation => {
            let init = annihilation_config(inputs.as_deref().unwrap_or_default());
            let h = measure_extinction_time_in(g, &init, &mut rng, horizon, cfg.time_mode)?;
            rec.t_ext = h.steps;
            rec.steps = h.steps.unwrap_or(horizon);
            if cfg.time_mode == TimeMode::Continuous {
                rec.time = Some(h.time);
            }
            rec.bound = bounds::extinction(kappa, ctx.tau_rel, n, h.gamma);
        }
        ProtocolName::Clearing => {
            let eps = cfg.epsilon.unwrap_or_default();
            let init = annihilation_config(inputs.as_deref().unwrap_or_default());
            let h = measure_clearing_time(g, &init, eps, &mut rng, horizon)?;
            rec.t_clr = h.steps;
            rec.steps = h.steps.unwrap_or(horizon);
            rec.bound = bounds::clearing(kappa, ctx.tau_rel, n, eps);
        }
        ProtocolName::FourState => {
            let inputs = inputs.unwrap_or_default();
            let out = run_discrete(
                &FourStateProtocol,
                g,
                &inputs,
                StoppingRule::certified(horizon),
                &mut rng,
                &mut NoObserver,
            )?;
            rec.t_stab = out.certified_step.map(|t| t.max(1));
            rec.steps = out.steps;
            let majority = realized_majority(&inputs);
            rec.correct = out.certified_step.map(|_| out.consensus == Some(majority));
            rec.bound = bounds::four_state(ctx.tau_rel, n, gamma.unwrap_or(1.0));
        }
        ProtocolName::Alg1 | ProtocolName::Alg2 => {
            let params = ctx
                .params
                .as_ref()
                .ok_or_else(|| Error::Contract("missing clock parameters".into()))?;
            let inputs = inputs.unwrap_or_default();
            let monitor = if cfg.protocol == ProtocolName::Alg1 {
                // the bare protocol is never certified; time the minority's extinction instead
                let proto = MajorityProtocol::new(Variant::Alg1, params)?;
                let s = measure_side_extinction(&proto, g, &inputs, &mut rng, horizon)?;
                rec.t_stab = s.t_hat;
                rec.steps = s.steps;
                rec.correct = s.correct;
                s.monitor
            } else {
                let proto = MajorityProtocol::new(Variant::Alg2, params)?;
                let s = measure_stabilization(&proto, g, &inputs, &mut rng, horizon)?;
                rec.t_stab = s.t_hat;
                rec.steps = s.steps;
                rec.correct = s.certified.then_some(s.correct);
                s.monitor
            };
            rec.verdicts
                .insert("potential_conserved".into(), monitor.potential_violation.is_none());
            rec.verdicts
                .insert("clock_cap".into(), monitor.clock_cap_violation.is_none());
            rec.bound = bounds::fast_majority(g.max_degree(), g.min_degree(), ctx.tau_rel, n, gamma.unwrap_or(1.0));
        }
        ProtocolName::Broadcast => {
            let source = rng.random_range(0..n);
            let report = track_influence_with(g, &[source], &mut rng, horizon, false)?;
            rec.t_br = report.set_broadcast;
            rec.steps = report.steps;
            rec.bound = bounds::broadcast(ctx.tau_rel, n);
        }
    }
    rec.censored = rec.measured().is_none();
    if let Some(c) = rec.correct {
        rec.verdicts.insert("correct".into(), c);
    }
    rec.ratio = rec.measured().map(|t| t as f64 / rec.bound);
    Ok(rec)
}

fn realized_majority(inputs: &[bool]) -> bool {
    2 * inputs.iter().filter(|&&b| b).count() > inputs.len()
}

/// Runs every (graph, seed) trial. Trial `i` of graph `j` uses stream
/// `j * count + i` of the base seed, so records are reproducible and
/// independent of thread count. Records are appended to `output.records`
/// batch by batch, so an interrupted run keeps what it finished.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(Vec<TrialRecord>, SummaryStats)> {
    cfg.validate()?;
    let contexts = cfg
        .graphs
        .iter()
        .map(|s| GraphContext::new(s, cfg))
        .collect::<Result<Vec<_>>>()?;
    let count = cfg.seeds.count;
    let jobs: Vec<(usize, u64)> = (0..contexts.len())
        .flat_map(|j| (0..count).map(move |i| (j, j as u64 * count + i)))
        .collect();
    let mut sink = match &cfg.output.records {
        Some(p) => Some(BufWriter::new(File::create(p)?)),
        None => None,
    };
    let mut records = Vec::with_capacity(jobs.len());
    for batch in jobs.chunks(BATCH) {
        let done: Vec<TrialRecord> = batch
            .par_iter()
            .map(|&(j, stream)| run_trial(&contexts[j], cfg, stream))
            .collect::<Result<_>>()?;
        if let Some(w) = sink.as_mut() {
            write_records_jsonl(&done, &mut *w)?;
            w.flush()?;
        }
        records.extend(done);
    }
    let summary = summarize(&records)?;
    if let Some(p) = &cfg.output.summary {
        std::fs::write(p, summary.to_csv())?;
    }
    Ok((records, summary))
}

/// Aggregates records by metric; independent of record order.
pub fn summarize(records: &[TrialRecord]) -> Result<SummaryStats> {
    let mut metrics: BTreeMap<String, Vec<Option<f64>>> = BTreeMap::new();
    let mut ratios: BTreeMap<String, Vec<Option<f64>>> = BTreeMap::new();
    for r in records {
        let key = r.protocol.metric().to_string();
        metrics
            .entry(key.clone())
            .or_default()
            .push(r.measured().map(|t| t as f64));
        ratios.entry(key).or_default().push(r.ratio);
    }
    let mut out = SummaryStats::default();
    for (k, v) in metrics {
        out.metrics.insert(k, MetricSummary::from_samples(&v)?);
    }
    for (k, v) in ratios {
        out.bound_ratios.insert(k, MetricSummary::from_samples(&v)?);
    }
    Ok(out)
}

/// Replays the inputs of trial `stream` on graph `graph` with trace capture.
/// The run stops on certification (or the horizon); clearing and broadcast
/// have no engine protocol and are rejected.
pub fn trace_trial(cfg: &ExperimentConfig, graph: usize, stream: u64, mode: TraceMode) -> Result<Trace> {
    cfg.validate()?;
    let spec = cfg
        .graphs
        .get(graph)
        .ok_or_else(|| Error::Config(format!("graph index {graph} out of range")))?;
    let ctx = GraphContext::new(spec, cfg)?;
    let g = &ctx.graph;
    let mut rng = trial_rng(cfg.seeds.base, stream);
    let majority = majority_count(g.n(), cfg.gamma.unwrap_or_default())?;
    let inputs = place_inputs(g, majority, cfg.placement, &mut rng)?;
    let run = RunSpec::discrete(StoppingRule::certified(ctx.horizon(cfg))).with_trace(mode);
    let trace = match cfg.protocol {
        ProtocolName::Annihilation => {
            let init = annihilation_config(&inputs);
            run_from(&AnnihilationProtocol, g, init, &run, &mut rng, &mut NoObserver)?.trace
        }
        ProtocolName::FourState => {
            let init = initial_configuration(&FourStateProtocol, &inputs);
            run_from(&FourStateProtocol, g, init, &run, &mut rng, &mut NoObserver)?.trace
        }
        ProtocolName::Alg1 | ProtocolName::Alg2 => {
            let variant = if cfg.protocol == ProtocolName::Alg1 {
                Variant::Alg1
            } else {
                Variant::Alg2
            };
            let params = ctx
                .params
                .as_ref()
                .ok_or_else(|| Error::Contract("missing clock parameters".into()))?;
            let proto = MajorityProtocol::new(variant, params)?;
            run_from(&proto, g, alg1_init(&inputs)?, &run, &mut rng, &mut NoObserver)?.trace
        }
        p => return config_err(format!("{p} has no traceable engine protocol")),
    };
    Ok(trace.unwrap_or_default())
}

/// Reachable-state counts of each protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateAudit {
    pub protocol: ProtocolName,
    pub opinion_states: u64,
    pub clock_states: u64,
    pub total: u64,
    /// States of the bare clock automaton, counted by exhaustive reachability.
    pub clock_core_states: Option<u64>,
    /// Asymptotic form of the count.
    pub asymptotic: String,
}

/// Exact state counts. Majority variants need the clock parameters; the
/// counts are products of the independent token components.
pub fn state_count_audit(protocol: ProtocolName, n: usize, params: Option<&ClockParams>) -> Result<StateAudit> {
    let audit = |opinion: u64, clock: u64, core: Option<u64>, asymptotic: &str| StateAudit {
        protocol,
        opinion_states: opinion,
        clock_states: clock,
        total: opinion + clock,
        clock_core_states: core,
        asymptotic: asymptotic.to_string(),
    };
    match protocol {
        ProtocolName::FourState => Ok(audit(4, 0, None, "O(1)")),
        ProtocolName::Annihilation | ProtocolName::Clearing => Ok(audit(3, 0, None, "O(1)")),
        ProtocolName::Broadcast => Ok(audit(2, 0, None, "O(1)")),
        ProtocolName::Alg1 | ProtocolName::Alg2 => {
            let p = params.ok_or_else(|| Error::Parameter(format!("{protocol} audit needs clock parameters")))?;
            if p.n != n {
                return Err(Error::Parameter(format!(
                    "clock parameters are for n={}, audit asked n={n}",
                    p.n
                )));
            }
            let core = p.automaton().reachable_states().len() as u64;
            let phases = p.phases as u64;
            let counters = theta_max(n) as u64 + 1;
            // Alg-2 tokens carry three flags and sit on a node with a 4-state backup
            let extra = if protocol == ProtocolName::Alg2 { 8 * 4 } else { 1 };
            let opinion = 5 * phases * counters * extra;
            let clock = core * phases * 2 * extra;
            Ok(audit(opinion, clock, Some(core), "O(log n (log(Δ/δ) + log(τ_rel/n)))"))
        }
    }
}

/// Broadcast constant from single-source broadcast times: the 99.9th
/// percentile of `T_br(v) / (τ_rel ln n)` over `trials` runs, times 1.5.
pub fn calibrate_c_br(g: &Graph, tau_rel: f64, trials: u64, base_seed: u64) -> Result<f64> {
    if trials == 0 {
        return Err(Error::Parameter("calibration needs at least one trial".into()));
    }
    let horizon = default_horizon(g, tau_rel);
    let scale = bounds::broadcast(tau_rel, g.n());
    let samples: Vec<f64> = (0..trials)
        .into_par_iter()
        .map(|i| {
            let mut rng = trial_rng(base_seed, i);
            let source = rng.random_range(0..g.n());
            let r = track_influence_with(g, &[source], &mut rng, horizon, false)?;
            r.set_broadcast
                .map(|t| t as f64 / scale)
                .ok_or_else(|| Error::Parameter(format!("broadcast censored at horizon {horizon}")))
        })
        .collect::<Result<_>>()?;
    Ok(1.5 * quantile(&samples, 0.999).unwrap_or_default())
}
