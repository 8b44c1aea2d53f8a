//! Elementary dynamics: two-species annihilation, the 4-state majority
//! protocol, epidemic influence sets and the monotone sign-chain coupling.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::engine::{
    run_from, Census, Control, Interaction, Protocol, RunSpec, Scheduler, StoppingRule, TimeMode, TraceEvent,
};
use crate::error::{param, Error, Result};
use crate::graph::Graph;
use crate::rng::SimRng;

/// Influence tracking keeps `n` bitsets of `n` bits.
pub const INFLUENCE_MAX_NODES: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Annihilation {
    A,
    B,
    C,
}

/// `A + B -> C + C` (either order); every other pair swaps.
#[inline]
pub fn annihilation_rule(x: Annihilation, y: Annihilation) -> (Annihilation, Annihilation) {
    use Annihilation::*;
    match (x, y) {
        (A, B) | (B, A) => (C, C),
        _ => (y, x),
    }
}

/// The annihilation dynamics as an engine protocol. Input 0 maps to `A`.
#[derive(Debug, Clone, Copy, Default)]
pub struct AnnihilationProtocol;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct AnnihilationCensus {
    pub a: u64,
    pub b: u64,
    pub c: u64,
}

impl AnnihilationCensus {
    fn slot(&mut self, s: &Annihilation) -> &mut u64 {
        match s {
            Annihilation::A => &mut self.a,
            Annihilation::B => &mut self.b,
            Annihilation::C => &mut self.c,
        }
    }
}

impl Census<Annihilation> for AnnihilationCensus {
    #[inline]
    fn add(&mut self, s: &Annihilation) {
        *self.slot(s) += 1;
    }
    #[inline]
    fn remove(&mut self, s: &Annihilation) {
        *self.slot(s) -= 1;
    }
    /// The `B` species is extinct.
    fn certified(&self) -> bool {
        self.b == 0
    }
    fn counts(&self) -> BTreeMap<String, u64> {
        BTreeMap::from([("A".into(), self.a), ("B".into(), self.b), ("C".into(), self.c)])
    }
}

impl Protocol for AnnihilationProtocol {
    type State = Annihilation;
    type Census = AnnihilationCensus;

    fn initial_state(&self, _node: usize, input: bool) -> Annihilation {
        if input {
            Annihilation::B
        } else {
            Annihilation::A
        }
    }

    #[inline]
    fn interact(&self, x: &mut Annihilation, y: &mut Annihilation) {
        (*x, *y) = annihilation_rule(*x, *y);
    }

    fn output(&self, s: &Annihilation) -> bool {
        *s == Annihilation::B
    }

    fn census(&self, _n: usize) -> AnnihilationCensus {
        AnnihilationCensus::default()
    }

    fn trace_events(
        &self,
        it: &Interaction,
        before: &[Annihilation; 2],
        after: &[Annihilation; 2],
        out: &mut Vec<TraceEvent>,
    ) {
        if before[0] != Annihilation::C && after == &[Annihilation::C, Annihilation::C] && before[0] != before[1] {
            out.push(TraceEvent::Annihilation {
                step: it.step,
                nodes: [it.initiator, it.responder],
            });
        }
    }
}

/// Result of an extinction or clearing measurement.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HittingTime {
    /// Interaction count at which the event happened; `None` if censored.
    pub steps: Option<u64>,
    /// Real time of the event (continuous runs), or at the horizon.
    pub time: f64,
    /// `(|A_0| - |B_0|)/n` after relabelling so that `A` is the majority.
    pub gamma: f64,
}

impl HittingTime {
    pub fn censored(&self) -> bool {
        self.steps.is_none()
    }
}

fn relabel_majority(init: &[Annihilation]) -> Vec<Annihilation> {
    let a = init.iter().filter(|&&s| s == Annihilation::A).count();
    let b = init.iter().filter(|&&s| s == Annihilation::B).count();
    if b <= a {
        return init.to_vec();
    }
    init.iter()
        .map(|s| match s {
            Annihilation::A => Annihilation::B,
            Annihilation::B => Annihilation::A,
            Annihilation::C => Annihilation::C,
        })
        .collect()
}

fn bias(init: &[Annihilation]) -> f64 {
    let a = init.iter().filter(|&&s| s == Annihilation::A).count() as f64;
    let b = init.iter().filter(|&&s| s == Annihilation::B).count() as f64;
    (a - b) / init.len() as f64
}

/// First step with no minority tokens.
pub fn measure_extinction_time(
    g: &Graph,
    init: &[Annihilation],
    rng: &mut SimRng,
    horizon: u64,
) -> Result<HittingTime> {
    measure_extinction_time_in(g, init, rng, horizon, TimeMode::Discrete)
}

pub fn measure_extinction_time_in(
    g: &Graph,
    init: &[Annihilation],
    rng: &mut SimRng,
    horizon: u64,
    mode: TimeMode,
) -> Result<HittingTime> {
    let config = relabel_majority(init);
    let gamma = bias(&config);
    let spec = RunSpec {
        stop: StoppingRule::certified(horizon),
        time: mode,
        trace: Default::default(),
    };
    let out = run_from(
        &AnnihilationProtocol,
        g,
        config,
        &spec,
        rng,
        &mut crate::engine::NoObserver,
    )?;
    Ok(HittingTime {
        steps: out.certified_step,
        time: out.time,
        gamma,
    })
}

/// First step with extinction or at least `(1-ε)n` empty nodes.
pub fn measure_clearing_time(
    g: &Graph,
    init: &[Annihilation],
    eps: f64,
    rng: &mut SimRng,
    horizon: u64,
) -> Result<HittingTime> {
    if !(eps > 0.0 && eps < 1.0) {
        return param(format!("clearing fraction must lie in (0,1), got {eps}"));
    }
    let config = relabel_majority(init);
    let gamma = bias(&config);
    let threshold = (1.0 - eps) * g.n() as f64;
    let cleared = |c: &AnnihilationCensus| c.b == 0 || c.c as f64 >= threshold;
    let mut census = AnnihilationCensus::default();
    config.iter().for_each(|s| census.add(s));
    if cleared(&census) {
        return Ok(HittingTime {
            steps: Some(0),
            time: 0.0,
            gamma,
        });
    }
    let mut hit = None;
    let mut obs = |it: &Interaction, _: &[Annihilation; 2], _: &[Annihilation], c: &AnnihilationCensus| {
        if cleared(c) {
            hit = Some(it.step);
            Control::Stop
        } else {
            Control::Continue
        }
    };
    let out = run_from(
        &AnnihilationProtocol,
        g,
        config,
        &RunSpec::discrete(StoppingRule::horizon(horizon)),
        rng,
        &mut obs,
    )?;
    Ok(HittingTime {
        steps: hit,
        time: out.time,
        gamma,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum FourState {
    S0,
    S1,
    W0,
    W1,
}

impl FourState {
    pub fn strong(opinion: bool) -> Self {
        if opinion {
            FourState::S1
        } else {
            FourState::S0
        }
    }

    pub fn weak(opinion: bool) -> Self {
        if opinion {
            FourState::W1
        } else {
            FourState::W0
        }
    }

    /// Opinion index, `true` for 1.
    #[inline]
    pub fn opinion(self) -> bool {
        self as u8 & 1 != 0
    }

    pub fn is_strong(self) -> bool {
        matches!(self, FourState::S0 | FourState::S1)
    }

    pub const ALL: [FourState; 4] = [FourState::S0, FourState::S1, FourState::W0, FourState::W1];
}

/// `S_i + S_{1-i} -> W_{1-i} + W_i`, `S_i + W_{1-i} -> W_i + S_i`,
/// `W_i + W_{1-i} -> W_{1-i} + W_i`; everything else is unchanged.
#[inline]
pub fn four_state_rule(x: FourState, y: FourState) -> (FourState, FourState) {
    use FourState::*;
    match (x, y) {
        (S0, S1) => (W1, W0),
        (S1, S0) => (W0, W1),
        (S0, W1) => (W0, S0),
        (S1, W0) => (W1, S1),
        (W0, W1) => (W1, W0),
        (W1, W0) => (W0, W1),
        _ => (x, y),
    }
}

/// All nodes hold the same opinion index; closed under the rules.
pub fn four_state_stabilized(config: &[FourState]) -> bool {
    config.windows(2).all(|w| w[0].opinion() == w[1].opinion())
}

#[derive(Debug, Clone, Copy, Default)]
pub struct FourStateProtocol;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FourStateCensus {
    pub counts: [u64; 4],
}

impl FourStateCensus {
    pub fn strong_bias(&self) -> i64 {
        self.counts[0] as i64 - self.counts[1] as i64
    }
}

impl Census<FourState> for FourStateCensus {
    #[inline]
    fn add(&mut self, s: &FourState) {
        self.counts[*s as usize] += 1;
    }
    #[inline]
    fn remove(&mut self, s: &FourState) {
        self.counts[*s as usize] -= 1;
    }
    fn certified(&self) -> bool {
        let ones = self.counts[1] + self.counts[3];
        let zeros = self.counts[0] + self.counts[2];
        ones == 0 || zeros == 0
    }
    fn counts(&self) -> BTreeMap<String, u64> {
        FourState::ALL
            .iter()
            .map(|s| (format!("{s:?}"), self.counts[*s as usize]))
            .collect()
    }
}

impl Protocol for FourStateProtocol {
    type State = FourState;
    type Census = FourStateCensus;

    fn initial_state(&self, _node: usize, input: bool) -> FourState {
        FourState::strong(input)
    }

    #[inline]
    fn interact(&self, x: &mut FourState, y: &mut FourState) {
        (*x, *y) = four_state_rule(*x, *y);
    }

    fn output(&self, s: &FourState) -> bool {
        s.opinion()
    }

    fn census(&self, _n: usize) -> FourStateCensus {
        FourStateCensus::default()
    }
}

/// Per-node influencer sets `I_t(v)` as bitsets.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InfluenceMatrix {
    n: usize,
    words: usize,
    bits: Vec<u64>,
}

impl InfluenceMatrix {
    pub fn identity(n: usize) -> Self {
        let words = n.div_ceil(64);
        let mut bits = vec![0u64; n * words];
        for v in 0..n {
            bits[v * words + v / 64] |= 1 << (v % 64);
        }
        InfluenceMatrix { n, words, bits }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// `u ∈ I(v)`.
    pub fn contains(&self, v: usize, u: usize) -> bool {
        self.bits[v * self.words + u / 64] >> (u % 64) & 1 == 1
    }

    pub fn row(&self, v: usize) -> &[u64] {
        &self.bits[v * self.words..(v + 1) * self.words]
    }

    /// `I(v) ⊆ other.I(v)` for every `v`.
    pub fn is_subset_of(&self, other: &InfluenceMatrix) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| a & !b == 0)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InfluenceReport {
    /// `T_br(A)` for the requested source set.
    pub set_broadcast: Option<u64>,
    /// `T_br(u)` for every single node `u` (censored entries are `None`).
    pub single_broadcast: Vec<Option<u64>>,
    pub steps: u64,
    pub matrix: InfluenceMatrix,
}

/// Evolves the influencer sets (both endpoints take the union) until every
/// singleton broadcast and the set broadcast have completed, or `horizon`.
pub fn track_influence(g: &Graph, sources: &[usize], rng: &mut SimRng, horizon: u64) -> Result<InfluenceReport> {
    track_influence_with(g, sources, rng, horizon, true)
}

/// As [`track_influence`]; with `all_sources == false` the run stops as soon
/// as the set broadcast completes.
pub fn track_influence_with(
    g: &Graph,
    sources: &[usize],
    rng: &mut SimRng,
    horizon: u64,
    all_sources: bool,
) -> Result<InfluenceReport> {
    let n = g.n();
    if n > INFLUENCE_MAX_NODES {
        return Err(Error::Size(format!(
            "influence tracking is limited to n <= {INFLUENCE_MAX_NODES}"
        )));
    }
    if sources.is_empty() {
        return param("source set must be nonempty");
    }
    if let Some(&bad) = sources.iter().find(|&&u| u >= n) {
        return param(format!("source {bad} out of range"));
    }
    let mut matrix = InfluenceMatrix::identity(n);
    let words = matrix.words;
    let mut mask = vec![0u64; words];
    for &u in sources {
        mask[u / 64] |= 1 << (u % 64);
    }
    let hits = |row: &[u64]| row.iter().zip(&mask).any(|(a, b)| a & b != 0);

    // reach[u] = number of v with u ∈ I(v)
    let mut reach = vec![1usize; n];
    let mut single: Vec<Option<u64>> = vec![None; n];
    let mut single_done = 0;
    if n == 1 {
        single = vec![Some(0)];
        single_done = 1;
    }
    let mut covered = (0..n).filter(|&v| hits(matrix.row(v))).count();
    let mut set_broadcast = (covered == n).then_some(0);

    let sched = Scheduler::new(g);
    let mut union = vec![0u64; words];
    let mut step = 0;
    let done = |set: &Option<u64>, singles: usize| set.is_some() && (!all_sources || singles == n);
    while !done(&set_broadcast, single_done) && step < horizon {
        let (u, v) = sched.sample(rng);
        step += 1;
        let (ru, rv) = (u * words, v * words);
        let before_u = hits(matrix.row(u));
        let before_v = hits(matrix.row(v));
        for w in 0..words {
            union[w] = matrix.bits[ru + w] | matrix.bits[rv + w];
        }
        for base in [ru, rv] {
            for (w, &un) in union.iter().enumerate() {
                let mut fresh = un & !matrix.bits[base + w];
                matrix.bits[base + w] = un;
                while fresh != 0 {
                    let b = fresh.trailing_zeros() as usize;
                    fresh &= fresh - 1;
                    let src = w * 64 + b;
                    reach[src] += 1;
                    if reach[src] == n {
                        single[src] = Some(step);
                        single_done += 1;
                    }
                }
            }
        }
        let now = hits(&union);
        covered += (now && !before_u) as usize + (now && !before_v) as usize;
        if covered == n && set_broadcast.is_none() {
            set_broadcast = Some(step);
        }
    }
    Ok(InfluenceReport {
        set_broadcast,
        single_broadcast: single,
        steps: step,
        matrix,
    })
}

/// Sign projection of an annihilation configuration: `A -> +1`, `C -> 0`,
/// `B -> -1`.
pub fn sign_chain(config: &[Annihilation]) -> Vec<i8> {
    config
        .iter()
        .map(|s| match s {
            Annihilation::A => 1,
            Annihilation::C => 0,
            Annihilation::B => -1,
        })
        .collect()
}

/// Annihilation on signs: opposite signs cancel, otherwise the values swap.
#[inline]
pub fn sign_rule(x: i8, y: i8) -> (i8, i8) {
    if x * y == -1 {
        (0, 0)
    } else {
        (y, x)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CouplingReport {
    pub violated: bool,
    pub first_violation_step: Option<u64>,
    /// Steps at which `Z(u)+Z(v)` changed across an interaction (never, for
    /// a correct implementation).
    pub conservation_failures: u64,
}

/// Runs two sign chains on one shared schedule and checks that pointwise
/// domination `Z >= Z'` persists.
pub fn run_domination_coupling(
    g: &Graph,
    z0: &[i8],
    z0_low: &[i8],
    rng: &mut SimRng,
    steps: u64,
) -> Result<CouplingReport> {
    let n = g.n();
    if z0.len() != n || z0_low.len() != n {
        return param("sign chains must have one entry per node");
    }
    if z0.iter().chain(z0_low).any(|z| !(-1..=1).contains(z)) {
        return param("sign chain entries must lie in {-1, 0, 1}");
    }
    if let Some(u) = (0..n).find(|&u| z0[u] < z0_low[u]) {
        return Err(Error::Contract(format!("initial chains are not ordered at node {u}")));
    }
    let (mut z, mut w) = (z0.to_vec(), z0_low.to_vec());
    let sched = Scheduler::new(g);
    let mut report = CouplingReport {
        violated: false,
        first_violation_step: None,
        conservation_failures: 0,
    };
    for step in 1..=steps {
        let (u, v) = sched.sample(rng);
        for chain in [&mut z, &mut w] {
            let sum = chain[u] + chain[v];
            (chain[u], chain[v]) = sign_rule(chain[u], chain[v]);
            if chain[u] + chain[v] != sum {
                report.conservation_failures += 1;
            }
        }
        if (z[u] < w[u] || z[v] < w[v]) && !report.violated {
            report.violated = true;
            report.first_violation_step = Some(step);
        }
    }
    Ok(report)
}

/// How opinions are laid out on the nodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Random,
    /// Contiguous blocks in BFS order from node 0.
    Segregated,
    /// Alternating along BFS order while the minority lasts.
    Interleaved,
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Placement::Random => "random",
            Placement::Segregated => "segregated",
            Placement::Interleaved => "interleaved",
        })
    }
}

impl FromStr for Placement {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Placement::Random),
            "segregated" => Ok(Placement::Segregated),
            "interleaved" => Ok(Placement::Interleaved),
            other => Err(Error::Parse(format!("unknown placement {other:?}"))),
        }
    }
}

/// Majority size `⌈n(1+γ)/2⌉` for a target bias.
pub fn majority_count(n: usize, gamma: f64) -> Result<usize> {
    if !(0.0..=1.0).contains(&gamma) {
        return param(format!("bias must lie in [0,1], got {gamma}"));
    }
    // guard against 0.5000000001-style rounding before the ceiling
    let raw = n as f64 * (1.0 + gamma) / 2.0;
    let count = (raw - 1e-9).ceil().max(0.0) as usize;
    Ok(count.min(n))
}

/// Input bits with `majority` zeros and `n - majority` ones laid out by
/// `placement`. Input 0 is the majority opinion.
pub fn place_inputs(g: &Graph, majority: usize, placement: Placement, rng: &mut SimRng) -> Result<Vec<bool>> {
    let n = g.n();
    if majority > n {
        return param(format!("majority {majority} exceeds n={n}"));
    }
    let minority = n - majority;
    let mut inputs = vec![false; n];
    match placement {
        Placement::Random => {
            let mut nodes: Vec<usize> = (0..n).collect();
            nodes.shuffle(rng);
            nodes[..minority].iter().for_each(|&u| inputs[u] = true);
        }
        Placement::Segregated => {
            let order = g.bfs_order(0);
            order[majority..].iter().for_each(|&u| inputs[u] = true);
        }
        Placement::Interleaved => {
            let order = g.bfs_order(0);
            let mut left = minority;
            for (i, &u) in order.iter().enumerate() {
                let must = n - i == left;
                if left > 0 && (i % 2 == 1 || must) {
                    inputs[u] = true;
                    left -= 1;
                }
            }
        }
    }
    Ok(inputs)
}

/// Annihilation configuration from input bits (0 -> `A`, 1 -> `B`).
pub fn annihilation_config(inputs: &[bool]) -> Vec<Annihilation> {
    inputs
        .iter()
        .map(|&b| if b { Annihilation::B } else { Annihilation::A })
        .collect()
}
