//! Clock tokens built from `p`-coin automata, the derived clock constants,
//! and exact validation of phase-clock traces.

use std::collections::{BTreeSet, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::engine::Scheduler;
use crate::error::{param, Error, Result};
use crate::graph::Graph;
use crate::rng::SimRng;
use crate::spectral;

/// Position inside the `H x (2K-1)` automaton.
///
/// `position` 0 is the start of a column; `1..K` counts consecutive ones;
/// `K-1+j` means `j` bits consumed after a zero was seen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct ClockCore {
    pub column: u16,
    pub position: u16,
}

/// An `H`-column automaton whose columns are `2^-K` coins.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClockAutomaton {
    h: u16,
    k: u16,
}

impl ClockAutomaton {
    pub fn new(h: u32, k: u32) -> Result<Self> {
        if h == 0 || k == 0 {
            return param(format!("clock automaton needs H >= 1 and K >= 1, got H={h}, K={k}"));
        }
        if h > u16::MAX as u32 || 2 * k > u16::MAX as u32 {
            return param("clock automaton dimensions too large");
        }
        Ok(ClockAutomaton {
            h: h as u16,
            k: k as u16,
        })
    }

    pub fn h(&self) -> u32 {
        self.h as u32
    }

    pub fn k(&self) -> u32 {
        self.k as u32
    }

    /// `H(2K-1)`.
    pub fn state_count(&self) -> usize {
        self.h as usize * (2 * self.k as usize - 1)
    }

    /// One transition. Returns the new state, whether a coin just succeeded,
    /// and whether that success overflowed the column counter (a tick).
    #[inline]
    pub fn step(&self, s: ClockCore, bit: bool) -> (ClockCore, bool, bool) {
        let k = self.k;
        let (consumed, failed) = if s.position < k {
            (s.position, false)
        } else {
            (s.position - (k - 1), true)
        };
        let consumed = consumed + 1;
        let failed = failed || !bit;
        if consumed == k {
            if failed {
                return (
                    ClockCore {
                        column: s.column,
                        position: 0,
                    },
                    false,
                    false,
                );
            }
            let column = s.column + 1;
            if column == self.h {
                return (ClockCore { column: 0, position: 0 }, true, true);
            }
            return (ClockCore { column, position: 0 }, true, false);
        }
        let position = if failed { k - 1 + consumed } else { consumed };
        (
            ClockCore {
                column: s.column,
                position,
            },
            false,
            false,
        )
    }

    /// States reachable from the initial state under arbitrary bit strings.
    pub fn reachable_states(&self) -> BTreeSet<ClockCore> {
        let mut seen = BTreeSet::from([ClockCore::default()]);
        let mut queue = VecDeque::from([ClockCore::default()]);
        while let Some(s) = queue.pop_front() {
            for bit in [false, true] {
                let (next, _, _) = self.step(s, bit);
                if seen.insert(next) {
                    queue.push_back(next);
                }
            }
        }
        seen
    }
}

/// The automaton as a lookup table over packed state indices
/// `column (2K-1) + position`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TransitionTable {
    width: u16,
    /// Entry `2 i + bit`: next index in the low 16 bits, tick flag above.
    next: Vec<u32>,
}

impl TransitionTable {
    pub fn new(a: &ClockAutomaton) -> Self {
        let width = 2 * a.k - 1;
        let mut next = Vec::with_capacity(2 * a.state_count());
        for column in 0..a.h {
            for position in 0..width {
                for bit in [false, true] {
                    let (s, _, tick) = a.step(ClockCore { column, position }, bit);
                    let idx = s.column as u32 * width as u32 + s.position as u32;
                    next.push(idx | (tick as u32) << 16);
                }
            }
        }
        TransitionTable { width, next }
    }

    #[inline]
    pub fn step(&self, index: u16, bit: bool) -> (u16, bool) {
        let e = self.next[2 * index as usize + bit as usize];
        (e as u16, e >> 16 != 0)
    }

    pub fn index(&self, core: ClockCore) -> u16 {
        core.column * self.width + core.position
    }

    pub fn core(&self, index: u16) -> ClockCore {
        ClockCore {
            column: index / self.width,
            position: index % self.width,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClockTokenState {
    pub column: u16,
    pub position: u16,
    pub active: bool,
    pub phase: u8,
}

impl ClockTokenState {
    pub fn fresh() -> Self {
        ClockTokenState {
            column: 0,
            position: 0,
            active: true,
            phase: 0,
        }
    }

    pub fn core(&self) -> ClockCore {
        ClockCore {
            column: self.column,
            position: self.position,
        }
    }
}

/// Advances an active clock token by one local interaction. Inactive tokens
/// are frozen and never tick.
#[inline]
pub fn clock_token_step(a: &ClockAutomaton, s: ClockTokenState, bit: bool) -> (ClockTokenState, bool) {
    if !s.active {
        return (s, false);
    }
    let (core, _, ticked) = a.step(s.core(), bit);
    (
        ClockTokenState {
            column: core.column,
            position: core.position,
            ..s
        },
        ticked,
    )
}

/// Phase-clock rules for token `v` against partner `u`, both read at their
/// pre-interaction values. Returns `(phase, active)`.
#[inline]
pub fn phase_clock_rule(v_phase: u8, v_active: bool, u_phase: u8, v_ticked: bool, phases: u8) -> (u8, bool) {
    let next = if v_phase + 1 == phases { 0 } else { v_phase + 1 };
    let mut phase = v_phase;
    let mut active = v_active;
    if v_active && v_ticked {
        phase = next;
    }
    if u_phase == next {
        phase = u_phase;
        active = false;
    }
    (phase, active)
}

/// Solves `J 2^J = x` by bisection.
pub fn solve_j(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return param(format!("J(x) needs a finite x > 0, got {x}"));
    }
    let f = |j: f64| j * j.exp2();
    let (mut lo, mut hi) = (0.0f64, x.log2().max(1.0) + 1.0);
    for _ in 0..2000 {
        let mid = 0.5 * (lo + hi);
        let r = f(mid);
        if ((r - x) / x).abs() <= 1e-12 {
            return Ok(mid);
        }
        if r < x {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    let mid = 0.5 * (lo + hi);
    let residual = ((f(mid) - x) / x).abs();
    if residual <= 1e-12 {
        Ok(mid)
    } else {
        Err(Error::Numerical {
            message: format!("bisection for J({x}) stalled"),
            residual,
        })
    }
}

/// Smallest integer `k >= 1` with `k 2^k >= x`, i.e. `max(1, ⌈J(x)⌉)`.
pub fn coin_bits(x: f64) -> u32 {
    let mut k = 1u32;
    while (k as f64) * (k as f64).exp2() < x {
        k += 1;
    }
    k
}

/// `⌈c log₂ n⌉`, robust to `log₂` landing a hair above an integer.
pub fn ceil_log2_scaled(c: f64, n: usize) -> u32 {
    ((c * (n as f64).log2()) - 1e-9).ceil().max(0.0) as u32
}

/// Tunable constants of the clock construction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ClockConfig {
    pub kappa: f64,
    /// Concentration constant; the tick interval is scaled by `lambda θ`.
    pub lambda: f64,
    pub phases: u8,
    /// Calibrated broadcast constant; `R >= c_br τ_rel ln n`.
    pub c_br: f64,
    /// Precondition `τ_tick >= tick_floor τ_rel ln n`.
    pub tick_floor: f64,
}

impl Default for ClockConfig {
    fn default() -> Self {
        ClockConfig {
            kappa: 2.0,
            lambda: 4.0,
            phases: 4,
            c_br: 0.0,
            tick_floor: 1.0,
        }
    }
}

/// The graph quantities the clock constants depend on.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GraphScale {
    pub n: usize,
    pub m: usize,
    pub min_degree: usize,
    pub max_degree: usize,
    pub tau_rel: f64,
}

impl GraphScale {
    pub fn of(g: &Graph) -> Result<Self> {
        Ok(GraphScale {
            n: g.n(),
            m: g.m(),
            min_degree: g.min_degree(),
            max_degree: g.max_degree(),
            tau_rel: spectral::tau_rel(g)?,
        })
    }

    pub fn with_tau_rel(g: &Graph, tau_rel: f64) -> Self {
        GraphScale {
            n: g.n(),
            m: g.m(),
            min_degree: g.min_degree(),
            max_degree: g.max_degree(),
            tau_rel,
        }
    }

    pub fn ln_n(&self) -> f64 {
        (self.n as f64).ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClockParams {
    pub n: usize,
    pub kappa: f64,
    pub tau_rel: f64,
    pub tau_tick: f64,
    pub h: u32,
    pub k: u32,
    pub p: f64,
    pub q: f64,
    pub q0: f64,
    pub q1: f64,
    pub theta: f64,
    pub lambda: f64,
    pub tau_tick_scaled: f64,
    /// Nominal delay factor `λθ`.
    pub eta: f64,
    /// `λ H K 2^K / (q0 τ_tick)`: the upper concentration point of the slowest
    /// tick rate relative to `τ_tick`.
    pub eta_effective: f64,
    /// `H K 2^K / (q τ'_tick)`, at least 1.
    pub hk_ratio: f64,
    pub r: u64,
    pub phases: u8,
}

impl ClockParams {
    pub fn automaton(&self) -> ClockAutomaton {
        ClockAutomaton::new(self.h, self.k).expect("validated at derivation")
    }

    /// `H 2^K`, the mean number of coins per tick.
    pub fn mean_coins_per_tick(&self) -> f64 {
        self.h as f64 * (self.k as f64).exp2()
    }

    /// Mean tick interval in global steps at activation rate `q`.
    pub fn mean_tick_steps(&self) -> f64 {
        self.k as f64 * self.mean_coins_per_tick() / self.q
    }

    pub fn clock_core_states(&self) -> usize {
        self.h as usize * (2 * self.k as usize - 1)
    }
}

/// `max(80(κ+2) τ_rel ln n, C_br τ_rel ln n)`.
pub fn broadcast_window(scale: &GraphScale, cfg: &ClockConfig) -> u64 {
    let base = scale.tau_rel * scale.ln_n();
    (80.0 * (cfg.kappa + 2.0) * base).max(cfg.c_br * base).ceil() as u64
}

pub fn derive_clock_params(scale: &GraphScale, tau_tick: f64, cfg: &ClockConfig) -> Result<ClockParams> {
    let n = scale.n;
    if n < 2 {
        return param("clock parameters need n >= 2");
    }
    if !(cfg.kappa > 1.0) {
        return param(format!("kappa must exceed 1, got {}", cfg.kappa));
    }
    if !(cfg.lambda > 1.0) {
        return param(format!("lambda must exceed 1, got {}", cfg.lambda));
    }
    if cfg.phases < 3 {
        return param(format!("phase modulus must exceed 2, got {}", cfg.phases));
    }
    if scale.min_degree == 0 || scale.min_degree > scale.max_degree {
        return param("degree bounds must satisfy 1 <= δ <= Δ");
    }
    if !(scale.tau_rel >= 1.0) {
        return param(format!("relaxation time must be >= 1, got {}", scale.tau_rel));
    }
    let floor = cfg.tick_floor * scale.tau_rel * scale.ln_n();
    if !(tau_tick >= floor) || !tau_tick.is_finite() {
        return param(format!(
            "tau_tick = {tau_tick} is below {} τ_rel ln n = {floor}",
            cfg.tick_floor
        ));
    }

    let m = scale.m as f64;
    let h = ceil_log2_scaled(cfg.kappa, n).max(1);
    let q = 2.0 / n as f64;
    let q0 = scale.min_degree as f64 / m;
    let q1 = scale.max_degree as f64 / m;
    let theta = q1 / q;
    let tau_tick_scaled = cfg.lambda * theta * tau_tick;
    let k = coin_bits(q * tau_tick_scaled / h as f64);
    let hk = h as f64 * k as f64 * (k as f64).exp2();
    let params = ClockParams {
        n,
        kappa: cfg.kappa,
        tau_rel: scale.tau_rel,
        tau_tick,
        h,
        k,
        p: (-(k as f64)).exp2(),
        q,
        q0,
        q1,
        theta,
        lambda: cfg.lambda,
        tau_tick_scaled,
        eta: cfg.lambda * theta,
        eta_effective: cfg.lambda * hk / (q0 * tau_tick),
        hk_ratio: hk / (q * tau_tick_scaled),
        r: broadcast_window(scale, cfg),
        phases: cfg.phases,
    };
    ClockAutomaton::new(h, k)?;
    if hk < q * tau_tick_scaled || params.eta <= 1.0 {
        return Err(Error::Contract(
            "derived clock parameters violate H K 2^K >= q τ'".into(),
        ));
    }
    Ok(params)
}

/// Parameters of the global phase clock: `τ_tick = 2R`.
pub fn phase_clock_params(scale: &GraphScale, cfg: &ClockConfig) -> Result<ClockParams> {
    let r = broadcast_window(scale, cfg);
    derive_clock_params(scale, 2.0 * r as f64, cfg)
}

/// A single clock token walking the graph, swapping with every partner.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoloClockRun {
    pub tick_steps: Vec<u64>,
    /// Coins flipped between consecutive ticks (the first entry counts from
    /// the start).
    pub coins_per_tick: Vec<u64>,
    pub steps: u64,
}

impl SoloClockRun {
    /// Gaps `t_{i+1} - t_i`, with `t_0 = 0`.
    pub fn gaps(&self) -> Vec<u64> {
        let mut prev = 0;
        self.tick_steps
            .iter()
            .map(|&t| {
                let g = t - prev;
                prev = t;
                g
            })
            .collect()
    }
}

pub fn run_solo_clock(
    g: &Graph,
    a: &ClockAutomaton,
    start: usize,
    ticks: usize,
    rng: &mut SimRng,
    horizon: u64,
) -> Result<SoloClockRun> {
    if start >= g.n() {
        return param(format!("start node {start} out of range"));
    }
    let sched = Scheduler::new(g);
    let mut host = start;
    let mut core = ClockCore::default();
    let mut run = SoloClockRun {
        tick_steps: Vec::with_capacity(ticks),
        coins_per_tick: Vec::with_capacity(ticks),
        steps: 0,
    };
    let mut coins = 0;
    while run.tick_steps.len() < ticks && run.steps < horizon {
        let (u, v) = sched.sample(rng);
        run.steps += 1;
        if u != host && v != host {
            continue;
        }
        let (next, coin_done, ticked) = a.step(core, host == u);
        if next.position == 0 {
            coins += 1;
        }
        debug_assert!(!coin_done || next.position == 0);
        core = next;
        host = if host == u { v } else { u };
        if ticked {
            run.tick_steps.push(run.steps);
            run.coins_per_tick.push(coins);
            coins = 0;
        }
    }
    Ok(run)
}

/// Coins per tick without a graph: a fresh random bit per transition.
pub fn sample_coins_per_tick(a: &ClockAutomaton, ticks: usize, rng: &mut SimRng) -> Vec<u64> {
    let mut core = ClockCore::default();
    let mut out = Vec::with_capacity(ticks);
    let mut coins = 0;
    while out.len() < ticks {
        let (next, _, ticked) = a.step(core, rng.random());
        if next.position == 0 {
            coins += 1;
        }
        core = next;
        if ticked {
            out.push(coins);
            coins = 0;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseChange {
    pub step: u64,
    pub token: u32,
    pub phase: u8,
}

/// Phase history of a token population as initial phases plus change events
/// in step order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseTrace {
    pub phases: u8,
    pub initial: Vec<u8>,
    pub changes: Vec<PhaseChange>,
}

impl PhaseTrace {
    pub fn new(phases: u8, initial: Vec<u8>) -> Self {
        PhaseTrace {
            phases,
            initial,
            changes: Vec::new(),
        }
    }

    /// Records a change; steps must be nondecreasing.
    pub fn push(&mut self, step: u64, token: u32, phase: u8) {
        debug_assert!(self.changes.last().is_none_or(|c| c.step <= step));
        self.changes.push(PhaseChange { step, token, phase });
    }

    /// Builds a trace from one full phase vector per step (row 0 is the
    /// initial configuration).
    pub fn from_dense(phases: u8, rows: &[Vec<u8>]) -> Result<Self> {
        let first = rows
            .first()
            .ok_or_else(|| Error::Trace("dense trace is empty".into()))?;
        let mut trace = PhaseTrace::new(phases, first.clone());
        for (t, pair) in rows.windows(2).enumerate() {
            if pair[1].len() != first.len() {
                return Err(Error::Trace(format!(
                    "row {} has {} entries, expected {}",
                    t + 1,
                    pair[1].len(),
                    first.len()
                )));
            }
            for (tok, (&a, &b)) in pair[0].iter().zip(&pair[1]).enumerate() {
                if a != b {
                    trace.push(t as u64 + 1, tok as u32, b);
                }
            }
        }
        Ok(trace)
    }

    fn check(&self) -> Result<()> {
        if self.phases < 2 {
            return Err(Error::Trace("phase modulus must be at least 2".into()));
        }
        let n = self.initial.len();
        if self.initial.iter().any(|&p| p >= self.phases) {
            return Err(Error::Trace("initial phase out of range".into()));
        }
        let mut last = 0;
        for c in &self.changes {
            if c.token as usize >= n || c.phase >= self.phases {
                return Err(Error::Trace(format!("bad change event {c:?}")));
            }
            if c.step == 0 || c.step < last {
                return Err(Error::Trace("change steps must be positive and nondecreasing".into()));
            }
            last = c.step;
        }
        Ok(())
    }

    /// Replays the trace, calling `f(step, phases, counts)` after all changes
    /// of each step that has changes.
    fn replay(&self, mut f: impl FnMut(u64, &[u8], &[usize], &[PhaseChange], &[u8]) -> bool) {
        let mut cur = self.initial.clone();
        let mut counts = vec![0usize; self.phases as usize];
        cur.iter().for_each(|&p| counts[p as usize] += 1);
        let mut prev_of_step = Vec::new();
        let mut i = 0;
        while i < self.changes.len() {
            let step = self.changes[i].step;
            let mut j = i;
            prev_of_step.clear();
            while j < self.changes.len() && self.changes[j].step == step {
                let c = self.changes[j];
                prev_of_step.push(cur[c.token as usize]);
                counts[cur[c.token as usize] as usize] -= 1;
                counts[c.phase as usize] += 1;
                cur[c.token as usize] = c.phase;
                j += 1;
            }
            if !f(step, &cur, &counts, &self.changes[i..j], &prev_of_step) {
                return;
            }
            i = j;
        }
    }
}

/// `r_0 = 0` followed by every step with phase changes after which all
/// tokens share one phase.
pub fn detect_sync_steps(trace: &PhaseTrace) -> Result<Vec<u64>> {
    trace.check()?;
    let n = trace.initial.len();
    let mut out = vec![0];
    trace.replay(|step, _, counts, _, _| {
        if counts.contains(&n) {
            out.push(step);
        }
        true
    });
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClockFailure {
    /// One of `monotonicity`, `bounded_delay`, `synchronization`,
    /// `agreement`, `insufficient`.
    pub property: String,
    pub phase_index: usize,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseClockReport {
    pub sync_steps: Vec<u64>,
    pub monotonicity: bool,
    pub bounded_delay: bool,
    pub synchronization: bool,
    pub agreement: bool,
    /// Fewer than `k+1` synchronization steps were observed.
    pub insufficient: bool,
    pub first_failure: Option<ClockFailure>,
}

impl PhaseClockReport {
    pub fn passed(&self) -> bool {
        !self.insufficient && self.monotonicity && self.bounded_delay && self.synchronization && self.agreement
    }
}

/// Checks properties (a)-(d) for phase indices `0 <= i < k`, with bounded
/// delay `R <= r_{i+1} - r_i <= 2 η R`.
pub fn validate_phase_clock(trace: &PhaseTrace, r: u64, eta: f64, k: usize) -> Result<PhaseClockReport> {
    trace.check()?;
    let phi = trace.phases;
    let all = detect_sync_steps(trace)?;
    let sync: Vec<u64> = all.iter().copied().take(k + 1).collect();
    let insufficient = sync.len() < k + 1;
    let mut report = PhaseClockReport {
        sync_steps: sync.clone(),
        monotonicity: true,
        bounded_delay: true,
        synchronization: true,
        agreement: true,
        insufficient,
        first_failure: None,
    };
    let fail = |report: &mut PhaseClockReport, property: &str, i: usize, step: u64| {
        match property {
            "monotonicity" => report.monotonicity = false,
            "bounded_delay" => report.bounded_delay = false,
            "synchronization" => report.synchronization = false,
            "agreement" => report.agreement = false,
            _ => {}
        }
        let candidate = ClockFailure {
            property: property.to_string(),
            phase_index: i,
            step,
        };
        if report.first_failure.as_ref().is_none_or(|f| step < f.step) {
            report.first_failure = Some(candidate);
        }
    };

    // (c) at r_0 the initial phases must all be 0
    if trace.initial.iter().any(|&p| p != 0) {
        fail(&mut report, "synchronization", 0, 0);
    }
    let horizon = if insufficient { u64::MAX } else { sync[k] };
    let upper = 2.0 * eta * r as f64;
    for i in 0..sync.len().saturating_sub(1).min(k) {
        let gap = sync[i + 1] - sync[i];
        if gap < r || gap as f64 > upper {
            fail(&mut report, "bounded_delay", i, sync[i + 1]);
        }
    }

    let n = trace.initial.len();
    let mut idx = 0usize;
    trace.replay(|step, _, counts, changes, prevs| {
        if step > horizon {
            return false;
        }
        while idx + 1 < sync.len() && step >= sync[idx + 1] {
            idx += 1;
        }
        let at_sync = sync.get(idx) == Some(&step);
        // the interval containing the transition into `step` starts at sync[i]
        let i = if at_sync { idx.saturating_sub(1) } else { idx };
        for (c, &prev) in changes.iter().zip(prevs) {
            if c.phase != (prev + 1) % phi {
                fail(&mut report, "monotonicity", i, step);
            }
        }
        if at_sync && step > 0 {
            let expected = (idx % phi as usize) as u8;
            if counts[expected as usize] != n {
                fail(&mut report, "synchronization", idx, step);
            }
        }
        if i < k {
            // changes inside (r_i, r_i + R] break synchronization
            if step <= sync[i] + r {
                fail(&mut report, "synchronization", i, step);
            }
            if !at_sync {
                let lo = (i % phi as usize) as u8;
                let hi = (lo + 1) % phi;
                let outside = n - counts[lo as usize] - if hi != lo { counts[hi as usize] } else { 0 };
                if outside > 0 {
                    fail(&mut report, "agreement", i, step);
                }
            }
        }
        true
    });
    if insufficient {
        let step = sync.last().copied().unwrap_or(0);
        if report.first_failure.is_none() {
            report.first_failure = Some(ClockFailure {
                property: "insufficient".into(),
                phase_index: sync.len() - 1,
                step,
            });
        }
    }
    Ok(report)
}
