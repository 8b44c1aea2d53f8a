//! Synchronized cancellation-doubling majority (Algorithm 1) and its
//! always-correct extension with flags and a 4-state backup (Algorithm 2).
//!
//! Tokens carry an id so that phase histories and the potential can be
//! followed through the swaps that move tokens between nodes. The backup
//! 4-state state stays with its node.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::clock::{
    ceil_log2_scaled, phase_clock_rule, validate_phase_clock, ClockAutomaton, ClockCore, ClockParams, PhaseClockReport,
    PhaseTrace, TransitionTable,
};
use crate::dynamics::{four_state_rule, FourState};
use crate::engine::{run_from, Census, Control, Interaction, Observer, Protocol, RunSpec, StoppingRule, TraceEvent};
use crate::error::{param, Error, Result};
use crate::graph::Graph;
use crate::rng::SimRng;

/// Largest supported phase modulus.
pub const MAX_PHASES: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Omega {
    A = 0,
    B = 1,
    #[serde(rename = "a")]
    LowerA = 2,
    #[serde(rename = "b")]
    LowerB = 3,
    C = 4,
    #[serde(rename = "clock")]
    Clock = 5,
}

impl Omega {
    pub const ALL: [Omega; 6] = [Omega::A, Omega::B, Omega::LowerA, Omega::LowerB, Omega::C, Omega::Clock];

    pub fn symbol(self) -> &'static str {
        match self {
            Omega::A => "A",
            Omega::B => "B",
            Omega::LowerA => "a",
            Omega::LowerB => "b",
            Omega::C => "C",
            Omega::Clock => "⊥",
        }
    }

    #[inline]
    fn majority_side(self) -> bool {
        matches!(self, Omega::A | Omega::LowerA)
    }

    #[inline]
    fn minority_side(self) -> bool {
        matches!(self, Omega::B | Omega::LowerB)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct Flags(pub u8);

impl Flags {
    pub const ABORT: u8 = 1;
    pub const A_WINS: u8 = 2;
    pub const B_WINS: u8 = 4;

    #[inline]
    pub fn has(self, bit: u8) -> bool {
        self.0 & bit != 0
    }

    #[inline]
    pub fn has_wins(self) -> bool {
        self.0 & (Self::A_WINS | Self::B_WINS) != 0
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    pub fn names(self) -> Vec<&'static str> {
        [
            (Self::ABORT, "abort"),
            (Self::A_WINS, "a_wins"),
            (Self::B_WINS, "b_wins"),
        ]
        .into_iter()
        .filter(|(b, _)| self.has(*b))
        .map(|(_, s)| s)
        .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct MajorityToken {
    pub id: u32,
    pub omega: Omega,
    pub phi: u8,
    pub theta: u8,
    pub flags: Flags,
    /// Clock tokens only.
    pub active: bool,
    /// Packed automaton state, see [`TransitionTable`].
    pub clock: u16,
}

impl MajorityToken {
    pub fn opinion(id: u32, input: bool) -> Self {
        MajorityToken {
            id,
            omega: if input { Omega::B } else { Omega::A },
            phi: 0,
            theta: 0,
            flags: Flags::default(),
            active: false,
            clock: 0,
        }
    }

    #[inline]
    pub fn is_opinion(&self) -> bool {
        self.omega != Omega::Clock
    }

    #[inline]
    fn is_primary(&self) -> bool {
        matches!(self.omega, Omega::A | Omega::B) && self.theta == 0 && self.phi == 0 && self.flags.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct NodeState {
    pub token: MajorityToken,
    pub backup: FourState,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Alg1,
    Alg2,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Alg1 => "alg1",
            Variant::Alg2 => "alg2",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "alg1" => Ok(Variant::Alg1),
            "alg2" => Ok(Variant::Alg2),
            other => Err(Error::Parse(format!("unknown majority variant {other:?}"))),
        }
    }
}

/// `Abort` defers to the backup; otherwise a wins flag decides; otherwise
/// the backup.
#[inline]
pub fn token_output(t: &MajorityToken, backup: FourState) -> bool {
    let f = t.flags.0;
    // a wins flag decides unless aborted; A-wins takes precedence
    let decided = f & Flags::ABORT == 0 && f & (Flags::A_WINS | Flags::B_WINS) != 0;
    let win = f & Flags::A_WINS == 0;
    (decided & win) | (!decided & backup.opinion())
}

/// Scaled potential `2^Lmax λ(u)`.
#[inline]
pub fn token_potential(t: &MajorityToken, lmax: u32) -> i128 {
    let half = |x: u32| 1i128 << (lmax - x.min(lmax));
    let th = t.theta as u32;
    match t.omega {
        Omega::A => half(th / 2),
        Omega::B => -half(th / 2),
        Omega::LowerA => half(th.div_ceil(2)),
        Omega::LowerB => -half(th.div_ceil(2)),
        Omega::C | Omega::Clock => 0,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PotentialLedger {
    /// `2^Lmax Σ λ(u)`.
    pub scaled: i128,
    pub lmax: u32,
}

impl PotentialLedger {
    pub fn value(&self) -> f64 {
        self.scaled as f64 / (self.lmax as f64).exp2()
    }
}

pub fn total_potential(config: &[NodeState], n: usize) -> Result<PotentialLedger> {
    let lmax = potential_scale(n);
    if lmax > 120 {
        return Err(Error::Size("scaled potential would overflow 128 bits".into()));
    }
    Ok(PotentialLedger {
        scaled: config.iter().map(|s| token_potential(&s.token, lmax)).sum(),
        lmax,
    })
}

/// `⌈2 log₂ n⌉`.
pub fn theta_max(n: usize) -> u8 {
    ceil_log2_scaled(2.0, n).min(u8::MAX as u32) as u8
}

/// `⌊(ϑmax + 1)/2⌋`.
pub fn potential_scale(n: usize) -> u32 {
    (theta_max(n) as u32 + 1) / 2
}

#[derive(Debug, Clone, PartialEq)]
pub struct MajorityProtocol {
    variant: Variant,
    automaton: ClockAutomaton,
    table: TransitionTable,
    n: usize,
    phases: u8,
    theta_max: u8,
    lmax: u32,
}

impl MajorityProtocol {
    pub fn new(variant: Variant, params: &ClockParams) -> Result<Self> {
        Self::with_automaton(variant, params.n, params.automaton(), params.phases)
    }

    pub fn with_automaton(variant: Variant, n: usize, automaton: ClockAutomaton, phases: u8) -> Result<Self> {
        if n < 2 {
            return param("majority protocols need n >= 2");
        }
        if phases < 4 || phases % 2 == 1 || phases as usize > MAX_PHASES {
            return param(format!(
                "phase modulus must be even and in 4..={MAX_PHASES}, got {phases}"
            ));
        }
        if n > u32::MAX as usize {
            return Err(Error::Size("too many tokens".into()));
        }
        Ok(MajorityProtocol {
            variant,
            automaton,
            table: TransitionTable::new(&automaton),
            n,
            phases,
            theta_max: theta_max(n),
            lmax: potential_scale(n),
        })
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn theta_max(&self) -> u8 {
        self.theta_max
    }

    pub fn lmax(&self) -> u32 {
        self.lmax
    }

    pub fn phases(&self) -> u8 {
        self.phases
    }

    pub fn automaton(&self) -> &ClockAutomaton {
        &self.automaton
    }

    /// Column and position of a clock token's automaton.
    pub fn clock_core(&self, t: &MajorityToken) -> ClockCore {
        self.table.core(t.clock)
    }

    /// Tokens after one interaction, before the swap. `u` is the initiator.
    pub fn step_tokens(&self, u0: MajorityToken, v0: MajorityToken) -> (MajorityToken, MajorityToken) {
        let mut u = u0;
        let mut v = v0;
        self.clock_rules(&mut u, &v0, true);
        self.clock_rules(&mut v, &u0, false);
        self.iteration_rules(&mut u, &u0);
        self.iteration_rules(&mut v, &v0);
        if u.is_opinion() & v.is_opinion() {
            opinion_rule(&mut u, &mut v);
        }
        if self.variant == Variant::Alg2 {
            let mismatch = self.mismatch(&u0, &v0);
            let union = Flags(u0.flags.0 | v0.flags.0);
            self.flag_rules(&mut u, &u0, union, mismatch);
            self.flag_rules(&mut v, &v0, union, mismatch);
        }
        (u, v)
    }

    #[inline]
    fn clock_rules(&self, t: &mut MajorityToken, partner: &MajorityToken, bit: bool) {
        let pre_phi = t.phi;
        // stepped unconditionally and masked; the guard is unpredictable
        let run = (t.omega == Omega::Clock) & t.active;
        let (next, tick) = self.table.step(t.clock, bit);
        let keep = (run as u16).wrapping_sub(1);
        t.clock = (t.clock & keep) | (next & !keep);
        let ticked = tick & run;
        let (phi, active) = phase_clock_rule(pre_phi, t.active, partner.phi, ticked, self.phases);
        t.phi = phi;
        t.active = active && t.omega == Omega::Clock;
    }

    #[inline]
    fn iteration_rules(&self, t: &mut MajorityToken, pre: &MajorityToken) {
        if !t.is_opinion() || t.phi == pre.phi {
            return;
        }
        t.theta = (t.theta + 1).min(self.theta_max);
        if pre.phi % 2 == 1 && t.phi % 2 == 0 {
            t.omega = match t.omega {
                Omega::LowerA => Omega::A,
                Omega::LowerB => Omega::B,
                o => o,
            };
        }
    }

    #[inline]
    fn mismatch(&self, u: &MajorityToken, v: &MajorityToken) -> bool {
        let d = u.phi.abs_diff(v.phi);
        let circ = d.min(self.phases - d);
        circ > 1 || (u.is_opinion() && v.is_opinion() && u.theta.abs_diff(v.theta) > 1)
    }

    #[inline]
    fn flag_rules(&self, t: &mut MajorityToken, pre: &MajorityToken, union: Flags, mismatch: bool) {
        let mut f = union.0;
        // (i) a strong token entering an even phase declares its side
        if t.phi != pre.phi && t.phi % 2 == 0 {
            match pre.omega {
                Omega::A => f |= Flags::A_WINS,
                Omega::B => f |= Flags::B_WINS,
                _ => {}
            }
        }
        // (ii) meeting the opposite side's wins flag
        let a_side = pre.omega.majority_side() || t.omega.majority_side();
        let b_side = pre.omega.minority_side() || t.omega.minority_side();
        if (a_side && f & Flags::B_WINS != 0) || (b_side && f & Flags::A_WINS != 0) {
            f |= Flags::ABORT;
        }
        // (iii) phases or counters too far apart
        if mismatch && !pre.flags.has_wins() {
            f |= Flags::ABORT;
        }
        // (iv) counter exhausted without a winner
        if t.is_opinion() && t.theta == self.theta_max && f & (Flags::A_WINS | Flags::B_WINS) == 0 {
            f |= Flags::ABORT;
        }
        t.flags = Flags(f);
    }

    #[inline]
    fn node_output(&self, s: &NodeState) -> bool {
        match self.variant {
            Variant::Alg2 => token_output(&s.token, s.backup),
            Variant::Alg1 => (ALG1_OUTPUT >> (4 * s.token.omega as u32 + s.backup as u32)) & 1 != 0,
        }
    }
}

/// Algorithm 1 output bits indexed by `4 omega + backup`: A and a say 0,
/// B and b say 1, C and clocks repeat the backup's opinion.
const ALG1_OUTPUT: u32 = {
    let mut bits = 0u32;
    let mut o = 0;
    while o < 6 {
        let mut b = 0;
        while b < 4 {
            let out = if o < 4 { o & 1 } else { b & 1 };
            bits |= (out as u32) << (4 * o + b);
            b += 1;
        }
        o += 1;
    }
    bits
};

/// Initialization, cancellation and doubling for two opinion tokens.
#[inline]
fn opinion_rule(u: &mut MajorityToken, v: &mut MajorityToken) {
    use Omega::*;
    let strong_pair = matches!((u.omega, v.omega), (A, B) | (B, A));
    if u.theta == 0 && v.theta == 0 {
        if strong_pair {
            u.omega = Clock;
            u.phi = 0;
            u.active = true;
            u.clock = 0;
            v.omega = C;
        }
    } else if u.phi == v.phi {
        if u.phi % 2 == 0 {
            if strong_pair && u.theta > 0 && v.theta > 0 {
                u.omega = C;
                v.omega = C;
            }
        } else {
            let doubled = match (u.omega, v.omega) {
                (A, C) | (C, A) => Some(LowerA),
                (B, C) | (C, B) => Some(LowerB),
                _ => None,
            };
            if let Some(w) = doubled {
                u.omega = w;
                v.omega = w;
            }
        }
    }
}

/// Algorithm 1 interaction on bare tokens (including the swap).
pub fn alg1_interact(proto: &MajorityProtocol, u: MajorityToken, v: MajorityToken) -> (MajorityToken, MajorityToken) {
    let (u1, v1) = proto.step_tokens(u, v);
    (v1, u1)
}

/// Algorithm 2 interaction on node states: token rules and swap, plus the
/// backup rule on the node-resident 4-state states.
pub fn alg2_interact(proto: &MajorityProtocol, x: NodeState, y: NodeState) -> (NodeState, NodeState) {
    let (u1, v1) = proto.step_tokens(x.token, y.token);
    let (bx, by) = four_state_rule(x.backup, y.backup);
    (NodeState { token: v1, backup: bx }, NodeState { token: u1, backup: by })
}

pub fn alg1_init(inputs: &[bool]) -> Result<Vec<NodeState>> {
    if inputs.len() < 2 {
        return param("need at least two nodes");
    }
    Ok(inputs
        .iter()
        .enumerate()
        .map(|(i, &b)| NodeState {
            token: MajorityToken::opinion(i as u32, b),
            backup: FourState::strong(b),
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MajCensus {
    variant: Variant,
    n: u64,
    lmax: u32,
    pub omega: [u64; 6],
    pub abort: u64,
    pub a_wins: u64,
    pub b_wins: u64,
    pub any_flag: u64,
    pub backup: [u64; 4],
    pub primary: [u64; 2],
    pub potential: i128,
    pub phase: [u64; MAX_PHASES],
}

impl MajCensus {
    pub fn new(variant: Variant, n: usize, lmax: u32) -> Self {
        MajCensus {
            variant,
            n: n as u64,
            lmax,
            omega: [0; 6],
            abort: 0,
            a_wins: 0,
            b_wins: 0,
            any_flag: 0,
            backup: [0; 4],
            primary: [0; 2],
            potential: 0,
            phase: [0; MAX_PHASES],
        }
    }

    #[inline]
    fn apply(&mut self, s: &NodeState, sign: i64) {
        let t = &s.token;
        let d = sign as u64;
        self.omega[t.omega as usize] = self.omega[t.omega as usize].wrapping_add(d);
        let f = t.flags;
        if !f.is_empty() {
            self.any_flag = self.any_flag.wrapping_add(d);
            self.abort = self.abort.wrapping_add(d * f.has(Flags::ABORT) as u64);
            self.a_wins = self.a_wins.wrapping_add(d * f.has(Flags::A_WINS) as u64);
            self.b_wins = self.b_wins.wrapping_add(d * f.has(Flags::B_WINS) as u64);
        }
        self.backup[s.backup as usize] = self.backup[s.backup as usize].wrapping_add(d);
        if t.is_primary() {
            let i = (t.omega == Omega::B) as usize;
            self.primary[i] = self.primary[i].wrapping_add(d);
        }
        self.potential += sign as i128 * token_potential(t, self.lmax);
        self.phase[t.phi as usize] = self.phase[t.phi as usize].wrapping_add(d);
    }

    pub fn clocks(&self) -> u64 {
        self.omega[Omega::Clock as usize]
    }

    /// `#{A, a}`.
    pub fn majority_tokens(&self) -> u64 {
        self.omega[Omega::A as usize] + self.omega[Omega::LowerA as usize]
    }

    /// `#{B, b}`.
    pub fn minority_tokens(&self) -> u64 {
        self.omega[Omega::B as usize] + self.omega[Omega::LowerB as usize]
    }

    /// `n γ_t`.
    pub fn bias_numerator(&self) -> i64 {
        self.majority_tokens() as i64 - self.minority_tokens() as i64
    }

    fn backup_settled(&self) -> Option<bool> {
        let ones = self.backup[FourState::S1 as usize] + self.backup[FourState::W1 as usize];
        if ones == 0 {
            Some(false)
        } else if ones == self.n {
            Some(true)
        } else {
            None
        }
    }

    /// Case U: untouched unanimous start. Returns the settled output.
    fn case_unanimous(&self) -> Option<bool> {
        for (side, &count) in self.primary.iter().enumerate() {
            if count == self.n && (self.variant == Variant::Alg1 || self.backup_settled() == Some(side == 1)) {
                return Some(side == 1);
            }
        }
        None
    }

    /// Case W: one wins flag everywhere, no abort, no opposing tokens.
    fn case_wins(&self) -> Option<bool> {
        if self.abort != 0 {
            return None;
        }
        if self.a_wins == self.n && self.b_wins == 0 && self.minority_tokens() == 0 {
            return Some(false);
        }
        if self.b_wins == self.n && self.a_wins == 0 && self.majority_tokens() == 0 {
            return Some(true);
        }
        None
    }

    /// Case A: abort everywhere and a settled backup.
    fn case_abort(&self) -> Option<bool> {
        if self.abort == self.n {
            self.backup_settled()
        } else {
            None
        }
    }

    /// The output every node will keep, if the configuration is certified.
    pub fn certified_output(&self) -> Option<bool> {
        match self.variant {
            Variant::Alg1 => self.case_unanimous(),
            Variant::Alg2 => self
                .case_unanimous()
                .or_else(|| self.case_wins())
                .or_else(|| self.case_abort()),
        }
    }
}

/// The part of a token the census looks at.
#[inline]
fn census_key(t: &MajorityToken) -> (Omega, u8, u8, u8) {
    (t.omega, t.phi, t.theta, t.flags.0)
}

impl Census<NodeState> for MajCensus {
    #[inline]
    fn add(&mut self, s: &NodeState) {
        self.apply(s, 1);
    }
    #[inline]
    fn remove(&mut self, s: &NodeState) {
        self.apply(s, -1);
    }
    #[inline]
    fn update(&mut self, before: &[NodeState; 2], after: &[NodeState; 2]) {
        // a bare swap (the common case) leaves every count unchanged
        let swapped = census_key(&before[0].token) == census_key(&after[1].token)
            && census_key(&before[1].token) == census_key(&after[0].token)
            && before[0].backup == after[0].backup
            && before[1].backup == after[1].backup;
        if !swapped {
            self.remove(&before[0]);
            self.remove(&before[1]);
            self.add(&after[0]);
            self.add(&after[1]);
        }
    }
    fn certified(&self) -> bool {
        self.certified_output().is_some()
    }
    fn counts(&self) -> BTreeMap<String, u64> {
        let mut out: BTreeMap<String, u64> = Omega::ALL
            .iter()
            .map(|o| (o.symbol().to_string(), self.omega[*o as usize]))
            .collect();
        out.insert("abort".into(), self.abort);
        out.insert("a_wins".into(), self.a_wins);
        out.insert("b_wins".into(), self.b_wins);
        for s in FourState::ALL {
            out.insert(format!("backup_{s:?}"), self.backup[s as usize]);
        }
        out
    }
}

impl Protocol for MajorityProtocol {
    type State = NodeState;
    type Census = MajCensus;

    fn initial_state(&self, node: usize, input: bool) -> NodeState {
        NodeState {
            token: MajorityToken::opinion(node as u32, input),
            backup: FourState::strong(input),
        }
    }

    #[inline]
    fn interact(&self, x: &mut NodeState, y: &mut NodeState) {
        let (u1, v1) = self.step_tokens(x.token, y.token);
        if self.variant == Variant::Alg2 {
            (x.backup, y.backup) = four_state_rule(x.backup, y.backup);
        }
        x.token = v1;
        y.token = u1;
    }

    #[inline]
    fn output(&self, s: &NodeState) -> bool {
        self.node_output(s)
    }

    fn census(&self, n: usize) -> MajCensus {
        MajCensus::new(self.variant, n, self.lmax)
    }

    fn trace_events(
        &self,
        it: &Interaction,
        before: &[NodeState; 2],
        after: &[NodeState; 2],
        out: &mut Vec<TraceEvent>,
    ) {
        for (b, a) in [(before[0].token, after[1].token), (before[1].token, after[0].token)] {
            if a.phi != b.phi {
                out.push(TraceEvent::Phase {
                    step: it.step,
                    token: a.id,
                    phase: a.phi,
                });
            }
            if a.omega == Omega::Clock && b.omega != Omega::Clock {
                out.push(TraceEvent::ClockCreated {
                    step: it.step,
                    token: a.id,
                });
            }
            if b.active && !a.active && a.omega == Omega::Clock {
                out.push(TraceEvent::Deactivated {
                    step: it.step,
                    token: a.id,
                });
            }
            for name in Flags(a.flags.0 & !b.flags.0).names() {
                out.push(TraceEvent::Flag {
                    step: it.step,
                    token: a.id,
                    flag: name.into(),
                });
            }
        }
    }
}

/// Certified-stabilization predicate evaluated on a configuration.
pub fn certified_stabilized(proto: &MajorityProtocol, config: &[NodeState]) -> bool {
    let mut c = proto.census(config.len());
    config.iter().for_each(|s| c.add(s));
    c.certified()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncSample {
    pub step: u64,
    /// `#{A, a}`.
    pub majority: u64,
    /// `#{B, b}`.
    pub minority: u64,
    /// `#{A, B}`.
    pub strong: u64,
    pub any_flag: bool,
}

impl SyncSample {
    pub fn bias_numerator(&self) -> i64 {
        self.majority as i64 - self.minority as i64
    }
}

/// Online checks and records for majority runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MajorityMonitor {
    n: u64,
    pub phase_trace: PhaseTrace,
    pub sync: Vec<SyncSample>,
    /// Stop once `r_k` is observed.
    pub stop_after_sync: Option<usize>,
    pub max_clocks: u64,
    pub clock_cap_violation: Option<u64>,
    pub initial_potential: i128,
    pub potential_violation: Option<u64>,
    pub first_flag: Option<u64>,
    pub first_abort: Option<u64>,
    pub first_a_wins: Option<u64>,
    pub first_b_wins: Option<u64>,
    /// First step at which one side has no opinion tokens left.
    pub side_extinct: Option<u64>,
    stop_on_side_extinct: bool,
}

impl MajorityMonitor {
    pub fn new(proto: &MajorityProtocol, config: &[NodeState]) -> Self {
        let mut c = proto.census(config.len());
        config.iter().for_each(|s| c.add(s));
        let mut m = MajorityMonitor {
            n: config.len() as u64,
            phase_trace: PhaseTrace::new(proto.phases, config.iter().map(|s| s.token.phi).collect()),
            sync: Vec::new(),
            stop_after_sync: None,
            max_clocks: c.clocks(),
            clock_cap_violation: None,
            initial_potential: c.potential,
            potential_violation: None,
            first_flag: None,
            first_abort: None,
            first_a_wins: None,
            first_b_wins: None,
            side_extinct: None,
            stop_on_side_extinct: false,
        };
        m.record_sync(0, &c);
        if c.majority_tokens() == 0 || c.minority_tokens() == 0 {
            m.side_extinct = Some(0);
        }
        if 2 * c.clocks() > m.n {
            m.clock_cap_violation = Some(0);
        }
        m
    }

    pub fn stopping_after(mut self, k: usize) -> Self {
        self.stop_after_sync = Some(k);
        self
    }

    pub fn stopping_on_side_extinction(mut self) -> Self {
        self.stop_on_side_extinct = true;
        self
    }

    fn record_sync(&mut self, step: u64, c: &MajCensus) {
        self.sync.push(SyncSample {
            step,
            majority: c.majority_tokens(),
            minority: c.minority_tokens(),
            strong: c.omega[Omega::A as usize] + c.omega[Omega::B as usize],
            any_flag: c.any_flag > 0,
        });
    }

    pub fn sync_steps(&self) -> Vec<u64> {
        self.sync.iter().map(|s| s.step).collect()
    }

    /// Validates the recorded phases for the first `k` phases, or every
    /// completed phase when `k` is `None`.
    pub fn clock_report(&self, params: &ClockParams, k: Option<usize>) -> Result<PhaseClockReport> {
        let k = k.unwrap_or(self.sync.len().saturating_sub(1));
        validate_phase_clock(&self.phase_trace, params.r, params.eta_effective, k)
    }

    /// Checks that the bias doubles over every two observed phases starting
    /// at an even index, or that the minority is gone. Only pairs before the
    /// first flag are considered. Returns the first offending index.
    pub fn bias_doubling_violation(&self) -> Option<usize> {
        for i in (0..self.sync.len()).step_by(2) {
            let Some(b) = self.sync.get(i + 2) else { break };
            if b.any_flag {
                break;
            }
            if b.minority != 0 && b.majority != 0 && b.bias_numerator() != 2 * self.sync[i].bias_numerator() {
                return Some(i);
            }
        }
        None
    }
}

impl Observer<MajorityProtocol> for MajorityMonitor {
    #[inline]
    fn observe(
        &mut self,
        it: &Interaction,
        before: &[NodeState; 2],
        config: &[NodeState],
        census: &MajCensus,
    ) -> Control {
        let after = [config[it.initiator].token, config[it.responder].token];
        let mut changed = None;
        for (b, a) in [(before[0].token, after[1]), (before[1].token, after[0])] {
            if a.phi != b.phi {
                self.phase_trace.push(it.step, a.id, a.phi);
                changed = Some(a.phi);
            }
        }
        let clocks = census.clocks();
        if clocks > self.max_clocks {
            self.max_clocks = clocks;
            if 2 * clocks > self.n && self.clock_cap_violation.is_none() {
                self.clock_cap_violation = Some(it.step);
            }
        }
        if census.any_flag > 0 {
            if self.first_flag.is_none() {
                self.first_flag = Some(it.step);
            }
            if census.abort > 0 && self.first_abort.is_none() {
                self.first_abort = Some(it.step);
            }
            if census.a_wins > 0 && self.first_a_wins.is_none() {
                self.first_a_wins = Some(it.step);
            }
            if census.b_wins > 0 && self.first_b_wins.is_none() {
                self.first_b_wins = Some(it.step);
            }
        } else if census.potential != self.initial_potential && self.potential_violation.is_none() {
            self.potential_violation = Some(it.step);
        }
        if self.side_extinct.is_none() && (census.majority_tokens() == 0 || census.minority_tokens() == 0) {
            self.side_extinct = Some(it.step);
            if self.stop_on_side_extinct {
                return Control::Stop;
            }
        }
        if let Some(p) = changed {
            if census.phase[p as usize] == self.n {
                self.record_sync(it.step, census);
                if self.stop_after_sync.is_some_and(|k| self.sync.len() > k) {
                    return Control::Stop;
                }
            }
        }
        Control::Continue
    }
}

/// Input majority bit, `None` on a tie.
pub fn input_majority(inputs: &[bool]) -> Option<bool> {
    let ones = inputs.iter().filter(|&&b| b).count();
    let zeros = inputs.len() - ones;
    match zeros.cmp(&ones) {
        std::cmp::Ordering::Greater => Some(false),
        std::cmp::Ordering::Less => Some(true),
        std::cmp::Ordering::Equal => None,
    }
}

/// Step budget covering every phase up to counter saturation at the
/// maximal delay, plus slack for the wins broadcast.
pub fn default_majority_horizon(params: &ClockParams) -> u64 {
    let phases = theta_max(params.n) as f64 + 4.0;
    (phases * 2.0 * params.eta_effective * params.r as f64).ceil() as u64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stabilization {
    /// `max(first certified step, 1)`.
    pub t_hat: Option<u64>,
    pub certified: bool,
    pub correct: bool,
    pub consensus: Option<bool>,
    /// Last step at which some output differed from the final consensus;
    /// reported for censored runs.
    pub observed_stabilization: Option<u64>,
    pub steps: u64,
    pub monitor: MajorityMonitor,
}

pub fn measure_stabilization(
    proto: &MajorityProtocol,
    g: &Graph,
    inputs: &[bool],
    rng: &mut SimRng,
    horizon: u64,
) -> Result<Stabilization> {
    if inputs.len() != g.n() || g.n() != proto.n {
        return param(format!(
            "protocol sized for n={}, graph has n={}, inputs {}",
            proto.n,
            g.n(),
            inputs.len()
        ));
    }
    let majority =
        input_majority(inputs).ok_or_else(|| Error::Parameter("inputs must have a strict majority".into()))?;
    let config = alg1_init(inputs)?;
    let mut monitor = MajorityMonitor::new(proto, &config);
    let out = run_from(
        proto,
        g,
        config,
        &RunSpec::discrete(StoppingRule::certified(horizon)),
        rng,
        &mut monitor,
    )?;
    let certified = out.certified_step.is_some();
    Ok(Stabilization {
        t_hat: out.certified_step.map(|t| t.max(1)),
        certified,
        correct: out.consensus == Some(majority) && certified,
        consensus: out.consensus,
        observed_stabilization: if certified { None } else { out.observed_stabilization },
        steps: out.steps,
        monitor,
    })
}

/// Outcome of running until one side's opinion tokens are gone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideExtinction {
    /// `max(step, 1)` of the extinction; `None` if censored.
    pub t_hat: Option<u64>,
    /// The surviving side is the input majority.
    pub correct: Option<bool>,
    pub steps: u64,
    pub monitor: MajorityMonitor,
}

/// Runs until one side's opinion tokens are extinct (or the horizon). For
/// the bare fast protocol this is the event that fixes the surviving opinion.
pub fn measure_side_extinction(
    proto: &MajorityProtocol,
    g: &Graph,
    inputs: &[bool],
    rng: &mut SimRng,
    horizon: u64,
) -> Result<SideExtinction> {
    if inputs.len() != g.n() || g.n() != proto.n {
        return param("graph, inputs and protocol sizes differ");
    }
    let majority =
        input_majority(inputs).ok_or_else(|| Error::Parameter("inputs must have a strict majority".into()))?;
    let config = alg1_init(inputs)?;
    let mut monitor = MajorityMonitor::new(proto, &config).stopping_on_side_extinction();
    let out = run_from(
        proto,
        g,
        config,
        &RunSpec::discrete(StoppingRule::horizon(horizon)),
        rng,
        &mut monitor,
    )?;
    let correct = monitor.side_extinct.map(|_| {
        let survivors = &out.final_config;
        // the side with tokens left; input `false` is side A
        let a_left = survivors.iter().any(|s| s.token.omega.majority_side());
        a_left != majority
    });
    Ok(SideExtinction {
        t_hat: monitor.side_extinct.map(|t| t.max(1)),
        correct,
        steps: out.steps,
        monitor,
    })
}

/// Runs the protocol until `r_k` (or the horizon) with phase recording.
pub fn run_until_sync(
    proto: &MajorityProtocol,
    g: &Graph,
    inputs: &[bool],
    k: usize,
    rng: &mut SimRng,
    horizon: u64,
) -> Result<MajorityMonitor> {
    if inputs.len() != g.n() || g.n() != proto.n {
        return param("graph, inputs and protocol sizes differ");
    }
    let config = alg1_init(inputs)?;
    let mut monitor = MajorityMonitor::new(proto, &config).stopping_after(k);
    run_from(
        proto,
        g,
        config,
        &RunSpec::discrete(StoppingRule::horizon(horizon)),
        rng,
        &mut monitor,
    )?;
    Ok(monitor)
}
