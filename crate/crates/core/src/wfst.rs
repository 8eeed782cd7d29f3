//! Weighted acceptor FSTs: non-terminal replacement, topological ordering,
//! forward-backward path masses, epsilon removal, enumeration, and sampling.
//!
//! FSTs here are acceptors over word labels with unnormalized nonnegative
//! weights; a path's probability is its weight divided by the total path mass
//! `Z`. Arcs may also carry epsilon labels (no word) or named non-terminal
//! labels that stand for a sub-FST to be spliced in by [`WeightedFst::replace`].

use std::collections::HashMap;
use std::collections::VecDeque;
use std::fmt;
use std::io::{BufRead, Write};

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::logmath::{ln_weight, log_add, log_sum, LOG_ZERO};

pub type StateId = usize;

/// Convergence threshold for fixpoint iteration on cyclic FSTs.
const FIXPOINT_TOLERANCE: f64 = 1e-12;
/// Iteration cap for the fixpoint; exceeding it is reported as divergence.
const FIXPOINT_MAX_ITERS: usize = 10_000;

#[derive(Debug, Error)]
pub enum WfstError {
    #[error("FST has no start state")]
    NoStart,
    #[error("cycle detected; topological order requires an acyclic FST")]
    CycleDetected,
    #[error("non-terminal `{0}` has no binding")]
    UnboundNonTerminal(String),
    #[error("non-terminal expansion exceeded max depth {0}")]
    RecursionTooDeep(usize),
    #[error("unexpected non-terminal arc `{0}`; expand non-terminals first")]
    NonTerminalPresent(String),
    #[error("path mass diverges (cycle with weight >= 1)")]
    DivergentMass,
    #[error("FST has zero total path mass")]
    ZeroMass,
    #[error("dead-end at state {0}: zero continuation mass")]
    DeadEnd(StateId),
    #[error("path enumeration exceeded cap of {0} paths")]
    PathCapExceeded(usize),
    #[error("negative weight {weight} on arc from state {state}")]
    NegativeWeight { state: StateId, weight: f64 },
    #[error("state {0} out of range")]
    InvalidState(StateId),
    #[error("malformed FST text at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Arc label: a word, nothing, or a named non-terminal placeholder.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Label {
    Epsilon,
    Word(String),
    NonTerminal(String),
}

impl Label {
    pub fn word(w: impl Into<String>) -> Self {
        Label::Word(w.into())
    }

    pub fn non_terminal(n: impl Into<String>) -> Self {
        Label::NonTerminal(n.into())
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Label::Epsilon => write!(f, "<eps>"),
            Label::Word(w) => write!(f, "{w}"),
            Label::NonTerminal(n) => write!(f, "@{n}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FstArc {
    pub label: Label,
    pub weight: f64,
    pub next: StateId,
}

/// Weighted acceptor with dense state ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct WeightedFst {
    arcs: Vec<Vec<FstArc>>,
    finals: Vec<f64>,
    start: Option<StateId>,
}

impl WeightedFst {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_state(&mut self) -> StateId {
        self.arcs.push(Vec::new());
        self.finals.push(0.0);
        self.arcs.len() - 1
    }

    pub fn set_start(&mut self, s: StateId) {
        debug_assert!(s < self.num_states());
        self.start = Some(s);
    }

    /// Marks `s` final with the given weight; weight 0 un-marks it.
    pub fn set_final(&mut self, s: StateId, weight: f64) {
        debug_assert!(weight >= 0.0);
        self.finals[s] = weight;
    }

    pub fn add_arc(&mut self, src: StateId, label: Label, weight: f64, next: StateId) {
        debug_assert!(weight >= 0.0);
        debug_assert!(next < self.num_states());
        self.arcs[src].push(FstArc { label, weight, next });
    }

    pub fn num_states(&self) -> usize {
        self.arcs.len()
    }

    pub fn num_arcs(&self) -> usize {
        self.arcs.iter().map(Vec::len).sum()
    }

    pub fn start(&self) -> Option<StateId> {
        self.start
    }

    pub fn arcs(&self, s: StateId) -> &[FstArc] {
        &self.arcs[s]
    }

    pub fn final_weight(&self, s: StateId) -> f64 {
        self.finals[s]
    }

    pub fn is_final(&self, s: StateId) -> bool {
        self.finals[s] > 0.0
    }

    /// State ids of all final states, ascending.
    pub fn final_states(&self) -> impl Iterator<Item = StateId> + '_ {
        (0..self.num_states()).filter(|&s| self.is_final(s))
    }

    /// Names of non-terminal labels present, in first-appearance order.
    pub fn non_terminals(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for state_arcs in &self.arcs {
            for arc in state_arcs {
                if let Label::NonTerminal(name) = &arc.label {
                    if !seen.contains(name) {
                        seen.push(name.clone());
                    }
                }
            }
        }
        seen
    }

    pub fn has_non_terminals(&self) -> bool {
        self.arcs
            .iter()
            .any(|a| a.iter().any(|arc| matches!(arc.label, Label::NonTerminal(_))))
    }

    fn require_start(&self) -> Result<StateId, WfstError> {
        self.start.ok_or(WfstError::NoStart)
    }

    /// Basic structural validation: weights nonnegative, targets in range,
    /// start present.
    pub fn validate(&self) -> Result<(), WfstError> {
        self.require_start()?;
        for (s, state_arcs) in self.arcs.iter().enumerate() {
            for arc in state_arcs {
                if arc.weight < 0.0 || !arc.weight.is_finite() {
                    return Err(WfstError::NegativeWeight { state: s, weight: arc.weight });
                }
                if arc.next >= self.num_states() {
                    return Err(WfstError::InvalidState(arc.next));
                }
            }
        }
        Ok(())
    }

    /// States in an order where every arc goes from earlier to later.
    ///
    /// Fails with [`WfstError::CycleDetected`] on cyclic FSTs (including
    /// self-loops); callers must then use the convergence-mode algorithms.
    pub fn topological_order(&self) -> Result<Vec<StateId>, WfstError> {
        let n = self.num_states();
        let mut indegree = vec![0usize; n];
        for state_arcs in &self.arcs {
            for arc in state_arcs {
                indegree[arc.next] += 1;
            }
        }
        let mut queue: VecDeque<StateId> =
            (0..n).filter(|&s| indegree[s] == 0).collect();
        let mut order = Vec::with_capacity(n);
        while let Some(s) = queue.pop_front() {
            order.push(s);
            for arc in &self.arcs[s] {
                indegree[arc.next] -= 1;
                if indegree[arc.next] == 0 {
                    queue.push_back(arc.next);
                }
            }
        }
        if order.len() != n {
            return Err(WfstError::CycleDetected);
        }
        Ok(order)
    }

    pub fn is_acyclic(&self) -> bool {
        self.topological_order().is_ok()
    }

    /// Splices the bound sub-FST in place of every non-terminal arc.
    ///
    /// An arc `src --NT(name):w--> dst` becomes an epsilon arc of weight `w`
    /// into a fresh copy of the binding, and an epsilon arc of the binding's
    /// final weight out of each of its final states back to `dst`, so the
    /// replaced arc's weight multiplies the sub-FST's path mass. Bindings may
    /// themselves contain non-terminals; expansion repeats level by level up
    /// to `max_depth` and errors if placeholders remain.
    pub fn replace(
        &self,
        bindings: &HashMap<String, WeightedFst>,
        max_depth: usize,
    ) -> Result<WeightedFst, WfstError> {
        let mut current = self.clone();
        for _ in 0..max_depth {
            if !current.has_non_terminals() {
                return Ok(current);
            }
            current = current.expand_once(bindings)?;
        }
        if current.has_non_terminals() {
            return Err(WfstError::RecursionTooDeep(max_depth));
        }
        Ok(current)
    }

    fn expand_once(
        &self,
        bindings: &HashMap<String, WeightedFst>,
    ) -> Result<WeightedFst, WfstError> {
        let mut out = WeightedFst::new();
        for s in 0..self.num_states() {
            let ns = out.add_state();
            out.set_final(ns, self.finals[s]);
            debug_assert_eq!(ns, s);
        }
        out.start = self.start;
        for s in 0..self.num_states() {
            for arc in &self.arcs[s] {
                match &arc.label {
                    Label::NonTerminal(name) => {
                        let sub = bindings
                            .get(name)
                            .ok_or_else(|| WfstError::UnboundNonTerminal(name.clone()))?;
                        let sub_start = sub.require_start()?;
                        let offset = out.num_states();
                        for t in 0..sub.num_states() {
                            out.add_state();
                            debug_assert_eq!(offset + t, out.num_states() - 1);
                        }
                        out.add_arc(s, Label::Epsilon, arc.weight, offset + sub_start);
                        for t in 0..sub.num_states() {
                            for sub_arc in &sub.arcs[t] {
                                out.add_arc(
                                    offset + t,
                                    sub_arc.label.clone(),
                                    sub_arc.weight,
                                    offset + sub_arc.next,
                                );
                            }
                            let fw = sub.finals[t];
                            if fw > 0.0 {
                                out.add_arc(offset + t, Label::Epsilon, fw, arc.next);
                            }
                        }
                    }
                    other => out.add_arc(s, other.clone(), arc.weight, arc.next),
                }
            }
        }
        Ok(out)
    }

    /// Removes epsilon arcs, preserving the path distribution.
    ///
    /// The weighted epsilon closure of each state redistributes epsilon mass
    /// onto word arcs and final weights. Epsilon cycles converge as long as
    /// their total weight is below 1; heavier cycles report divergence.
    pub fn remove_epsilons(&self) -> Result<WeightedFst, WfstError> {
        self.require_start()?;
        if !self
            .arcs
            .iter()
            .any(|a| a.iter().any(|arc| matches!(arc.label, Label::Epsilon)))
        {
            return Ok(self.clone());
        }
        let n = self.num_states();
        let closures = self.epsilon_closures()?;
        let mut out = WeightedFst::new();
        for _ in 0..n {
            out.add_state();
        }
        out.start = self.start;
        for s in 0..n {
            let mut log_final = LOG_ZERO;
            for &(t, log_mass) in &closures[s] {
                log_final = log_add(log_final, log_mass + ln_weight(self.finals[t]));
                for arc in &self.arcs[t] {
                    if matches!(arc.label, Label::Epsilon) {
                        continue;
                    }
                    let w = (log_mass + ln_weight(arc.weight)).exp();
                    if w > 0.0 {
                        out.add_arc(s, arc.label.clone(), w, arc.next);
                    }
                }
            }
            out.set_final(s, log_final.exp());
        }
        Ok(out)
    }

    /// Per-state weighted epsilon closures: `closures[s]` lists `(t, log m)`
    /// where `m` sums the epsilon-only path mass from `s` to `t`, including
    /// the empty path `(s, ln 1)`.
    fn epsilon_closures(&self) -> Result<Vec<Vec<(StateId, f64)>>, WfstError> {
        let n = self.num_states();
        let eps_arcs: Vec<Vec<(StateId, f64)>> = (0..n)
            .map(|s| {
                self.arcs[s]
                    .iter()
                    .filter(|a| matches!(a.label, Label::Epsilon) && a.weight > 0.0)
                    .map(|a| (a.next, a.weight.ln()))
                    .collect()
            })
            .collect();
        if let Some(order) = eps_topological_order(&eps_arcs) {
            // Acyclic epsilon subgraph: one memoized pass in reverse order.
            let mut closures: Vec<Vec<(StateId, f64)>> = vec![Vec::new(); n];
            for &s in order.iter().rev() {
                let mut acc: HashMap<StateId, f64> = HashMap::new();
                acc.insert(s, 0.0);
                for &(next, lw) in &eps_arcs[s] {
                    for &(t, m) in &closures[next] {
                        let e = acc.entry(t).or_insert(LOG_ZERO);
                        *e = log_add(*e, lw + m);
                    }
                }
                let mut items: Vec<(StateId, f64)> = acc.into_iter().collect();
                items.sort_unstable_by_key(|&(t, _)| t);
                closures[s] = items;
            }
            return Ok(closures);
        }
        // Cyclic epsilon subgraph: per-state Jacobi fixpoint, geometric decay
        // as long as every epsilon cycle has weight < 1.
        let mut closures = Vec::with_capacity(n);
        for s in 0..n {
            closures.push(self.epsilon_closure_fixpoint(s, &eps_arcs)?);
        }
        Ok(closures)
    }

    fn epsilon_closure_fixpoint(
        &self,
        s: StateId,
        eps_arcs: &[Vec<(StateId, f64)>],
    ) -> Result<Vec<(StateId, f64)>, WfstError> {
        let n = self.num_states();
        let mut mass = vec![LOG_ZERO; n];
        mass[s] = 0.0;
        for _ in 0..FIXPOINT_MAX_ITERS {
            let mut next = vec![LOG_ZERO; n];
            next[s] = 0.0;
            for t in 0..n {
                if mass[t] == LOG_ZERO {
                    continue;
                }
                for &(dst, lw) in &eps_arcs[t] {
                    next[dst] = log_add(next[dst], mass[t] + lw);
                }
            }
            let converged = (0..n)
                .all(|t| next[t] == mass[t] || (next[t] - mass[t]).abs() < FIXPOINT_TOLERANCE);
            if next.iter().any(|&m| m > 700.0) {
                return Err(WfstError::DivergentMass);
            }
            mass = next;
            if converged {
                return Ok((0..n)
                    .filter(|&t| mass[t] != LOG_ZERO)
                    .map(|t| (t, mass[t]))
                    .collect());
            }
        }
        Err(WfstError::DivergentMass)
    }

    /// Drops states unreachable from the start or unable to reach a final
    /// state via positive-weight arcs; remaining states are renumbered
    /// densely, preserving relative order.
    pub fn trim(&self) -> Result<WeightedFst, WfstError> {
        let start = self.require_start()?;
        let n = self.num_states();
        let mut forward = vec![false; n];
        let mut stack = vec![start];
        forward[start] = true;
        while let Some(s) = stack.pop() {
            for arc in &self.arcs[s] {
                if arc.weight > 0.0 && !forward[arc.next] {
                    forward[arc.next] = true;
                    stack.push(arc.next);
                }
            }
        }
        let mut reverse_adj: Vec<Vec<StateId>> = vec![Vec::new(); n];
        for s in 0..n {
            for arc in &self.arcs[s] {
                if arc.weight > 0.0 {
                    reverse_adj[arc.next].push(s);
                }
            }
        }
        let mut backward = vec![false; n];
        let mut stack: Vec<StateId> = (0..n).filter(|&s| self.is_final(s)).collect();
        for &s in &stack {
            backward[s] = true;
        }
        while let Some(s) = stack.pop() {
            for &p in &reverse_adj[s] {
                if !backward[p] {
                    backward[p] = true;
                    stack.push(p);
                }
            }
        }
        let keep: Vec<StateId> = (0..n).filter(|&s| forward[s] && backward[s]).collect();
        if keep.is_empty() || !(forward[start] && backward[start]) {
            return Err(WfstError::ZeroMass);
        }
        let mut remap = vec![usize::MAX; n];
        for (new_id, &old_id) in keep.iter().enumerate() {
            remap[old_id] = new_id;
        }
        let mut out = WeightedFst::new();
        for _ in 0..keep.len() {
            out.add_state();
        }
        out.set_start(remap[start]);
        for &old_id in &keep {
            out.set_final(remap[old_id], self.finals[old_id]);
            for arc in &self.arcs[old_id] {
                if arc.weight > 0.0 && remap[arc.next] != usize::MAX {
                    out.add_arc(remap[old_id], arc.label.clone(), arc.weight, remap[arc.next]);
                }
            }
        }
        Ok(out)
    }

    /// Forward-backward path masses.
    ///
    /// Acyclic FSTs use a single topological sweep; cyclic ones iterate to a
    /// fixpoint and report divergence when a cycle carries weight >= 1.
    pub fn forward_backward(&self) -> Result<ForwardBackwardTables, WfstError> {
        let start = self.require_start()?;
        let n = self.num_states();
        let (log_alpha, log_beta) = match self.topological_order() {
            Ok(order) => {
                let mut log_alpha = vec![LOG_ZERO; n];
                log_alpha[start] = 0.0;
                for &s in &order {
                    if log_alpha[s] == LOG_ZERO {
                        continue;
                    }
                    for arc in &self.arcs[s] {
                        let contrib = log_alpha[s] + ln_weight(arc.weight);
                        log_alpha[arc.next] = log_add(log_alpha[arc.next], contrib);
                    }
                }
                let mut log_beta = vec![LOG_ZERO; n];
                for &s in order.iter().rev() {
                    let mut b = ln_weight(self.finals[s]);
                    for arc in &self.arcs[s] {
                        b = log_add(b, ln_weight(arc.weight) + log_beta[arc.next]);
                    }
                    log_beta[s] = b;
                }
                (log_alpha, log_beta)
            }
            Err(WfstError::CycleDetected) => {
                let log_alpha = self.fixpoint_masses(FixpointDirection::Forward)?;
                let log_beta = self.fixpoint_masses(FixpointDirection::Backward)?;
                (log_alpha, log_beta)
            }
            Err(e) => return Err(e),
        };
        let log_z = log_sum(
            (0..n).map(|s| log_alpha[s] + ln_weight(self.finals[s])),
        );
        if log_z == LOG_ZERO {
            return Err(WfstError::ZeroMass);
        }
        Ok(ForwardBackwardTables { log_alpha, log_beta, log_z })
    }

    fn fixpoint_masses(&self, direction: FixpointDirection) -> Result<Vec<f64>, WfstError> {
        let start = self.require_start()?;
        let n = self.num_states();
        let mut mass: Vec<f64> = match direction {
            FixpointDirection::Forward => {
                let mut m = vec![LOG_ZERO; n];
                m[start] = 0.0;
                m
            }
            FixpointDirection::Backward => {
                (0..n).map(|s| ln_weight(self.finals[s])).collect()
            }
        };
        let mut reverse_adj: Vec<Vec<(StateId, f64)>> = vec![Vec::new(); n];
        if matches!(direction, FixpointDirection::Forward) {
            for s in 0..n {
                for arc in &self.arcs[s] {
                    reverse_adj[arc.next].push((s, ln_weight(arc.weight)));
                }
            }
        }
        for _ in 0..FIXPOINT_MAX_ITERS {
            let mut next = vec![LOG_ZERO; n];
            match direction {
                FixpointDirection::Forward => {
                    for s in 0..n {
                        let mut v = if s == start { 0.0 } else { LOG_ZERO };
                        for &(p, lw) in &reverse_adj[s] {
                            v = log_add(v, mass[p] + lw);
                        }
                        next[s] = v;
                    }
                }
                FixpointDirection::Backward => {
                    for s in 0..n {
                        let mut v = ln_weight(self.finals[s]);
                        for arc in &self.arcs[s] {
                            v = log_add(v, ln_weight(arc.weight) + mass[arc.next]);
                        }
                        next[s] = v;
                    }
                }
            }
            let converged = (0..n).all(|s| {
                (next[s] == mass[s])
                    || (next[s] - mass[s]).abs() < FIXPOINT_TOLERANCE
            });
            if next.iter().any(|&m| m > 700.0) {
                return Err(WfstError::DivergentMass);
            }
            mass = next;
            if converged {
                return Ok(mass);
            }
        }
        Err(WfstError::DivergentMass)
    }

    /// Every complete path as `(words, unnormalized weight)`, in depth-first
    /// arc order. Epsilon arcs contribute weight but no word. Fails on cyclic
    /// input or when more than `cap` paths exist.
    pub fn enumerate_paths(&self, cap: usize) -> Result<Vec<(Vec<String>, f64)>, WfstError> {
        let start = self.require_start()?;
        if !self.is_acyclic() {
            return Err(WfstError::CycleDetected);
        }
        let mut paths = Vec::new();
        let mut words: Vec<String> = Vec::new();
        self.enumerate_rec(start, 0.0, &mut words, &mut paths, cap)?;
        Ok(paths)
    }

    fn enumerate_rec(
        &self,
        s: StateId,
        log_weight: f64,
        words: &mut Vec<String>,
        paths: &mut Vec<(Vec<String>, f64)>,
        cap: usize,
    ) -> Result<(), WfstError> {
        if self.finals[s] > 0.0 {
            if paths.len() >= cap {
                return Err(WfstError::PathCapExceeded(cap));
            }
            paths.push((words.clone(), (log_weight + self.finals[s].ln()).exp()));
        }
        for arc in &self.arcs[s] {
            if arc.weight == 0.0 {
                continue;
            }
            let lw = log_weight + arc.weight.ln();
            match &arc.label {
                Label::Epsilon => self.enumerate_rec(arc.next, lw, words, paths, cap)?,
                Label::Word(w) => {
                    words.push(w.clone());
                    self.enumerate_rec(arc.next, lw, words, paths, cap)?;
                    words.pop();
                }
                Label::NonTerminal(name) => {
                    return Err(WfstError::NonTerminalPresent(name.clone()));
                }
            }
        }
        Ok(())
    }

    /// Serializes in a line-per-arc text format: `src dst label weight` for
    /// arcs and `state weight` for final states. Epsilon prints as `<eps>`
    /// and a non-terminal `N` as `@N`; word labels must not collide with
    /// those encodings if the dump is to be read back.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<(), WfstError> {
        let start = self.require_start()?;
        let mut order: Vec<StateId> = (0..self.num_states()).collect();
        // The start state leads so that reload restores it.
        order.retain(|&s| s != start);
        order.insert(0, start);
        for &s in &order {
            for arc in &self.arcs[s] {
                writeln!(w, "{} {} {} {}", s, arc.next, arc.label, arc.weight)?;
            }
        }
        for &s in &order {
            if self.finals[s] > 0.0 {
                writeln!(w, "{} {}", s, self.finals[s])?;
            }
        }
        Ok(())
    }

    pub fn to_text(&self) -> Result<String, WfstError> {
        let mut buf = Vec::new();
        self.write_text(&mut buf)?;
        Ok(String::from_utf8(buf).expect("text format is utf-8"))
    }

    /// Reads the [`write_text`](Self::write_text) format. The first line's
    /// source state is taken as the start state.
    pub fn read_text<R: BufRead>(r: R) -> Result<WeightedFst, WfstError> {
        let mut out = WeightedFst::new();
        let ensure = |fst: &mut WeightedFst, s: StateId| {
            while fst.num_states() <= s {
                fst.add_state();
            }
        };
        for (idx, line) in r.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let fields: Vec<&str> = line.split_whitespace().collect();
            if fields.is_empty() {
                continue;
            }
            let parse_state = |s: &str| -> Result<StateId, WfstError> {
                s.parse().map_err(|_| WfstError::Parse {
                    line: lineno,
                    reason: format!("bad state id `{s}`"),
                })
            };
            let parse_weight = |s: &str| -> Result<f64, WfstError> {
                let w: f64 = s.parse().map_err(|_| WfstError::Parse {
                    line: lineno,
                    reason: format!("bad weight `{s}`"),
                })?;
                if w < 0.0 || !w.is_finite() {
                    return Err(WfstError::Parse {
                        line: lineno,
                        reason: format!("negative or non-finite weight `{s}`"),
                    });
                }
                Ok(w)
            };
            match fields.len() {
                2 => {
                    let s = parse_state(fields[0])?;
                    let w = parse_weight(fields[1])?;
                    ensure(&mut out, s);
                    out.set_final(s, w);
                }
                4 => {
                    let src = parse_state(fields[0])?;
                    let dst = parse_state(fields[1])?;
                    let w = parse_weight(fields[3])?;
                    let label = match fields[2] {
                        "<eps>" => Label::Epsilon,
                        nt if nt.starts_with('@') && nt.len() > 1 => {
                            Label::NonTerminal(nt[1..].to_string())
                        }
                        word => Label::Word(word.to_string()),
                    };
                    ensure(&mut out, src.max(dst));
                    if out.start.is_none() {
                        out.set_start(src);
                    }
                    out.add_arc(src, label, w, dst);
                }
                n => {
                    return Err(WfstError::Parse {
                        line: lineno,
                        reason: format!("expected 2 or 4 fields, got {n}"),
                    })
                }
            }
        }
        if out.start.is_none() {
            // Final-only dumps (single-state FSTs) start at state 0.
            if out.num_states() > 0 {
                out.set_start(0);
            } else {
                return Err(WfstError::NoStart);
            }
        }
        Ok(out)
    }
}

enum FixpointDirection {
    Forward,
    Backward,
}

/// Kahn's algorithm over an adjacency list; `None` when cyclic.
fn eps_topological_order(adj: &[Vec<(StateId, f64)>]) -> Option<Vec<StateId>> {
    let n = adj.len();
    let mut indegree = vec![0usize; n];
    for arcs in adj {
        for &(next, _) in arcs {
            indegree[next] += 1;
        }
    }
    let mut queue: VecDeque<StateId> = (0..n).filter(|&s| indegree[s] == 0).collect();
    let mut order = Vec::with_capacity(n);
    while let Some(s) = queue.pop_front() {
        order.push(s);
        for &(next, _) in &adj[s] {
            indegree[next] -= 1;
            if indegree[next] == 0 {
                queue.push_back(next);
            }
        }
    }
    (order.len() == n).then_some(order)
}

/// Per-state path masses from the forward-backward sweep.
///
/// `alpha(s)` is the unnormalized mass of paths from the start to `s`,
/// `beta(s)` the mass from `s` to any final state including the final weight,
/// and `z` the total path mass, with `beta(start) == z`.
#[derive(Debug, Clone)]
pub struct ForwardBackwardTables {
    pub log_alpha: Vec<f64>,
    pub log_beta: Vec<f64>,
    pub log_z: f64,
}

impl ForwardBackwardTables {
    pub fn alpha(&self, s: StateId) -> f64 {
        self.log_alpha[s].exp()
    }

    pub fn beta(&self, s: StateId) -> f64 {
        self.log_beta[s].exp()
    }

    pub fn z(&self) -> f64 {
        self.log_z.exp()
    }

    /// Posterior mass of paths through `s`: alpha(s)*beta(s)/z.
    pub fn posterior(&self, s: StateId) -> f64 {
        (self.log_alpha[s] + self.log_beta[s] - self.log_z).exp()
    }
}

/// Samples complete paths from the normalized path distribution.
///
/// Precomputes backward masses once so that bulk sampling is cheap.
pub struct PathSampler<'a> {
    fst: &'a WeightedFst,
    log_beta: Vec<f64>,
    start: StateId,
}

impl<'a> PathSampler<'a> {
    pub fn new(fst: &'a WeightedFst) -> Result<Self, WfstError> {
        if let Some(name) = fst.non_terminals().into_iter().next() {
            return Err(WfstError::NonTerminalPresent(name));
        }
        let start = fst.require_start()?;
        let tables = fst.forward_backward()?;
        Ok(Self { fst, log_beta: tables.log_beta, start })
    }

    /// Draws one complete path; the probability of each path equals its
    /// weight divided by the total mass.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Result<Vec<String>, WfstError> {
        let mut words = Vec::new();
        let mut state = self.start;
        // Arc count bounds acyclic path length; the margin guards epsilon
        // cycles in hand-built inputs.
        let max_steps = self.fst.num_arcs().max(16) * 4 + 16;
        for _ in 0..max_steps {
            let log_beta_here = self.log_beta[state];
            if log_beta_here == LOG_ZERO {
                return Err(WfstError::DeadEnd(state));
            }
            let stop_prob = (ln_weight(self.fst.final_weight(state)) - log_beta_here).exp();
            let mut u: f64 = rng.gen::<f64>();
            if u < stop_prob {
                return Ok(words);
            }
            u -= stop_prob;
            let mut chosen: Option<&FstArc> = None;
            for arc in self.fst.arcs(state) {
                let p = (ln_weight(arc.weight) + self.log_beta[arc.next] - log_beta_here).exp();
                if u < p {
                    chosen = Some(arc);
                    break;
                }
                u -= p;
            }
            // Rounding can leave a sliver of probability unassigned; give it
            // to the last positive-mass arc.
            let arc = match chosen {
                Some(a) => a,
                None => self
                    .fst
                    .arcs(state)
                    .iter()
                    .rev()
                    .find(|a| a.weight > 0.0 && self.log_beta[a.next] != LOG_ZERO)
                    .ok_or(WfstError::DeadEnd(state))?,
            };
            match &arc.label {
                Label::Word(w) => words.push(w.clone()),
                Label::Epsilon => {}
                Label::NonTerminal(name) => {
                    return Err(WfstError::NonTerminalPresent(name.clone()))
                }
            }
            state = arc.next;
        }
        Err(WfstError::DeadEnd(state))
    }
}

/// One-shot sampling with a fixed seed; identical seeds give identical paths.
pub fn sample_path(fst: &WeightedFst, seed: u64) -> Result<Vec<String>, WfstError> {
    let sampler = PathSampler::new(fst)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    sampler.sample(&mut rng)
}
