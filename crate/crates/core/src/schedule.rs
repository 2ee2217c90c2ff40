//! Multiplication-minimal accumulation schedules over squarefree monomial
//! targets, plus the replay checker that validates any schedule against the
//! reference evaluators.
//!
//! In the monomial regime every required output is a product of distinct
//! named scalars ("atoms"), so a schedule is a straight-line program of
//! binary multiplications whose operands never share an atom. Minimizing the
//! number of multiplications is the set-union covering problem in disguise;
//! the exact solver below is an iterative-deepening branch-and-bound over
//! canonical product sequences.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use rayon::prelude::*;
use serde_json::{json, Value};

use crate::chain_eval::{path_sum_jacobian, reduction_pth_derivative};
use crate::dag::Dag;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Set of atom ids multiplied together. Squarefree by construction: set
/// semantics cannot represent a repeated factor.
pub type Monomial = BTreeSet<String>;

/// Names one scalar entry of one elemental derivative: edge, order,
/// multi-index. Rendered as `e{src}-{dst}.o{order}.{i0}_{i1}_…`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellId {
    pub src: usize,
    pub dst: usize,
    pub order: u32,
    pub index: Vec<usize>,
}

impl fmt::Display for CellId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let idx: Vec<String> = self.index.iter().map(|i| i.to_string()).collect();
        write!(f, "e{}-{}.o{}.{}", self.src, self.dst, self.order, idx.join("_"))
    }
}

impl CellId {
    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::AtomResolution(format!("bad atom id `{s}`"));
        let rest = s.strip_prefix('e').ok_or_else(bad)?;
        let (edge, rest) = rest.split_once('.').ok_or_else(bad)?;
        let (src, dst) = edge.split_once('-').ok_or_else(bad)?;
        let (order, idx) = rest.split_once('.').ok_or_else(bad)?;
        let order = order.strip_prefix('o').ok_or_else(bad)?;
        let index = idx
            .split('_')
            .map(|p| p.parse::<usize>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        if index.is_empty() {
            return Err(bad());
        }
        Ok(CellId {
            src: src.parse().map_err(|_| bad())?,
            dst: dst.parse().map_err(|_| bad())?,
            order: order.parse().map_err(|_| bad())?,
            index,
        })
    }

    /// Looks the named entry up in a dag's elemental derivatives.
    pub fn resolve<S: Scalar>(&self, dag: &Dag<S>) -> Result<S> {
        let t = dag
            .deriv(self.src, self.dst, self.order)
            .map_err(|e| Error::AtomResolution(format!("{self}: {e}")))?;
        if self.index.len() != t.order()
            || self.index.iter().zip(t.shape()).any(|(&i, &d)| i >= d)
        {
            return Err(Error::AtomResolution(format!(
                "{self}: index out of range for shape {:?}",
                t.shape()
            )));
        }
        Ok(t.get(&self.index).clone())
    }
}

/// A named scalar operand together with its value. In reduction artifacts the
/// values are pairwise distinct primes.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom<S: Scalar> {
    pub id: String,
    pub value: S,
}

/// Operand of a multiply step: a named atom or the result of an earlier step.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum OperandRef {
    Atom(String),
    Step(usize),
}

impl OperandRef {
    fn token(&self) -> String {
        match self {
            OperandRef::Atom(id) => format!("atom:{id}"),
            OperandRef::Step(k) => format!("step:{k}"),
        }
    }

    fn parse_token(s: &str) -> Result<Self> {
        if let Some(id) = s.strip_prefix("atom:") {
            if id.is_empty() {
                return Err(Error::InvalidFormat("empty atom id".into()));
            }
            return Ok(OperandRef::Atom(id.to_string()));
        }
        if let Some(k) = s.strip_prefix("step:") {
            let k = k
                .parse::<usize>()
                .map_err(|_| Error::InvalidFormat(format!("bad step ref `{s}`")))?;
            return Ok(OperandRef::Step(k));
        }
        Err(Error::InvalidFormat(format!("bad operand ref `{s}`")))
    }
}

/// One fused multiply: product of two operands, optionally folded into an
/// output accumulator for free.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Step {
    pub a: OperandRef,
    pub b: OperandRef,
    pub accumulate_into: Option<usize>,
}

/// Straight-line program: multiply steps plus, per output slot, the refs
/// summed into it. Slots may be empty when every contribution arrives through
/// a step's `accumulate_into`. Cost is the number of steps; all additions are
/// fused and free.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Schedule {
    pub steps: Vec<Step>,
    pub targets: Vec<Vec<OperandRef>>,
}

impl Schedule {
    pub fn cost(&self) -> u64 {
        self.steps.len() as u64
    }

    pub fn to_json(&self) -> Value {
        let steps: Vec<Value> = self
            .steps
            .iter()
            .map(|s| {
                json!({
                    "a": s.a.token(),
                    "b": s.b.token(),
                    "accumulate_into": s.accumulate_into.map(|j| format!("target:{j}")),
                })
            })
            .collect();
        let targets: Vec<Value> = self
            .targets
            .iter()
            .map(|refs| Value::Array(refs.iter().map(|r| Value::String(r.token())).collect()))
            .collect();
        json!({ "steps": steps, "targets": targets })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::InvalidFormat("schedule must be a JSON object".into()))?;
        let steps_v = obj
            .get("steps")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::InvalidFormat("schedule needs a `steps` array".into()))?;
        let mut steps = Vec::with_capacity(steps_v.len());
        for (i, sv) in steps_v.iter().enumerate() {
            let so = sv
                .as_object()
                .ok_or_else(|| Error::InvalidFormat(format!("step {i} must be an object")))?;
            let field = |name: &str| -> Result<&str> {
                so.get(name).and_then(Value::as_str).ok_or_else(|| {
                    Error::InvalidFormat(format!("step {i} needs string field `{name}`"))
                })
            };
            let accumulate_into = match so.get("accumulate_into") {
                None | Some(Value::Null) => None,
                Some(Value::String(s)) => {
                    let j = s
                        .strip_prefix("target:")
                        .and_then(|t| t.parse::<usize>().ok())
                        .ok_or_else(|| {
                            Error::InvalidFormat(format!("step {i}: bad accumulator `{s}`"))
                        })?;
                    Some(j)
                }
                Some(other) => {
                    return Err(Error::InvalidFormat(format!(
                        "step {i}: bad accumulator {other}"
                    )))
                }
            };
            steps.push(Step {
                a: OperandRef::parse_token(field("a")?)?,
                b: OperandRef::parse_token(field("b")?)?,
                accumulate_into,
            });
        }
        let targets_v = obj
            .get("targets")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::InvalidFormat("schedule needs a `targets` array".into()))?;
        let mut targets = Vec::with_capacity(targets_v.len());
        for (j, tv) in targets_v.iter().enumerate() {
            let refs_v = tv
                .as_array()
                .ok_or_else(|| Error::InvalidFormat(format!("target {j} must be an array")))?;
            let refs = refs_v
                .iter()
                .map(|rv| {
                    rv.as_str()
                        .ok_or_else(|| {
                            Error::InvalidFormat(format!("target {j}: refs must be strings"))
                        })
                        .and_then(OperandRef::parse_token)
                })
                .collect::<Result<Vec<_>>>()?;
            targets.push(refs);
        }
        Ok(Schedule { steps, targets })
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        Self::from_json(&serde_json::from_str(text)?)
    }
}

/// Size limits for the exact solver. Configuration, not logic: raise them and
/// the search still terminates, just slower.
#[derive(Debug, Clone, Copy)]
pub struct SearchCaps {
    pub max_atoms: usize,
    pub max_k: usize,
}

impl Default for SearchCaps {
    fn default() -> Self {
        SearchCaps { max_atoms: 24, max_k: 24 }
    }
}

/// Outcome of the exact decision procedure. `min_mults` is the true minimum
/// when the search closed below the cap, `None` when the cap was hit first;
/// `schedule` is the canonical-least witness whenever the minimum is known.
#[derive(Debug, Clone)]
pub struct FmaDecision {
    pub feasible: bool,
    pub min_mults: Option<u64>,
    pub schedule: Option<Schedule>,
}

// ---------------------------------------------------------------------------
// Exact engine. Monomials are bitmasks over a fixed atom universe.
//
// A solution is a SET of produced masks: minimal solutions never produce the
// same mask twice (the later copy could be rewired away), every produced mask
// divides some target (a production dividing none can be dropped — its
// consumers would divide none either, and targets end the chain), and any
// such set can be replayed in ascending (popcount, mask) order because both
// operands of a mask are strict subsets of it. So the search looks for the
// smallest "split-closed" family F: every multi-atom target is in F, and
// every member of F splits into two disjoint parts that are atoms or earlier
// members.
//
// Two exact reductions keep the search small:
//   * component decomposition — targets in different components of the
//     "shares ≥ 2 atoms" relation cannot share a multi-atom mask (it would
//     lie in a pairwise intersection of size ≤ 1), so F partitions and the
//     minima add; a single-target component of size s needs exactly s − 1
//     productions and is emitted directly;
//   * top-down splitting — instead of enumerating all pairs of available
//     masks bottom-up, the search repeatedly picks a member still lacking a
//     split witness and branches over its two-part splits, so every branch
//     decision builds structure some target actually needs. Iterative
//     deepening on |F| with an admissible gap bound keeps it exact.
// ---------------------------------------------------------------------------

type Key = (u32, u128);

fn key(m: u128) -> Key {
    (m.count_ones(), m)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct Production {
    pub mask: u128,
    pub a: u128,
    pub b: u128,
}

pub(crate) struct MonomialProblem {
    universe: Vec<String>,
    targets: Vec<u128>,
}

impl MonomialProblem {
    /// `targets` must already be deduplicated; order is preserved.
    pub(crate) fn new(universe: Vec<String>, targets: Vec<u128>) -> Result<Self> {
        if universe.len() > 128 {
            return Err(Error::InstanceTooLarge(format!(
                "{} atoms exceed the 128-bit mask width",
                universe.len()
            )));
        }
        let mut seen = BTreeSet::new();
        for name in &universe {
            if name.is_empty() || !seen.insert(name) {
                return Err(Error::BadInstance(format!("bad atom universe entry `{name}`")));
            }
        }
        let full: u128 = if universe.is_empty() { 0 } else { (!0u128) >> (128 - universe.len()) };
        let mut mask_seen = BTreeSet::new();
        for &t in &targets {
            if t == 0 || t & !full != 0 || !mask_seen.insert(t) {
                return Err(Error::BadInstance("invalid or duplicate target mask".into()));
            }
        }
        Ok(MonomialProblem { universe, targets })
    }

    /// Connected components of the multi-atom targets under the relation
    /// "shares at least two atoms". Indices into `self.targets`, each
    /// component sorted, components ordered by first member.
    fn components(&self) -> Vec<Vec<usize>> {
        let multi: Vec<usize> = (0..self.targets.len())
            .filter(|&t| self.targets[t].count_ones() >= 2)
            .collect();
        let mut parent: Vec<usize> = (0..multi.len()).collect();
        fn find(parent: &mut Vec<usize>, i: usize) -> usize {
            if parent[i] != i {
                let root = find(parent, parent[i]);
                parent[i] = root;
            }
            parent[i]
        }
        for i in 0..multi.len() {
            for j in i + 1..multi.len() {
                if (self.targets[multi[i]] & self.targets[multi[j]]).count_ones() >= 2 {
                    let (ri, rj) = (find(&mut parent, i), find(&mut parent, j));
                    if ri != rj {
                        parent[ri.max(rj)] = ri.min(rj);
                    }
                }
            }
        }
        let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for i in 0..multi.len() {
            let root = find(&mut parent, i);
            groups.entry(root).or_default().push(multi[i]);
        }
        groups.into_values().collect()
    }

    /// Exact minimum production set, or `None` when it exceeds `caps.max_k`.
    /// Component minima are searched independently (exact, see the engine
    /// note) and the union is returned in ascending (popcount, mask) order —
    /// a valid dependency order, and deterministic regardless of thread
    /// count because components never race on a shared best.
    pub(crate) fn min_productions(&self, caps: &SearchCaps) -> Result<Option<Vec<Production>>> {
        let n = self.universe.len();
        if n > caps.max_atoms {
            return Err(Error::InstanceTooLarge(format!(
                "{n} atoms exceed the cap of {}",
                caps.max_atoms
            )));
        }
        if self.targets.len() > 64 {
            return Err(Error::InstanceTooLarge(format!(
                "{} distinct targets exceed the cap of 64",
                self.targets.len()
            )));
        }
        let solved: Vec<Option<Vec<(u128, u128, u128)>>> = self
            .components()
            .into_par_iter()
            .map(|component| {
                let targets: Vec<u128> = component.iter().map(|&t| self.targets[t]).collect();
                solve_component(&targets, caps.max_k)
            })
            .collect();
        let mut all = Vec::new();
        for sol in solved {
            match sol {
                Some(mut prods) => all.append(&mut prods),
                None => return Ok(None),
            }
        }
        if all.len() > caps.max_k {
            return Ok(None);
        }
        all.sort_by_key(|&(m, _, _)| key(m));
        Ok(Some(
            all.into_iter().map(|(mask, a, b)| Production { mask, a, b }).collect(),
        ))
    }

    /// Pair-frequency heuristic: repeatedly merge the most frequently
    /// co-occurring factor pair across all target factorizations. A pair
    /// whose union was already produced is rewritten for free.
    pub(crate) fn greedy_productions(&self) -> Vec<Production> {
        let mut lists: Vec<Vec<u128>> = self
            .targets
            .iter()
            .map(|&t| (0..128).filter(|i| t >> i & 1 == 1).map(|i| 1u128 << i).collect())
            .collect();
        let mut produced: Vec<Production> = Vec::new();
        let mut made: BTreeSet<u128> = BTreeSet::new();
        loop {
            let mut counts: BTreeMap<(u128, u128), usize> = BTreeMap::new();
            for list in &lists {
                for i in 0..list.len() {
                    for j in i + 1..list.len() {
                        let (a, b) = if key(list[i]) <= key(list[j]) {
                            (list[i], list[j])
                        } else {
                            (list[j], list[i])
                        };
                        *counts.entry((a, b)).or_insert(0) += 1;
                    }
                }
            }
            // Every factorization is down to one factor: all targets built.
            let Some((&(a, b), _)) = counts.iter().max_by(|(ka, va), (kb, vb)| {
                let rank = |&(x, y): &(u128, u128)| {
                    let u = x | y;
                    (u.count_ones(), u, x.count_ones(), x)
                };
                va.cmp(vb).then_with(|| rank(kb).cmp(&rank(ka)))
            }) else {
                break;
            };
            let u = a | b;
            if made.insert(u) {
                produced.push(Production { mask: u, a, b });
            }
            for list in &mut lists {
                if list.contains(&a) && list.contains(&b) {
                    list.retain(|&x| x != a && x != b);
                    list.push(u);
                }
            }
        }
        produced
    }
}

/// Minimum split-closed family covering one component's targets (all
/// multi-atom, pairwise connected through ≥ 2-atom overlaps). Members come
/// back as (mask, a, b) with a ≤ b in key order; `None` past `max_k`.
fn solve_component(targets: &[u128], max_k: usize) -> Option<Vec<(u128, u128, u128)>> {
    if let [m] = targets {
        // A split tree over s atoms has exactly s − 1 internal nodes, all
        // distinct masks, so left-to-right association is already minimal.
        let mut atoms = (0..128).filter(|i| m >> i & 1 == 1).map(|i| 1u128 << i);
        let mut acc = atoms.next().unwrap();
        let prods: Vec<(u128, u128, u128)> = atoms
            .map(|atom| {
                let u = acc | atom;
                let pair = if key(acc) <= key(atom) { (u, acc, atom) } else { (u, atom, acc) };
                acc = u;
                pair
            })
            .collect();
        return (prods.len() <= max_k).then_some(prods);
    }
    let lb = component_bound(targets);
    let ub: usize = targets.iter().map(|t| t.count_ones() as usize - 1).sum();
    let mut search = SplitSearch { targets, limit: 0, chosen: Vec::new(), open: Vec::new(), splits: Vec::new(), failed: HashSet::new() };
    for limit in lb..=ub.min(max_k) {
        if let Some(sol) = search.run(limit) {
            return Some(sol);
        }
    }
    None
}

/// Admissible floor on |F| for one component: every distinct target is a
/// member; following the larger child from a target's root passes through
/// ⌈log₂ s⌉ distinct members inside it, and every other target reaching
/// outside it is yet another member.
fn component_bound(targets: &[u128]) -> usize {
    let mut best = targets.len();
    for &t in targets {
        let grow = (t.count_ones() as usize).next_power_of_two().trailing_zeros() as usize;
        let outside = targets.iter().filter(|&&o| o != t && o & !t != 0).count();
        best = best.max(grow + outside);
    }
    best
}

/// Iterative-deepening split search. `chosen` is the family committed so
/// far (cost = its size), `open` are members still lacking a split witness.
struct SplitSearch<'a> {
    targets: &'a [u128],
    limit: usize,
    chosen: Vec<u128>,
    open: Vec<u128>,
    splits: Vec<(u128, u128, u128)>,
    failed: HashSet<(Vec<u128>, Vec<u128>)>,
}

impl SplitSearch<'_> {
    fn run(&mut self, limit: usize) -> Option<Vec<(u128, u128, u128)>> {
        self.limit = limit;
        self.chosen = self.targets.to_vec();
        self.open = self.targets.to_vec();
        self.splits.clear();
        self.failed.clear();
        self.dfs()
    }

    /// True when m has no split into two parts that are already atoms or
    /// members — such a member forces at least one more addition (shared
    /// additions are possible, so open gaps cannot be summed, only maxed).
    fn gap(&self, m: u128) -> bool {
        if m.count_ones() == 2 {
            return false;
        }
        !self.chosen.iter().any(|&c| {
            let rest = m & !c;
            c != m && c & !m == 0 && (rest.count_ones() == 1 || self.chosen.contains(&rest))
        })
    }

    fn dfs(&mut self) -> Option<Vec<(u128, u128, u128)>> {
        let Some(&m) = self.open.iter().max_by_key(|&&m| key(m)) else {
            return Some(self.splits.clone());
        };
        let floor = self.chosen.len() + self.open.iter().any(|&o| self.gap(o)) as usize;
        if floor > self.limit {
            return None;
        }
        let state = {
            let mut c = self.chosen.clone();
            c.sort_unstable();
            let mut o = self.open.clone();
            o.sort_unstable();
            (c, o)
        };
        if self.failed.contains(&state) {
            return None;
        }
        self.open.retain(|&o| o != m);

        // Candidate splits: the part holding m's lowest atom, cheapest
        // (fewest new members) first, then ascending — a fixed order, so the
        // witness is deterministic.
        let low = m & m.wrapping_neg();
        let rest = m & !low;
        let mut cands = Vec::new();
        let mut s = 0u128;
        loop {
            let a = low | s;
            if a != m {
                let b = m & !a;
                let new = [a, b]
                    .iter()
                    .filter(|&&x| x.count_ones() >= 2 && !self.chosen.contains(&x))
                    .count();
                if self.chosen.len() + new <= self.limit {
                    cands.push((new, a, b));
                }
            }
            s = s.wrapping_sub(rest) & rest;
            if s == 0 {
                break;
            }
        }
        cands.sort_unstable();
        for (_, a, b) in cands {
            let mut added = Vec::new();
            for x in [a, b] {
                if x.count_ones() >= 2 && !self.chosen.contains(&x) {
                    self.chosen.push(x);
                    self.open.push(x);
                    added.push(x);
                }
            }
            let (x, y) = if key(a) <= key(b) { (a, b) } else { (b, a) };
            self.splits.push((m, x, y));
            if let Some(sol) = self.dfs() {
                return Some(sol);
            }
            // chosen is stack-disciplined across the recursion; open is not
            // (members get removed mid-vector and re-appended), so roll it
            // back by value.
            self.splits.pop();
            for x in added {
                self.chosen.pop();
                self.open.retain(|&o| o != x);
            }
        }
        self.open.push(m);
        self.failed.insert(state);
        None
    }
}

/// Renders a production sequence as a Schedule. `slot_sums[j]` lists the
/// monomial masks summed into output slot j; the first appearance of a
/// produced mask in a slot claims the step's fused accumulator, later
/// appearances become explicit refs.
pub(crate) fn emit_schedule(
    problem: &MonomialProblem,
    prods: &[Production],
    slot_sums: &[Vec<u128>],
) -> Result<Schedule> {
    let mut idx_of: BTreeMap<u128, usize> = BTreeMap::new();
    for (i, p) in prods.iter().enumerate() {
        idx_of.insert(p.mask, i);
    }
    let ref_of = |m: u128| -> Result<OperandRef> {
        if m.count_ones() == 1 {
            let bit = m.trailing_zeros() as usize;
            Ok(OperandRef::Atom(problem.universe[bit].clone()))
        } else {
            idx_of
                .get(&m)
                .map(|&i| OperandRef::Step(i))
                .ok_or_else(|| Error::BadSchedule("operand mask never produced".into()))
        }
    };
    let mut steps = prods
        .iter()
        .map(|p| {
            Ok(Step { a: ref_of(p.a)?, b: ref_of(p.b)?, accumulate_into: None })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut targets: Vec<Vec<OperandRef>> = vec![Vec::new(); slot_sums.len()];
    for (j, monos) in slot_sums.iter().enumerate() {
        for &m in monos {
            if m.count_ones() == 1 {
                targets[j].push(ref_of(m)?);
                continue;
            }
            let &i = idx_of.get(&m).ok_or_else(|| {
                Error::BadSchedule(format!("target monomial for slot {j} never produced"))
            })?;
            if steps[i].accumulate_into.is_none() {
                steps[i].accumulate_into = Some(j);
            } else {
                targets[j].push(OperandRef::Step(i));
            }
        }
    }
    Ok(Schedule { steps, targets })
}

/// Shared plumbing: atom universe (sorted by id) + per-slot masks + engine
/// problem over the distinct masks.
fn build_problem(targets: &[Monomial]) -> Result<(MonomialProblem, Vec<u128>)> {
    let mut names: BTreeSet<&str> = BTreeSet::new();
    for t in targets {
        if t.is_empty() {
            return Err(Error::BadInstance("empty monomial target".into()));
        }
        for a in t {
            names.insert(a);
        }
    }
    let universe: Vec<String> = names.into_iter().map(str::to_string).collect();
    if universe.len() > 128 {
        return Err(Error::InstanceTooLarge(format!(
            "{} atoms exceed the 128-bit mask width",
            universe.len()
        )));
    }
    let index: BTreeMap<&str, usize> =
        universe.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
    let mut slot_masks = Vec::with_capacity(targets.len());
    let mut distinct = Vec::new();
    let mut seen = BTreeSet::new();
    for t in targets {
        let mut m: u128 = 0;
        for a in t {
            m |= 1u128 << index[a.as_str()];
        }
        slot_masks.push(m);
        if seen.insert(m) {
            distinct.push(m);
        }
    }
    Ok((MonomialProblem::new(universe, distinct)?, slot_masks))
}

/// Can the targets be computed with at most `k` multiplications? Exact
/// branch-and-bound; the returned witness achieves the true minimum.
pub fn monomial_min_fma(targets: &[Monomial], k: u64, caps: &SearchCaps) -> Result<FmaDecision> {
    if k > caps.max_k as u64 {
        return Err(Error::InstanceTooLarge(format!(
            "K = {k} exceeds the cap of {}",
            caps.max_k
        )));
    }
    let (problem, slot_masks) = build_problem(targets)?;
    let prods = problem.min_productions(caps)?;
    let min_mults = prods.as_ref().map(|p| p.len() as u64);
    let schedule = match &prods {
        Some(p) => {
            let slot_sums: Vec<Vec<u128>> = slot_masks.iter().map(|&m| vec![m]).collect();
            Some(emit_schedule(&problem, p, &slot_sums)?)
        }
        None => None,
    };
    Ok(FmaDecision {
        feasible: min_mults.is_some_and(|m| m <= k),
        min_mults,
        schedule,
    })
}

/// Heuristic schedule: valid on any monomial instance, minimal on none in
/// particular. No depth cap; only the 128-atom mask width limits size.
pub fn greedy_schedule(targets: &[Monomial]) -> Result<Schedule> {
    let (problem, slot_masks) = build_problem(targets)?;
    let prods = problem.greedy_productions();
    let slot_sums: Vec<Vec<u128>> = slot_masks.iter().map(|&m| vec![m]).collect();
    emit_schedule(&problem, &prods, &slot_sums)
}

/// Replay outcome. `cost` counts multiply steps; `adds` counts the two-term
/// fused additions performed while folding contributions into targets
/// (contributions − 1 per slot). `value` is the flat vector of target sums
/// in slot order.
#[derive(Debug, Clone)]
pub struct Verification<S: Scalar> {
    pub ok: bool,
    pub reason: Option<String>,
    pub cost: u64,
    pub adds: u64,
    pub value: Tensor<S>,
}

/// Replays a schedule against a dag and compares the target sums with the
/// reference value: `path_sum_jacobian` for p = 1, `reduction_pth_derivative`
/// for p ≥ 2. Rational dags compare bit-exactly, float dags within 1e-9.
/// Structural defects (forward refs, unresolvable atoms) are errors; value
/// disagreement is reported as `ok = false`.
pub fn verify_schedule<S: Scalar>(
    schedule: &Schedule,
    dag: &Dag<S>,
    p: u32,
) -> Result<Verification<S>> {
    let oracle = if p == 1 {
        path_sum_jacobian(dag)?.value
    } else {
        reduction_pth_derivative(dag, p)?.value
    };

    let nt = schedule.targets.len();
    let mut vals: Vec<S> = Vec::with_capacity(schedule.steps.len());
    for (i, st) in schedule.steps.iter().enumerate() {
        let fetch = |r: &OperandRef| -> Result<S> {
            match r {
                OperandRef::Atom(id) => CellId::parse(id)?.resolve(dag),
                OperandRef::Step(k) => {
                    if *k < i {
                        Ok(vals[*k].clone())
                    } else {
                        Err(Error::DanglingRef(format!(
                            "step {i} references step {k}"
                        )))
                    }
                }
            }
        };
        let a = fetch(&st.a)?;
        let b = fetch(&st.b)?;
        if let Some(j) = st.accumulate_into {
            if j >= nt {
                return Err(Error::DanglingRef(format!(
                    "step {i} accumulates into target {j} of {nt}"
                )));
            }
        }
        vals.push(a.mul(&b));
    }

    // Fold contributions: fused accumulators in step order first, then the
    // explicit refs listed per slot.
    let mut sums: Vec<Option<S>> = vec![None; nt];
    let mut adds: u64 = 0;
    let fold = |j: usize, v: S, sums: &mut Vec<Option<S>>, adds: &mut u64| {
        sums[j] = Some(match sums[j].take() {
            None => v,
            Some(old) => {
                *adds += 1;
                old.add(&v)
            }
        });
    };
    for (i, st) in schedule.steps.iter().enumerate() {
        if let Some(j) = st.accumulate_into {
            fold(j, vals[i].clone(), &mut sums, &mut adds);
        }
    }
    for (j, refs) in schedule.targets.iter().enumerate() {
        for r in refs {
            let v = match r {
                OperandRef::Atom(id) => CellId::parse(id)?.resolve(dag)?,
                OperandRef::Step(k) => {
                    if *k < vals.len() {
                        vals[*k].clone()
                    } else {
                        return Err(Error::DanglingRef(format!(
                            "target {j} references step {k} of {}",
                            vals.len()
                        )));
                    }
                }
            };
            fold(j, v, &mut sums, &mut adds);
        }
    }

    let mut ok = true;
    let mut reason = None;
    if nt != oracle.len() {
        ok = false;
        reason = Some(format!(
            "schedule yields {nt} outputs, reference has {}",
            oracle.len()
        ));
    }
    let mut out: Vec<S> = Vec::with_capacity(nt);
    for (j, s) in sums.iter().enumerate() {
        match s {
            Some(v) => out.push(v.clone()),
            None => {
                out.push(S::zero());
                if ok {
                    ok = false;
                    reason = Some(format!("target {j} received no contribution"));
                }
            }
        }
    }
    if ok {
        for (j, (got, want)) in out.iter().zip(oracle.data()).enumerate() {
            if !got.approx_eq(want) {
                ok = false;
                reason = Some(format!("output {j}: got {got}, reference has {want}"));
                break;
            }
        }
    }
    let value = Tensor::from_vec(&[nt.max(1)], if nt == 0 { vec![S::zero()] } else { out })?;
    Ok(Verification { ok, reason, cost: schedule.cost(), adds, value })
}
