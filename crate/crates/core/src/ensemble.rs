//! Ensemble Computation: build a family of subsets with the fewest disjoint
//! unions. This module holds the instance/certificate types, an exact solver,
//! and the two-way bridge to derivative accumulation: subsets become
//! squarefree products of distinct primes laid out along a chain whose p-th
//! derivative entries factor back into the subsets.

use std::collections::{BTreeMap, BTreeSet};

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use serde_json::{json, Value};

use crate::dag::{Dag, Edge, Vertex};
use crate::error::{Error, Result};
use crate::scalar::{factorial, first_primes, Rat};
use crate::schedule::{
    monomial_min_fma, verify_schedule, Atom, CellId, FmaDecision, Monomial, MonomialProblem,
    OperandRef, Schedule, SearchCaps, Step,
};
use crate::tensor::Tensor;

/// A set-union construction problem: ground set `a`, required subsets `c`,
/// union budget `k`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnsembleInstance {
    pub a: Vec<String>,
    pub c: Vec<BTreeSet<String>>,
    pub k: u64,
}

impl EnsembleInstance {
    pub fn new(a: Vec<String>, c: Vec<BTreeSet<String>>, k: u64) -> Result<Self> {
        let inst = EnsembleInstance { a, c, k };
        inst.validate()?;
        Ok(inst)
    }

    pub fn validate(&self) -> Result<()> {
        if self.a.is_empty() {
            return Err(Error::BadInstance("ground set is empty".into()));
        }
        let mut seen = BTreeSet::new();
        for label in &self.a {
            if label.is_empty() || !seen.insert(label) {
                return Err(Error::BadInstance(format!("bad ground-set label `{label}`")));
            }
        }
        if self.c.is_empty() {
            return Err(Error::BadInstance("no required subsets".into()));
        }
        for (nu, set) in self.c.iter().enumerate() {
            if set.is_empty() {
                return Err(Error::BadInstance(format!("subset {nu} is empty")));
            }
            for label in set {
                if !seen.contains(label) {
                    return Err(Error::BadInstance(format!(
                        "subset {nu} uses unknown label `{label}`"
                    )));
                }
            }
        }
        if self.k == 0 {
            return Err(Error::BadInstance("union budget K must be positive".into()));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Value {
        json!({
            "A": self.a,
            "C": self.c.iter().map(|s| s.iter().cloned().collect::<Vec<_>>()).collect::<Vec<_>>(),
            "K": self.k,
        })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::InvalidFormat("instance must be a JSON object".into()))?;
        let labels = obj
            .get("A")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::InvalidFormat("instance needs an `A` array".into()))?;
        let a = labels
            .iter()
            .map(|l| {
                l.as_str()
                    .map(str::to_string)
                    .ok_or_else(|| Error::InvalidFormat("labels must be strings".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        let subsets = obj
            .get("C")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::InvalidFormat("instance needs a `C` array".into()))?;
        let c = subsets
            .iter()
            .map(|s| {
                s.as_array()
                    .ok_or_else(|| Error::InvalidFormat("subsets must be arrays".into()))?
                    .iter()
                    .map(|l| {
                        l.as_str()
                            .map(str::to_string)
                            .ok_or_else(|| Error::InvalidFormat("labels must be strings".into()))
                    })
                    .collect::<Result<BTreeSet<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let k = obj
            .get("K")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::InvalidFormat("instance needs a numeric `K`".into()))?;
        Self::new(a, c, k)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        Self::from_json(&serde_json::from_str(text)?)
    }
}

/// Operand of a union op: a singleton from the ground set or a prior op.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum UOperand {
    Label(String),
    Op(usize),
}

impl UOperand {
    fn token(&self) -> String {
        match self {
            UOperand::Label(l) => format!("label:{l}"),
            UOperand::Op(k) => format!("op:{k}"),
        }
    }

    fn parse_token(s: &str) -> Result<Self> {
        if let Some(l) = s.strip_prefix("label:") {
            if l.is_empty() {
                return Err(Error::InvalidFormat("empty label".into()));
            }
            return Ok(UOperand::Label(l.to_string()));
        }
        if let Some(k) = s.strip_prefix("op:") {
            let k = k
                .parse::<usize>()
                .map_err(|_| Error::InvalidFormat(format!("bad op ref `{s}`")))?;
            return Ok(UOperand::Op(k));
        }
        Err(Error::InvalidFormat(format!("bad union operand `{s}`")))
    }
}

/// Certificate for an instance: ops[i] = s ∪ t with disjoint operands and
/// backward refs; every multi-element subset must equal some op's result.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct UnionSequence {
    pub ops: Vec<(UOperand, UOperand)>,
}

impl UnionSequence {
    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn to_json(&self) -> Value {
        let ops: Vec<Value> = self
            .ops
            .iter()
            .map(|(s, t)| json!({ "s": s.token(), "t": t.token() }))
            .collect();
        json!({ "ops": ops })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let ops_v = v
            .as_object()
            .and_then(|o| o.get("ops"))
            .and_then(Value::as_array)
            .ok_or_else(|| Error::InvalidFormat("union sequence needs an `ops` array".into()))?;
        let mut ops = Vec::with_capacity(ops_v.len());
        for (i, op) in ops_v.iter().enumerate() {
            let get = |name: &str| -> Result<UOperand> {
                op.as_object()
                    .and_then(|o| o.get(name))
                    .and_then(Value::as_str)
                    .ok_or_else(|| {
                        Error::InvalidFormat(format!("op {i} needs string field `{name}`"))
                    })
                    .and_then(UOperand::parse_token)
            };
            ops.push((get("s")?, get("t")?));
        }
        Ok(UnionSequence { ops })
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        Self::from_json(&serde_json::from_str(text)?)
    }
}

/// Verdict of the certificate check; `reason` explains the first violation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EcCheck {
    pub ok: bool,
    pub reason: Option<String>,
}

impl EcCheck {
    fn fail(reason: String) -> Self {
        EcCheck { ok: false, reason: Some(reason) }
    }
}

/// Checks a union sequence against an instance. Never errors: any violation
/// (unknown label, forward ref, overlapping operands, uncovered subset) is
/// reported as `ok = false`. Singleton subsets are available from the start
/// and need no op.
pub fn ec_verify(sequence: &UnionSequence, instance: &EnsembleInstance) -> EcCheck {
    let labels: BTreeSet<&str> = instance.a.iter().map(String::as_str).collect();
    let mut sets: Vec<BTreeSet<String>> = Vec::with_capacity(sequence.ops.len());
    for (i, (s, t)) in sequence.ops.iter().enumerate() {
        let resolve = |operand: &UOperand| -> std::result::Result<BTreeSet<String>, String> {
            match operand {
                UOperand::Label(l) => {
                    if labels.contains(l.as_str()) {
                        Ok([l.clone()].into_iter().collect())
                    } else {
                        Err(format!("op {i} uses unknown label `{l}`"))
                    }
                }
                UOperand::Op(k) => {
                    if *k < i {
                        Ok(sets[*k].clone())
                    } else {
                        Err(format!("op {i} references op {k}"))
                    }
                }
            }
        };
        let (s, t) = match (resolve(s), resolve(t)) {
            (Ok(s), Ok(t)) => (s, t),
            (Err(r), _) | (_, Err(r)) => return EcCheck::fail(r),
        };
        if !s.is_disjoint(&t) {
            return EcCheck::fail(format!("op {i} has overlapping operands"));
        }
        sets.push(s.union(&t).cloned().collect());
    }
    for (nu, want) in instance.c.iter().enumerate() {
        if want.len() >= 2 && !sets.iter().any(|u| u == want) {
            return EcCheck::fail(format!("subset {nu} {want:?} is not produced"));
        }
    }
    EcCheck { ok: true, reason: None }
}

/// Size limits for the exact union solver.
#[derive(Debug, Clone, Copy)]
pub struct EcCaps {
    pub max_labels: usize,
    pub max_subsets: usize,
    pub max_k: usize,
}

impl Default for EcCaps {
    fn default() -> Self {
        EcCaps { max_labels: 16, max_subsets: 6, max_k: 20 }
    }
}

/// Exact solver outcome; `min_unions` is `None` when the search hit
/// `caps.max_k` before closing (then `feasible` is still sound: the minimum
/// provably exceeds the instance budget).
#[derive(Debug, Clone)]
pub struct EcSolution {
    pub feasible: bool,
    pub min_unions: Option<u64>,
    pub sequence: Option<UnionSequence>,
}

/// Exact minimum number of unions with a canonical-least witness. Disjoint
/// union over squarefree sets is multiplication of squarefree monomials, so
/// this is the schedule engine viewed through that bijection.
pub fn ec_solve_exact(instance: &EnsembleInstance, caps: &EcCaps) -> Result<EcSolution> {
    instance.validate()?;
    if instance.a.len() > caps.max_labels {
        return Err(Error::InstanceTooLarge(format!(
            "{} labels exceed the cap of {}",
            instance.a.len(),
            caps.max_labels
        )));
    }
    if instance.c.len() > caps.max_subsets {
        return Err(Error::InstanceTooLarge(format!(
            "{} subsets exceed the cap of {}",
            instance.c.len(),
            caps.max_subsets
        )));
    }
    if instance.k > caps.max_k as u64 {
        return Err(Error::InstanceTooLarge(format!(
            "K = {} exceeds the cap of {}",
            instance.k, caps.max_k
        )));
    }
    let bit: BTreeMap<&str, usize> =
        instance.a.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
    let mut distinct = Vec::new();
    let mut seen = BTreeSet::new();
    for set in &instance.c {
        let mask = set.iter().fold(0u128, |m, l| m | 1u128 << bit[l.as_str()]);
        if seen.insert(mask) {
            distinct.push(mask);
        }
    }
    let problem = MonomialProblem::new(instance.a.clone(), distinct)?;
    let search_caps = SearchCaps { max_atoms: caps.max_labels, max_k: caps.max_k };
    let prods = problem.min_productions(&search_caps)?;
    let (min_unions, sequence) = match prods {
        Some(prods) => {
            let idx_of: BTreeMap<u128, usize> =
                prods.iter().enumerate().map(|(i, p)| (p.mask, i)).collect();
            let operand = |m: u128| {
                if m.count_ones() == 1 {
                    UOperand::Label(instance.a[m.trailing_zeros() as usize].clone())
                } else {
                    UOperand::Op(idx_of[&m])
                }
            };
            let ops = prods.iter().map(|p| (operand(p.a), operand(p.b))).collect();
            (Some(prods.len() as u64), Some(UnionSequence { ops }))
        }
        None => (None, None),
    };
    Ok(EcSolution {
        feasible: min_unions.is_some_and(|m| m <= instance.k),
        min_unions,
        sequence,
    })
}

// ---------------------------------------------------------------------------
// Reduction to derivative accumulation.
// ---------------------------------------------------------------------------

/// Deterministic translation of an instance into a chain of elemental
/// functions. Labels map to the first primes in label order; subsets are
/// padded with fresh primes to uniform cardinality q and sorted ascending;
/// the chain F_q∘…∘F₁ has F₁ : x ↦ (c̃ʲ₁/p!·xᵖ) per component (stored
/// symbolically as coefficients plus power, so F₁⁽ᵖ⁾ = (c̃ʲ₁) exactly) and
/// diagonal linear Fᵢ with d^i_{j,j} = c̃ʲᵢ for i ≥ 2. All tensors are
/// evaluated at x = 1.
#[derive(Debug, Clone, PartialEq)]
pub struct ReductionArtifact {
    pub instance: EnsembleInstance,
    pub p: u32,
    /// label → prime, in ground-set order.
    pub prime_map: Vec<(String, u64)>,
    /// The padding primes B̃, in assignment order (ascending).
    pub padding_primes: Vec<u64>,
    /// Padded subsets C̃ⱼ, each of cardinality q, ascending.
    pub padded_subsets: Vec<Vec<u64>>,
    pub q: usize,
    /// K' = K + |B̃|.
    pub k_prime: u64,
    /// c̃ʲ₁ per component: the coefficients of F₁'s value functions.
    pub f1_coefficients: Vec<u64>,
    pub chain: Dag<Rat>,
}

pub fn reduce_to_crd(instance: &EnsembleInstance, p: u32) -> Result<ReductionArtifact> {
    instance.validate()?;
    if p == 0 {
        return Err(Error::BadInstance("derivative order p must be ≥ 1".into()));
    }
    let m = instance.c.len();
    let q = instance.c.iter().map(BTreeSet::len).max().unwrap();
    let pad_total: usize = instance.c.iter().map(|s| q - s.len()).sum();
    let primes = first_primes(instance.a.len() + pad_total);
    let prime_map: Vec<(String, u64)> =
        instance.a.iter().cloned().zip(primes.iter().copied()).collect();
    let prime_of: BTreeMap<&str, u64> =
        prime_map.iter().map(|(l, p)| (l.as_str(), *p)).collect();
    let mut next_pad = instance.a.len();
    let mut padding_primes = Vec::with_capacity(pad_total);
    let mut padded_subsets = Vec::with_capacity(m);
    for set in &instance.c {
        let mut subset: Vec<u64> = set.iter().map(|l| prime_of[l.as_str()]).collect();
        for _ in set.len()..q {
            let fresh = primes[next_pad];
            next_pad += 1;
            padding_primes.push(fresh);
            subset.push(fresh);
        }
        subset.sort_unstable();
        padded_subsets.push(subset);
    }
    let f1_coefficients: Vec<u64> = padded_subsets.iter().map(|s| s[0]).collect();

    // Chain over dims [1, m, m, …, m]: the first factor's order-r tensor
    // holds c̃ʲ₁/(p−r)! (the r-th derivative of c̃ʲ₁/p!·xᵖ at x = 1), the
    // diagonal factors carry explicit zero tensors above order 1.
    let vertices: Vec<Vertex> = (0..=q)
        .map(|id| Vertex { id, dim: if id == 0 { 1 } else { m } })
        .collect();
    let mut edges: Vec<Edge<Rat>> = Vec::with_capacity(q);
    let mut first = BTreeMap::new();
    for r in 1..=p {
        let mut shape = vec![m];
        shape.extend(std::iter::repeat(1).take(r as usize));
        let mut t = Tensor::zeros(&shape);
        let den = factorial(p - r);
        for (j, &c) in f1_coefficients.iter().enumerate() {
            let mut idx = vec![j];
            idx.extend(std::iter::repeat(0).take(r as usize));
            t.set(&idx, Rat(BigRational::new(BigInt::from(c), den.clone())));
        }
        first.insert(r, t);
    }
    edges.push(Edge { src: 0, dst: 1, derivs: first });
    for i in 2..=q {
        let mut derivs = BTreeMap::new();
        let mut d1 = Tensor::zeros(&[m, m]);
        for (j, subset) in padded_subsets.iter().enumerate() {
            d1.set(&[j, j], Rat::from_int(subset[i - 1] as i64));
        }
        derivs.insert(1, d1);
        for r in 2..=p {
            let mut shape = vec![m];
            shape.extend(std::iter::repeat(m).take(r as usize));
            derivs.insert(r, Tensor::zeros(&shape));
        }
        edges.push(Edge { src: i - 1, dst: i, derivs });
    }
    let chain = Dag::new(vertices, edges)?;

    Ok(ReductionArtifact {
        instance: instance.clone(),
        p,
        prime_map,
        padding_primes,
        padded_subsets,
        q,
        k_prime: instance.k + pad_total as u64,
        f1_coefficients,
        chain,
    })
}

impl ReductionArtifact {
    /// One atom per distinct prime, at its first cell in scan order: the
    /// first edge's order-p column (entries c̃ʲ₁ exactly), then each diagonal
    /// factor's cells. This fixes the atom universe deterministically.
    pub fn atom_table(&self) -> Vec<Atom<Rat>> {
        let m = self.padded_subsets.len();
        let mut seen: BTreeSet<u64> = BTreeSet::new();
        let mut atoms = Vec::new();
        for (j, &c) in self.f1_coefficients.iter().enumerate() {
            if seen.insert(c) {
                let mut index = vec![j];
                index.extend(std::iter::repeat(0).take(self.p as usize));
                let id = CellId { src: 0, dst: 1, order: self.p, index };
                atoms.push(Atom { id: id.to_string(), value: Rat::from_int(c as i64) });
            }
        }
        for i in 2..=self.q {
            for j in 0..m {
                let c = self.padded_subsets[j][i - 1];
                if seen.insert(c) {
                    let id = CellId { src: i - 1, dst: i, order: 1, index: vec![j, j] };
                    atoms.push(Atom { id: id.to_string(), value: Rat::from_int(c as i64) });
                }
            }
        }
        atoms
    }

    /// Required outputs as monomials over the atom table: component j is the
    /// product of its padded subset's primes.
    pub fn targets_as_monomials(&self) -> Vec<Monomial> {
        let cell_of: BTreeMap<BigInt, String> = self
            .atom_table()
            .into_iter()
            .map(|a| (a.value.as_integer().unwrap(), a.id))
            .collect();
        self.padded_subsets
            .iter()
            .map(|subset| {
                subset
                    .iter()
                    .map(|&prime| cell_of[&BigInt::from(prime)].clone())
                    .collect()
            })
            .collect()
    }

    /// The certificate-side baseline: per component, multiply the chain's
    /// cells right to left and accumulate into the output. Costs exactly
    /// |C̃|·(q−1) multiplications — within the |C̃|·q certificate bound.
    pub fn canonical_full_schedule(&self) -> Schedule {
        let m = self.padded_subsets.len();
        let mut steps = Vec::new();
        let mut targets: Vec<Vec<OperandRef>> = vec![Vec::new(); m];
        for j in 0..m {
            let mut index = vec![j];
            index.extend(std::iter::repeat(0).take(self.p as usize));
            let base = CellId { src: 0, dst: 1, order: self.p, index };
            let mut acc = OperandRef::Atom(base.to_string());
            for i in 2..=self.q {
                let cell = CellId { src: i - 1, dst: i, order: 1, index: vec![j, j] };
                let accumulate_into = (i == self.q).then_some(j);
                steps.push(Step {
                    a: OperandRef::Atom(cell.to_string()),
                    b: acc,
                    accumulate_into,
                });
                acc = OperandRef::Step(steps.len() - 1);
            }
            if self.q == 1 {
                targets[j].push(acc);
            }
        }
        Schedule { steps, targets }
    }

    /// Exact minimum-multiplication decision on this artifact's targets
    /// against its own budget K'.
    pub fn min_fma(&self, caps: &SearchCaps) -> Result<FmaDecision> {
        monomial_min_fma(&self.targets_as_monomials(), self.k_prime, caps)
    }

    /// Per-component view of the chain (the m parallel scalar chains that the
    /// diagonal structure decouples into), as DOT text. For the running
    /// example this is the 10-node, 9-edge drawing with the primes as edge
    /// labels.
    pub fn component_dot(&self) -> String {
        let m = self.padded_subsets.len();
        let mut out = String::from("digraph components {\n");
        out.push_str("  x [label=\"x\"];\n");
        for j in 0..m {
            for i in 1..=self.q {
                out.push_str(&format!("  z{i}_{} [label=\"z{i}_{}\"];\n", j + 1, j + 1));
            }
        }
        for j in 0..m {
            out.push_str(&format!(
                "  x -> z1_{} [label=\"{}\"];\n",
                j + 1,
                self.padded_subsets[j][0]
            ));
            for i in 2..=self.q {
                out.push_str(&format!(
                    "  z{}_{} -> z{i}_{} [label=\"{}\"];\n",
                    i - 1,
                    j + 1,
                    j + 1,
                    self.padded_subsets[j][i - 1]
                ));
            }
        }
        out.push_str("}\n");
        out
    }

    pub fn to_json(&self) -> Value {
        json!({
            "instance": self.instance.to_json(),
            "p": self.p,
            "prime_map": self.prime_map.iter().map(|(l, p)| json!([l, p])).collect::<Vec<_>>(),
            "padding_primes": self.padding_primes,
            "padded_subsets": self.padded_subsets,
            "q": self.q,
            "k_prime": self.k_prime,
            "f1_coefficients": self.f1_coefficients,
            "chain": self.chain.to_json(),
        })
    }

    /// Artifacts are fully determined by (instance, p); parsing re-derives
    /// the artifact and demands that every stored field agree, so a tampered
    /// file cannot smuggle in an inconsistent chain.
    pub fn from_json(v: &Value) -> Result<Self> {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::InvalidFormat("artifact must be a JSON object".into()))?;
        let instance = EnsembleInstance::from_json(
            obj.get("instance")
                .ok_or_else(|| Error::InvalidFormat("artifact needs `instance`".into()))?,
        )?;
        let p = obj
            .get("p")
            .and_then(Value::as_u64)
            .ok_or_else(|| Error::InvalidFormat("artifact needs numeric `p`".into()))?;
        let rebuilt = reduce_to_crd(&instance, p as u32)?;
        let stored = |key: &str| -> Result<&Value> {
            obj.get(key)
                .ok_or_else(|| Error::InvalidFormat(format!("artifact needs `{key}`")))
        };
        if rebuilt.to_json()["prime_map"] != *stored("prime_map")?
            || rebuilt.to_json()["padding_primes"] != *stored("padding_primes")?
            || rebuilt.to_json()["padded_subsets"] != *stored("padded_subsets")?
            || rebuilt.to_json()["q"] != *stored("q")?
            || rebuilt.to_json()["k_prime"] != *stored("k_prime")?
            || rebuilt.to_json()["f1_coefficients"] != *stored("f1_coefficients")?
            || rebuilt.to_json()["chain"] != *stored("chain")?
        {
            return Err(Error::InvalidFormat(
                "artifact fields are inconsistent with its instance".into(),
            ));
        }
        Ok(rebuilt)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        Self::from_json(&serde_json::from_str(text)?)
    }
}

/// Value-atoms of any reduction-structured chain, plus one monomial per
/// output component whose atom product equals that component of F^[p].
/// Cells with equal values share one atom (the first cell in scan order is
/// canonical), which is what lets schedules reuse repeated entries. Errors
/// if a single component repeats a value — its output would then not be a
/// squarefree atom product and monomial scheduling does not apply.
pub fn reduction_chain_monomials<S: crate::scalar::Scalar>(
    dag: &Dag<S>,
    p: u32,
) -> Result<(Vec<Atom<S>>, Vec<Monomial>)> {
    crate::chain_eval::reduction_pth_derivative(dag, p)?; // structure check only
    let q = dag.vertex_count() - 1;
    let m = dag.dim(dag.sink());
    let mut cells: Vec<(CellId, usize)> = Vec::new();
    for j in 0..m {
        let mut index = vec![j];
        index.extend(std::iter::repeat(0).take(p as usize));
        cells.push((CellId { src: 0, dst: 1, order: p, index }, j));
    }
    for i in 2..=q {
        for j in 0..m {
            cells.push((CellId { src: i - 1, dst: i, order: 1, index: vec![j, j] }, j));
        }
    }
    let mut atoms: Vec<Atom<S>> = Vec::new();
    let mut targets: Vec<Monomial> = vec![Monomial::new(); m];
    for (cell, j) in cells {
        let value = cell.resolve(dag)?;
        let id = match atoms.iter().find(|a| a.value == value) {
            Some(atom) => atom.id.clone(),
            None => {
                let id = cell.to_string();
                atoms.push(Atom { id: id.clone(), value });
                id
            }
        };
        if !targets[j].insert(id) {
            return Err(Error::NonSquarefreeEntry(format!(
                "component {j} repeats the value at {cell}"
            )));
        }
    }
    Ok((atoms, targets))
}

/// Decodes an order-1 tensor of squarefree prime products back into subsets
/// by trial division over the known prime universe. Exact: a repeated factor
/// or a leftover outside the universe is a hard error, not a warning.
pub fn factorize_and_recover(fp: &Tensor<Rat>, primes: &[u64]) -> Result<Vec<Vec<u64>>> {
    let mut out = Vec::with_capacity(fp.len());
    for entry in fp.data() {
        let n = entry
            .as_integer()
            .ok_or_else(|| Error::Factorization(format!("entry {entry} is not an integer")))?;
        if n <= BigInt::from(1) {
            return Err(Error::Factorization(format!(
                "entry {entry} has no factorization into primes"
            )));
        }
        let mut rem = n;
        let mut subset = Vec::new();
        for &prime in primes {
            let (quot, r) = rem.div_rem(&BigInt::from(prime));
            if r == BigInt::from(0) {
                subset.push(prime);
                rem = quot;
            }
        }
        if rem != BigInt::from(1) {
            if primes.iter().any(|&p| (&rem % BigInt::from(p)) == BigInt::from(0)) {
                return Err(Error::NonSquarefreeEntry(entry.to_string()));
            }
            return Err(Error::UnknownPrimeFactor(entry.to_string(), rem.to_string()));
        }
        subset.sort_unstable();
        out.push(subset);
    }
    Ok(out)
}

/// Translates a verified multiplication schedule on the artifact's chain into
/// a union sequence for the ORIGINAL instance. Steps touching padding primes
/// collapse (each padding prime belongs to exactly one subset), duplicate
/// stripped products are shared, and ops that feed no required subset are
/// dropped; for a minimal schedule this leaves exactly cost − |B̃| unions.
pub fn lift_solution(schedule: &Schedule, artifact: &ReductionArtifact) -> Result<UnionSequence> {
    let verdict = verify_schedule(schedule, &artifact.chain, artifact.p)?;
    if !verdict.ok {
        return Err(Error::BadSchedule(format!(
            "schedule does not verify on the artifact chain: {}",
            verdict.reason.unwrap_or_default()
        )));
    }
    // prime value → original label (None for padding primes).
    let mut label_of: BTreeMap<BigInt, Option<String>> = BTreeMap::new();
    for (label, prime) in &artifact.prime_map {
        label_of.insert(BigInt::from(*prime), Some(label.clone()));
    }
    for &prime in &artifact.padding_primes {
        label_of.insert(BigInt::from(prime), None);
    }

    #[derive(Clone)]
    enum Lift {
        Empty,
        Single(String),
        Op(usize),
    }

    let mut ops: Vec<(UOperand, UOperand)> = Vec::new();
    let mut op_sets: Vec<BTreeSet<String>> = Vec::new();
    let mut by_set: BTreeMap<BTreeSet<String>, usize> = BTreeMap::new();
    let mut lifted: Vec<Lift> = Vec::with_capacity(schedule.steps.len());

    for (i, step) in schedule.steps.iter().enumerate() {
        let resolve = |r: &OperandRef| -> Result<Lift> {
            match r {
                OperandRef::Step(k) => Ok(lifted[*k].clone()),
                OperandRef::Atom(id) => {
                    let value = CellId::parse(id)?.resolve(&artifact.chain)?;
                    let n = value.as_integer().ok_or_else(|| {
                        Error::BadSchedule(format!("step {i}: atom {id} is not prime-valued"))
                    })?;
                    match label_of.get(&n) {
                        Some(Some(label)) => Ok(Lift::Single(label.clone())),
                        Some(None) => Ok(Lift::Empty),
                        None => Err(Error::BadSchedule(format!(
                            "step {i}: atom {id} has value {n} outside the prime universe"
                        ))),
                    }
                }
            }
        };
        let a = resolve(&step.a)?;
        let b = resolve(&step.b)?;
        let set_of = |l: &Lift| -> BTreeSet<String> {
            match l {
                Lift::Empty => BTreeSet::new(),
                Lift::Single(label) => [label.clone()].into_iter().collect(),
                Lift::Op(k) => op_sets[*k].clone(),
            }
        };
        let operand_of = |l: &Lift| -> UOperand {
            match l {
                Lift::Single(label) => UOperand::Label(label.clone()),
                Lift::Op(k) => UOperand::Op(*k),
                Lift::Empty => unreachable!("empty operand never becomes an op"),
            }
        };
        let value = match (&a, &b) {
            (Lift::Empty, other) | (other, Lift::Empty) => other.clone(),
            _ => {
                let union: BTreeSet<String> = set_of(&a).union(&set_of(&b)).cloned().collect();
                if let Some(&k) = by_set.get(&union) {
                    Lift::Op(k)
                } else {
                    ops.push((operand_of(&a), operand_of(&b)));
                    op_sets.push(union.clone());
                    by_set.insert(union, ops.len() - 1);
                    Lift::Op(ops.len() - 1)
                }
            }
        };
        lifted.push(value);
    }

    // Keep only ops reachable from the subsets we actually owe.
    let mut needed = vec![false; ops.len()];
    let mut stack = Vec::new();
    for subset in &artifact.instance.c {
        if subset.len() < 2 {
            continue;
        }
        let &k = by_set.get(subset).ok_or_else(|| {
            Error::BadSchedule(format!("no multiplication computes the subset {subset:?}"))
        })?;
        stack.push(k);
    }
    while let Some(k) = stack.pop() {
        if needed[k] {
            continue;
        }
        needed[k] = true;
        for operand in [&ops[k].0, &ops[k].1] {
            if let UOperand::Op(dep) = operand {
                stack.push(*dep);
            }
        }
    }
    let mut remap = vec![usize::MAX; ops.len()];
    let mut compact = Vec::new();
    for (k, op) in ops.into_iter().enumerate() {
        if !needed[k] {
            continue;
        }
        remap[k] = compact.len();
        // Operands only reference earlier ops, whose remap slots are set.
        let fix = |o: UOperand| match o {
            UOperand::Op(dep) => UOperand::Op(remap[dep]),
            other => other,
        };
        compact.push((fix(op.0), fix(op.1)));
    }
    Ok(UnionSequence { ops: compact })
}
