//! Dags of elemental functions with local derivative tensors on the edges.
//!
//! A dag has vertex set {0, …, n−1}; vertex `v` holds an intermediate
//! variable of dimension `dim(v)`. An edge (i, j) carries the local
//! derivative tensors of the elemental producing `v_j` with respect to
//! `v_i`, keyed by order: order r has shape `[dim(j), dim(i), …, dim(i)]`
//! with r trailing copies of `dim(i)`. Exactly one source (the argument)
//! and one sink (the result) are required; both invariants are checked at
//! construction together with acyclicity, so every vertex is guaranteed to
//! lie on a source→sink path.

use std::collections::BTreeMap;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::scalar::{Rat, Scalar, ScalarKind};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vertex {
    pub id: usize,
    pub dim: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Edge<S: Scalar> {
    pub src: usize,
    pub dst: usize,
    /// Local derivative tensors keyed by order; order 1 is mandatory.
    pub derivs: BTreeMap<u32, Tensor<S>>,
}

impl<S: Scalar> Edge<S> {
    /// Edge carrying only the mandatory first-order tensor.
    pub fn order1(src: usize, dst: usize, jacobian: Tensor<S>) -> Self {
        Edge { src, dst, derivs: BTreeMap::from([(1, jacobian)]) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dag<S: Scalar> {
    vertices: Vec<Vertex>,
    edges: Vec<Edge<S>>,
    edge_index: BTreeMap<(usize, usize), usize>,
    successors: Vec<Vec<usize>>,
    predecessors: Vec<Vec<usize>>,
    topo: Vec<usize>,
    source: usize,
    sink: usize,
}

impl<S: Scalar> Dag<S> {
    /// Validates and topologically relabels a raw dag. Input vertex ids may
    /// be arbitrary distinct integers in any order; the constructed dag uses
    /// ids 0..n−1 in topological order (ties broken by original id), so
    /// every edge runs from a lower to a higher id, the source is 0 and the
    /// sink is n−1.
    pub fn new(vertices: Vec<Vertex>, edges: Vec<Edge<S>>) -> Result<Self> {
        if vertices.is_empty() {
            return Err(Error::InvalidFormat("dag has no vertices".into()));
        }
        let mut orig_ids: Vec<usize> = vertices.iter().map(|v| v.id).collect();
        orig_ids.sort_unstable();
        orig_ids.dedup();
        if orig_ids.len() != vertices.len() {
            return Err(Error::InvalidFormat("duplicate vertex ids".into()));
        }
        let index_of = |id: usize| orig_ids.binary_search(&id).ok();
        let mut dims = vec![0usize; vertices.len()];
        for v in &vertices {
            if v.dim == 0 {
                return Err(Error::DimensionMismatch(format!(
                    "vertex {} has dimension 0",
                    v.id
                )));
            }
            dims[index_of(v.id).unwrap()] = v.dim;
        }
        let n = vertices.len();

        let mut succ_raw = vec![Vec::new(); n];
        let mut pred_raw = vec![Vec::new(); n];
        let mut seen = BTreeMap::new();
        for e in &edges {
            let (si, di) = match (index_of(e.src), index_of(e.dst)) {
                (Some(s), Some(d)) => (s, d),
                _ => return Err(Error::DanglingEdge { src: e.src, dst: e.dst }),
            };
            if si == di {
                return Err(Error::CycleDetected(e.src));
            }
            if seen.insert((si, di), ()).is_some() {
                return Err(Error::InvalidFormat(format!(
                    "duplicate edge ({}, {})",
                    e.src, e.dst
                )));
            }
            succ_raw[si].push(di);
            pred_raw[di].push(si);

            if !e.derivs.contains_key(&1) {
                return Err(Error::MissingOrder { src: e.src, dst: e.dst, order: 1 });
            }
            for (&order, t) in &e.derivs {
                if order == 0 {
                    return Err(Error::InvalidFormat(format!(
                        "edge ({}, {}) carries an order-0 tensor",
                        e.src, e.dst
                    )));
                }
                let mut expected = vec![dims[di]];
                expected.extend(std::iter::repeat(dims[si]).take(order as usize));
                if t.shape() != expected.as_slice() {
                    return Err(Error::ShapeMismatch {
                        expected,
                        got: t.shape().to_vec(),
                    });
                }
            }
        }

        // Kahn's algorithm over dense indices, smallest original id first:
        // detects cycles and fixes the relabeling.
        let mut indegree: Vec<usize> = pred_raw.iter().map(Vec::len).collect();
        let mut queue: Vec<usize> = (0..n).filter(|&v| indegree[v] == 0).collect();
        queue.sort_unstable();
        let mut topo = Vec::with_capacity(n);
        while let Some(&v) = queue.first() {
            queue.remove(0);
            topo.push(v);
            for &w in &succ_raw[v] {
                indegree[w] -= 1;
                if indegree[w] == 0 {
                    let pos = queue.binary_search(&w).unwrap_or_else(|p| p);
                    queue.insert(pos, w);
                }
            }
        }
        if topo.len() != n {
            let stuck = (0..n).find(|&v| indegree[v] > 0).unwrap_or(0);
            return Err(Error::CycleDetected(orig_ids[stuck]));
        }

        let sources: Vec<usize> = (0..n).filter(|&v| pred_raw[v].is_empty()).collect();
        let sinks: Vec<usize> = (0..n).filter(|&v| succ_raw[v].is_empty()).collect();
        if sources.len() != 1 || sinks.len() != 1 {
            return Err(Error::NotSingleSourceSink(format!(
                "sources {:?}, sinks {:?}",
                sources.iter().map(|&v| orig_ids[v]).collect::<Vec<_>>(),
                sinks.iter().map(|&v| orig_ids[v]).collect::<Vec<_>>()
            )));
        }

        // new_id[dense index] = position in topological order.
        let mut new_id = vec![0usize; n];
        for (pos, &v) in topo.iter().enumerate() {
            new_id[v] = pos;
        }
        let mut new_vertices: Vec<Vertex> = (0..n)
            .map(|pos| Vertex { id: pos, dim: dims[topo[pos]] })
            .collect();
        new_vertices.sort_by_key(|v| v.id);
        let mut new_edges: Vec<Edge<S>> = edges
            .into_iter()
            .map(|e| Edge {
                src: new_id[index_of(e.src).unwrap()],
                dst: new_id[index_of(e.dst).unwrap()],
                derivs: e.derivs,
            })
            .collect();
        new_edges.sort_by_key(|e| (e.src, e.dst));

        let mut edge_index = BTreeMap::new();
        let mut successors = vec![Vec::new(); n];
        let mut predecessors = vec![Vec::new(); n];
        for (k, e) in new_edges.iter().enumerate() {
            edge_index.insert((e.src, e.dst), k);
            successors[e.src].push(e.dst);
            predecessors[e.dst].push(e.src);
        }
        for list in successors.iter_mut().chain(predecessors.iter_mut()) {
            list.sort_unstable();
        }

        Ok(Dag {
            vertices: new_vertices,
            edges: new_edges,
            edge_index,
            successors,
            predecessors,
            topo: (0..n).collect(),
            source: 0,
            sink: n - 1,
        })
    }

    /// Simple-path dag 0 → 1 → … → q from first-order factors.
    /// Factor i (0-based) must have shape `[n_{i+1}, n_i]`.
    pub fn chain(factors: Vec<Tensor<S>>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::EmptyChain);
        }
        let mut dims = Vec::with_capacity(factors.len() + 1);
        for (i, f) in factors.iter().enumerate() {
            if f.order() != 2 {
                return Err(Error::StructureViolation(format!(
                    "chain factor {i} is not a matrix"
                )));
            }
            if i == 0 {
                dims.push(f.shape()[1]);
            } else if f.shape()[1] != dims[i] {
                return Err(Error::DimensionMismatch(format!(
                    "factor {i} expects input dim {}, previous produces {}",
                    f.shape()[1],
                    dims[i]
                )));
            }
            dims.push(f.shape()[0]);
        }
        let vertices = dims
            .iter()
            .enumerate()
            .map(|(id, &dim)| Vertex { id, dim })
            .collect();
        let edges = factors
            .into_iter()
            .enumerate()
            .map(|(i, f)| Edge {
                src: i,
                dst: i + 1,
                derivs: BTreeMap::from([(1, f)]),
            })
            .collect();
        Dag::new(vertices, edges)
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn dim(&self, v: usize) -> usize {
        self.vertices[v].dim
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge<S>] {
        &self.edges
    }

    pub fn source(&self) -> usize {
        self.source
    }

    pub fn sink(&self) -> usize {
        self.sink
    }

    pub fn topo_order(&self) -> &[usize] {
        &self.topo
    }

    pub fn successors(&self, v: usize) -> &[usize] {
        &self.successors[v]
    }

    pub fn predecessors(&self, v: usize) -> &[usize] {
        &self.predecessors[v]
    }

    pub fn edge(&self, src: usize, dst: usize) -> Option<&Edge<S>> {
        self.edge_index.get(&(src, dst)).map(|&k| &self.edges[k])
    }

    pub fn deriv(&self, src: usize, dst: usize, order: u32) -> Result<&Tensor<S>> {
        self.edge(src, dst)
            .ok_or(Error::DanglingEdge { src, dst })?
            .derivs
            .get(&order)
            .ok_or(Error::MissingOrder { src, dst, order })
    }

    /// Highest derivative order present on any edge.
    pub fn max_order(&self) -> u32 {
        self.edges
            .iter()
            .flat_map(|e| e.derivs.keys().copied())
            .max()
            .unwrap_or(0)
    }

    /// All source→sink paths as vertex sequences, lexicographically ordered.
    pub fn enumerate_paths(&self) -> Vec<Vec<usize>> {
        let mut paths = Vec::new();
        let mut stack = vec![self.source];
        self.collect_paths(&mut stack, &mut paths);
        paths
    }

    fn collect_paths(&self, stack: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        let v = *stack.last().unwrap();
        if v == self.sink {
            out.push(stack.clone());
            return;
        }
        for &w in &self.successors[v] {
            stack.push(w);
            self.collect_paths(stack, out);
            stack.pop();
        }
    }

    /// Number of source→sink paths, counted by dynamic programming.
    pub fn path_count(&self) -> u128 {
        let mut count = vec![0u128; self.vertices.len()];
        count[self.sink] = 1;
        for &v in self.topo.iter().rev() {
            if v == self.sink {
                continue;
            }
            count[v] = self.successors[v].iter().map(|&w| count[w]).sum();
        }
        count[self.source]
    }

    /// When the dag is the simple path 0 → 1 → … → q, returns the
    /// first-order factors in application order (F′_1 first).
    pub fn as_chain(&self) -> Option<Vec<Tensor<S>>> {
        let q = self.vertices.len() - 1;
        if self.edges.len() != q {
            return None;
        }
        let mut factors = Vec::with_capacity(q);
        for i in 0..q {
            let e = self.edge(i, i + 1)?;
            factors.push(e.derivs.get(&1)?.clone());
        }
        Some(factors)
    }

    /// Graphviz rendering. Vertex labels show dimensions; an edge whose
    /// first-order tensor is 1×1 is labeled with that scalar value, larger
    /// edges are left unlabeled.
    pub fn to_dot(&self) -> String {
        let mut s = String::from("digraph dag {\n  rankdir=LR;\n");
        for v in &self.vertices {
            let role = if v.id == self.source {
                " (source)"
            } else if v.id == self.sink {
                " (sink)"
            } else {
                ""
            };
            s.push_str(&format!(
                "  v{} [label=\"v{}: dim {}{}\"];\n",
                v.id, v.id, v.dim, role
            ));
        }
        for e in &self.edges {
            let first = &e.derivs[&1];
            if first.shape() == [1, 1] {
                s.push_str(&format!(
                    "  v{} -> v{} [label=\"{}\"];\n",
                    e.src,
                    e.dst,
                    first.get(&[0, 0])
                ));
            } else {
                s.push_str(&format!("  v{} -> v{};\n", e.src, e.dst));
            }
        }
        s.push_str("}\n");
        s
    }

    pub fn to_json(&self) -> Value {
        let vertices: Vec<Value> = self
            .vertices
            .iter()
            .map(|v| json!({"id": v.id, "dim": v.dim}))
            .collect();
        let edges: Vec<Value> = self
            .edges
            .iter()
            .map(|e| {
                let derivs: Map<String, Value> = e
                    .derivs
                    .iter()
                    .map(|(o, t)| (o.to_string(), t.to_json()))
                    .collect();
                json!({"src": e.src, "dst": e.dst, "derivs": derivs})
            })
            .collect();
        json!({
            "scalar": S::KIND.as_str(),
            "vertices": vertices,
            "edges": edges,
        })
    }

    pub fn from_json(v: &Value) -> Result<Self> {
        let obj = v
            .as_object()
            .ok_or_else(|| Error::InvalidFormat("dag file must be a JSON object".into()))?;
        let kind = ScalarKind::parse(
            obj.get("scalar")
                .and_then(Value::as_str)
                .unwrap_or("rational"),
        )?;
        if kind != S::KIND {
            return Err(Error::InvalidFormat(format!(
                "dag file declares scalar `{}`, expected `{}`",
                kind.as_str(),
                S::KIND.as_str()
            )));
        }
        let vertices = obj
            .get("vertices")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::InvalidFormat("dag missing `vertices` array".into()))?
            .iter()
            .map(|v| {
                let id = v
                    .get("id")
                    .and_then(Value::as_u64)
                    .ok_or_else(|| Error::InvalidFormat(format!("vertex missing `id`: {v}")))?;
                let dim = v
                    .get("dim")
                    .and_then(Value::as_u64)
                    .ok_or_else(|| Error::InvalidFormat(format!("vertex missing `dim`: {v}")))?;
                Ok(Vertex { id: id as usize, dim: dim as usize })
            })
            .collect::<Result<Vec<_>>>()?;
        let edges = obj
            .get("edges")
            .and_then(Value::as_array)
            .ok_or_else(|| Error::InvalidFormat("dag missing `edges` array".into()))?
            .iter()
            .map(|e| {
                let src = e
                    .get("src")
                    .and_then(Value::as_u64)
                    .ok_or_else(|| Error::InvalidFormat(format!("edge missing `src`: {e}")))?
                    as usize;
                let dst = e
                    .get("dst")
                    .and_then(Value::as_u64)
                    .ok_or_else(|| Error::InvalidFormat(format!("edge missing `dst`: {e}")))?
                    as usize;
                let derivs = e
                    .get("derivs")
                    .and_then(Value::as_object)
                    .ok_or_else(|| {
                        Error::InvalidFormat(format!("edge ({src}, {dst}) missing `derivs` map"))
                    })?
                    .iter()
                    .map(|(k, t)| {
                        let order: u32 = k.parse().map_err(|_| {
                            Error::InvalidFormat(format!("bad derivative order key `{k}`"))
                        })?;
                        Ok((order, Tensor::from_json(t)?))
                    })
                    .collect::<Result<BTreeMap<_, _>>>()?;
                Ok(Edge { src, dst, derivs })
            })
            .collect::<Result<Vec<_>>>()?;
        Dag::new(vertices, edges)
    }
}

/// A parsed dag file of either scalar kind.
pub enum DagFile {
    Rational(Dag<Rat>),
    Float(Dag<f64>),
}

impl DagFile {
    pub fn parse_str(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text)?;
        let kind = ScalarKind::parse(
            v.get("scalar").and_then(Value::as_str).unwrap_or("rational"),
        )?;
        Ok(match kind {
            ScalarKind::Rational => DagFile::Rational(Dag::from_json(&v)?),
            ScalarKind::Float => DagFile::Float(Dag::from_json(&v)?),
        })
    }

    pub fn kind(&self) -> ScalarKind {
        match self {
            DagFile::Rational(_) => ScalarKind::Rational,
            DagFile::Float(_) => ScalarKind::Float,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scalar::Rat;

    fn edge1(src: usize, dst: usize, t: Tensor<Rat>) -> Edge<Rat> {
        Edge { src, dst, derivs: BTreeMap::from([(1, t)]) }
    }

    fn scalar_vertices(n: usize) -> Vec<Vertex> {
        (0..n).map(|id| Vertex { id, dim: 1 }).collect()
    }

    fn one_by_one(v: i64) -> Tensor<Rat> {
        Tensor::from_vec(&[1, 1], vec![Rat::from_int(v)]).unwrap()
    }

    /// Diamond with a shortcut: edges (0,1), (0,2), (1,2), (1,3), (2,3).
    fn diamond() -> Dag<Rat> {
        let edges = vec![
            edge1(0, 1, one_by_one(2)),
            edge1(0, 2, one_by_one(3)),
            edge1(1, 2, one_by_one(5)),
            edge1(1, 3, one_by_one(7)),
            edge1(2, 3, one_by_one(11)),
        ];
        Dag::new(scalar_vertices(4), edges).unwrap()
    }

    #[test]
    fn diamond_paths_are_lexicographic() {
        let d = diamond();
        assert_eq!(d.source(), 0);
        assert_eq!(d.sink(), 3);
        assert_eq!(
            d.enumerate_paths(),
            vec![vec![0, 1, 2, 3], vec![0, 1, 3], vec![0, 2, 3]]
        );
        assert_eq!(d.path_count(), 3);
    }

    #[test]
    fn cycle_is_rejected() {
        let edges = vec![
            edge1(0, 1, one_by_one(1)),
            edge1(1, 2, one_by_one(1)),
            edge1(2, 1, one_by_one(1)),
            edge1(2, 3, one_by_one(1)),
        ];
        assert!(matches!(
            Dag::new(scalar_vertices(4), edges),
            Err(Error::CycleDetected(_))
        ));
    }

    #[test]
    fn multiple_sinks_rejected() {
        let edges = vec![edge1(0, 1, one_by_one(1)), edge1(0, 2, one_by_one(1))];
        assert!(matches!(
            Dag::new(scalar_vertices(3), edges),
            Err(Error::NotSingleSourceSink(_))
        ));
    }

    #[test]
    fn missing_first_order_rejected() {
        let t = Tensor::from_vec(&[1, 1, 1], vec![Rat::from_int(1)]).unwrap();
        let e = Edge { src: 0, dst: 1, derivs: BTreeMap::from([(2, t)]) };
        assert!(matches!(
            Dag::new(scalar_vertices(2), vec![e]),
            Err(Error::MissingOrder { order: 1, .. })
        ));
    }

    #[test]
    fn shape_validation_uses_endpoint_dims() {
        let vertices = vec![Vertex { id: 0, dim: 2 }, Vertex { id: 1, dim: 3 }];
        let bad = edge1(0, 1, Tensor::zeros(&[2, 3]));
        assert!(matches!(
            Dag::new(vertices.clone(), vec![bad]),
            Err(Error::ShapeMismatch { .. })
        ));
        let good = edge1(0, 1, Tensor::zeros(&[3, 2]));
        assert!(Dag::new(vertices, vec![good]).is_ok());
    }

    #[test]
    fn chain_round_trip() {
        let f1 = Tensor::from_vec(&[2, 1], vec![Rat::from_int(1), Rat::from_int(2)]).unwrap();
        let f2 = Tensor::from_vec(&[1, 2], vec![Rat::from_int(3), Rat::from_int(4)]).unwrap();
        let d = Dag::chain(vec![f1.clone(), f2.clone()]).unwrap();
        assert_eq!(d.as_chain(), Some(vec![f1, f2]));
        assert_eq!(diamond().as_chain(), None);
    }

    #[test]
    fn json_round_trip() {
        let d = diamond();
        let v = d.to_json();
        let back: Dag<Rat> = Dag::from_json(&v).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn dot_labels_scalar_edges_with_their_value() {
        let dot = diamond().to_dot();
        assert!(dot.starts_with("digraph"));
        assert!(dot.contains("v0 -> v1 [label=\"2\"]"));
        assert!(dot.contains("v2 -> v3 [label=\"11\"]"));
        // A wide edge stays unlabeled.
        let wide = Dag::new(
            vec![Vertex { id: 0, dim: 2 }, Vertex { id: 1, dim: 1 }],
            vec![Edge {
                src: 0,
                dst: 1,
                derivs: BTreeMap::from([(1, Tensor::<Rat>::zeros(&[1, 2]))]),
            }],
        )
        .unwrap();
        assert!(wide.to_dot().contains("v0 -> v1;"));
    }

    #[test]
    fn arbitrary_ids_are_topologically_relabeled() {
        // Diamond with scrambled ids 10 → {3, 7} → 5 and mixed dims; the
        // relabeled dag must use 0..3 in topological order with original-id
        // tiebreaks, carrying the dimensions along.
        let vertices = vec![
            Vertex { id: 10, dim: 1 },
            Vertex { id: 3, dim: 2 },
            Vertex { id: 7, dim: 3 },
            Vertex { id: 5, dim: 1 },
        ];
        let e = |src, dst, shape: &[usize]| Edge::<Rat> {
            src,
            dst,
            derivs: BTreeMap::from([(1, Tensor::zeros(shape))]),
        };
        let edges = vec![
            e(10, 3, &[2, 1]),
            e(10, 7, &[3, 1]),
            e(3, 7, &[3, 2]),
            e(3, 5, &[1, 2]),
            e(7, 5, &[1, 3]),
        ];
        let d = Dag::new(vertices, edges).unwrap();
        assert_eq!(d.source(), 0);
        assert_eq!(d.sink(), 3);
        assert_eq!(
            d.vertices()
                .iter()
                .map(|v| (v.id, v.dim))
                .collect::<Vec<_>>(),
            vec![(0, 1), (1, 2), (2, 3), (3, 1)]
        );
        assert_eq!(
            d.edges().iter().map(|e| (e.src, e.dst)).collect::<Vec<_>>(),
            vec![(0, 1), (0, 2), (1, 2), (1, 3), (2, 3)]
        );
        // Idempotence: rebuilding from the serialized form changes nothing.
        let back: Dag<Rat> = Dag::from_json(&d.to_json()).unwrap();
        assert_eq!(d, back);
    }

    #[test]
    fn single_vertex_dag_is_valid() {
        let d: Dag<Rat> = Dag::new(scalar_vertices(1), vec![]).unwrap();
        assert_eq!(d.source(), d.sink());
        assert_eq!(d.enumerate_paths(), vec![vec![0]]);
    }
}
