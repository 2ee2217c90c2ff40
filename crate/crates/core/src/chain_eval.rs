//! Reference evaluators for the chain rules of order 1, 2, and the
//! reduction-structured order p, with fma cost accounting.
//!
//! Cost model: the decision cost is the number of scalar multiplications;
//! every scalar addition can fuse into a preceding multiplication at no
//! extra cost but is still tallied in `adds`. Reference evaluators never
//! shortcut on stored zeros or ones — exploiting structure is the job of
//! schedules, not of the baseline.

use crate::dag::Dag;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A tensor together with the exact operation counts of the computation
/// that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct CostedTensor<S: Scalar> {
    pub value: Tensor<S>,
    pub mults: u64,
    pub adds: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub(crate) struct Cost {
    pub mults: u64,
    pub adds: u64,
}

impl<S: Scalar> CostedTensor<S> {
    pub(crate) fn new(value: Tensor<S>, cost: Cost) -> Self {
        CostedTensor { value, mults: cost.mults, adds: cost.adds }
    }
}

/// Dense matrix product a·b, charging m·k·n multiplications and
/// m·n·(k−1) additions.
pub(crate) fn mat_mul<S: Scalar>(
    a: &Tensor<S>,
    b: &Tensor<S>,
    cost: &mut Cost,
) -> Result<Tensor<S>> {
    if a.order() != 2 || b.order() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::DimensionMismatch(format!(
            "cannot multiply shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let n = b.shape()[1];
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        for j in 0..n {
            let mut acc = a.get(&[i, 0]).mul(b.get(&[0, j]));
            for l in 1..k {
                acc = acc.add(&a.get(&[i, l]).mul(b.get(&[l, j])));
            }
            out.set(&[i, j], acc);
        }
    }
    cost.mults += (m * k * n) as u64;
    cost.adds += (m * n * (k - 1)) as u64;
    Ok(out)
}

/// First-order chain rule: F′ = F′_q·…·F′₁, factors given in application
/// order (F′₁ first), evaluated right-to-left.
pub fn chain_product<S: Scalar>(factors: &[Tensor<S>]) -> Result<CostedTensor<S>> {
    if factors.is_empty() {
        return Err(Error::EmptyChain);
    }
    let mut cost = Cost::default();
    let mut acc = factors[0].clone();
    for f in &factors[1..] {
        acc = mat_mul(f, &acc, &mut cost)?;
    }
    Ok(CostedTensor::new(acc, cost))
}

/// Path-sum chain rule over a dag: F′ = Σ over source→sink paths of the
/// product of edge Jacobians along the path (each product right-to-left).
/// This is the artifact's ground-truth first-order oracle.
pub fn path_sum_jacobian<S: Scalar>(dag: &Dag<S>) -> Result<CostedTensor<S>> {
    let paths = dag.enumerate_paths();
    let m = dag.dim(dag.sink());
    let n = dag.dim(dag.source());
    let mut cost = Cost::default();
    let mut total: Option<Tensor<S>> = None;
    for path in &paths {
        let prod = if path.len() == 1 {
            Tensor::identity(n)
        } else {
            let mut acc = dag.deriv(path[0], path[1], 1)?.clone();
            for w in 2..path.len() {
                acc = mat_mul(dag.deriv(path[w - 1], path[w], 1)?, &acc, &mut cost)?;
            }
            acc
        };
        total = Some(match total {
            None => prod,
            Some(t) => {
                cost.adds += (m * n) as u64;
                t.add(&prod)?
            }
        });
    }
    Ok(CostedTensor::new(
        total.expect("validated dag has at least one path"),
        cost,
    ))
}

/// h[x,y,z] contracted with p[z,w] over z → out[x,y,w].
fn contract_last<S: Scalar>(h: &Tensor<S>, p: &Tensor<S>, cost: &mut Cost) -> Tensor<S> {
    let (x, y, z) = (h.shape()[0], h.shape()[1], h.shape()[2]);
    let w = p.shape()[1];
    debug_assert_eq!(p.shape()[0], z);
    let mut out = Tensor::zeros(&[x, y, w]);
    for a in 0..x {
        for b in 0..y {
            for c in 0..w {
                let mut acc = h.get(&[a, b, 0]).mul(p.get(&[0, c]));
                for d in 1..z {
                    acc = acc.add(&h.get(&[a, b, d]).mul(p.get(&[d, c])));
                }
                out.set(&[a, b, c], acc);
            }
        }
    }
    cost.mults += (x * y * z * w) as u64;
    cost.adds += (x * y * w * (z - 1)) as u64;
    out
}

/// t[x,y,z] contracted with p[y,w] over y → out[x,w,z].
fn contract_mid<S: Scalar>(t: &Tensor<S>, p: &Tensor<S>, cost: &mut Cost) -> Tensor<S> {
    let (x, y, z) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    let w = p.shape()[1];
    debug_assert_eq!(p.shape()[0], y);
    let mut out = Tensor::zeros(&[x, w, z]);
    for a in 0..x {
        for c in 0..w {
            for e in 0..z {
                let mut acc = t.get(&[a, 0, e]).mul(p.get(&[0, c]));
                for b in 1..y {
                    acc = acc.add(&t.get(&[a, b, e]).mul(p.get(&[b, c])));
                }
                out.set(&[a, c, e], acc);
            }
        }
    }
    cost.mults += (x * y * z * w) as u64;
    cost.adds += (x * w * z * (y - 1)) as u64;
    out
}

/// s[d,g] contracted with t[g,a,b] over g → out[d,a,b].
fn contract_front<S: Scalar>(s: &Tensor<S>, t: &Tensor<S>, cost: &mut Cost) -> Tensor<S> {
    let (d, g) = (s.shape()[0], s.shape()[1]);
    let (a, b) = (t.shape()[1], t.shape()[2]);
    debug_assert_eq!(t.shape()[0], g);
    let mut out = Tensor::zeros(&[d, a, b]);
    for i in 0..d {
        for j in 0..a {
            for k in 0..b {
                let mut acc = s.get(&[i, 0]).mul(t.get(&[0, j, k]));
                for l in 1..g {
                    acc = acc.add(&s.get(&[i, l]).mul(t.get(&[l, j, k])));
                }
                out.set(&[i, j, k], acc);
            }
        }
    }
    cost.mults += (d * g * a * b) as u64;
    cost.adds += (d * a * b * (g - 1)) as u64;
    out
}

/// Second-order chain rule on a simple-path dag:
///
/// [F″]_{δ,α₁,α₂} = Σⱼ [Π_{i>j}F′ᵢ]_{δ,γ}·[F″ⱼ]_{γ,β₁,β₂}
///                     ·[Π_{k<j}F′ₖ]_{β₁,α₁}·[Π_{k<j}F′ₖ]_{β₂,α₂}
///
/// Prefix and suffix products are built incrementally and shared across j.
/// Empty products are structural identities: they are never materialized
/// and cost nothing.
pub fn hessian_chain<S: Scalar>(dag: &Dag<S>) -> Result<CostedTensor<S>> {
    let factors = dag
        .as_chain()
        .ok_or_else(|| Error::StructureViolation("dag is not a simple chain".into()))?;
    let q = factors.len();
    let mut seconds = Vec::with_capacity(q);
    for i in 1..=q {
        seconds.push(dag.deriv(i - 1, i, 2)?.clone());
    }
    let n0 = dag.dim(0);
    let m = dag.dim(q);
    let mut cost = Cost::default();

    // prefix[j] = F′_j·…·F′_1 (None = empty product); only j ≤ q−1 is used.
    let mut prefix: Vec<Option<Tensor<S>>> = vec![None; q];
    for j in 1..q {
        prefix[j] = Some(match &prefix[j - 1] {
            None => factors[j - 1].clone(),
            Some(p) => mat_mul(&factors[j - 1], p, &mut cost)?,
        });
    }
    // suffix[j] = F′_q·…·F′_{j+1} (None = empty product); used for j ≥ 1.
    let mut suffix: Vec<Option<Tensor<S>>> = vec![None; q + 1];
    for j in (1..q).rev() {
        suffix[j] = Some(match &suffix[j + 1] {
            None => factors[j].clone(),
            Some(s) => mat_mul(s, &factors[j], &mut cost)?,
        });
    }

    let mut result: Option<Tensor<S>> = None;
    for j in 1..=q {
        let h = &seconds[j - 1];
        let term = match &prefix[j - 1] {
            None => h.clone(),
            Some(p) => {
                let t1 = contract_last(h, p, &mut cost);
                contract_mid(&t1, p, &mut cost)
            }
        };
        let term = match &suffix[j] {
            None => term,
            Some(s) => contract_front(s, &term, &mut cost),
        };
        result = Some(match result {
            None => term,
            Some(r) => {
                cost.adds += (m * n0 * n0) as u64;
                r.add(&term)?
            }
        });
    }
    Ok(CostedTensor::new(result.expect("q ≥ 1"), cost))
}

/// p-th-order chain rule specialized to reduction-structured chains:
/// F^[p] = Π_{i=2..q} F′ᵢ · F₁^[p], returned as an order-1 tensor.
///
/// The structural precondition (scalar input, uniform inner dimensions,
/// diagonal F′ᵢ for i ≥ 2, vanishing higher derivatives of Fᵢ for i ≥ 2)
/// is what makes all other chain-rule summands vanish; input violating it
/// is refused rather than silently mis-evaluated.
pub fn reduction_pth_derivative<S: Scalar>(dag: &Dag<S>, p: u32) -> Result<CostedTensor<S>> {
    if p == 0 {
        return Err(Error::InvalidFormat("derivative order p must be ≥ 1".into()));
    }
    let factors = dag
        .as_chain()
        .ok_or_else(|| Error::StructureViolation("dag is not a simple chain".into()))?;
    let q = factors.len();
    if dag.dim(0) != 1 {
        return Err(Error::StructureViolation(format!(
            "source dimension must be 1, got {}",
            dag.dim(0)
        )));
    }
    let nc = dag.dim(1);
    for i in 2..=q {
        if dag.dim(i) != nc {
            return Err(Error::StructureViolation(format!(
                "inner dimensions must be uniform: dim({i}) = {}, expected {nc}",
                dag.dim(i)
            )));
        }
        for r in 0..nc {
            for c in 0..nc {
                if r != c && !factors[i - 1].get(&[r, c]).is_zero() {
                    return Err(Error::StructureViolation(format!(
                        "F′_{i} is not diagonal at ({r}, {c})"
                    )));
                }
            }
        }
        let edge = dag.edge(i - 1, i).expect("chain edge exists");
        for (&order, t) in &edge.derivs {
            if order >= 2 && !t.is_all_zero() {
                return Err(Error::StructureViolation(format!(
                    "F_{i} has a nonzero derivative of order {order}"
                )));
            }
        }
    }
    let f1p = dag.deriv(0, 1, p)?;
    let mut v = Tensor::from_vec(&[nc, 1], f1p.data().to_vec())?;
    let mut cost = Cost::default();
    for f in factors.iter().skip(1) {
        v = mat_mul(f, &v, &mut cost)?;
    }
    let value = Tensor::from_vec(&[nc], v.data().to_vec())?;
    Ok(CostedTensor::new(value, cost))
}
