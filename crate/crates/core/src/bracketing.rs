//! Optimal association order for a dense matrix chain product, by dynamic
//! programming, plus an exhaustive enumeration used as its oracle.
//!
//! The chain F′_q·…·F′₁ has dims = [n₀, …, n_q]: factor at position i maps
//! R^{n_{i−1}} → R^{n_i}. The dense cost of multiplying two partial
//! products is rows(left)·cols(left)·cols(right); optimality of the DP
//! holds when entries are algebraically independent (no sharing), which is
//! exactly the regime this module models. Sharing lives elsewhere.

use crate::chain_eval::{mat_mul, Cost, CostedTensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Association tree over chain positions 1..=q. A subtree covering
/// positions lo..=hi stands for the partial product F′_hi·…·F′_lo; the
/// left child always covers the higher positions, so the in-order leaf
/// sequence is q, q−1, …, 1 — the order the product is written in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BracketTree {
    Leaf(usize),
    Node {
        left: Box<BracketTree>,
        right: Box<BracketTree>,
        cost: u64,
    },
}

impl BracketTree {
    /// (lo, hi) positions covered by this subtree.
    pub fn span(&self) -> (usize, usize) {
        match self {
            BracketTree::Leaf(i) => (*i, *i),
            BracketTree::Node { left, right, .. } => (right.span().0, left.span().1),
        }
    }

    pub fn cost(&self) -> u64 {
        match self {
            BracketTree::Leaf(_) => 0,
            BracketTree::Node { cost, .. } => *cost,
        }
    }

    /// Leaves in in-order traversal; q, q−1, …, 1 for a well-formed tree.
    pub fn leaves_inorder(&self) -> Vec<usize> {
        match self {
            BracketTree::Leaf(i) => vec![*i],
            BracketTree::Node { left, right, .. } => {
                let mut out = left.leaves_inorder();
                out.extend(right.leaves_inorder());
                out
            }
        }
    }

    /// Renders the association, e.g. `((F3*F2)*F1)`.
    pub fn render(&self) -> String {
        match self {
            BracketTree::Leaf(i) => format!("F{i}"),
            BracketTree::Node { left, right, .. } => {
                format!("({}*{})", left.render(), right.render())
            }
        }
    }

    fn node(left: BracketTree, right: BracketTree, dims: &[usize]) -> BracketTree {
        let (llo, lhi) = left.span();
        let (rlo, rhi) = right.span();
        debug_assert_eq!(llo, rhi + 1, "left child must cover the higher positions");
        let step = (dims[lhi] * dims[llo - 1] * dims[rlo - 1]) as u64;
        let cost = left.cost() + right.cost() + step;
        BracketTree::Node { left: Box::new(left), right: Box::new(right), cost }
    }
}

fn check_dims(dims: &[usize]) -> Result<usize> {
    if dims.len() < 2 {
        return Err(Error::EmptyChain);
    }
    if dims.iter().any(|&d| d == 0) {
        return Err(Error::DimensionMismatch("chain dimensions must be ≥ 1".into()));
    }
    Ok(dims.len() - 1)
}

/// Minimal multiplication count over all bracketings, with a tree achieving
/// it. Standard O(q³) dynamic programming; ties broken toward the smallest
/// split index for determinism.
pub fn optimal_bracketing(dims: &[usize]) -> Result<(u64, BracketTree)> {
    let q = check_dims(dims)?;
    // best[i][j]: (cost, split) for positions i..=j, 1-based.
    let mut best = vec![vec![(0u64, 0usize); q + 1]; q + 1];
    for len in 2..=q {
        for i in 1..=q - len + 1 {
            let j = i + len - 1;
            let mut entry = (u64::MAX, 0);
            for k in i..j {
                let step = (dims[j] * dims[k] * dims[i - 1]) as u64;
                let cost = best[i][k].0 + best[k + 1][j].0 + step;
                if cost < entry.0 {
                    entry = (cost, k);
                }
            }
            best[i][j] = entry;
        }
    }
    fn rebuild(best: &[Vec<(u64, usize)>], dims: &[usize], i: usize, j: usize) -> BracketTree {
        if i == j {
            return BracketTree::Leaf(i);
        }
        let k = best[i][j].1;
        BracketTree::node(
            rebuild(best, dims, k + 1, j),
            rebuild(best, dims, i, k),
            dims,
        )
    }
    let tree = rebuild(&best, dims, 1, q);
    Ok((best[1][q].0, tree))
}

/// Every bracketing of the chain with its exact cost, in a deterministic
/// order (split index ascending, recursively). Catalan growth, so q ≤ 12.
pub fn enumerate_bracketings(dims: &[usize]) -> Result<Vec<(u64, BracketTree)>> {
    let q = check_dims(dims)?;
    if q > 12 {
        return Err(Error::InstanceTooLarge(format!(
            "enumeration supports chains of at most 12 factors, got {q}"
        )));
    }
    fn gen(lo: usize, hi: usize, dims: &[usize]) -> Vec<BracketTree> {
        if lo == hi {
            return vec![BracketTree::Leaf(lo)];
        }
        let mut out = Vec::new();
        for k in lo..hi {
            for right in gen(lo, k, dims) {
                for left in gen(k + 1, hi, dims) {
                    out.push(BracketTree::node(left, right.clone(), dims));
                }
            }
        }
        out
    }
    Ok(gen(1, q, dims).into_iter().map(|t| (t.cost(), t)).collect())
}

/// Evaluates the chain product in the association order given by `tree`.
/// The tallied mults equal the tree's cached cost by construction.
pub fn apply_bracketing<S: Scalar>(
    factors: &[Tensor<S>],
    tree: &BracketTree,
) -> Result<CostedTensor<S>> {
    if factors.is_empty() {
        return Err(Error::EmptyChain);
    }
    if tree.span() != (1, factors.len()) {
        return Err(Error::ShapeMismatch {
            expected: vec![1, factors.len()],
            got: vec![tree.span().0, tree.span().1],
        });
    }
    fn eval<S: Scalar>(
        tree: &BracketTree,
        factors: &[Tensor<S>],
        cost: &mut Cost,
    ) -> Result<Tensor<S>> {
        match tree {
            BracketTree::Leaf(i) => Ok(factors[*i - 1].clone()),
            BracketTree::Node { left, right, .. } => {
                let l = eval(left, factors, cost)?;
                let r = eval(right, factors, cost)?;
                mat_mul(&l, &r, cost)
            }
        }
    }
    let mut cost = Cost::default();
    let value = eval(tree, factors, &mut cost)?;
    Ok(CostedTensor::new(value, cost))
}

/// The fully right-to-left association F′_q·(…·(F′₂·F′₁)); evaluating it is
/// what `chain_product` does.
pub fn right_comb(q: usize, dims: &[usize]) -> BracketTree {
    let mut tree = BracketTree::Leaf(1);
    for i in 2..=q {
        tree = BracketTree::node(BracketTree::Leaf(i), tree, dims);
    }
    tree
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chain_eval::chain_product;
    use crate::scalar::Rat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_factor_costs_nothing() {
        let (cost, tree) = optimal_bracketing(&[5, 10]).unwrap();
        assert_eq!(cost, 0);
        assert_eq!(tree, BracketTree::Leaf(1));
    }

    #[test]
    fn empty_chain_is_rejected() {
        assert!(matches!(optimal_bracketing(&[7]), Err(Error::EmptyChain)));
    }

    #[test]
    fn catalan_counts() {
        assert_eq!(enumerate_bracketings(&[1, 1, 1, 1]).unwrap().len(), 2);
        assert_eq!(enumerate_bracketings(&[1, 1, 1, 1, 1]).unwrap().len(), 5);
    }

    #[test]
    fn reduction_shape_chain_is_cheapest_right_to_left() {
        // dims [1,3,3,3]: the exhaustive oracle fixes the minimum; the DP
        // must agree, and the value is pinned as a regression.
        let dims = [1usize, 3, 3, 3];
        let all = enumerate_bracketings(&dims).unwrap();
        let oracle_min = all.iter().map(|(c, _)| *c).min().unwrap();
        let (cost, tree) = optimal_bracketing(&dims).unwrap();
        assert_eq!(cost, oracle_min);
        assert_eq!(cost, 18);
        assert_eq!(tree.render(), "(F3*(F2*F1))");
    }

    #[test]
    fn two_bracketing_example() {
        // Same instance in both dim orders (transposing a chain swaps the
        // two bracketings but keeps the cost set).
        let dims = [10usize, 100, 5, 50];
        let all = enumerate_bracketings(&dims).unwrap();
        let mut costs: Vec<u64> = all.iter().map(|(c, _)| *c).collect();
        costs.sort_unstable();
        assert_eq!(costs, vec![7500, 75000]);
        let (cost, tree) = optimal_bracketing(&dims).unwrap();
        assert_eq!(cost, 7500);
        assert_eq!(tree.render(), "(F3*(F2*F1))");

        let (cost, tree) = optimal_bracketing(&[50, 5, 100, 10]).unwrap();
        assert_eq!(cost, 7500);
        assert_eq!(tree.render(), "((F3*F2)*F1)");
    }

    #[test]
    fn leaves_run_from_q_down_to_one() {
        for (_, tree) in enumerate_bracketings(&[2, 3, 4, 5, 6]).unwrap() {
            assert_eq!(tree.leaves_inorder(), vec![4, 3, 2, 1]);
            assert_eq!(tree.span(), (1, 4));
        }
    }

    #[test]
    fn dp_matches_exhaustive_minimum_on_random_chains() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..100 {
            let q = rng.gen_range(1..=5);
            let dims: Vec<usize> = (0..=q).map(|_| rng.gen_range(1..=9)).collect();
            let oracle = enumerate_bracketings(&dims)
                .unwrap()
                .into_iter()
                .map(|(c, _)| c)
                .min()
                .unwrap();
            let (cost, tree) = optimal_bracketing(&dims).unwrap();
            assert_eq!(cost, oracle, "dims {dims:?}");
            assert_eq!(tree.cost(), cost);
        }
    }

    fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<Rat> {
        let data = (0..rows * cols)
            .map(|_| Rat::ratio(rng.gen_range(-9..=9), rng.gen_range(1..=4)))
            .collect();
        Tensor::from_vec(&[rows, cols], data).unwrap()
    }

    #[test]
    fn all_bracketings_agree_bit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        for _ in 0..10 {
            let q = rng.gen_range(2..=4);
            let dims: Vec<usize> = (0..=q).map(|_| rng.gen_range(1..=4)).collect();
            let factors: Vec<Tensor<Rat>> = (1..=q)
                .map(|i| random_matrix(&mut rng, dims[i], dims[i - 1]))
                .collect();
            let reference = chain_product(&factors).unwrap();
            for (cost, tree) in enumerate_bracketings(&dims).unwrap() {
                let out = apply_bracketing(&factors, &tree).unwrap();
                assert_eq!(out.value, reference.value);
                assert_eq!(out.mults, cost, "tally must equal cached tree cost");
            }
        }
    }

    #[test]
    fn right_comb_reproduces_chain_product_cost() {
        let dims = [2usize, 3, 4, 5];
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let factors: Vec<Tensor<Rat>> = (1..=3)
            .map(|i| random_matrix(&mut rng, dims[i], dims[i - 1]))
            .collect();
        let comb = right_comb(3, &dims);
        let via_tree = apply_bracketing(&factors, &comb).unwrap();
        let via_chain = chain_product(&factors).unwrap();
        assert_eq!(via_tree.value, via_chain.value);
        assert_eq!(via_tree.mults, via_chain.mults);
    }

    #[test]
    fn prime_chain_both_trees_same_value() {
        let factors = vec![
            Tensor::from_vec(&[3, 1], vec![Rat::from_int(2), Rat::from_int(3), Rat::from_int(2)])
                .unwrap(),
            {
                let mut t = Tensor::zeros(&[3, 3]);
                for (i, v) in [3, 5, 5].iter().enumerate() {
                    t.set(&[i, i], Rat::from_int(*v));
                }
                t
            },
            {
                let mut t = Tensor::zeros(&[3, 3]);
                for (i, v) in [11, 7, 7].iter().enumerate() {
                    t.set(&[i, i], Rat::from_int(*v));
                }
                t
            },
        ];
        let expect: Vec<Rat> = [66, 105, 70].iter().map(|&v| Rat::from_int(v)).collect();
        let trees = enumerate_bracketings(&[1, 3, 3, 3]).unwrap();
        assert_eq!(trees.len(), 2);
        for (_, tree) in trees {
            let out = apply_bracketing(&factors, &tree).unwrap();
            assert_eq!(out.value.data(), expect.as_slice());
        }
    }
}
