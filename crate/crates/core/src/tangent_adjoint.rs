//! Tangent and adjoint models as contractions of a materialized derivative
//! tensor F^[p] against seed vectors, plus basis-vector recovery of the full
//! tensor with exact call counting. No propagation through programs happens
//! here: a tangent is F^[p] contracted over all p trailing slots, an adjoint
//! leaves one slot free.

use crate::chain_eval::{reduction_pth_derivative, Cost, CostedTensor};
use crate::dag::Dag;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{multi_indices, Tensor};

/// Seed vectors for one directional evaluation.
#[derive(Debug, Clone)]
pub enum SeedBundle<S: Scalar> {
    /// p input tangents ẋ₁..ẋ_p, each of length n.
    Tangent { tangents: Vec<Vec<S>> },
    /// An output adjoint ȳ of length m, p−1 input seed vectors of length n,
    /// and the 1-based slot l ∈ 1..=p left uncontracted.
    Adjoint { output_adjoint: Vec<S>, input_seeds: Vec<Vec<S>>, free_index: u32 },
}

impl<S: Scalar> SeedBundle<S> {
    /// Derivative order this bundle drives.
    pub fn order(&self) -> u32 {
        match self {
            SeedBundle::Tangent { tangents } => tangents.len() as u32,
            SeedBundle::Adjoint { input_seeds, .. } => input_seeds.len() as u32 + 1,
        }
    }

    /// Contract `fp` according to the bundle's mode.
    pub fn eval(&self, fp: &Tensor<S>) -> Result<CostedTensor<S>> {
        match self {
            SeedBundle::Tangent { tangents } => tangent_eval(fp, tangents),
            SeedBundle::Adjoint { output_adjoint, input_seeds, free_index } => {
                adjoint_eval(fp, output_adjoint, input_seeds, *free_index)
            }
        }
    }
}

/// Checks fp against shape [m, n, …, n] with p trailing slots; returns (m, n).
fn contraction_dims<S: Scalar>(fp: &Tensor<S>, p: u32) -> Result<(usize, usize)> {
    if p == 0 || fp.order() != p as usize + 1 {
        return Err(Error::ShapeMismatch {
            expected: vec![0; p as usize + 1],
            got: fp.shape().to_vec(),
        });
    }
    let m = fp.shape()[0];
    let n = fp.shape()[1];
    if fp.shape()[1..].iter().any(|&d| d != n) {
        let mut expected = vec![m];
        expected.extend(std::iter::repeat(n).take(p as usize));
        return Err(Error::ShapeMismatch { expected, got: fp.shape().to_vec() });
    }
    Ok((m, n))
}

fn check_seed_len<S: Scalar>(name: &str, seed: &[S], want: usize) -> Result<()> {
    if seed.len() != want {
        return Err(Error::DimensionMismatch(format!(
            "{name} has length {}, expected {want}",
            seed.len()
        )));
    }
    Ok(())
}

/// p-th-order tangent: [ẏ_p]_k = [F^[p]]_{k,j₁..j_p}·Π[ẋᵢ]_{jᵢ}, contracted
/// over every trailing slot. Costs: p multiplications per term, every
/// scalar addition tallied.
pub fn tangent_eval<S: Scalar>(fp: &Tensor<S>, seeds: &[Vec<S>]) -> Result<CostedTensor<S>> {
    let p = seeds.len() as u32;
    let (m, n) = contraction_dims(fp, p)?;
    for (i, seed) in seeds.iter().enumerate() {
        check_seed_len(&format!("tangent {}", i + 1), seed, n)?;
    }
    let mut cost = Cost::default();
    let mut out = Tensor::zeros(&[m]);
    let trailing = multi_indices(&fp.shape()[1..]);
    for k in 0..m {
        let mut acc: Option<S> = None;
        for idx in &trailing {
            let mut full = Vec::with_capacity(idx.len() + 1);
            full.push(k);
            full.extend_from_slice(idx);
            let mut term = fp.get(&full).clone();
            for (i, seed) in seeds.iter().enumerate() {
                term = term.mul(&seed[idx[i]]);
                cost.mults += 1;
            }
            acc = Some(match acc {
                None => term,
                Some(a) => {
                    cost.adds += 1;
                    a.add(&term)
                }
            });
        }
        out.set(&[k], acc.expect("n ≥ 1 gives at least one term"));
    }
    Ok(CostedTensor::new(out, cost))
}

/// p-th-order adjoint with free slot l:
/// [x̄_l]_{j_l} = [ȳ]_k·[F^[p]]_{k,j₁..j_p}·Π_{i≠l}[x̄ᵢ]_{jᵢ}.
/// The p−1 `input_seeds` fill the non-free slots in ascending order.
pub fn adjoint_eval<S: Scalar>(
    fp: &Tensor<S>,
    output_adjoint: &[S],
    input_seeds: &[Vec<S>],
    free_index: u32,
) -> Result<CostedTensor<S>> {
    let p = input_seeds.len() as u32 + 1;
    let (m, n) = contraction_dims(fp, p)?;
    if free_index == 0 || free_index > p {
        return Err(Error::BadFreeIndex { index: free_index, order: p });
    }
    check_seed_len("output adjoint", output_adjoint, m)?;
    for (i, seed) in input_seeds.iter().enumerate() {
        check_seed_len(&format!("input seed {}", i + 1), seed, n)?;
    }
    let free = free_index as usize - 1; // 0-based among the p trailing slots
    let mut cost = Cost::default();
    let mut out = Tensor::zeros(&[n]);
    let rest = multi_indices(&vec![n; p as usize - 1]);
    for jl in 0..n {
        let mut acc: Option<S> = None;
        for k in 0..m {
            for idx in &rest {
                let mut full = Vec::with_capacity(p as usize + 1);
                full.push(k);
                let mut taken = 0;
                for slot in 0..p as usize {
                    if slot == free {
                        full.push(jl);
                    } else {
                        full.push(idx[taken]);
                        taken += 1;
                    }
                }
                let mut term = fp.get(&full).mul(&output_adjoint[k]);
                cost.mults += 1;
                for (i, seed) in input_seeds.iter().enumerate() {
                    term = term.mul(&seed[idx[i]]);
                    cost.mults += 1;
                }
                acc = Some(match acc {
                    None => term,
                    Some(a) => {
                        cost.adds += 1;
                        a.add(&term)
                    }
                });
            }
        }
        out.set(&[jl], acc.expect("m ≥ 1 gives at least one term"));
    }
    Ok(CostedTensor::new(out, cost))
}

fn basis<S: Scalar>(len: usize, hot: usize) -> Vec<S> {
    let mut v = vec![S::zero(); len];
    v[hot] = S::one();
    v
}

/// Rebuilds F^[p] by letting the p input tangents range over the Cartesian
/// basis of Rⁿ: exactly nᵖ provider calls, returned alongside the tensor.
pub fn recover_tensor_by_tangents<S, F>(
    mut provider: F,
    n: usize,
    p: u32,
) -> Result<(Tensor<S>, u64)>
where
    S: Scalar,
    F: FnMut(&[Vec<S>]) -> Result<Vec<S>>,
{
    if n == 0 || p == 0 {
        return Err(Error::DimensionMismatch(
            "tangent recovery needs n ≥ 1 and p ≥ 1".into(),
        ));
    }
    let trailing = vec![n; p as usize];
    let mut calls = 0u64;
    let mut out: Option<Tensor<S>> = None;
    for idx in multi_indices(&trailing) {
        let seeds: Vec<Vec<S>> = idx.iter().map(|&j| basis(n, j)).collect();
        let y = provider(&seeds)?;
        calls += 1;
        if y.is_empty() {
            return Err(Error::DimensionMismatch("provider returned an empty vector".into()));
        }
        let tensor = out.get_or_insert_with(|| {
            let mut shape = vec![y.len()];
            shape.extend_from_slice(&trailing);
            Tensor::zeros(&shape)
        });
        if y.len() != tensor.shape()[0] {
            return Err(Error::DimensionMismatch(format!(
                "provider switched output length from {} to {}",
                tensor.shape()[0],
                y.len()
            )));
        }
        for (k, value) in y.into_iter().enumerate() {
            let mut full = Vec::with_capacity(idx.len() + 1);
            full.push(k);
            full.extend_from_slice(&idx);
            tensor.set(&full, value);
        }
    }
    Ok((out.expect("nᵖ ≥ 1 calls"), calls))
}

/// Rebuilds F^[p] from adjoints: ȳ ranges over the basis of Rᵐ and the p−1
/// input seeds over the basis of Rⁿ, with the LAST slot free (l = p), so
/// each of the m·nᵖ⁻¹ calls fills a full column. The provider receives
/// (ȳ, input seeds) and must contract with free index p.
pub fn recover_tensor_by_adjoints<S, F>(
    mut provider: F,
    m: usize,
    n: usize,
    p: u32,
) -> Result<(Tensor<S>, u64)>
where
    S: Scalar,
    F: FnMut(&[S], &[Vec<S>]) -> Result<Vec<S>>,
{
    if m == 0 || n == 0 || p == 0 {
        return Err(Error::DimensionMismatch(
            "adjoint recovery needs m, n ≥ 1 and p ≥ 1".into(),
        ));
    }
    let mut shape = vec![m];
    shape.extend(std::iter::repeat(n).take(p as usize));
    let mut out = Tensor::zeros(&shape);
    let mut calls = 0u64;
    for k in 0..m {
        let y_bar: Vec<S> = basis(m, k);
        for idx in multi_indices(&vec![n; p as usize - 1]) {
            let seeds: Vec<Vec<S>> = idx.iter().map(|&j| basis(n, j)).collect();
            let x_bar = provider(&y_bar, &seeds)?;
            calls += 1;
            if x_bar.len() != n {
                return Err(Error::DimensionMismatch(format!(
                    "provider returned length {}, expected {n}",
                    x_bar.len()
                )));
            }
            for (jl, value) in x_bar.into_iter().enumerate() {
                let mut full = Vec::with_capacity(p as usize + 1);
                full.push(k);
                full.extend_from_slice(&idx);
                full.push(jl);
                out.set(&full, value);
            }
        }
    }
    Ok((out, calls))
}

/// Shapes the flat reduction derivative [m] into the contraction form
/// [m, 1, …, 1] that tangent/adjoint evaluation expects (n = 1 for
/// reduction-structured chains).
fn shaped_reduction_fp<S: Scalar>(dag: &Dag<S>, p: u32) -> Result<(CostedTensor<S>, Tensor<S>)> {
    let fp = reduction_pth_derivative(dag, p)?;
    let mut shape = vec![fp.value.len()];
    shape.extend(std::iter::repeat(1).take(p as usize));
    let shaped = Tensor::from_vec(&shape, fp.value.data().to_vec())?;
    Ok((fp, shaped))
}

/// Tangent of a reduction-structured chain: materializes
/// F^[p] = ΠFᵢ^[1]·F₁^[p] and contracts with the tangents; costs of both
/// phases are combined.
pub fn reduction_tangent<S: Scalar>(dag: &Dag<S>, seeds: &[Vec<S>]) -> Result<CostedTensor<S>> {
    let (fp, shaped) = shaped_reduction_fp(dag, seeds.len() as u32)?;
    let contraction = tangent_eval(&shaped, seeds)?;
    Ok(CostedTensor {
        value: contraction.value,
        mults: fp.mults + contraction.mults,
        adds: fp.adds + contraction.adds,
    })
}

/// Adjoint counterpart of [`reduction_tangent`].
pub fn reduction_adjoint<S: Scalar>(
    dag: &Dag<S>,
    output_adjoint: &[S],
    input_seeds: &[Vec<S>],
    free_index: u32,
) -> Result<CostedTensor<S>> {
    let (fp, shaped) = shaped_reduction_fp(dag, input_seeds.len() as u32 + 1)?;
    let contraction = adjoint_eval(&shaped, output_adjoint, input_seeds, free_index)?;
    Ok(CostedTensor {
        value: contraction.value,
        mults: fp.mults + contraction.mults,
        adds: fp.adds + contraction.adds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{reduce_to_crd, EnsembleInstance};
    use crate::scalar::Rat;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn rat(n: i64) -> Rat {
        Rat::from_int(n)
    }

    fn rats(values: &[i64]) -> Vec<Rat> {
        values.iter().map(|&v| rat(v)).collect()
    }

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<Rat> {
        let len: usize = shape.iter().product();
        let data = (0..len).map(|_| rat(rng.gen_range(-6..=6))).collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    fn running_artifact(p: u32) -> crate::ensemble::ReductionArtifact {
        let labels: Vec<String> = ["a1", "a2", "a3", "a4"].iter().map(|s| s.to_string()).collect();
        let subset = |names: &[&str]| -> BTreeSet<String> {
            names.iter().map(|s| s.to_string()).collect()
        };
        let inst = EnsembleInstance::new(
            labels,
            vec![
                subset(&["a1", "a2"]),
                subset(&["a2", "a3", "a4"]),
                subset(&["a1", "a3", "a4"]),
            ],
            4,
        )
        .unwrap();
        reduce_to_crd(&inst, p).unwrap()
    }

    #[test]
    fn identity_tangent_passes_the_seed_through() {
        let fp = Tensor::<Rat>::identity(2);
        let out = tangent_eval(&fp, &[rats(&[3, 4])]).unwrap();
        assert_eq!(out.value.data(), &[rat(3), rat(4)]);
    }

    #[test]
    fn unit_tangents_on_the_running_artifact_give_the_derivative() {
        let artifact = running_artifact(3);
        let seeds = vec![rats(&[1]), rats(&[1]), rats(&[1])];
        let out = reduction_tangent(&artifact.chain, &seeds).unwrap();
        assert_eq!(out.value.data(), &[rat(66), rat(105), rat(70)]);
    }

    #[test]
    fn second_order_tangent_matches_a_naive_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(51);
        for _ in 0..10 {
            let fp = random_tensor(&[2, 2, 2], &mut rng);
            let x1 = rats(&[rng.gen_range(-5..=5), rng.gen_range(-5..=5)]);
            let x2 = rats(&[rng.gen_range(-5..=5), rng.gen_range(-5..=5)]);
            let got = tangent_eval(&fp, &[x1.clone(), x2.clone()]).unwrap();
            for k in 0..2 {
                let mut want = rat(0);
                for j1 in 0..2 {
                    for j2 in 0..2 {
                        want = want
                            .add(&fp.get(&[k, j1, j2]).mul(&x1[j1]).mul(&x2[j2]));
                    }
                }
                assert_eq!(got.value.get(&[k]), &want);
            }
        }
    }

    #[test]
    fn gradient_is_one_adjoint_row() {
        let fp = Tensor::from_vec(&[1, 3], rats(&[4, -2, 9])).unwrap();
        let out = adjoint_eval(&fp, &[rat(1)], &[], 1).unwrap();
        assert_eq!(out.value.data(), &[rat(4), rat(-2), rat(9)]);

        let scaled = adjoint_eval(&fp, &[rat(3)], &[], 1).unwrap();
        assert_eq!(scaled.value.data(), &[rat(12), rat(-6), rat(27)]);
    }

    #[test]
    fn artifact_adjoint_sums_the_entries_with_two_additions() {
        let artifact = running_artifact(3);
        let (_, shaped) = shaped_reduction_fp(&artifact.chain, 3).unwrap();
        for free_index in 1..=3 {
            let out =
                adjoint_eval(&shaped, &rats(&[1, 1, 1]), &[rats(&[1]), rats(&[1])], free_index)
                    .unwrap();
            assert_eq!(out.value.data(), &[rat(241)]);
            // |C̃| − 1 standalone additions, independent of the free slot.
            assert_eq!(out.adds, 2);
        }
        let combined =
            reduction_adjoint(&artifact.chain, &rats(&[1, 1, 1]), &[rats(&[1]), rats(&[1])], 3)
                .unwrap();
        assert_eq!(combined.value.data(), &[rat(241)]);
    }

    #[test]
    fn second_order_adjoint_matches_a_naive_loop_for_both_slots() {
        let mut rng = ChaCha8Rng::seed_from_u64(52);
        for _ in 0..10 {
            let fp = random_tensor(&[2, 3, 3], &mut rng);
            let y = rats(&[rng.gen_range(-5..=5), rng.gen_range(-5..=5)]);
            let s: Vec<Rat> = rats(&[
                rng.gen_range(-5..=5),
                rng.gen_range(-5..=5),
                rng.gen_range(-5..=5),
            ]);
            for l in [1u32, 2] {
                let got = adjoint_eval(&fp, &y, &[s.clone()], l).unwrap();
                for jf in 0..3 {
                    let mut want = rat(0);
                    for k in 0..2 {
                        for jo in 0..3 {
                            let idx = if l == 1 { [k, jf, jo] } else { [k, jo, jf] };
                            want = want.add(&fp.get(&idx).mul(&y[k]).mul(&s[jo]));
                        }
                    }
                    assert_eq!(got.value.get(&[jf]), &want, "l = {l}");
                }
            }
        }
    }

    #[test]
    fn first_order_duality_holds_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for _ in 0..20 {
            let fp = random_tensor(&[3, 2], &mut rng);
            let x = rats(&[rng.gen_range(-9..=9), rng.gen_range(-9..=9)]);
            let y = rats(&[
                rng.gen_range(-9..=9),
                rng.gen_range(-9..=9),
                rng.gen_range(-9..=9),
            ]);
            let forward = tangent_eval(&fp, &[x.clone()]).unwrap();
            let lhs = (0..3).fold(rat(0), |a, k| a.add(&y[k].mul(forward.value.get(&[k]))));
            let backward = adjoint_eval(&fp, &y, &[], 1).unwrap();
            let rhs = (0..2).fold(rat(0), |a, j| a.add(&x[j].mul(backward.value.get(&[j]))));
            assert_eq!(lhs, rhs);
        }
    }

    #[test]
    fn tangent_recovery_is_exact_in_exactly_n_pow_p_calls() {
        let mut rng = ChaCha8Rng::seed_from_u64(54);
        let fp = random_tensor(&[3, 2, 2], &mut rng);
        let (recovered, calls) = recover_tensor_by_tangents(
            |seeds| Ok(tangent_eval(&fp, seeds)?.value.data().to_vec()),
            2,
            2,
        )
        .unwrap();
        assert_eq!(calls, 4);
        assert_eq!(recovered, fp);
    }

    #[test]
    fn tangent_recovery_on_the_artifact_needs_one_call() {
        let artifact = running_artifact(3);
        let (recovered, calls) = recover_tensor_by_tangents(
            |seeds| Ok(reduction_tangent(&artifact.chain, seeds)?.value.data().to_vec()),
            1,
            3,
        )
        .unwrap();
        assert_eq!(calls, 1);
        assert_eq!(recovered.shape(), &[3, 1, 1, 1]);
        assert_eq!(recovered.data(), &[rat(66), rat(105), rat(70)]);
    }

    #[test]
    fn adjoint_recovery_is_exact_in_m_n_pow_p_minus_1_calls() {
        let mut rng = ChaCha8Rng::seed_from_u64(55);
        let fp = random_tensor(&[2, 3, 3], &mut rng);
        let (recovered, calls) = recover_tensor_by_adjoints(
            |y, seeds| Ok(adjoint_eval(&fp, y, seeds, 2)?.value.data().to_vec()),
            2,
            3,
            2,
        )
        .unwrap();
        assert_eq!(calls, 6);
        assert_eq!(recovered, fp);
    }

    #[test]
    fn adjoint_recovery_covers_the_gradient_and_artifact_cases() {
        let grad = Tensor::from_vec(&[1, 4], rats(&[5, 0, -3, 8])).unwrap();
        let (recovered, calls) = recover_tensor_by_adjoints(
            |y, seeds| Ok(adjoint_eval(&grad, y, seeds, 1)?.value.data().to_vec()),
            1,
            4,
            1,
        )
        .unwrap();
        assert_eq!(calls, 1);
        assert_eq!(recovered, grad);

        let artifact = running_artifact(3);
        let (_, shaped) = shaped_reduction_fp(&artifact.chain, 3).unwrap();
        let (recovered, calls) = recover_tensor_by_adjoints(
            |y, seeds| Ok(adjoint_eval(&shaped, y, seeds, 3)?.value.data().to_vec()),
            3,
            1,
            3,
        )
        .unwrap();
        assert_eq!(calls, 3);
        assert_eq!(recovered, shaped);
    }

    #[test]
    fn seed_bundle_dispatches_and_reports_order() {
        let fp = Tensor::<Rat>::identity(2);
        let bundle = SeedBundle::Tangent { tangents: vec![rats(&[1, 2])] };
        assert_eq!(bundle.order(), 1);
        assert_eq!(bundle.eval(&fp).unwrap().value.data(), &[rat(1), rat(2)]);

        let bundle = SeedBundle::<Rat>::Adjoint {
            output_adjoint: rats(&[1, 1]),
            input_seeds: vec![],
            free_index: 1,
        };
        assert_eq!(bundle.order(), 1);
        assert_eq!(bundle.eval(&fp).unwrap().value.data(), &[rat(1), rat(1)]);
    }

    #[test]
    fn malformed_inputs_are_rejected() {
        let fp = Tensor::<Rat>::identity(2);
        assert!(matches!(
            tangent_eval(&fp, &[rats(&[1, 2]), rats(&[1, 2])]),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(matches!(
            tangent_eval(&fp, &[rats(&[1, 2, 3])]),
            Err(Error::DimensionMismatch(_))
        ));
        assert!(matches!(
            adjoint_eval(&fp, &rats(&[1, 1]), &[], 0),
            Err(Error::BadFreeIndex { .. })
        ));
        assert!(matches!(
            adjoint_eval(&fp, &rats(&[1, 1]), &[], 2),
            Err(Error::BadFreeIndex { .. })
        ));
        assert!(matches!(
            adjoint_eval(&fp, &rats(&[1]), &[], 1),
            Err(Error::DimensionMismatch(_))
        ));
        let ragged = Tensor::<Rat>::zeros(&[2, 2, 3]);
        assert!(matches!(
            tangent_eval(&ragged, &[rats(&[1, 1]), rats(&[1, 1, 1])]),
            Err(Error::ShapeMismatch { .. })
        ));
    }
}
