//! Chain rules of arbitrary order over dags of elemental functions, under a
//! cost model where fused multiply-add makes multiplications the only
//! decision cost.
//!
//! The crate has three layers:
//!
//! * **Evaluation** — [`dag::Dag`] holds elemental functions with their
//!   derivative tensors; [`chain_eval`] provides reference evaluators for the
//!   first-order chain rule (as a factor product and as a sum over
//!   source→sink paths), the second-order rule, and the order-p rule on
//!   reduction-structured chains. [`bracketing`] finds the cheapest
//!   association of a dense factor chain. [`tangent_adjoint`] contracts a
//!   materialized derivative tensor against seed vectors and recovers full
//!   tensors by basis seeding.
//! * **Scheduling** — [`schedule`] expresses derivative accumulation as
//!   straight-line multiplication programs over cell atoms, searches for the
//!   provably minimal number of multiplications at desk scale, offers a
//!   greedy fallback, and verifies any schedule against the reference
//!   evaluators.
//! * **Reduction** — [`ensemble`] ties minimal accumulation to the
//!   set-union construction problem: subsets become squarefree products of
//!   primes along a chain, minimal union sequences and minimal schedules
//!   translate into each other, and factorization decodes derivative values
//!   back into the subsets they encode.
//!
//! Exact rational arithmetic ([`scalar::Rat`]) is the default throughout the
//! tests and oracles; `f64` is supported behind the same [`scalar::Scalar`]
//! trait.

pub mod bracketing;
pub mod chain_eval;
pub mod dag;
pub mod ensemble;
pub mod error;
pub mod scalar;
pub mod schedule;
pub mod tangent_adjoint;
pub mod tensor;

pub use bracketing::{apply_bracketing, enumerate_bracketings, optimal_bracketing, BracketTree};
pub use chain_eval::{
    chain_product, hessian_chain, path_sum_jacobian, reduction_pth_derivative, CostedTensor,
};
pub use dag::{Dag, DagFile, Edge, Vertex};
pub use ensemble::{
    ec_solve_exact, ec_verify, factorize_and_recover, lift_solution, reduce_to_crd,
    reduction_chain_monomials, EcCaps, EcCheck, EcSolution, EnsembleInstance, ReductionArtifact,
    UOperand, UnionSequence,
};
pub use error::{Error, Result};
pub use scalar::{Rat, Scalar, ScalarKind};
pub use schedule::{
    greedy_schedule, monomial_min_fma, verify_schedule, Atom, CellId, FmaDecision, Monomial,
    OperandRef, Schedule, SearchCaps, Step, Verification,
};
pub use tangent_adjoint::{
    adjoint_eval, recover_tensor_by_adjoints, recover_tensor_by_tangents, reduction_adjoint,
    reduction_tangent, tangent_eval, SeedBundle,
};
pub use tensor::Tensor;
