//! Stage two: the product chain over `(state, observation)` pairs and the
//! rewrite that strips observation constraints off the next operator.

use std::collections::BTreeSet;

use crate::error::CheckError;
use crate::model::{AtomicProp, Dtmc, Hmm, ProductState, SatMode};
use crate::syntax::ast::PathFormula;

/// Build the product chain of `h`.
///
/// States are the `n·m` pairs `(s, o)` in row-major order; the transition
/// `(s,o) → (s',o')` carries `a_{ss'} · b_{s'}(o')`. Labels are the state's
/// labels; observation-set atoms are never materialised (membership is
/// decided from the observation back-reference on demand). In π-weighted
/// mode the initial mass of `(s,o)` is `π_s · b_s(o)`; in per-state mode the
/// state under evaluation takes the whole mass, `b_s(o)` on its own pairs and
/// zero elsewhere.
pub fn build_product(
    h: &Hmm,
    mode: SatMode,
    eval_state: Option<usize>,
) -> Result<Dtmc, CheckError> {
    let lifted: Vec<BTreeSet<AtomicProp>> = h
        .labels
        .iter()
        .map(|set| set.iter().map(|name| AtomicProp::Named(name.clone())).collect())
        .collect();
    build_product_with_labels(h, &lifted, mode, eval_state)
}

/// [`build_product`] over an explicit label map, used by the checker once
/// fresh atoms have been added during stage one.
pub fn build_product_with_labels(
    h: &Hmm,
    labels: &[BTreeSet<AtomicProp>],
    mode: SatMode,
    eval_state: Option<usize>,
) -> Result<Dtmc, CheckError> {
    let eval = match (mode, eval_state) {
        (SatMode::PerState, Some(s)) if s < h.n => Some(s),
        (SatMode::PerState, Some(index)) => {
            return Err(CheckError::StateOutOfRange { index, n: h.n })
        }
        (SatMode::PerState, None) => return Err(CheckError::MissingEvalState),
        (SatMode::WeightedByPi, None) => None,
        (SatMode::WeightedByPi, Some(_)) => return Err(CheckError::UnexpectedEvalState),
    };

    let count = h.n * h.m;
    let mut states = Vec::with_capacity(count);
    let mut chain_labels = Vec::with_capacity(count);
    let mut init = Vec::with_capacity(count);
    for s in 0..h.n {
        for o in 0..h.m {
            states.push(ProductState {
                hmm_state: s,
                observation: o,
                xi_bits: Vec::new(),
            });
            chain_labels.push(labels[s].clone());
            let mass = match eval {
                Some(e) if s == e => h.b[s][o],
                Some(_) => 0.0,
                None => h.pi[s] * h.b[s][o],
            };
            init.push(mass);
        }
    }

    let mut t = vec![vec![0.0; count]; count];
    for s in 0..h.n {
        for o in 0..h.m {
            let from = s * h.m + o;
            for s2 in 0..h.n {
                for o2 in 0..h.m {
                    t[from][s2 * h.m + o2] = h.a[s][s2] * h.b[s2][o2];
                }
            }
        }
    }

    Ok(Dtmc {
        states,
        t,
        labels: chain_labels,
        init,
    })
}

/// Replace every `X_Ω φ` with `Ω ∧ X φ`, where `Ω` becomes an observation-set
/// atom of the product chain. The result contains no observation-constrained
/// next operators.
pub fn rewrite_obs_next(f: &PathFormula) -> PathFormula {
    debug_assert!(!f.contains_next_plain(), "input already rewritten");
    rewrite(f)
}

fn rewrite(f: &PathFormula) -> PathFormula {
    match f {
        PathFormula::State(inner) => PathFormula::State(inner.clone()),
        PathFormula::Not(inner) => PathFormula::not(rewrite(inner)),
        PathFormula::And(l, r) => PathFormula::and(rewrite(l), rewrite(r)),
        PathFormula::Or(l, r) => PathFormula::or(rewrite(l), rewrite(r)),
        PathFormula::NextObs(obs, body) => PathFormula::and(
            PathFormula::state(crate::syntax::ast::StateFormula::Atom(AtomicProp::ObsSet(
                obs.clone(),
            ))),
            PathFormula::next_plain(rewrite(body)),
        ),
        PathFormula::NextPlain(body) => PathFormula::next_plain(rewrite(body)),
        PathFormula::BoundedUntil(l, n, r) => {
            PathFormula::bounded_until(rewrite(l), *n, rewrite(r))
        }
        PathFormula::Until(l, r) => PathFormula::until(rewrite(l), rewrite(r)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{f1, f2};
    use crate::model::validate_dtmc;
    use crate::syntax::ast::StateFormula;

    #[test]
    fn f1_weighted_product_matches_the_defining_products() {
        let h = f1();
        let d = build_product(&h, SatMode::WeightedByPi, None).unwrap();
        assert_eq!(d.len(), 4);
        // (s0,o0) -> (s1,o1): a_{01}·b_1(1) = 0.5·1
        assert_eq!(d.t[0][3], 0.5);
        // π^D_(s0,o0) = π_0·b_0(0) = 0.5·1
        assert_eq!(d.init[0], 0.5);
        assert_eq!(d.init[1], 0.0);
        assert!(validate_dtmc(&d).is_ok());
    }

    #[test]
    fn f1_per_state_concentrates_mass() {
        let h = f1();
        let d = build_product(&h, SatMode::PerState, Some(0)).unwrap();
        assert_eq!(d.init, vec![1.0, 0.0, 0.0, 0.0]);
        assert!(validate_dtmc(&d).is_ok());
    }

    #[test]
    fn f2_identity_rows() {
        let h = f2();
        let d = build_product(&h, SatMode::PerState, Some(0)).unwrap();
        assert_eq!(d.t[0][0], 1.0);
        assert_eq!(d.t[0][1], 0.0);
        assert_eq!(d.t[0][2], 0.0);
        assert_eq!(d.t[0][3], 0.0);
    }

    #[test]
    fn per_state_mode_requires_an_eval_state() {
        let h = f1();
        assert!(matches!(
            build_product(&h, SatMode::PerState, None),
            Err(CheckError::MissingEvalState)
        ));
        assert!(matches!(
            build_product(&h, SatMode::WeightedByPi, Some(0)),
            Err(CheckError::UnexpectedEvalState)
        ));
    }

    #[test]
    fn product_labels_carry_no_observation_sets() {
        let h = f1();
        let d = build_product(&h, SatMode::WeightedByPi, None).unwrap();
        for set in &d.labels {
            assert!(set.iter().all(|a| !matches!(a, AtomicProp::ObsSet(_))));
        }
        // Membership is decided lazily from the back-reference.
        assert!(d.satisfies_atom(0, &AtomicProp::obs_set([0, 1])));
        assert!(!d.satisfies_atom(0, &AtomicProp::obs_set([1])));
    }

    #[test]
    fn rewrite_replaces_observation_next() {
        let f = PathFormula::next_obs([1], PathFormula::named("a"));
        let rewritten = rewrite_obs_next(&f);
        let expected = PathFormula::and(
            PathFormula::state(StateFormula::Atom(AtomicProp::obs_set([1]))),
            PathFormula::next_plain(PathFormula::named("a")),
        );
        assert_eq!(rewritten, expected);
    }

    #[test]
    fn rewrite_is_identity_on_next_free_formulas() {
        let f = PathFormula::until(PathFormula::named("a"), PathFormula::named("b"));
        assert_eq!(rewrite_obs_next(&f), f);
    }

    #[test]
    fn rewrite_handles_nested_next_chains() {
        let f = PathFormula::next_obs(
            [3, 4, 6],
            PathFormula::next_obs([3, 4, 11], PathFormula::state(StateFormula::True)),
        );
        let rewritten = rewrite_obs_next(&f);
        let expected = PathFormula::and(
            PathFormula::state(StateFormula::Atom(AtomicProp::obs_set([3, 4, 6]))),
            PathFormula::next_plain(PathFormula::and(
                PathFormula::state(StateFormula::Atom(AtomicProp::obs_set([3, 4, 11]))),
                PathFormula::next_plain(PathFormula::state(StateFormula::True)),
            )),
        );
        assert_eq!(rewritten, expected);
    }

    #[test]
    fn rewritten_formula_allocates_one_atom_per_observation_set() {
        let f = PathFormula::next_obs(
            [0],
            PathFormula::next_obs([1], PathFormula::next_obs([0, 1], PathFormula::named("a"))),
        );
        let rewritten = rewrite_obs_next(&f);
        let mut sets = Vec::new();
        collect_obs_atoms(&rewritten, &mut sets);
        assert_eq!(sets.len(), 3);
        let distinct: std::collections::BTreeSet<_> = sets.into_iter().collect();
        assert_eq!(distinct.len(), 3);
    }

    fn collect_obs_atoms(f: &PathFormula, out: &mut Vec<BTreeSet<usize>>) {
        match f {
            PathFormula::State(inner) => {
                if let StateFormula::Atom(AtomicProp::ObsSet(set)) = inner.as_ref() {
                    out.push(set.clone());
                }
            }
            PathFormula::Not(g) | PathFormula::NextObs(_, g) | PathFormula::NextPlain(g) => {
                collect_obs_atoms(g, out)
            }
            PathFormula::And(l, r)
            | PathFormula::Or(l, r)
            | PathFormula::BoundedUntil(l, _, r)
            | PathFormula::Until(l, r) => {
                collect_obs_atoms(l, out);
                collect_obs_atoms(r, out);
            }
        }
    }
}
