//! Reference evaluator: exact, enumeration-based ground truth for every
//! probabilistic answer in the crate.
//!
//! Satisfaction of a path formula on a finite prefix is decided by the
//! literal semantic clauses. The probability mass of the satisfying prefixes
//! is accumulated backward over positions, grouping prefixes by the truth
//! assignment they induce on the formula's closure, which sums the same
//! cylinder measures as one-by-one path enumeration without repeating shared
//! suffix sums. All arithmetic is exact dyadic rational; results convert to
//! float on return. Unbounded untils are truncated pessimistically at the
//! supplied horizon: unresolved paths count as failures, making every
//! reported value a certified lower bound.

mod dyadic;

pub use dyadic::Dyadic;

use std::collections::{BTreeMap, BTreeSet};

use crate::model::{AtomicProp, Dtmc, Hmm, SatMode};
use crate::syntax::ast::{PathFormula, ProbBound, StateFormula};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum OracleError {
    #[error("formula contains an unbounded until; a truncation horizon is required")]
    HorizonRequired,
    #[error("formula closure needs {entries} truth bits, more than the supported 63")]
    FormulaTooLarge { entries: usize },
    #[error("atom '{0}' cannot be decided on this model")]
    UnsupportedAtom(String),
    #[error("nested probability operators are not supported on bare chains")]
    NestedProbabilityOnChain,
    #[error("state index {index} out of range for a model with {n} states")]
    StateOutOfRange { index: usize, n: usize },
}

/// Maximum lookahead needed to decide `f` on any path: `None` when an
/// unbounded until makes every finite lookahead insufficient.
pub fn bound_horizon(f: &PathFormula) -> Option<u64> {
    match f {
        PathFormula::State(_) => Some(0),
        PathFormula::Not(g) => bound_horizon(g),
        PathFormula::And(l, r) | PathFormula::Or(l, r) => {
            Some(bound_horizon(l)?.max(bound_horizon(r)?))
        }
        PathFormula::NextObs(_, g) | PathFormula::NextPlain(g) => Some(1 + bound_horizon(g)?),
        PathFormula::BoundedUntil(l, n, r) => {
            Some(u64::from(*n) + bound_horizon(l)?.max(bound_horizon(r)?))
        }
        PathFormula::Until(..) => None,
    }
}

/// Probability that a path from state `s` satisfies `f`, under the measure
/// selected by `mode`. A horizon must be supplied when `f` contains an
/// unbounded until; when both a bound and a horizon exist the larger wins.
pub fn oracle_probability(
    h: &Hmm,
    s: usize,
    f: &PathFormula,
    mode: SatMode,
    horizon: Option<u64>,
) -> Result<f64, OracleError> {
    if s >= h.n {
        return Err(OracleError::StateOutOfRange { index: s, n: h.n });
    }
    let v = oracle_state_dyadics(h, f, mode, horizon)?;
    Ok(v[s].to_f64())
}

/// Per-state probabilities of `f`, as floats.
pub fn oracle_state_probabilities(
    h: &Hmm,
    f: &PathFormula,
    mode: SatMode,
    horizon: Option<u64>,
) -> Result<Vec<f64>, OracleError> {
    Ok(oracle_state_dyadics(h, f, mode, horizon)?
        .iter()
        .map(Dyadic::to_f64)
        .collect())
}

/// States satisfying a full state formula under the two-level semantics,
/// with nested probability operators resolved recursively and compared to
/// their bounds in exact arithmetic.
pub fn oracle_check_state_formula(
    h: &Hmm,
    f: &StateFormula,
    mode: SatMode,
    horizon: Option<u64>,
) -> Result<BTreeSet<usize>, OracleError> {
    let mut states = BTreeSet::new();
    for s in 0..h.n {
        if decide_state_formula(h, s, f, mode, horizon)? {
            states.insert(s);
        }
    }
    Ok(states)
}

/// Initial-mass-weighted probability that a path of the chain satisfies `f`.
/// Chain formulas are observation-free; atoms are decided from labels and
/// observation back-references.
pub fn dtmc_probability(
    d: &Dtmc,
    f: &PathFormula,
    horizon: Option<u64>,
) -> Result<f64, OracleError> {
    let per_state = dtmc_state_dyadics(d, f, horizon)?;
    let mut total = Dyadic::zero();
    for (u, value) in per_state.iter().enumerate() {
        if d.init[u] != 0.0 {
            total = total.add(&Dyadic::from_f64(d.init[u]).mul(value));
        }
    }
    Ok(total.to_f64())
}

/// Exact per-state satisfaction probabilities over an HMM.
pub fn oracle_state_dyadics(
    h: &Hmm,
    f: &PathFormula,
    mode: SatMode,
    horizon: Option<u64>,
) -> Result<Vec<Dyadic>, OracleError> {
    let lookahead = effective_horizon(f, horizon)?;
    let closure = Closure::build(f)?;

    let sites = h.n;
    let mut leaf_bits = vec![vec![false; closure.state_leaves.len()]; sites];
    for (site, bits) in leaf_bits.iter_mut().enumerate() {
        for (k, leaf) in closure.state_leaves.iter().enumerate() {
            bits[k] = decide_state_formula(h, site, leaf, mode, horizon)?;
        }
    }

    let emissions: Vec<Vec<(usize, Dyadic)>> = (0..sites)
        .map(|s| {
            (0..h.m)
                .filter(|&o| h.b[s][o] > 0.0)
                .map(|o| (o, Dyadic::from_f64(h.b[s][o])))
                .collect()
        })
        .collect();
    let transitions: Vec<Vec<(usize, Dyadic)>> = (0..sites)
        .map(|s| {
            (0..h.n)
                .filter(|&t| h.a[s][t] > 0.0)
                .map(|t| (t, Dyadic::from_f64(h.a[s][t])))
                .collect()
        })
        .collect();

    let per_state = run_backward(&closure, &leaf_bits, &emissions, &transitions, lookahead);
    Ok(per_state
        .into_iter()
        .enumerate()
        .map(|(s, value)| match mode {
            SatMode::PerState => value,
            SatMode::WeightedByPi => Dyadic::from_f64(h.pi[s]).mul(&value),
        })
        .collect())
}

/// Exact per-state satisfaction probabilities over a chain.
pub fn dtmc_state_dyadics(
    d: &Dtmc,
    f: &PathFormula,
    horizon: Option<u64>,
) -> Result<Vec<Dyadic>, OracleError> {
    let lookahead = effective_horizon(f, horizon)?;
    let closure = Closure::build(f)?;

    let sites = d.len();
    let mut leaf_bits = vec![vec![false; closure.state_leaves.len()]; sites];
    for (site, bits) in leaf_bits.iter_mut().enumerate() {
        for (k, leaf) in closure.state_leaves.iter().enumerate() {
            bits[k] = decide_chain_state_formula(d, site, leaf)?;
        }
    }

    // A chain state is its own single "emission": the observation
    // back-reference feeds any observation test, with weight one.
    let emissions: Vec<Vec<(usize, Dyadic)>> = (0..sites)
        .map(|u| vec![(d.states[u].observation, Dyadic::one())])
        .collect();
    let transitions: Vec<Vec<(usize, Dyadic)>> = (0..sites)
        .map(|u| {
            (0..sites)
                .filter(|&v| d.t[u][v] > 0.0)
                .map(|v| (v, Dyadic::from_f64(d.t[u][v])))
                .collect()
        })
        .collect();

    Ok(run_backward(
        &closure,
        &leaf_bits,
        &emissions,
        &transitions,
        lookahead,
    ))
}

fn effective_horizon(f: &PathFormula, horizon: Option<u64>) -> Result<u64, OracleError> {
    match (bound_horizon(f), horizon) {
        (Some(bound), Some(supplied)) => Ok(bound.max(supplied)),
        (Some(bound), None) => Ok(bound),
        (None, Some(supplied)) => Ok(supplied),
        (None, None) => Err(OracleError::HorizonRequired),
    }
}

/// Decide a state formula at an HMM state, resolving nested probability
/// operators through the oracle and comparing bounds exactly.
fn decide_state_formula(
    h: &Hmm,
    s: usize,
    f: &StateFormula,
    mode: SatMode,
    horizon: Option<u64>,
) -> Result<bool, OracleError> {
    Ok(match f {
        StateFormula::True => true,
        StateFormula::False => false,
        StateFormula::Atom(AtomicProp::Named(name)) => h.labels[s].contains(name),
        StateFormula::Atom(other) => {
            return Err(OracleError::UnsupportedAtom(other.to_string()))
        }
        StateFormula::Not(inner) => !decide_state_formula(h, s, inner, mode, horizon)?,
        StateFormula::And(l, r) => {
            decide_state_formula(h, s, l, mode, horizon)?
                && decide_state_formula(h, s, r, mode, horizon)?
        }
        StateFormula::Or(l, r) => {
            decide_state_formula(h, s, l, mode, horizon)?
                || decide_state_formula(h, s, r, mode, horizon)?
        }
        StateFormula::Prob(bound, p, body) => {
            let v = oracle_state_dyadics(h, body, mode, horizon)?;
            compare_exact(*bound, &v[s], *p)
        }
    })
}

fn decide_chain_state_formula(
    d: &Dtmc,
    u: usize,
    f: &StateFormula,
) -> Result<bool, OracleError> {
    Ok(match f {
        StateFormula::True => true,
        StateFormula::False => false,
        StateFormula::Atom(atom) => d.satisfies_atom(u, atom),
        StateFormula::Not(inner) => !decide_chain_state_formula(d, u, inner)?,
        StateFormula::And(l, r) => {
            decide_chain_state_formula(d, u, l)? && decide_chain_state_formula(d, u, r)?
        }
        StateFormula::Or(l, r) => {
            decide_chain_state_formula(d, u, l)? || decide_chain_state_formula(d, u, r)?
        }
        StateFormula::Prob(..) => return Err(OracleError::NestedProbabilityOnChain),
    })
}

fn compare_exact(bound: ProbBound, value: &Dyadic, p: f64) -> bool {
    let p = Dyadic::from_f64(p);
    match bound {
        ProbBound::Lt => *value < p,
        ProbBound::Le => *value <= p,
        ProbBound::Gt => *value > p,
        ProbBound::Ge => *value >= p,
    }
}

/// One closure entry. Entries are stored in evaluation order: every child id
/// is smaller than its parent, so one left-to-right pass per position fills
/// the truth word, reading next-position truth from the previous pass.
enum Entry {
    StateLeaf(usize),
    Not(usize),
    And(usize, usize),
    Or(usize, usize),
    NextObs { set: usize, child: usize },
    NextPlain(usize),
    Until { lhs: usize, rhs: usize },
    /// `φ U≤k ψ` for one residual count `k`; `next` addresses the residual
    /// `k−1` entry, absent at `k = 0`.
    BoundedStep {
        lhs: usize,
        rhs: usize,
        next: Option<usize>,
    },
}

struct Closure<'a> {
    entries: Vec<Entry>,
    state_leaves: Vec<&'a StateFormula>,
    obs_sets: Vec<&'a BTreeSet<usize>>,
    root: usize,
}

impl<'a> Closure<'a> {
    fn build(f: &'a PathFormula) -> Result<Self, OracleError> {
        let mut closure = Closure {
            entries: Vec::new(),
            state_leaves: Vec::new(),
            obs_sets: Vec::new(),
            root: 0,
        };
        closure.root = closure.add(f)?;
        Ok(closure)
    }

    fn push(&mut self, entry: Entry) -> Result<usize, OracleError> {
        self.entries.push(entry);
        let id = self.entries.len() - 1;
        if id >= 63 {
            return Err(OracleError::FormulaTooLarge {
                entries: self.entries.len(),
            });
        }
        Ok(id)
    }

    fn add(&mut self, f: &'a PathFormula) -> Result<usize, OracleError> {
        match f {
            PathFormula::State(inner) => {
                self.state_leaves.push(inner);
                let leaf = self.state_leaves.len() - 1;
                self.push(Entry::StateLeaf(leaf))
            }
            PathFormula::Not(g) => {
                let child = self.add(g)?;
                self.push(Entry::Not(child))
            }
            PathFormula::And(l, r) => {
                let lhs = self.add(l)?;
                let rhs = self.add(r)?;
                self.push(Entry::And(lhs, rhs))
            }
            PathFormula::Or(l, r) => {
                let lhs = self.add(l)?;
                let rhs = self.add(r)?;
                self.push(Entry::Or(lhs, rhs))
            }
            PathFormula::NextObs(set, g) => {
                self.obs_sets.push(set);
                let set_id = self.obs_sets.len() - 1;
                let child = self.add(g)?;
                self.push(Entry::NextObs {
                    set: set_id,
                    child,
                })
            }
            PathFormula::NextPlain(g) => {
                let child = self.add(g)?;
                self.push(Entry::NextPlain(child))
            }
            PathFormula::Until(l, r) => {
                let lhs = self.add(l)?;
                let rhs = self.add(r)?;
                self.push(Entry::Until { lhs, rhs })
            }
            PathFormula::BoundedUntil(l, n, r) => {
                let lhs = self.add(l)?;
                let rhs = self.add(r)?;
                let mut prev = None;
                for _ in 0..=*n {
                    let id = self.push(Entry::BoundedStep {
                        lhs,
                        rhs,
                        next: prev,
                    })?;
                    prev = Some(id);
                }
                Ok(prev.expect("at least the zero-residual entry"))
            }
        }
    }

    /// Truth word at the current position, from this position's letter and
    /// the next position's truth word. A zero `tau_next` is exactly the
    /// end-of-path case: every reference beyond the end is pessimistically
    /// false.
    fn step(&self, leaf_bits: &[bool], obs: usize, tau_next: u64) -> u64 {
        let mut bits: u64 = 0;
        let get = |word: u64, id: usize| (word >> id) & 1 == 1;
        for (id, entry) in self.entries.iter().enumerate() {
            let value = match entry {
                Entry::StateLeaf(leaf) => leaf_bits[*leaf],
                Entry::Not(c) => !get(bits, *c),
                Entry::And(a, b) => get(bits, *a) && get(bits, *b),
                Entry::Or(a, b) => get(bits, *a) || get(bits, *b),
                Entry::NextObs { set, child } => {
                    self.obs_sets[*set].contains(&obs) && get(tau_next, *child)
                }
                Entry::NextPlain(c) => get(tau_next, *c),
                Entry::Until { lhs, rhs } => {
                    get(bits, *rhs) || (get(bits, *lhs) && get(tau_next, id))
                }
                Entry::BoundedStep { lhs, rhs, next } => {
                    get(bits, *rhs)
                        || next.is_some_and(|k| get(bits, *lhs) && get(tau_next, k))
                }
            };
            if value {
                bits |= 1 << id;
            }
        }
        bits
    }

    fn root_holds(&self, word: u64) -> bool {
        (word >> self.root) & 1 == 1
    }
}

fn bump(map: &mut BTreeMap<u64, Dyadic>, key: u64, value: Dyadic) {
    match map.get_mut(&key) {
        Some(existing) => *existing = existing.add(&value),
        None => {
            map.insert(key, value);
        }
    }
}

/// Backward accumulation of suffix measures grouped by induced truth word.
/// Position `lookahead` seeds the tables; each earlier position mixes the
/// successor tables through the transition weights and applies one truth
/// step. Returns, per site, the mass of all prefixes whose truth word makes
/// the root formula hold at position zero.
fn run_backward(
    closure: &Closure,
    leaf_bits: &[Vec<bool>],
    emissions: &[Vec<(usize, Dyadic)>],
    transitions: &[Vec<(usize, Dyadic)>],
    lookahead: u64,
) -> Vec<Dyadic> {
    let sites = emissions.len();
    let mut table: Vec<BTreeMap<u64, Dyadic>> = (0..sites)
        .map(|site| {
            let mut map = BTreeMap::new();
            for (obs, weight) in &emissions[site] {
                let word = closure.step(&leaf_bits[site], *obs, 0);
                bump(&mut map, word, weight.clone());
            }
            map
        })
        .collect();

    for _ in 0..lookahead {
        // Mass over next-position truth words, mixed through the transitions.
        let mixed: Vec<BTreeMap<u64, Dyadic>> = (0..sites)
            .map(|site| {
                let mut acc = BTreeMap::new();
                for (succ, weight) in &transitions[site] {
                    for (word, mass) in &table[*succ] {
                        bump(&mut acc, *word, weight.mul(mass));
                    }
                }
                acc
            })
            .collect();
        table = (0..sites)
            .map(|site| {
                let mut map = BTreeMap::new();
                for (obs, weight) in &emissions[site] {
                    for (word, mass) in &mixed[site] {
                        let here = closure.step(&leaf_bits[site], *obs, *word);
                        bump(&mut map, here, weight.mul(mass));
                    }
                }
                map
            })
            .collect();
    }

    table
        .into_iter()
        .map(|map| {
            let mut total = Dyadic::zero();
            for (word, mass) in map {
                if closure.root_holds(word) {
                    total = total.add(&mass);
                }
            }
            total
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{f1, f2};
    use crate::model::{cylinder_probability, FinitePath};
    use crate::syntax::parse_formula;

    fn body_of(text: &str) -> PathFormula {
        match parse_formula(text).unwrap() {
            StateFormula::Prob(_, _, body) => *body,
            other => panic!("expected a probability formula, got {other:?}"),
        }
    }

    #[test]
    fn horizon_of_nested_nexts() {
        let f = body_of("P[>0](X_{0}(X_{1}T))");
        assert_eq!(bound_horizon(&f), Some(2));
    }

    #[test]
    fn horizon_of_unbounded_until_is_none() {
        let f = body_of("P[>0](a U b)");
        assert_eq!(bound_horizon(&f), None);
        assert_eq!(
            oracle_probability(&f1(), 0, &f, SatMode::PerState, None),
            Err(OracleError::HorizonRequired)
        );
    }

    #[test]
    fn horizon_of_bounded_until_adds_the_bound() {
        let f = body_of("P[>0](a U<=3 X_{1}b)");
        assert_eq!(bound_horizon(&f), Some(4));
    }

    #[test]
    fn next_observation_probability_is_one_half() {
        let f = body_of("P[>0](X_{0}b)");
        let p = oracle_probability(&f1(), 0, &f, SatMode::PerState, None).unwrap();
        assert_eq!(p, 0.5);
        let p1 = oracle_probability(&f1(), 1, &f, SatMode::PerState, None).unwrap();
        assert_eq!(p1, 0.0);
    }

    #[test]
    fn truth_has_probability_one() {
        let f = body_of("P[>0](T)");
        for h in [f1(), f2()] {
            for s in 0..h.n {
                let p = oracle_probability(&h, s, &f, SatMode::PerState, None).unwrap();
                assert_eq!(p, 1.0);
            }
        }
    }

    #[test]
    fn truncated_until_is_one_minus_two_to_minus_sixty() {
        let f = body_of("P[>0](a U b)");
        let v = oracle_state_dyadics(&f1(), &f, SatMode::PerState, Some(60)).unwrap();
        let mut expected = Dyadic::one();
        let half = Dyadic::from_f64(0.5);
        for _ in 0..60 {
            expected = expected.mul(&half);
        }
        let expected = Dyadic::one().sub(&expected);
        assert_eq!(v[0], expected);
        assert!((v[0].to_f64() - 1.0).abs() < 1e-6);
        assert_eq!(v[1], Dyadic::one());
    }

    #[test]
    fn weighted_mode_multiplies_by_pi() {
        let f = body_of("P[>0](X_{0}b)");
        let per = oracle_state_dyadics(&f1(), &f, SatMode::PerState, None).unwrap();
        let weighted = oracle_state_dyadics(&f1(), &f, SatMode::WeightedByPi, None).unwrap();
        for s in 0..2 {
            assert_eq!(weighted[s], Dyadic::from_f64(0.5).mul(&per[s]));
        }
    }

    #[test]
    fn state_formula_sets_match_hand_computation() {
        let h = f1();
        let sets = oracle_check_state_formula(
            &h,
            &parse_formula("P[>=0.4](X_{0}b)").unwrap(),
            SatMode::PerState,
            None,
        )
        .unwrap();
        assert_eq!(sets, [0].into_iter().collect());

        let all = oracle_check_state_formula(&h, &StateFormula::True, SatMode::PerState, None)
            .unwrap();
        assert_eq!(all, [0, 1].into_iter().collect());
    }

    #[test]
    fn alternating_emission_chain_probability() {
        // From s0 the only way to emit 0,1,0,1 is the state sequence
        // s0,s1,s0,s1: three transitions of one half each.
        let h = f1();
        let f = body_of("P[>0.88](X_{0}(X_{1}(X_{0}(X_{1}T))))");
        let p0 = oracle_probability(&h, 0, &f, SatMode::PerState, None).unwrap();
        assert_eq!(p0, 0.125);
        let p1 = oracle_probability(&h, 1, &f, SatMode::PerState, None).unwrap();
        assert_eq!(p1, 0.0);

        // 0.125 clears a 0.1 bound but not the 0.88 one.
        let strict = oracle_check_state_formula(
            &h,
            &parse_formula("P[>0.88](X_{0}(X_{1}(X_{0}(X_{1}T))))").unwrap(),
            SatMode::PerState,
            None,
        )
        .unwrap();
        assert!(strict.is_empty());
        let loose = oracle_check_state_formula(
            &h,
            &parse_formula("P[>0.1](X_{0}(X_{1}(X_{0}(X_{1}T))))").unwrap(),
            SatMode::PerState,
            None,
        )
        .unwrap();
        assert_eq!(loose, [0].into_iter().collect());
    }

    #[test]
    fn nested_probability_resolves_recursively() {
        let h = f1();
        let sets = oracle_check_state_formula(
            &h,
            &parse_formula("P[>=0.2](X_{1}P[>=0.4](X_{0}b))").unwrap(),
            SatMode::PerState,
            None,
        )
        .unwrap();
        assert_eq!(sets, [1].into_iter().collect());
    }

    #[test]
    fn complement_sums_to_one_exactly() {
        let h = f1();
        for text in ["P[>0](X_{0}b)", "P[>0](a U<=3 b)", "P[>0](X_{0}(a U<=2 b))"] {
            let f = body_of(text);
            let yes = oracle_state_dyadics(&h, &f, SatMode::PerState, None).unwrap();
            let no = oracle_state_dyadics(
                &h,
                &PathFormula::not(f.clone()),
                SatMode::PerState,
                None,
            )
            .unwrap();
            for s in 0..h.n {
                assert_eq!(yes[s].add(&no[s]), Dyadic::one(), "{text} at state {s}");
            }
        }
    }

    #[test]
    fn truncation_is_monotone_in_horizon() {
        let h = f1();
        let f = body_of("P[>0](a U b)");
        let mut last = Dyadic::zero();
        for horizon in [0, 1, 2, 5, 10, 20] {
            let v = oracle_state_dyadics(&h, &f, SatMode::PerState, Some(horizon)).unwrap();
            assert!(v[0] >= last);
            last = v[0].clone();
        }
    }

    /// Literal path-by-path enumeration, used to certify the grouped sums.
    fn enumerate_probability(
        h: &Hmm,
        start: usize,
        f: &PathFormula,
        mode: SatMode,
        lookahead: u64,
    ) -> Dyadic {
        fn decide(h: &Hmm, f: &PathFormula, path: &[(usize, usize)], j: usize) -> bool {
            if j >= path.len() {
                return false;
            }
            match f {
                PathFormula::State(inner) => decide_state(h, inner, path[j].0),
                PathFormula::Not(g) => !decide(h, g, path, j),
                PathFormula::And(l, r) => decide(h, l, path, j) && decide(h, r, path, j),
                PathFormula::Or(l, r) => decide(h, l, path, j) || decide(h, r, path, j),
                PathFormula::NextObs(set, g) => {
                    set.contains(&path[j].1) && decide(h, g, path, j + 1)
                }
                PathFormula::NextPlain(g) => decide(h, g, path, j + 1),
                PathFormula::BoundedUntil(l, n, r) => (j..path.len())
                    .take(*n as usize + 1)
                    .any(|k| {
                        decide(h, r, path, k) && (j..k).all(|i| decide(h, l, path, i))
                    }),
                PathFormula::Until(l, r) => (j..path.len()).any(|k| {
                    decide(h, r, path, k) && (j..k).all(|i| decide(h, l, path, i))
                }),
            }
        }
        fn decide_state(h: &Hmm, f: &StateFormula, s: usize) -> bool {
            match f {
                StateFormula::True => true,
                StateFormula::False => false,
                StateFormula::Atom(AtomicProp::Named(name)) => h.labels[s].contains(name),
                StateFormula::Atom(_) | StateFormula::Prob(..) => {
                    panic!("literal enumerator handles named atoms only")
                }
                StateFormula::Not(inner) => !decide_state(h, inner, s),
                StateFormula::And(l, r) => decide_state(h, l, s) && decide_state(h, r, s),
                StateFormula::Or(l, r) => decide_state(h, l, s) || decide_state(h, r, s),
            }
        }

        let mut total = Dyadic::zero();
        let len = lookahead as usize + 1;
        let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(len);
        fn recurse(
            h: &Hmm,
            f: &PathFormula,
            mode: SatMode,
            pairs: &mut Vec<(usize, usize)>,
            len: usize,
            total: &mut Dyadic,
        ) {
            if pairs.len() == len {
                if decide(h, f, pairs, 0) {
                    let path = FinitePath::new(pairs.clone()).unwrap();
                    let p = cylinder_probability(h, mode, &path).unwrap();
                    *total = total.add(&Dyadic::from_f64(p));
                }
                return;
            }
            let (prev, _) = *pairs.last().unwrap();
            for s in (0..h.n).filter(|&s| h.a[prev][s] > 0.0) {
                for o in (0..h.m).filter(|&o| h.b[s][o] > 0.0) {
                    pairs.push((s, o));
                    recurse(h, f, mode, pairs, len, total);
                    pairs.pop();
                }
            }
        }
        for o in (0..h.m).filter(|&o| h.b[start][o] > 0.0) {
            pairs.push((start, o));
            recurse(h, f, mode, &mut pairs, len, &mut total);
            pairs.pop();
        }
        total
    }

    /// The cylinder measure of a path is a product of floats; the grouped
    /// backward sum multiplies the same factors in a different order. Both
    /// are exact in dyadic arithmetic over the same rational inputs, but the
    /// enumerator converts each product to `f64` only at the very end, so the
    /// two agree exactly only when every per-path product is representable.
    /// On the fixtures every factor is a power of two, which makes the match
    /// exact; the random cross-check below allows for that one rounding.
    #[test]
    fn grouped_sums_match_literal_enumeration_on_fixtures() {
        let h = f1();
        for text in [
            "P[>0](X_{0}b)",
            "P[>0](a U<=3 b)",
            "P[>0](!(X_{0}a) & X_{0,1}(a U<=1 b))",
            "P[>0](X_{0}(X_{1}(X_{0}(X_{1}T))))",
        ] {
            let f = body_of(text);
            let lookahead = bound_horizon(&f).unwrap();
            for s in 0..h.n {
                let grouped = oracle_state_dyadics(&h, &f, SatMode::PerState, None).unwrap();
                let literal = enumerate_probability(&h, s, &f, SatMode::PerState, lookahead);
                assert_eq!(grouped[s], literal, "{text} from state {s}");
            }
        }
    }

    #[test]
    fn grouped_sums_match_literal_enumeration_on_a_lopsided_model() {
        let mut h = f1();
        h.a = vec![vec![0.25, 0.75], vec![0.6, 0.4]];
        h.b = vec![vec![0.9, 0.1], vec![0.2, 0.8]];
        let f = body_of("P[>0](X_{0}(a U<=2 b))");
        let lookahead = bound_horizon(&f).unwrap();
        for s in 0..h.n {
            let grouped = oracle_state_dyadics(&h, &f, SatMode::PerState, None).unwrap();
            let literal = enumerate_probability(&h, s, &f, SatMode::PerState, lookahead);
            let diff = grouped[s].sub(&literal).to_f64().abs();
            assert!(diff < 1e-12, "state {s}: diff {diff}");
        }
    }

    #[test]
    fn dtmc_probability_matches_hmm_oracle_after_stage_two() {
        use crate::product::{build_product, rewrite_obs_next};
        let h = f1();
        let f = body_of("P[>0](X_{0,1}(a U<=2 b))");
        let rewritten = rewrite_obs_next(&f);
        for s in 0..h.n {
            let d = build_product(&h, SatMode::PerState, Some(s)).unwrap();
            let chain_p = dtmc_probability(&d, &rewritten, None).unwrap();
            let hmm_p = oracle_probability(&h, s, &f, SatMode::PerState, None).unwrap();
            assert!((chain_p - hmm_p).abs() < 1e-12);
        }
    }

    #[test]
    fn closure_size_is_limited() {
        let mut f = PathFormula::named("a");
        for _ in 0..70 {
            f = PathFormula::next_plain(f);
        }
        assert_eq!(
            Closure::build(&f).err(),
            Some(OracleError::FormulaTooLarge { entries: 64 })
        );
    }
}
