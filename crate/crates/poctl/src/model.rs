//! Hidden Markov models, product chains, and the cylinder-set measure.

use std::collections::BTreeSet;
use std::fmt;

/// Tolerance used for all stochasticity checks (row sums, distributions).
pub const STOCHASTIC_TOL: f64 = 1e-9;

/// Atomic propositions as they appear on states and in formulas.
///
/// `Named` atoms come from the model's alphabet. `ObsSet` atoms stand for an
/// observation set Ω and are never stored in label sets: a product state
/// `(s, o)` satisfies `ObsSet(Ω)` iff `o ∈ Ω`, decided on demand. `Fresh`
/// atoms label states once a resolved state subformula has been substituted,
/// and `Xi` atoms mark the positive copy of a split state after a temporal
/// operator has been eliminated.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum AtomicProp {
    Named(String),
    ObsSet(BTreeSet<usize>),
    Fresh(u32),
    Xi(u32),
}

impl AtomicProp {
    pub fn named(name: &str) -> Self {
        AtomicProp::Named(name.to_owned())
    }

    pub fn obs_set<I: IntoIterator<Item = usize>>(obs: I) -> Self {
        AtomicProp::ObsSet(obs.into_iter().collect())
    }
}

impl fmt::Display for AtomicProp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AtomicProp::Named(name) => write!(f, "{name}"),
            AtomicProp::ObsSet(obs) => {
                write!(f, "{{")?;
                for (i, o) in obs.iter().enumerate() {
                    if i > 0 {
                        write!(f, ",")?;
                    }
                    write!(f, "{o}")?;
                }
                write!(f, "}}")
            }
            AtomicProp::Fresh(k) => write!(f, "@f{k}"),
            AtomicProp::Xi(k) => write!(f, "@x{k}"),
        }
    }
}

/// Which measure the checker evaluates satisfaction probabilities under.
///
/// `PerState` treats the state under evaluation as if it were the initial
/// state with mass one; `WeightedByPi` keeps the model's initial-distribution
/// factor `π_s` in every measure.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SatMode {
    PerState,
    WeightedByPi,
}

/// A labelled hidden Markov model `(S, A, Θ, B, L, π)`.
///
/// States and observations are 0-indexed. Zero-probability entries are kept
/// in the dense matrices; path validity is a property of [`FinitePath`].
#[derive(Debug, Clone, PartialEq)]
pub struct Hmm {
    /// Number of hidden states.
    pub n: usize,
    /// Number of observations.
    pub m: usize,
    /// `n×n` state transition matrix, `a[i][j] = P[S_j | S_i]`.
    pub a: Vec<Vec<f64>>,
    /// `n×m` observation matrix, `b[j][k] = P[v_k | S_j]`.
    pub b: Vec<Vec<f64>>,
    /// Label map `L(s)`, one set of named propositions per state.
    pub labels: Vec<BTreeSet<String>>,
    /// The proposition alphabet the labels are drawn from.
    pub alphabet: BTreeSet<String>,
    /// Initial distribution over states.
    pub pi: Vec<f64>,
}

impl Hmm {
    pub fn new(
        a: Vec<Vec<f64>>,
        b: Vec<Vec<f64>>,
        labels: Vec<BTreeSet<String>>,
        alphabet: BTreeSet<String>,
        pi: Vec<f64>,
    ) -> Self {
        let n = a.len();
        let m = b.first().map_or(0, Vec::len);
        Hmm {
            n,
            m,
            a,
            b,
            labels,
            alphabet,
            pi,
        }
    }
}

/// Nonempty sequence of `(state, observation)` pairs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FinitePath {
    pairs: Vec<(usize, usize)>,
}

impl FinitePath {
    pub fn new(pairs: Vec<(usize, usize)>) -> Result<Self, ModelError> {
        if pairs.is_empty() {
            return Err(ModelError::EmptyPath);
        }
        Ok(FinitePath { pairs })
    }

    pub fn pairs(&self) -> &[(usize, usize)] {
        &self.pairs
    }

    /// A path is valid for `h` when every transition and emission it uses has
    /// positive probability.
    pub fn is_valid(&self, h: &Hmm) -> bool {
        let in_range = self
            .pairs
            .iter()
            .all(|&(s, o)| s < h.n && o < h.m);
        if !in_range {
            return false;
        }
        let emissions_ok = self.pairs.iter().all(|&(s, o)| h.b[s][o] > 0.0);
        let transitions_ok = self
            .pairs
            .windows(2)
            .all(|w| h.a[w[0].0][w[1].0] > 0.0);
        emissions_ok && transitions_ok
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ModelError {
    #[error("a finite path must contain at least one pair")]
    EmptyPath,
    #[error("pair ({state}, {obs}) is out of range for a model with {n} states and {m} observations")]
    PairOutOfRange {
        state: usize,
        obs: usize,
        n: usize,
        m: usize,
    },
}

/// Probability mass of the basic cylinder set induced by `path`.
///
/// Computes `π_s · b_s(o_0) · ∏ a_{s_{i-1}s_i} b_{s_i}(o_i)`, with the `π_s`
/// factor replaced by one in [`SatMode::PerState`].
pub fn cylinder_probability(
    h: &Hmm,
    mode: SatMode,
    path: &FinitePath,
) -> Result<f64, ModelError> {
    let pairs = path.pairs();
    for &(s, o) in pairs {
        if s >= h.n || o >= h.m {
            return Err(ModelError::PairOutOfRange {
                state: s,
                obs: o,
                n: h.n,
                m: h.m,
            });
        }
    }
    let (s0, o0) = pairs[0];
    let mut product = h.b[s0][o0];
    for w in pairs.windows(2) {
        let (prev, _) = w[0];
        let (next, obs) = w[1];
        product *= h.a[prev][next] * h.b[next][obs];
    }
    Ok(match mode {
        SatMode::PerState => product,
        SatMode::WeightedByPi => h.pi[s0] * product,
    })
}

/// One state of a product chain: the originating HMM state and observation,
/// plus the ξ decisions accumulated across eliminations in order.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ProductState {
    pub hmm_state: usize,
    pub observation: usize,
    pub xi_bits: Vec<(u32, bool)>,
}

/// Labelled discrete-time Markov chain with per-state initial mass.
#[derive(Debug, Clone, PartialEq)]
pub struct Dtmc {
    pub states: Vec<ProductState>,
    /// Square row-stochastic transition matrix.
    pub t: Vec<Vec<f64>>,
    /// Stored labels per state; `ObsSet` atoms are never stored here.
    pub labels: Vec<BTreeSet<AtomicProp>>,
    /// Initial mass per state.
    pub init: Vec<f64>,
}

impl Dtmc {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Whether `state` satisfies `atom`. `ObsSet` atoms are decided from the
    /// state's observation back-reference, every other kind from the stored
    /// label set.
    pub fn satisfies_atom(&self, state: usize, atom: &AtomicProp) -> bool {
        match atom {
            AtomicProp::ObsSet(obs) => obs.contains(&self.states[state].observation),
            other => self.labels[state].contains(other),
        }
    }

    /// Total initial mass.
    pub fn init_mass(&self) -> f64 {
        self.init.iter().sum()
    }
}

/// A single validation failure, naming the offending entry.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    NoStates,
    Dimension {
        subject: String,
        expected: usize,
        found: usize,
    },
    RowSum {
        matrix: &'static str,
        row: usize,
        sum: f64,
    },
    EntryRange {
        subject: String,
        value: f64,
    },
    DistributionSum {
        which: &'static str,
        sum: f64,
    },
    UnknownLabel {
        state: usize,
        prop: String,
    },
    InitNegative {
        state: usize,
        value: f64,
    },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoStates => write!(f, "no states"),
            Violation::Dimension {
                subject,
                expected,
                found,
            } => write!(f, "{subject} has {found} entries, expected {expected}"),
            Violation::RowSum { matrix, row, sum } => {
                write!(f, "{matrix} row {row} sums to {sum}")
            }
            Violation::EntryRange { subject, value } => {
                write!(f, "{subject} = {value} is outside [0,1]")
            }
            Violation::DistributionSum { which, sum } => {
                write!(f, "{which} sums to {sum}")
            }
            Violation::UnknownLabel { state, prop } => {
                write!(f, "label '{prop}' of state {state} is not in the alphabet")
            }
            Violation::InitNegative { state, value } => {
                write!(f, "initial mass {value} of state {state} is negative")
            }
        }
    }
}

/// Outcome of validating a model or chain: ok, or the list of violations.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, v: Violation) {
        self.violations.push(v);
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_ok() {
            return write!(f, "ok");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                write!(f, "; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

fn check_rows(
    report: &mut ValidationReport,
    matrix: &'static str,
    rows: &[Vec<f64>],
    n_rows: usize,
    n_cols: usize,
) {
    if rows.len() != n_rows {
        report.push(Violation::Dimension {
            subject: format!("{matrix} rows"),
            expected: n_rows,
            found: rows.len(),
        });
        return;
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != n_cols {
            report.push(Violation::Dimension {
                subject: format!("{matrix} row {i}"),
                expected: n_cols,
                found: row.len(),
            });
            continue;
        }
        for (j, &x) in row.iter().enumerate() {
            if !(0.0..=1.0).contains(&x) || x.is_nan() {
                report.push(Violation::EntryRange {
                    subject: format!("{matrix}[{i}][{j}]"),
                    value: x,
                });
            }
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            report.push(Violation::RowSum {
                matrix,
                row: i,
                sum,
            });
        }
    }
}

/// Check every invariant of an [`Hmm`], reporting each violation found.
pub fn validate_hmm(h: &Hmm) -> ValidationReport {
    let mut report = ValidationReport::default();
    if h.n == 0 {
        report.push(Violation::NoStates);
        return report;
    }
    if h.m == 0 {
        report.push(Violation::Dimension {
            subject: "observation count".to_owned(),
            expected: 1,
            found: 0,
        });
        return report;
    }
    check_rows(&mut report, "A", &h.a, h.n, h.n);
    check_rows(&mut report, "B", &h.b, h.n, h.m);
    if h.pi.len() != h.n {
        report.push(Violation::Dimension {
            subject: "pi".to_owned(),
            expected: h.n,
            found: h.pi.len(),
        });
    } else {
        for (i, &x) in h.pi.iter().enumerate() {
            if !(0.0..=1.0).contains(&x) || x.is_nan() {
                report.push(Violation::EntryRange {
                    subject: format!("pi[{i}]"),
                    value: x,
                });
            }
        }
        let sum: f64 = h.pi.iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            report.push(Violation::DistributionSum { which: "pi", sum });
        }
    }
    if h.labels.len() != h.n {
        report.push(Violation::Dimension {
            subject: "labelling".to_owned(),
            expected: h.n,
            found: h.labels.len(),
        });
    } else {
        for (s, label) in h.labels.iter().enumerate() {
            for prop in label {
                if !h.alphabet.contains(prop) {
                    report.push(Violation::UnknownLabel {
                        state: s,
                        prop: prop.clone(),
                    });
                }
            }
        }
    }
    report
}

/// Check every invariant of a [`Dtmc`]: nonempty, square and row-stochastic
/// transition matrix (absorbing and unreachable rows included), nonnegative
/// initial mass summing to one.
pub fn validate_dtmc(d: &Dtmc) -> ValidationReport {
    let mut report = ValidationReport::default();
    let k = d.states.len();
    if k == 0 {
        report.push(Violation::NoStates);
        return report;
    }
    check_rows(&mut report, "T", &d.t, k, k);
    if d.labels.len() != k {
        report.push(Violation::Dimension {
            subject: "labels".to_owned(),
            expected: k,
            found: d.labels.len(),
        });
    }
    if d.init.len() != k {
        report.push(Violation::Dimension {
            subject: "init".to_owned(),
            expected: k,
            found: d.init.len(),
        });
        return report;
    }
    for (i, &x) in d.init.iter().enumerate() {
        if x < 0.0 || x.is_nan() {
            report.push(Violation::InitNegative { state: i, value: x });
        }
    }
    let sum = d.init_mass();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        report.push(Violation::DistributionSum { which: "init", sum });
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{f1, f2};
    use crate::product::build_product;
    use proptest::prelude::*;

    #[test]
    fn f1_validates() {
        assert!(validate_hmm(&f1()).is_ok());
        assert!(validate_hmm(&f2()).is_ok());
    }

    #[test]
    fn bad_transition_row_is_reported() {
        let mut h = f1();
        h.a[0] = vec![0.5, 0.6];
        let report = validate_hmm(&h);
        assert!(!report.is_ok());
        let text = report.to_string();
        assert!(text.contains("A row 0 sums to 1.1"), "got: {text}");
    }

    #[test]
    fn bad_pi_is_reported() {
        let mut h = f1();
        h.pi = vec![1.0, 0.1];
        let report = validate_hmm(&h);
        let text = report.to_string();
        assert!(text.contains("pi sums to 1.1"), "got: {text}");
    }

    #[test]
    fn dimension_mismatch_is_a_distinct_kind() {
        let mut h = f1();
        h.a.push(vec![0.5, 0.5]);
        let report = validate_hmm(&h);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::Dimension { .. })));
    }

    #[test]
    fn label_outside_alphabet_is_reported() {
        let mut h = f1();
        h.labels[0].insert("zz".to_owned());
        let report = validate_hmm(&h);
        assert!(report
            .violations
            .iter()
            .any(|v| matches!(v, Violation::UnknownLabel { state: 0, .. })));
    }

    #[test]
    fn cylinder_weighted_two_pairs() {
        let h = f1();
        let path = FinitePath::new(vec![(0, 0), (1, 1)]).unwrap();
        assert!(path.is_valid(&h));
        let p = cylinder_probability(&h, SatMode::WeightedByPi, &path).unwrap();
        assert!((p - 0.25).abs() < 1e-15);
    }

    #[test]
    fn cylinder_per_state_single_pair() {
        let h = f1();
        let path = FinitePath::new(vec![(0, 0)]).unwrap();
        let p = cylinder_probability(&h, SatMode::PerState, &path).unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn cylinder_identity_chain() {
        let h = f2();
        let path = FinitePath::new(vec![(0, 0), (0, 0), (0, 0)]).unwrap();
        let p = cylinder_probability(&h, SatMode::PerState, &path).unwrap();
        assert_eq!(p, 1.0);
    }

    #[test]
    fn cylinder_rejects_out_of_range_pairs() {
        let h = f1();
        let path = FinitePath::new(vec![(0, 5)]).unwrap();
        assert!(cylinder_probability(&h, SatMode::PerState, &path).is_err());
        assert!(!path.is_valid(&h));
    }

    #[test]
    fn empty_path_is_rejected() {
        assert_eq!(FinitePath::new(vec![]), Err(ModelError::EmptyPath));
    }

    #[test]
    fn stage_two_product_of_f1_validates() {
        let d = build_product(&f1(), SatMode::WeightedByPi, None).unwrap();
        assert!(validate_dtmc(&d).is_ok());
    }

    #[test]
    fn bad_dtmc_row_is_reported() {
        let mut d = build_product(&f1(), SatMode::WeightedByPi, None).unwrap();
        d.t[0] = vec![0.3, 0.3, 0.0, 0.0];
        assert!(!validate_dtmc(&d).is_ok());
    }

    #[test]
    fn empty_dtmc_is_reported() {
        let d = Dtmc {
            states: vec![],
            t: vec![],
            labels: vec![],
            init: vec![],
        };
        let report = validate_dtmc(&d);
        assert_eq!(report.to_string(), "no states");
    }

    /// Sum of per-state cylinder masses over all valid depth-`d` paths from a
    /// fixed start state must be one.
    fn total_mass_from(h: &Hmm, start: usize, depth: usize) -> f64 {
        fn extend(h: &Hmm, prefix: &mut Vec<(usize, usize)>, left: usize, acc: &mut f64) {
            if left == 0 {
                let path = FinitePath::new(prefix.clone()).unwrap();
                *acc += cylinder_probability(h, SatMode::PerState, &path).unwrap();
                return;
            }
            let states: Vec<usize> = match prefix.last() {
                None => unreachable!(),
                Some(&(s, _)) => (0..h.n).filter(|&t| h.a[s][t] > 0.0).collect(),
            };
            for s in states {
                for o in 0..h.m {
                    if h.b[s][o] > 0.0 {
                        prefix.push((s, o));
                        extend(h, prefix, left - 1, acc);
                        prefix.pop();
                    }
                }
            }
        }
        let mut acc = 0.0;
        for o in 0..h.m {
            if h.b[start][o] > 0.0 {
                let mut prefix = vec![(start, o)];
                extend(h, &mut prefix, depth, &mut acc);
            }
        }
        acc
    }

    fn stochastic_rows(n: usize, m: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        proptest::collection::vec(
            proptest::collection::vec(0.05f64..1.0, m).prop_map(|row| {
                let sum: f64 = row.iter().sum();
                row.into_iter().map(|x| x / sum).collect::<Vec<_>>()
            }),
            n,
        )
    }

    fn arb_hmm() -> impl Strategy<Value = Hmm> {
        (2usize..4, 2usize..4).prop_flat_map(|(n, m)| {
            (stochastic_rows(n, n), stochastic_rows(n, m), stochastic_rows(1, n)).prop_map(
                move |(a, b, pi_rows)| {
                    let labels: Vec<BTreeSet<String>> = (0..n)
                        .map(|s| {
                            if s % 2 == 0 {
                                ["a".to_owned()].into_iter().collect()
                            } else {
                                ["b".to_owned()].into_iter().collect()
                            }
                        })
                        .collect();
                    let alphabet = ["a".to_owned(), "b".to_owned()].into_iter().collect();
                    Hmm::new(a, b, labels, alphabet, pi_rows[0].clone())
                },
            )
        })
    }

    proptest! {
        #[test]
        fn per_state_cylinders_partition_unity(h in arb_hmm(), depth in 0usize..3) {
            prop_assert!(validate_hmm(&h).is_ok());
            for s in 0..h.n {
                let total = total_mass_from(&h, s, depth);
                prop_assert!((total - 1.0).abs() < 1e-9, "total {total}");
            }
        }

        #[test]
        fn weighted_equals_per_state_times_pi(h in arb_hmm()) {
            let path = FinitePath::new(vec![(0, 0), (1, 1)]).unwrap();
            let per_state = cylinder_probability(&h, SatMode::PerState, &path).unwrap();
            let weighted = cylinder_probability(&h, SatMode::WeightedByPi, &path).unwrap();
            prop_assert_eq!(weighted, h.pi[0] * per_state);
        }
    }
}
