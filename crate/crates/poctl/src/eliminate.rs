//! Stage three: removing temporal operators one at a time while preserving
//! the probability of satisfaction.
//!
//! Each transformation splits every state `u` of the chain into a copy
//! `(u, ξ)` where the eliminated subformula holds and a copy `(u, ¬ξ)` where
//! it does not, with transition probabilities conditioned on that event. A
//! copy only exists when its probability is positive: `q_u = 1` keeps the
//! positive copy alone, `q_u = 0` the negative copy alone.

use std::collections::BTreeSet;

use crate::error::CheckError;
use crate::linalg::solve_linear_system;
use crate::model::{AtomicProp, Dtmc, Hmm};
use crate::syntax::ast::{PathFormula, StateFormula};

/// Qualitative split of the chain: states where the eliminated subformula
/// holds with probability one, probability zero, or strictly in between.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub yes: BTreeSet<usize>,
    pub no: BTreeSet<usize>,
    pub maybe: BTreeSet<usize>,
}

impl Partition {
    pub fn covers(&self, k: usize) -> bool {
        self.yes.len() + self.no.len() + self.maybe.len() == k
            && self.yes.is_disjoint(&self.no)
            && self.yes.is_disjoint(&self.maybe)
            && self.no.is_disjoint(&self.maybe)
    }
}

/// Per-state probability of the eliminated subformula and its complement.
#[derive(Debug, Clone, PartialEq)]
pub struct QVector {
    pub q: Vec<f64>,
    pub qbar: Vec<f64>,
}

impl QVector {
    fn from_q(q: Vec<f64>) -> Self {
        let qbar = q.iter().map(|&x| 1.0 - x).collect();
        QVector { q, qbar }
    }
}

/// Which transformation an elimination step applied.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElimOp {
    Next,
    Until,
}

/// One structured trace record per elimination step.
#[derive(Debug, Clone, PartialEq)]
pub struct ElimStep {
    pub op: ElimOp,
    pub yes: usize,
    pub no: usize,
    pub maybe: usize,
    /// Range of `q` over the maybe states, when any exist.
    pub q_range: Option<(f64, f64)>,
    /// Chain size after the step (and after pruning, when run in a pipeline).
    pub states_after: usize,
}

/// Result of one elimination: the split chain (unpruned), the marker atom
/// that replaced the subformula, and the step record.
#[derive(Debug, Clone)]
pub struct Elimination {
    pub chain: Dtmc,
    pub xi: AtomicProp,
    pub partition: Partition,
    pub q: QVector,
    pub step: ElimStep,
}

/// Decide a propositional state formula from a chain state's labels.
///
/// Panics if the formula contains a probability operator; stage one removes
/// them before stage three runs.
pub fn eval_state_propositional(d: &Dtmc, state: usize, f: &StateFormula) -> bool {
    match f {
        StateFormula::True => true,
        StateFormula::False => false,
        StateFormula::Atom(atom) => d.satisfies_atom(state, atom),
        StateFormula::Not(inner) => !eval_state_propositional(d, state, inner),
        StateFormula::And(l, r) => {
            eval_state_propositional(d, state, l) && eval_state_propositional(d, state, r)
        }
        StateFormula::Or(l, r) => {
            eval_state_propositional(d, state, l) || eval_state_propositional(d, state, r)
        }
        StateFormula::Prob(..) => panic!("probability operator in propositional context"),
    }
}

/// Decide a propositional path formula at a single chain state.
///
/// Panics on temporal operators; callers eliminate them first.
pub fn eval_path_propositional(d: &Dtmc, state: usize, f: &PathFormula) -> bool {
    match f {
        PathFormula::State(inner) => eval_state_propositional(d, state, inner),
        PathFormula::Not(inner) => !eval_path_propositional(d, state, inner),
        PathFormula::And(l, r) => {
            eval_path_propositional(d, state, l) && eval_path_propositional(d, state, r)
        }
        PathFormula::Or(l, r) => {
            eval_path_propositional(d, state, l) || eval_path_propositional(d, state, r)
        }
        PathFormula::NextObs(..)
        | PathFormula::NextPlain(_)
        | PathFormula::BoundedUntil(..)
        | PathFormula::Until(..) => panic!("temporal operator in propositional context"),
    }
}

/// Unroll every bounded until through the recurrence
/// `φ U≤0 ψ ≡ ψ` and `φ U≤k ψ ≡ ψ ∨ (φ ∧ X(φ U≤k−1 ψ))`.
///
/// Applied to a `U≤n` node with next-free operands the result holds exactly
/// `n` plain next operators; nested bounded untils inside the operands are
/// unrolled first. No bounded until survives in the output.
pub fn expand_bounded_until(f: &PathFormula) -> PathFormula {
    match f {
        PathFormula::State(inner) => PathFormula::State(inner.clone()),
        PathFormula::Not(inner) => PathFormula::not(expand_bounded_until(inner)),
        PathFormula::And(l, r) => {
            PathFormula::and(expand_bounded_until(l), expand_bounded_until(r))
        }
        PathFormula::Or(l, r) => PathFormula::or(expand_bounded_until(l), expand_bounded_until(r)),
        PathFormula::NextObs(obs, body) => {
            PathFormula::NextObs(obs.clone(), Box::new(expand_bounded_until(body)))
        }
        PathFormula::NextPlain(body) => PathFormula::next_plain(expand_bounded_until(body)),
        PathFormula::Until(l, r) => {
            PathFormula::until(expand_bounded_until(l), expand_bounded_until(r))
        }
        PathFormula::BoundedUntil(l, n, r) => {
            let lhs = expand_bounded_until(l);
            let rhs = expand_bounded_until(r);
            let mut acc = rhs.clone();
            for _ in 0..*n {
                acc = PathFormula::or(
                    rhs.clone(),
                    PathFormula::and(lhs.clone(), PathFormula::next_plain(acc)),
                );
            }
            acc
        }
    }
}

/// Eliminate an innermost `X g` with propositional `g`.
///
/// `q_u` sums the transition mass into `g`-states; the split chain's
/// transition out of `(u, χ)` carries the conditional probability of moving
/// to `v` and of `v`'s own copy, renormalised by the mass of the
/// conditioning event.
pub fn eliminate_next(d: &Dtmc, g: &PathFormula, xi_serial: u32) -> Result<Elimination, CheckError> {
    if !g.is_propositional() {
        return Err(CheckError::Internal(
            "eliminate_next needs a propositional argument".to_owned(),
        ));
    }
    let k = d.len();
    let sat: Vec<bool> = (0..k).map(|v| eval_path_propositional(d, v, g)).collect();

    let mut partition = Partition {
        yes: BTreeSet::new(),
        no: BTreeSet::new(),
        maybe: BTreeSet::new(),
    };
    let mut q = vec![0.0; k];
    for u in 0..k {
        let mut into_sat = false;
        let mut into_unsat = false;
        for v in 0..k {
            if d.t[u][v] > 0.0 {
                if sat[v] {
                    into_sat = true;
                } else {
                    into_unsat = true;
                }
            }
        }
        match (into_sat, into_unsat) {
            (true, false) => {
                partition.yes.insert(u);
                q[u] = 1.0;
            }
            (false, _) => {
                partition.no.insert(u);
                q[u] = 0.0;
            }
            (true, true) => {
                partition.maybe.insert(u);
                q[u] = (0..k).filter(|&v| sat[v]).map(|v| d.t[u][v]).sum();
            }
        }
    }
    let q = QVector::from_q(q);

    let chain = split_chain(d, &partition, &q, xi_serial, |u, positive, row| {
        for v in 0..k {
            let mass = d.t[u][v];
            if mass <= 0.0 || sat[v] != positive {
                continue;
            }
            row.push((v, true, mass * q.q[v]));
            row.push((v, false, mass * q.qbar[v]));
        }
    })?;

    Ok(finish(chain, partition, q, ElimOp::Next, xi_serial))
}

/// Eliminate an innermost `g1 U g2` with propositional arguments.
///
/// The split follows the success event "the until holds from `u`": states
/// already satisfying `g2` succeed regardless of the future, states
/// satisfying neither fail regardless, and states in `g1 ∧ ¬g2` hand the
/// event to their successor, which forces the successor's copy to agree with
/// the current one.
pub fn eliminate_until(
    d: &Dtmc,
    g1: &PathFormula,
    g2: &PathFormula,
    xi_serial: u32,
) -> Result<Elimination, CheckError> {
    if !g1.is_propositional() || !g2.is_propositional() {
        return Err(CheckError::Internal(
            "eliminate_until needs propositional arguments".to_owned(),
        ));
    }
    let k = d.len();
    let partition = classify_until_states(d, g1, g2);
    let q = until_probabilities(d, &partition)?;

    let sat1: Vec<bool> = (0..k).map(|v| eval_path_propositional(d, v, g1)).collect();
    let sat2: Vec<bool> = (0..k).map(|v| eval_path_propositional(d, v, g2)).collect();

    let chain = split_chain(d, &partition, &q, xi_serial, |u, positive, row| {
        for v in 0..k {
            let mass = d.t[u][v];
            if mass <= 0.0 {
                continue;
            }
            if sat2[u] || (!sat1[u] && !sat2[u]) {
                // Success (or failure) is already decided at u; the
                // successor's copy is unconstrained.
                row.push((v, true, mass * q.q[v]));
                row.push((v, false, mass * q.qbar[v]));
            } else if positive {
                // u ⊨ g1 ∧ ¬g2 and the until holds from u, so it must hold
                // from the successor.
                row.push((v, true, mass * q.q[v]));
            } else {
                row.push((v, false, mass * q.qbar[v]));
            }
        }
    })?;

    Ok(finish(chain, partition, q, ElimOp::Until, xi_serial))
}

fn finish(
    chain: Dtmc,
    partition: Partition,
    q: QVector,
    op: ElimOp,
    xi_serial: u32,
) -> Elimination {
    let q_range = partition
        .maybe
        .iter()
        .map(|&u| q.q[u])
        .fold(None, |acc: Option<(f64, f64)>, x| match acc {
            None => Some((x, x)),
            Some((lo, hi)) => Some((lo.min(x), hi.max(x))),
        });
    let step = ElimStep {
        op,
        yes: partition.yes.len(),
        no: partition.no.len(),
        maybe: partition.maybe.len(),
        q_range,
        states_after: chain.len(),
    };
    Elimination {
        chain,
        xi: AtomicProp::Xi(xi_serial),
        partition,
        q,
        step,
    }
}

/// Build the split chain common to both transformations. `fill_row` pushes
/// the unnormalised masses `(target state, target polarity, mass)` for the
/// row of `(u, positive)`; each row is then normalised by its own mass, which
/// is the probability of the conditioning event.
fn split_chain(
    d: &Dtmc,
    partition: &Partition,
    q: &QVector,
    xi_serial: u32,
    fill_row: impl Fn(usize, bool, &mut Vec<(usize, bool, f64)>),
) -> Result<Dtmc, CheckError> {
    let k = d.len();
    let mut pos_index = vec![usize::MAX; k];
    let mut neg_index = vec![usize::MAX; k];
    let mut states = Vec::new();
    let mut labels = Vec::new();
    let mut init = Vec::new();

    for u in 0..k {
        let has_pos = !partition.no.contains(&u);
        let has_neg = !partition.yes.contains(&u);
        if has_pos {
            pos_index[u] = states.len();
            let mut st = d.states[u].clone();
            st.xi_bits.push((xi_serial, true));
            states.push(st);
            let mut label = d.labels[u].clone();
            label.insert(AtomicProp::Xi(xi_serial));
            labels.push(label);
            init.push(d.init[u] * q.q[u]);
        }
        if has_neg {
            neg_index[u] = states.len();
            let mut st = d.states[u].clone();
            st.xi_bits.push((xi_serial, false));
            states.push(st);
            labels.push(d.labels[u].clone());
            init.push(d.init[u] * q.qbar[u]);
        }
    }

    let size = states.len();
    let mut t = vec![vec![0.0; size]; size];
    let mut row_masses = Vec::new();
    for u in 0..k {
        for positive in [true, false] {
            let from = if positive { pos_index[u] } else { neg_index[u] };
            if from == usize::MAX {
                continue;
            }
            row_masses.clear();
            fill_row(u, positive, &mut row_masses);
            let total: f64 = row_masses.iter().map(|&(_, _, mass)| mass).sum();
            if total <= 0.0 {
                return Err(CheckError::Internal(format!(
                    "split chain produced an empty row for state {u} ({})",
                    if positive { "positive" } else { "negative" }
                )));
            }
            for &(v, polarity, mass) in &row_masses {
                if mass <= 0.0 {
                    continue;
                }
                let to = if polarity { pos_index[v] } else { neg_index[v] };
                if to == usize::MAX {
                    return Err(CheckError::Internal(format!(
                        "positive transition mass into a missing copy of state {v}"
                    )));
                }
                t[from][to] += mass / total;
            }
        }
    }

    Ok(Dtmc {
        states,
        t,
        labels,
        init,
    })
}

/// Partition the chain for `g1 U g2` by two graph fixpoints: `no` holds the
/// states from which no `g1`-path reaches a `g2`-state, `yes` the states
/// whose until-probability is exactly one, `maybe` the rest.
pub fn classify_until_states(d: &Dtmc, g1: &PathFormula, g2: &PathFormula) -> Partition {
    let k = d.len();
    let sat1: Vec<bool> = (0..k).map(|v| eval_path_propositional(d, v, g1)).collect();
    let sat2: Vec<bool> = (0..k).map(|v| eval_path_propositional(d, v, g2)).collect();

    // Backward reachability of g2 through g1-states.
    let mut reach = sat2.clone();
    let mut changed = true;
    while changed {
        changed = false;
        for u in 0..k {
            if reach[u] || !sat1[u] || sat2[u] {
                continue;
            }
            if (0..k).any(|v| d.t[u][v] > 0.0 && reach[v]) {
                reach[u] = true;
                changed = true;
            }
        }
    }

    // Backward reachability of a failure state through undecided states;
    // its complement is exactly the probability-one set.
    let mut fail: Vec<bool> = reach.iter().map(|&r| !r).collect();
    changed = true;
    while changed {
        changed = false;
        for u in 0..k {
            if fail[u] || !sat1[u] || sat2[u] {
                continue;
            }
            if (0..k).any(|v| d.t[u][v] > 0.0 && fail[v]) {
                fail[u] = true;
                changed = true;
            }
        }
    }

    let mut partition = Partition {
        yes: BTreeSet::new(),
        no: BTreeSet::new(),
        maybe: BTreeSet::new(),
    };
    for u in 0..k {
        if !reach[u] {
            partition.no.insert(u);
        } else if !fail[u] {
            partition.yes.insert(u);
        } else {
            partition.maybe.insert(u);
        }
    }
    partition
}

/// Until-probabilities from a partition: one on `yes`, zero on `no`, and on
/// the maybe states the unique solution of `(I − T_maybe)·x = T_{maybe→yes}·1`.
pub fn until_probabilities(d: &Dtmc, partition: &Partition) -> Result<QVector, CheckError> {
    let k = d.len();
    let mut q = vec![0.0; k];
    for &u in &partition.yes {
        q[u] = 1.0;
    }
    let maybe: Vec<usize> = partition.maybe.iter().copied().collect();
    if !maybe.is_empty() {
        let mm = maybe.len();
        let mut matrix = vec![vec![0.0; mm]; mm];
        let mut rhs = vec![0.0; mm];
        for (i, &u) in maybe.iter().enumerate() {
            for (j, &v) in maybe.iter().enumerate() {
                matrix[i][j] = f64::from(u8::from(i == j)) - d.t[u][v];
            }
            rhs[i] = partition.yes.iter().map(|&v| d.t[u][v]).sum();
        }
        let x = solve_linear_system(&matrix, &rhs).map_err(|err| {
            CheckError::Internal(format!(
                "until-probability system should be solvable on a well-formed partition: {err}"
            ))
        })?;
        for (i, &u) in maybe.iter().enumerate() {
            let mut value = x[i];
            if !(0.0..=1.0).contains(&value) {
                if value > -1e-9 && value < 1.0 + 1e-9 {
                    value = value.clamp(0.0, 1.0);
                } else {
                    return Err(CheckError::Internal(format!(
                        "until probability {value} for state {u} is outside [0,1]"
                    )));
                }
            }
            q[u] = value;
        }
    }
    Ok(QVector::from_q(q))
}

/// Drop states that carry no initial mass and cannot be reached from any
/// state that does. Kept states keep their relative order.
pub fn prune_unreachable(d: &Dtmc) -> Dtmc {
    let k = d.len();
    let mut reachable = vec![false; k];
    let mut queue: Vec<usize> = (0..k).filter(|&u| d.init[u] > 0.0).collect();
    for &u in &queue {
        reachable[u] = true;
    }
    while let Some(u) = queue.pop() {
        for v in 0..k {
            if d.t[u][v] > 0.0 && !reachable[v] {
                reachable[v] = true;
                queue.push(v);
            }
        }
    }
    if reachable.iter().all(|&r| r) {
        return d.clone();
    }
    let keep: Vec<usize> = (0..k).filter(|&u| reachable[u]).collect();
    let states = keep.iter().map(|&u| d.states[u].clone()).collect();
    let labels = keep.iter().map(|&u| d.labels[u].clone()).collect();
    let init = keep.iter().map(|&u| d.init[u]).collect();
    let mut t = vec![vec![0.0; keep.len()]; keep.len()];
    for (new_u, &old_u) in keep.iter().enumerate() {
        for (new_v, &old_v) in keep.iter().enumerate() {
            t[new_u][new_v] = d.t[old_u][old_v];
        }
    }
    Dtmc {
        states,
        t,
        labels,
        init,
    }
}

/// Address of an innermost temporal node: child indices from the root.
fn find_innermost_temporal(f: &PathFormula) -> Option<Vec<usize>> {
    fn walk(f: &PathFormula, path: &mut Vec<usize>) -> bool {
        let children: Vec<&PathFormula> = match f {
            PathFormula::State(_) => vec![],
            PathFormula::Not(g) | PathFormula::NextObs(_, g) | PathFormula::NextPlain(g) => {
                vec![g]
            }
            PathFormula::And(l, r)
            | PathFormula::Or(l, r)
            | PathFormula::BoundedUntil(l, _, r)
            | PathFormula::Until(l, r) => vec![l, r],
        };
        for (i, child) in children.into_iter().enumerate() {
            path.push(i);
            if walk(child, path) {
                return true;
            }
            path.pop();
        }
        matches!(
            f,
            PathFormula::NextObs(..)
                | PathFormula::NextPlain(_)
                | PathFormula::BoundedUntil(..)
                | PathFormula::Until(..)
        )
    }
    let mut path = Vec::new();
    if walk(f, &mut path) {
        Some(path)
    } else {
        None
    }
}

fn node_at<'a>(f: &'a PathFormula, path: &[usize]) -> &'a PathFormula {
    let mut node = f;
    for &step in path {
        node = match (node, step) {
            (PathFormula::Not(g), 0)
            | (PathFormula::NextObs(_, g), 0)
            | (PathFormula::NextPlain(g), 0) => g,
            (PathFormula::And(l, _), 0)
            | (PathFormula::Or(l, _), 0)
            | (PathFormula::BoundedUntil(l, _, _), 0)
            | (PathFormula::Until(l, _), 0) => l,
            (PathFormula::And(_, r), 1)
            | (PathFormula::Or(_, r), 1)
            | (PathFormula::BoundedUntil(_, _, r), 1)
            | (PathFormula::Until(_, r), 1) => r,
            _ => panic!("invalid formula path"),
        };
    }
    node
}

fn replace_at(f: &PathFormula, path: &[usize], replacement: PathFormula) -> PathFormula {
    if path.is_empty() {
        return replacement;
    }
    let step = path[0];
    let rest = &path[1..];
    match (f, step) {
        (PathFormula::Not(g), 0) => PathFormula::not(replace_at(g, rest, replacement)),
        (PathFormula::NextObs(obs, g), 0) => {
            PathFormula::NextObs(obs.clone(), Box::new(replace_at(g, rest, replacement)))
        }
        (PathFormula::NextPlain(g), 0) => {
            PathFormula::next_plain(replace_at(g, rest, replacement))
        }
        (PathFormula::And(l, r), 0) => {
            PathFormula::and(replace_at(l, rest, replacement), r.as_ref().clone())
        }
        (PathFormula::And(l, r), 1) => {
            PathFormula::and(l.as_ref().clone(), replace_at(r, rest, replacement))
        }
        (PathFormula::Or(l, r), 0) => {
            PathFormula::or(replace_at(l, rest, replacement), r.as_ref().clone())
        }
        (PathFormula::Or(l, r), 1) => {
            PathFormula::or(l.as_ref().clone(), replace_at(r, rest, replacement))
        }
        (PathFormula::BoundedUntil(l, n, r), 0) => {
            PathFormula::bounded_until(replace_at(l, rest, replacement), *n, r.as_ref().clone())
        }
        (PathFormula::BoundedUntil(l, n, r), 1) => {
            PathFormula::bounded_until(l.as_ref().clone(), *n, replace_at(r, rest, replacement))
        }
        (PathFormula::Until(l, r), 0) => {
            PathFormula::until(replace_at(l, rest, replacement), r.as_ref().clone())
        }
        (PathFormula::Until(l, r), 1) => {
            PathFormula::until(l.as_ref().clone(), replace_at(r, rest, replacement))
        }
        _ => panic!("invalid formula path"),
    }
}

/// Run the elimination loop: repeatedly take an innermost temporal node
/// (leftmost on ties), apply the matching transformation, substitute its ξ
/// marker, and prune, until the formula is propositional.
pub fn run_eliminations(
    d: Dtmc,
    phi: PathFormula,
    xi_counter: &mut u32,
    trace: &mut Vec<ElimStep>,
) -> Result<(Dtmc, PathFormula), CheckError> {
    let mut chain = d;
    let mut psi = phi;
    while let Some(path) = find_innermost_temporal(&psi) {
        let serial = *xi_counter;
        *xi_counter += 1;
        let elim = match node_at(&psi, &path) {
            PathFormula::NextPlain(g) => eliminate_next(&chain, g, serial)?,
            PathFormula::Until(l, r) => eliminate_until(&chain, l, r, serial)?,
            PathFormula::NextObs(..) | PathFormula::BoundedUntil(..) => {
                return Err(CheckError::Internal(
                    "formula was not normalised before elimination".to_owned(),
                ))
            }
            _ => unreachable!("find_innermost_temporal returns temporal nodes"),
        };
        chain = prune_unreachable(&elim.chain);
        psi = replace_at(
            &psi,
            &path,
            PathFormula::state(StateFormula::Atom(elim.xi.clone())),
        );
        let mut step = elim.step;
        step.states_after = chain.len();
        trace.push(step);
    }
    Ok((chain, psi))
}

/// Final aggregation: the probability for HMM state `s` is the total initial
/// mass of the chain's initial states that trace back to `s` and whose labels
/// satisfy the residue formula.
pub fn aggregate(dk: &Dtmc, psi: &PathFormula, h: &Hmm, s: usize) -> f64 {
    debug_assert!(s < h.n);
    (0..dk.len())
        .filter(|&i| dk.states[i].hmm_state == s)
        .filter(|&i| eval_path_propositional(dk, i, psi))
        .map(|i| dk.init[i])
        .sum()
}
