//! Abstract syntax for the two-level POCTL* grammar.

use std::collections::BTreeSet;

use crate::model::AtomicProp;

/// Comparison placed on the probability operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProbBound {
    Lt,
    Le,
    Gt,
    Ge,
}

impl ProbBound {
    pub fn holds(self, value: f64, p: f64) -> bool {
        match self {
            ProbBound::Lt => value < p,
            ProbBound::Le => value <= p,
            ProbBound::Gt => value > p,
            ProbBound::Ge => value >= p,
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            ProbBound::Lt => "<",
            ProbBound::Le => "<=",
            ProbBound::Gt => ">",
            ProbBound::Ge => ">=",
        }
    }
}

/// State-level formulas Φ.
#[derive(Debug, Clone, PartialEq)]
pub enum StateFormula {
    True,
    False,
    /// `Named` atoms come from the parser; `Fresh` atoms appear once the
    /// checker substitutes a resolved subformula.
    Atom(AtomicProp),
    Not(Box<StateFormula>),
    And(Box<StateFormula>, Box<StateFormula>),
    Or(Box<StateFormula>, Box<StateFormula>),
    Prob(ProbBound, f64, Box<PathFormula>),
}

/// Path-level formulas φ.
#[derive(Debug, Clone, PartialEq)]
pub enum PathFormula {
    State(Box<StateFormula>),
    Not(Box<PathFormula>),
    And(Box<PathFormula>, Box<PathFormula>),
    Or(Box<PathFormula>, Box<PathFormula>),
    /// `X_Ω φ`: the next observation is drawn from Ω and the suffix satisfies φ.
    NextObs(BTreeSet<usize>, Box<PathFormula>),
    /// Observation-free next. Internal to stages two and three; the parser
    /// never produces it.
    NextPlain(Box<PathFormula>),
    BoundedUntil(Box<PathFormula>, u32, Box<PathFormula>),
    Until(Box<PathFormula>, Box<PathFormula>),
}

impl StateFormula {
    pub fn named(name: &str) -> Self {
        StateFormula::Atom(AtomicProp::named(name))
    }

    pub fn not(f: StateFormula) -> Self {
        StateFormula::Not(Box::new(f))
    }

    pub fn and(l: StateFormula, r: StateFormula) -> Self {
        StateFormula::And(Box::new(l), Box::new(r))
    }

    pub fn or(l: StateFormula, r: StateFormula) -> Self {
        StateFormula::Or(Box::new(l), Box::new(r))
    }

    pub fn prob(bound: ProbBound, p: f64, body: PathFormula) -> Self {
        StateFormula::Prob(bound, p, Box::new(body))
    }

    /// True when the formula contains no probability operator.
    pub fn is_propositional(&self) -> bool {
        match self {
            StateFormula::True | StateFormula::False | StateFormula::Atom(_) => true,
            StateFormula::Not(f) => f.is_propositional(),
            StateFormula::And(l, r) | StateFormula::Or(l, r) => {
                l.is_propositional() && r.is_propositional()
            }
            StateFormula::Prob(..) => false,
        }
    }
}

impl PathFormula {
    pub fn state(f: StateFormula) -> Self {
        PathFormula::State(Box::new(f))
    }

    pub fn named(name: &str) -> Self {
        PathFormula::state(StateFormula::named(name))
    }

    pub fn not(f: PathFormula) -> Self {
        PathFormula::Not(Box::new(f))
    }

    pub fn and(l: PathFormula, r: PathFormula) -> Self {
        PathFormula::And(Box::new(l), Box::new(r))
    }

    pub fn or(l: PathFormula, r: PathFormula) -> Self {
        PathFormula::Or(Box::new(l), Box::new(r))
    }

    pub fn next_obs<I: IntoIterator<Item = usize>>(obs: I, body: PathFormula) -> Self {
        PathFormula::NextObs(obs.into_iter().collect(), Box::new(body))
    }

    pub fn next_plain(body: PathFormula) -> Self {
        PathFormula::NextPlain(Box::new(body))
    }

    pub fn bounded_until(l: PathFormula, n: u32, r: PathFormula) -> Self {
        PathFormula::BoundedUntil(Box::new(l), n, Box::new(r))
    }

    pub fn until(l: PathFormula, r: PathFormula) -> Self {
        PathFormula::Until(Box::new(l), Box::new(r))
    }

    /// True when the formula contains no temporal operator and no probability
    /// operator, so it can be decided from a single state's labels.
    pub fn is_propositional(&self) -> bool {
        match self {
            PathFormula::State(f) => f.is_propositional(),
            PathFormula::Not(f) => f.is_propositional(),
            PathFormula::And(l, r) | PathFormula::Or(l, r) => {
                l.is_propositional() && r.is_propositional()
            }
            PathFormula::NextObs(..)
            | PathFormula::NextPlain(_)
            | PathFormula::BoundedUntil(..)
            | PathFormula::Until(..) => false,
        }
    }

    /// Number of temporal operator nodes in the formula.
    pub fn temporal_count(&self) -> usize {
        match self {
            PathFormula::State(_) => 0,
            PathFormula::Not(f) | PathFormula::NextObs(_, f) | PathFormula::NextPlain(f) => {
                f.temporal_count()
                    + usize::from(matches!(
                        self,
                        PathFormula::NextObs(..) | PathFormula::NextPlain(_)
                    ))
            }
            PathFormula::And(l, r) | PathFormula::Or(l, r) => {
                l.temporal_count() + r.temporal_count()
            }
            PathFormula::BoundedUntil(l, _, r) | PathFormula::Until(l, r) => {
                1 + l.temporal_count() + r.temporal_count()
            }
        }
    }

    pub fn contains_next_plain(&self) -> bool {
        match self {
            PathFormula::State(_) => false,
            PathFormula::NextPlain(_) => true,
            PathFormula::Not(f) | PathFormula::NextObs(_, f) => f.contains_next_plain(),
            PathFormula::And(l, r)
            | PathFormula::Or(l, r)
            | PathFormula::BoundedUntil(l, _, r)
            | PathFormula::Until(l, r) => l.contains_next_plain() || r.contains_next_plain(),
        }
    }
}
