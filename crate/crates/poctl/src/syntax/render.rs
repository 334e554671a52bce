//! Formula rendering. `parse(render(f))` is structurally `f` for every
//! parser-reachable formula.

use crate::model::AtomicProp;
use crate::syntax::ast::{PathFormula, StateFormula};

/// Render a state formula back to surface syntax. Binary connectives are
/// parenthesised; atoms, constants, probability operators and unary prefixes
/// are not.
pub fn render_formula(f: &StateFormula) -> String {
    let mut out = String::new();
    render_state(f, &mut out);
    out
}

/// Render a path formula. Internal `NextPlain` nodes print as a bare `X`,
/// which the surface grammar does not accept; every parser-produced formula
/// renders to parseable text.
pub fn render_path_formula(f: &PathFormula) -> String {
    let mut out = String::new();
    render_path(f, &mut out);
    out
}

fn render_atom(atom: &AtomicProp, out: &mut String) {
    out.push_str(&atom.to_string());
}

fn render_state(f: &StateFormula, out: &mut String) {
    match f {
        StateFormula::True => out.push('T'),
        StateFormula::False => out.push('F'),
        StateFormula::Atom(atom) => render_atom(atom, out),
        StateFormula::Not(inner) => {
            out.push('!');
            render_state(inner, out);
        }
        StateFormula::And(l, r) => {
            out.push('(');
            render_state(l, out);
            out.push_str(" & ");
            render_state(r, out);
            out.push(')');
        }
        StateFormula::Or(l, r) => {
            out.push('(');
            render_state(l, out);
            out.push_str(" | ");
            render_state(r, out);
            out.push(')');
        }
        StateFormula::Prob(bound, p, body) => {
            out.push_str("P[");
            out.push_str(bound.symbol());
            out.push_str(&format_probability(*p));
            out.push_str("](");
            render_path(body, out);
            out.push(')');
        }
    }
}

fn render_path(f: &PathFormula, out: &mut String) {
    match f {
        PathFormula::State(inner) => render_state(inner, out),
        PathFormula::Not(inner) => {
            out.push('!');
            render_path(inner, out);
        }
        PathFormula::And(l, r) => {
            out.push('(');
            render_path(l, out);
            out.push_str(" & ");
            render_path(r, out);
            out.push(')');
        }
        PathFormula::Or(l, r) => {
            out.push('(');
            render_path(l, out);
            out.push_str(" | ");
            render_path(r, out);
            out.push(')');
        }
        PathFormula::NextObs(obs, body) => {
            out.push_str("X_{");
            for (i, o) in obs.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                out.push_str(&o.to_string());
            }
            out.push('}');
            render_path(body, out);
        }
        PathFormula::NextPlain(body) => {
            out.push_str("X ");
            render_path(body, out);
        }
        PathFormula::BoundedUntil(l, n, r) => {
            out.push('(');
            render_path(l, out);
            out.push_str(&format!(" U<={n} "));
            render_path(r, out);
            out.push(')');
        }
        PathFormula::Until(l, r) => {
            out.push('(');
            render_path(l, out);
            out.push_str(" U ");
            render_path(r, out);
            out.push(')');
        }
    }
}

fn format_probability(p: f64) -> String {
    // f64 Display is the shortest round-tripping decimal and never uses
    // scientific notation, so bounds reparse to the same value.
    format!("{p}")
}
