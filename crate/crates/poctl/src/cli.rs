//! Command-line front end: an interactive session, a batch mode, and the
//! reference-evaluator subcommand.
//!
//! Exit codes: 0 on success, 2 on input errors (unreadable files, parse or
//! validation failures), 64 on usage errors. Human-readable output prints
//! state indices 1-based unless `--zero-based` is given; JSON output is
//! always 0-based.

use std::collections::BTreeSet;
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{ArgGroup, Args, Parser, Subcommand};

use crate::checker::{model_check_traced, SatResult, TraceRecord};
use crate::eliminate::ElimOp;
use crate::model::{Hmm, SatMode};
use crate::oracle::{oracle_check_state_formula, oracle_state_probabilities};
use crate::syntax::{parse_formula, parse_model_file, StateFormula};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_USAGE: i32 = 64;

const MODE_PROMPT: &str = "Would you like to consider each state as if it were the initial \
state, i.e., as if it had initial distribution value equal to 1? y/n: ";

#[derive(Debug, Parser)]
#[command(
    name = "poctl",
    about = "POCTL* model checker for hidden Markov models",
    disable_help_subcommand = true
)]
struct Cli {
    #[command(subcommand)]
    command: Option<Command>,
    #[command(flatten)]
    check: CheckArgs,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Evaluate a formula with the exact reference evaluator instead of the
    /// three-stage pipeline.
    Oracle(OracleArgs),
}

#[derive(Debug, Default, Args)]
#[command(group(ArgGroup::new("measure").args(["per_state", "weighted"])))]
pub struct CheckArgs {
    /// Model file to check.
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Formula to check, in surface syntax.
    #[arg(long)]
    pub formula: Option<String>,
    /// Treat each state as the initial state with mass one (default).
    #[arg(long)]
    pub per_state: bool,
    /// Weight every probability by the model's initial distribution.
    #[arg(long)]
    pub weighted: bool,
    /// Emit a JSON object instead of the session-style lines.
    #[arg(long)]
    pub json: bool,
    /// Print state indices 0-based in human-readable output.
    #[arg(long)]
    pub zero_based: bool,
    /// Print one structured line per elimination step to stderr.
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("measure").args(["per_state", "weighted"])))]
pub struct OracleArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub formula: String,
    #[arg(long)]
    pub per_state: bool,
    #[arg(long)]
    pub weighted: bool,
    #[arg(long)]
    pub json: bool,
    #[arg(long)]
    pub zero_based: bool,
    /// Truncation depth for unbounded untils.
    #[arg(long)]
    pub horizon: Option<u64>,
}

/// Parse arguments and dispatch. The process entry point passes the result
/// straight to `process::exit`.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
                _ => EXIT_USAGE,
            };
            let _ = err.print();
            return code;
        }
    };

    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    match cli.command {
        Some(Command::Oracle(args)) => {
            run_oracle(&args, &mut stdout.lock(), &mut stderr.lock())
        }
        None => match (&cli.check.model, &cli.check.formula) {
            (Some(model), Some(formula)) => run_batch(
                model,
                formula,
                &cli.check,
                &mut stdout.lock(),
                &mut stderr.lock(),
            ),
            (None, None) => {
                let stdin = std::io::stdin();
                match run_interactive(&mut stdin.lock(), &mut stdout.lock()) {
                    Ok(()) => EXIT_OK,
                    Err(_) => EXIT_INPUT,
                }
            }
            _ => {
                let _ = writeln!(
                    stderr.lock(),
                    "error: batch mode needs both --model and --formula (give neither for an interactive session)"
                );
                EXIT_USAGE
            }
        },
    }
}

fn selected_mode(per_state: bool, weighted: bool) -> SatMode {
    if weighted && !per_state {
        SatMode::WeightedByPi
    } else {
        SatMode::PerState
    }
}

fn mode_name(mode: SatMode) -> &'static str {
    match mode {
        SatMode::PerState => "per-state",
        SatMode::WeightedByPi => "weighted",
    }
}

fn load_model(path: &Path, err: &mut dyn Write) -> Option<Hmm> {
    let text = match std::fs::read_to_string(path) {
        Ok(text) => text,
        Err(e) => {
            let _ = writeln!(err, "error: cannot read '{}': {e}", path.display());
            return None;
        }
    };
    match parse_model_file(&text) {
        Ok(hmm) => Some(hmm),
        Err(e) => {
            let _ = writeln!(err, "error: '{}': {e}", path.display());
            None
        }
    }
}

/// Single non-interactive check.
pub fn run_batch(
    model_path: &Path,
    formula_text: &str,
    args: &CheckArgs,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32 {
    let Some(hmm) = load_model(model_path, err) else {
        return EXIT_INPUT;
    };
    let formula = match parse_formula(formula_text) {
        Ok(f) => f,
        Err(e) => {
            let _ = writeln!(err, "error: formula: {e}");
            return EXIT_INPUT;
        }
    };
    let mode = selected_mode(args.per_state, args.weighted);
    let (result, trace) = match model_check_traced(&hmm, &formula, mode) {
        Ok(pair) => pair,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_INPUT;
        }
    };
    if args.verbose {
        print_trace(&trace, err);
    }
    if args.json {
        let _ = writeln!(out, "{}", json_result(&result, mode, formula_text));
    } else {
        print_result(&result, args.zero_based, out);
    }
    EXIT_OK
}

fn run_oracle(args: &OracleArgs, out: &mut dyn Write, err: &mut dyn Write) -> i32 {
    let Some(hmm) = load_model(&args.model, err) else {
        return EXIT_INPUT;
    };
    let formula = match parse_formula(&args.formula) {
        Ok(f) => f,
        Err(e) => {
            let _ = writeln!(err, "error: formula: {e}");
            return EXIT_INPUT;
        }
    };
    let mode = selected_mode(args.per_state, args.weighted);
    let states = match oracle_check_state_formula(&hmm, &formula, mode, args.horizon) {
        Ok(states) => states,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            return EXIT_INPUT;
        }
    };
    let probs = match &formula {
        StateFormula::Prob(_, _, body) => {
            match oracle_state_probabilities(&hmm, body, mode, args.horizon) {
                Ok(v) => Some(v),
                Err(e) => {
                    let _ = writeln!(err, "error: {e}");
                    return EXIT_INPUT;
                }
            }
        }
        _ => None,
    };
    let result = SatResult { states, probs };
    if args.json {
        let _ = writeln!(out, "{}", json_result(&result, mode, &args.formula));
    } else {
        print_result(&result, args.zero_based, out);
    }
    EXIT_OK
}

/// Interactive session: model path, measure question, formula, answer,
/// repeat. Diagnostics re-prompt the failed entry instead of exiting.
pub fn run_interactive(input: &mut dyn BufRead, output: &mut dyn Write) -> std::io::Result<()> {
    loop {
        let Some(hmm) = prompt_model(input, output)? else {
            return Ok(());
        };
        let Some(mode) = prompt_mode(input, output)? else {
            return Ok(());
        };
        let Some(result) = prompt_and_check(&hmm, mode, input, output)? else {
            return Ok(());
        };
        print_result(&result, false, output);
        write!(output, "Do you want to continue checking more specifications? y/n: ")?;
        output.flush()?;
        match read_line(input)? {
            Some(line) if line.trim().eq_ignore_ascii_case("y") => continue,
            _ => return Ok(()),
        }
    }
}

fn read_line(input: &mut dyn BufRead) -> std::io::Result<Option<String>> {
    let mut line = String::new();
    if input.read_line(&mut line)? == 0 {
        return Ok(None);
    }
    Ok(Some(line.trim_end_matches(['\n', '\r']).to_owned()))
}

fn prompt_model(input: &mut dyn BufRead, output: &mut dyn Write) -> std::io::Result<Option<Hmm>> {
    loop {
        writeln!(output, "Enter the file name where the HMM is located.")?;
        output.flush()?;
        let Some(line) = read_line(input)? else {
            return Ok(None);
        };
        let path = line.trim();
        if path.is_empty() {
            continue;
        }
        let mut diagnostics = Vec::new();
        if let Some(hmm) = load_model(Path::new(path), &mut diagnostics) {
            return Ok(Some(hmm));
        }
        output.write_all(&diagnostics)?;
    }
}

fn prompt_mode(
    input: &mut dyn BufRead,
    output: &mut dyn Write,
) -> std::io::Result<Option<SatMode>> {
    loop {
        write!(output, "{MODE_PROMPT}")?;
        output.flush()?;
        let Some(line) = read_line(input)? else {
            return Ok(None);
        };
        match line.trim() {
            answer if answer.eq_ignore_ascii_case("y") => return Ok(Some(SatMode::PerState)),
            answer if answer.eq_ignore_ascii_case("n") => {
                return Ok(Some(SatMode::WeightedByPi))
            }
            _ => continue,
        }
    }
}

fn prompt_and_check(
    hmm: &Hmm,
    mode: SatMode,
    input: &mut dyn BufRead,
    output: &mut dyn Write,
) -> std::io::Result<Option<SatResult>> {
    loop {
        writeln!(output, "Enter the POCTL* formula we are interested in.")?;
        output.flush()?;
        let Some(line) = read_line(input)? else {
            return Ok(None);
        };
        let text = line.trim();
        if text.is_empty() {
            continue;
        }
        let formula = match parse_formula(text) {
            Ok(f) => f,
            Err(e) => {
                writeln!(output, "error: formula: {e}")?;
                continue;
            }
        };
        match model_check_traced(hmm, &formula, mode) {
            Ok((result, _)) => return Ok(Some(result)),
            Err(e) => {
                writeln!(output, "error: {e}")?;
                continue;
            }
        }
    }
}

fn print_result(result: &SatResult, zero_based: bool, out: &mut dyn Write) {
    let _ = writeln!(out, "The states that satisfy it are:");
    if let Some(probs) = &result.probs {
        let rendered: Vec<String> = probs.iter().map(|&p| format_probability(p)).collect();
        let _ = writeln!(
            out,
            "(Probability of satisfaction of each state:[{}])",
            rendered.join(",")
        );
    }
    let _ = writeln!(out, "{}", format_states(&result.states, zero_based));
}

fn format_states(states: &BTreeSet<usize>, zero_based: bool) -> String {
    let offset = usize::from(!zero_based);
    let rendered: Vec<String> = states.iter().map(|s| (s + offset).to_string()).collect();
    format!("[{}]", rendered.join(","))
}

/// Shortest round-tripping decimal, in the session style: positional for
/// magnitudes in `[0.1, 1e7)`, scientific elsewhere, and a `.0` tail on
/// integral mantissas.
pub fn format_probability(p: f64) -> String {
    if p == 0.0 {
        return "0.0".to_owned();
    }
    let magnitude = p.abs();
    if (0.1..1e7).contains(&magnitude) {
        let text = format!("{p}");
        if text.contains('.') {
            text
        } else {
            format!("{text}.0")
        }
    } else {
        let text = format!("{p:e}");
        match text.split_once('e') {
            Some((mantissa, exp)) if !mantissa.contains('.') => {
                format!("{mantissa}.0e{exp}")
            }
            _ => text,
        }
    }
}

fn json_result(result: &SatResult, mode: SatMode, formula: &str) -> String {
    let states: Vec<usize> = result.states.iter().copied().collect();
    let probs = match &result.probs {
        Some(v) => serde_json::json!(v),
        None => serde_json::Value::Null,
    };
    serde_json::json!({
        "states": states,
        "probs": probs,
        "mode": mode_name(mode),
        "formula": formula,
    })
    .to_string()
}

fn print_trace(trace: &[TraceRecord], err: &mut dyn Write) {
    for (index, record) in trace.iter().enumerate() {
        let op = match record.step.op {
            ElimOp::Next => "X",
            ElimOp::Until => "U",
        };
        let state = record
            .eval_state
            .map_or_else(|| "-".to_owned(), |s| s.to_string());
        let q = record.step.q_range.map_or_else(
            || "-".to_owned(),
            |(lo, hi)| format!("{lo:.6}..{hi:.6}"),
        );
        let _ = writeln!(
            err,
            "elim step={} state={} op={} yes={} no={} maybe={} q={} states={}",
            index,
            state,
            op,
            record.step.yes,
            record.step.no,
            record.step.maybe,
            q,
            record.step.states_after
        );
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn probability_formatting_follows_the_session_style() {
        assert_eq!(format_probability(0.0), "0.0");
        assert_eq!(format_probability(1.0), "1.0");
        assert_eq!(format_probability(0.5), "0.5");
        assert_eq!(format_probability(0.8915357419467848), "0.8915357419467848");
        assert_eq!(format_probability(7.508994137303159e-3), "7.508994137303159e-3");
        assert_eq!(format_probability(4.998198505964186e-10), "4.998198505964186e-10");
        assert_eq!(format_probability(0.05), "5.0e-2");
    }

    #[test]
    fn state_lists_are_one_based_by_default() {
        let states: BTreeSet<usize> = [0, 2, 3].into_iter().collect();
        assert_eq!(format_states(&states, false), "[1,3,4]");
        assert_eq!(format_states(&states, true), "[0,2,3]");
        assert_eq!(format_states(&BTreeSet::new(), false), "[]");
    }
}
