//! Parser for the `.poctl` model file format.
//!
//! A model file has six sections, one per element of the model, introduced by
//! the reserved words `States`, `Transitions`, `Observations`, `ObsProb`,
//! `Labelling` and `Initial`, each followed by `=`. Matrices are written as
//! comma-separated rows of whitespace-separated reals, the labelling as one
//! `{a,b}` set per state in state order, and `#` starts a comment that runs
//! to the end of the line. Sections may appear in any order.

use std::collections::BTreeSet;

use crate::model::{validate_hmm, Hmm, ValidationReport};

const SECTION_KEYS: [&str; 6] = [
    "States",
    "Transitions",
    "Observations",
    "ObsProb",
    "Labelling",
    "Initial",
];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelFileError {
    #[error("missing section '{0}='")]
    MissingSection(&'static str),
    #[error("section '{0}=' appears more than once")]
    DuplicateSection(&'static str),
    #[error("line {line}: expected a section header, found '{text}'")]
    StrayText { line: usize, text: String },
    #[error("section '{section}': {detail}")]
    Malformed {
        section: &'static str,
        detail: String,
    },
    #[error("section '{section}' has {found} rows, expected {expected}")]
    RowCount {
        section: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("section '{section}' row {row} has {found} entries, expected {expected}")]
    ColumnCount {
        section: &'static str,
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("model failed validation: {0}")]
    Invalid(ValidationReport),
}

/// Parse and validate a model file, producing a fully populated [`Hmm`].
pub fn parse_model_file(text: &str) -> Result<Hmm, ModelFileError> {
    let mut sections: Vec<(&'static str, String)> = Vec::new();
    for (lineno, raw_line) in text.lines().enumerate() {
        let line = match raw_line.find('#') {
            Some(idx) => &raw_line[..idx],
            None => raw_line,
        };
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        if let Some((key, rest)) = split_section_header(trimmed) {
            if sections.iter().any(|(k, _)| *k == key) {
                return Err(ModelFileError::DuplicateSection(key));
            }
            sections.push((key, rest.to_owned()));
        } else if let Some((_, body)) = sections.last_mut() {
            body.push('\n');
            body.push_str(line);
        } else {
            return Err(ModelFileError::StrayText {
                line: lineno + 1,
                text: trimmed.to_owned(),
            });
        }
    }

    let body = |key: &'static str| -> Result<&str, ModelFileError> {
        sections
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, b)| b.as_str())
            .ok_or(ModelFileError::MissingSection(key))
    };

    let n = parse_count("States", body("States")?)?;
    let m = parse_count("Observations", body("Observations")?)?;
    let a = parse_matrix("Transitions", body("Transitions")?, n, n)?;
    let b = parse_matrix("ObsProb", body("ObsProb")?, n, m)?;
    let labels = parse_labelling(body("Labelling")?, n)?;
    let pi = parse_row("Initial", body("Initial")?, n)?;

    let alphabet: BTreeSet<String> = labels.iter().flatten().cloned().collect();
    let hmm = Hmm::new(a, b, labels, alphabet, pi);
    let report = validate_hmm(&hmm);
    if !report.is_ok() {
        return Err(ModelFileError::Invalid(report));
    }
    Ok(hmm)
}

fn split_section_header(line: &str) -> Option<(&'static str, &str)> {
    for key in SECTION_KEYS {
        if let Some(rest) = line.strip_prefix(key) {
            let rest = rest.trim_start();
            if let Some(value) = rest.strip_prefix('=') {
                return Some((key, value));
            }
        }
    }
    None
}

fn parse_count(section: &'static str, text: &str) -> Result<usize, ModelFileError> {
    let trimmed = text.trim();
    let value: usize = trimmed.parse().map_err(|_| ModelFileError::Malformed {
        section,
        detail: format!("expected a positive integer, found '{trimmed}'"),
    })?;
    if value == 0 {
        return Err(ModelFileError::Malformed {
            section,
            detail: "must be positive".to_owned(),
        });
    }
    Ok(value)
}

fn parse_reals(section: &'static str, text: &str) -> Result<Vec<f64>, ModelFileError> {
    text.split_whitespace()
        .map(|w| {
            w.parse().map_err(|_| ModelFileError::Malformed {
                section,
                detail: format!("'{w}' is not a number"),
            })
        })
        .collect()
}

fn parse_matrix(
    section: &'static str,
    text: &str,
    n_rows: usize,
    n_cols: usize,
) -> Result<Vec<Vec<f64>>, ModelFileError> {
    let mut rows: Vec<&str> = text.split(',').collect();
    // Tolerate one trailing comma after the final row.
    if rows.last().is_some_and(|r| r.trim().is_empty()) {
        rows.pop();
    }
    if rows.len() != n_rows {
        return Err(ModelFileError::RowCount {
            section,
            expected: n_rows,
            found: rows.len(),
        });
    }
    let mut matrix = Vec::with_capacity(n_rows);
    for (i, row_text) in rows.iter().enumerate() {
        let row = parse_reals(section, row_text)?;
        if row.len() != n_cols {
            return Err(ModelFileError::ColumnCount {
                section,
                row: i,
                expected: n_cols,
                found: row.len(),
            });
        }
        matrix.push(row);
    }
    Ok(matrix)
}

fn parse_row(section: &'static str, text: &str, n: usize) -> Result<Vec<f64>, ModelFileError> {
    let row = parse_reals(section, text)?;
    if row.len() != n {
        return Err(ModelFileError::ColumnCount {
            section,
            row: 0,
            expected: n,
            found: row.len(),
        });
    }
    Ok(row)
}

fn is_identifier(word: &str) -> bool {
    let mut chars = word.chars();
    match chars.next() {
        Some(c) if c.is_ascii_lowercase() => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

fn parse_labelling(text: &str, n: usize) -> Result<Vec<BTreeSet<String>>, ModelFileError> {
    let section = "Labelling";
    let mut sets = Vec::new();
    let mut rest = text.trim();
    while !rest.is_empty() {
        rest = rest.trim_start_matches(|c: char| c.is_whitespace() || c == ',');
        if rest.is_empty() {
            break;
        }
        if !rest.starts_with('{') {
            return Err(ModelFileError::Malformed {
                section,
                detail: format!("expected '{{', found '{}'", rest.chars().next().unwrap()),
            });
        }
        let close = rest.find('}').ok_or_else(|| ModelFileError::Malformed {
            section,
            detail: "unterminated '{'".to_owned(),
        })?;
        let inner = &rest[1..close];
        let mut set = BTreeSet::new();
        for word in inner.split(',') {
            let word = word.trim();
            if word.is_empty() {
                continue;
            }
            if !is_identifier(word) {
                return Err(ModelFileError::Malformed {
                    section,
                    detail: format!("'{word}' is not a valid proposition name"),
                });
            }
            set.insert(word.to_owned());
        }
        sets.push(set);
        rest = &rest[close + 1..];
    }
    if sets.len() != n {
        return Err(ModelFileError::RowCount {
            section,
            expected: n,
            found: sets.len(),
        });
    }
    Ok(sets)
}
