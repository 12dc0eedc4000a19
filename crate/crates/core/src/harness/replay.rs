//! Score tables: per-candidate realized scores in CSV, for replaying the
//! threshold and evaluation pipeline on externally produced scores.
//!
//! Format (header required, comma separated):
//!
//! ```text
//! candidate_id,group,label,score_original,score_candidate_llm,hirer_draw_1,...,hirer_draw_k
//! ```
//!
//! `group` is `P` or `U`, `label` is `0` or `1`. An empty
//! `score_candidate_llm` means the candidate had no LLM. Hirer draw cells may
//! be left empty at the end of a row; a row's draws are the non-empty prefix.
//! Scores are written with the shortest representation that parses back to
//! the same `f64`.

use std::collections::HashSet;
use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::model::{Group, Label};
use crate::schemes::{Realization, SchemeKind};

const FIXED_COLUMNS: [&str; 5] = [
    "candidate_id",
    "group",
    "label",
    "score_original",
    "score_candidate_llm",
];

#[derive(Clone, Debug, PartialEq)]
pub struct ScoreTable {
    pub rows: Vec<Realization>,
    /// Number of `hirer_draw_j` columns in the header.
    pub hirer_columns: usize,
}

fn parse_err(line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        line: line as usize,
        message: message.into(),
    }
}

fn parse_score(cell: &str, column: &str, line: u64) -> Result<f64> {
    let v: f64 = cell
        .trim()
        .parse()
        .map_err(|_| parse_err(line, format!("column `{column}`: `{cell}` is not a number")))?;
    if !v.is_finite() {
        return Err(parse_err(line, format!("column `{column}`: score must be finite")));
    }
    Ok(v)
}

impl ScoreTable {
    pub fn new(rows: Vec<Realization>) -> Self {
        let hirer_columns = rows.iter().map(|r| r.hirer_scores.len()).max().unwrap_or(0);
        Self { rows, hirer_columns }
    }

    pub fn read<R: Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
        let header = rdr.headers()?.clone();
        let names: Vec<&str> = header.iter().map(str::trim).collect();
        if names.len() < FIXED_COLUMNS.len() || names[..FIXED_COLUMNS.len()] != FIXED_COLUMNS {
            return Err(parse_err(
                1,
                format!("header must start with {}", FIXED_COLUMNS.join(",")),
            ));
        }
        for (j, name) in names[FIXED_COLUMNS.len()..].iter().enumerate() {
            let want = format!("hirer_draw_{}", j + 1);
            if *name != want {
                return Err(parse_err(1, format!("expected column `{want}`, found `{name}`")));
            }
        }
        let hirer_columns = names.len() - FIXED_COLUMNS.len();
        let mut rows = Vec::new();
        let mut ids = HashSet::new();
        for record in rdr.records() {
            let record = record.map_err(|e| {
                let line = e.position().map(|p| p.line()).unwrap_or(0);
                parse_err(line, e.to_string())
            })?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            if record.len() != names.len() {
                return Err(parse_err(
                    line,
                    format!("expected {} fields, found {}", names.len(), record.len()),
                ));
            }
            let id = record[0].trim().to_string();
            if id.is_empty() {
                return Err(parse_err(line, "empty candidate_id"));
            }
            if !ids.insert(id.clone()) {
                return Err(parse_err(line, format!("duplicate candidate_id `{id}`")));
            }
            let group = match record[1].trim() {
                "P" => Group::P,
                "U" => Group::U,
                other => return Err(parse_err(line, format!("group must be P or U, found `{other}`"))),
            };
            let label = match record[2].trim() {
                "0" => Label::Unqualified,
                "1" => Label::Qualified,
                other => return Err(parse_err(line, format!("label must be 0 or 1, found `{other}`"))),
            };
            let original_score = parse_score(&record[3], "score_original", line)?;
            let candidate_llm_score = match record[4].trim() {
                "" => None,
                cell => Some(parse_score(cell, "score_candidate_llm", line)?),
            };
            let mut hirer_scores = Vec::new();
            let mut ended = false;
            for j in 0..hirer_columns {
                let cell = record[FIXED_COLUMNS.len() + j].trim();
                let column = format!("hirer_draw_{}", j + 1);
                if cell.is_empty() {
                    ended = true;
                } else if ended {
                    return Err(parse_err(
                        line,
                        format!("column `{column}` follows an empty hirer draw"),
                    ));
                } else {
                    hirer_scores.push(parse_score(cell, &column, line)?);
                }
            }
            rows.push(Realization {
                candidate_id: id,
                group,
                label,
                original_score,
                candidate_llm_score,
                hirer_scores,
            });
        }
        if rows.is_empty() {
            return Err(parse_err(1, "score table has no rows"));
        }
        Ok(Self { rows, hirer_columns })
    }

    pub fn write<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
        header.extend((1..=self.hirer_columns).map(|j| format!("hirer_draw_{j}")));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut row = vec![
                r.candidate_id.clone(),
                r.group.to_string(),
                r.label.as_u8().to_string(),
                r.original_score.to_string(),
                r.candidate_llm_score.map(|s| s.to_string()).unwrap_or_default(),
            ];
            for j in 0..self.hirer_columns {
                row.push(r.hirer_scores.get(j).map(|s| s.to_string()).unwrap_or_default());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Checks the table can support the requested schemes.
    pub fn check_schemes(&self, schemes: &[SchemeKind]) -> Result<()> {
        let labels: HashSet<Label> = self.rows.iter().map(|r| r.label).collect();
        if labels.len() < 2 {
            return Err(Error::config("table.label", "score table needs both labels"));
        }
        for s in schemes {
            let need = s.hirer_tickets();
            if need > self.hirer_columns {
                return Err(Error::config(
                    format!("hirer_draw_{}", self.hirer_columns + 1),
                    format!(
                        "scheme `{s}` needs {need} hirer draw column(s); missing column `hirer_draw_{}`",
                        self.hirer_columns + 1
                    ),
                ));
            }
        }
        Ok(())
    }
}
