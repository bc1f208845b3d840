//! The result-row CSV schema.
//!
//! Columns are fixed: `seed, T, method, final_f, avg_grad_sq, min_grad_sq,
//! bound_rhs, a3_verified, invariants_pass, hp_event, wall_ms`. Every float
//! is written with Rust's shortest-round-trip formatting, so a file is
//! reproducible byte for byte except for the wall-time column.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

pub const CSV_HEADER: &str =
    "seed,T,method,final_f,avg_grad_sq,min_grad_sq,bound_rhs,a3_verified,invariants_pass,hp_event,wall_ms";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub seed: u64,
    pub t: usize,
    pub method: String,
    pub final_f: f64,
    pub avg_grad_sq: f64,
    pub min_grad_sq: f64,
    pub bound_rhs: f64,
    pub a3_verified: bool,
    pub invariants_pass: bool,
    pub hp_event: bool,
    pub wall_ms: u64,
}

impl ResultRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.seed,
            self.t,
            self.method,
            self.final_f,
            self.avg_grad_sq,
            self.min_grad_sq,
            self.bound_rhs,
            self.a3_verified,
            self.invariants_pass,
            self.hp_event,
            self.wall_ms
        )
    }

    pub fn parse_csv(line: &str) -> Result<ResultRow> {
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 11 {
            bail!("expected 11 columns, got {} in `{line}`", fields.len());
        }
        Ok(ResultRow {
            seed: fields[0].parse().context("seed")?,
            t: fields[1].parse().context("T")?,
            method: fields[2].to_string(),
            final_f: fields[3].parse().context("final_f")?,
            avg_grad_sq: fields[4].parse().context("avg_grad_sq")?,
            min_grad_sq: fields[5].parse().context("min_grad_sq")?,
            bound_rhs: fields[6].parse().context("bound_rhs")?,
            a3_verified: fields[7].parse().context("a3_verified")?,
            invariants_pass: fields[8].parse().context("invariants_pass")?,
            hp_event: fields[9].parse().context("hp_event")?,
            wall_ms: fields[10].parse().context("wall_ms")?,
        })
    }
}

pub fn write_csv(rows: &[ResultRow]) -> String {
    let mut out = String::with_capacity(64 * (rows.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&row.to_csv());
        out.push('\n');
    }
    out
}

pub fn parse_csv(text: &str) -> Result<Vec<ResultRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == CSV_HEADER => {}
        Some(h) => bail!("unexpected CSV header `{h}`"),
        None => bail!("empty CSV"),
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| ResultRow::parse_csv(l).with_context(|| format!("line {}", i + 2)))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row() -> ResultRow {
        ResultRow {
            seed: 3,
            t: 1000,
            method: "adagrad-m".into(),
            final_f: 0.125,
            avg_grad_sq: 1.5e-3,
            min_grad_sq: 2e-7,
            bound_rhs: 42.75,
            a3_verified: true,
            invariants_pass: true,
            hp_event: false,
            wall_ms: 17,
        }
    }

    #[test]
    fn rows_round_trip_through_csv() {
        let rows = vec![row(), ResultRow { seed: 4, final_f: f64::NAN, ..row() }];
        let text = write_csv(&rows);
        assert!(text.starts_with(CSV_HEADER));
        let back = parse_csv(&text).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0], rows[0]);
        assert!(back[1].final_f.is_nan());
        assert_eq!(back[1].seed, 4);
    }

    #[test]
    fn header_is_exactly_the_documented_schema() {
        assert_eq!(
            CSV_HEADER,
            "seed,T,method,final_f,avg_grad_sq,min_grad_sq,bound_rhs,a3_verified,invariants_pass,hp_event,wall_ms"
        );
        let n_fields = row().to_csv().split(',').count();
        assert_eq!(n_fields, CSV_HEADER.split(',').count());
    }

    #[test]
    fn floats_round_trip_exactly() {
        let mut r = row();
        r.avg_grad_sq = 0.1 + 0.2; // not representable as a short decimal
        r.bound_rhs = f64::MIN_POSITIVE;
        let back = ResultRow::parse_csv(&r.to_csv()).unwrap();
        assert_eq!(back.avg_grad_sq.to_bits(), r.avg_grad_sq.to_bits());
        assert_eq!(back.bound_rhs.to_bits(), r.bound_rhs.to_bits());
    }

    #[test]
    fn malformed_lines_are_rejected() {
        assert!(ResultRow::parse_csv("1,2,3").is_err());
        assert!(parse_csv("bad header\n").is_err());
        assert!(parse_csv("").is_err());
    }
}
