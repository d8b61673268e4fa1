//! CSV output with a leading `# key=value` metadata block.

use std::io::Write;

use tucreg::ldp::GapRow;

use crate::experiments::{ProfileCheck, RunResult};

pub const TRACE_HEADER: [&str; 13] = [
    "experiment_id",
    "model",
    "algorithm",
    "seed",
    "n",
    "r",
    "r_star",
    "sigma",
    "iter",
    "rel_rmse",
    "loss",
    "stepsize",
    "elapsed_ms",
];

/// Shortest round-trip scientific notation.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:e}")
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub metadata: Vec<(String, String)>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub runs: Vec<RunResult>,
    pub gap: Vec<(usize, GapRow)>,
    pub checks: Vec<ProfileCheck>,
}

impl Report {
    pub fn new(header: Vec<String>) -> Self {
        Self {
            header,
            ..Self::default()
        }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (k, v) in &self.metadata {
            writeln!(w, "# {k}={v}")?;
        }
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(&self.header)?;
        for row in &self.rows {
            csv.write_record(row)?;
        }
        csv.flush()
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("CSV is UTF-8")
    }
}

/// Drops the `elapsed_ms` column, the one field outside the determinism
/// contract. Metadata lines are kept verbatim.
pub fn strip_timing(csv_text: &str) -> String {
    let mut out = String::new();
    let mut drop_col: Option<usize> = None;
    for line in csv_text.lines() {
        if line.starts_with('#') {
            out.push_str(line);
            out.push('\n');
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if drop_col.is_none() {
            drop_col = Some(fields.iter().position(|f| *f == "elapsed_ms").unwrap_or(usize::MAX));
        }
        let kept: Vec<&str> = fields
            .iter()
            .enumerate()
            .filter(|(i, _)| Some(*i) != drop_col)
            .map(|(_, f)| *f)
            .collect();
        out.push_str(&kept.join(","));
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metadata_precedes_header() {
        let mut r = Report::new(vec!["a".into(), "elapsed_ms".into()]);
        r.metadata.push(("k".into(), "v".into()));
        r.rows.push(vec!["1".into(), "2.5".into()]);
        let s = r.to_csv_string();
        assert_eq!(s, "# k=v\na,elapsed_ms\n1,2.5\n");
        assert_eq!(strip_timing(&s), "# k=v\na\n1\n");
    }

    #[test]
    fn float_format_round_trips() {
        for x in [0.0, 1e-13, 3944.0, -0.25, f64::NAN] {
            let s = fmt_f64(x);
            let y: f64 = s.parse().unwrap();
            assert!(y == x || (x.is_nan() && y.is_nan()), "{s}");
        }
    }
}
