//! CSV report writers. Every file starts with a `# schema: <name> v<n>`
//! comment so readers can reject layouts they do not know; the header row
//! follows. BLEU, ROUGE and self-BLEU columns are scaled by 100, probe
//! scores stay in `[0, 1]`, `%unk` columns are percentages and rates are in
//! nats.

use std::io::Write;
use std::path::Path;

use crate::corpus::BUCKETS;
use crate::error::{Error, Result};
use crate::harness::{FceRun, MetricsReport, ReconstructionReport};
use crate::oracle::BoundsReport;
use crate::probe::ProbeRow;
use crate::train::EpochRecord;

pub const METRICS_SCHEMA: &str = "metrics v1";
pub const FCE_SCHEMA: &str = "fce v1";
pub const PROBE_SCHEMA: &str = "probe v1";
pub const TRACE_SCHEMA: &str = "trace v1";
pub const RECONSTRUCTION_SCHEMA: &str = "reconstruction v1";
pub const BOUNDS_SCHEMA: &str = "bounds v1";

/// Header plus rows, ready to serialize.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub schema: &'static str,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    fn new(schema: &'static str, header: Vec<String>) -> Self {
        Self {
            schema,
            header,
            rows: Vec::new(),
        }
    }

    pub fn write_to(&self, mut out: impl Write) -> Result<()> {
        let io = |e| Error::io("<report>", e);
        writeln!(out, "# schema: {}", self.schema).map_err(io)?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.header)?;
        for row in &self.rows {
            w.write_record(row)?;
        }
        w.flush().map_err(io)?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_to(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv output is UTF-8")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv_string()).map_err(|e| Error::io(path, e))
    }
}

fn num(x: f64) -> String {
    x.to_string()
}

/// An overlap score in `[0, 1]` written on the 0–100 scale.
fn score(x: f64) -> String {
    num(100.0 * x)
}

fn opt_score(x: Option<f64>) -> String {
    x.map(score).unwrap_or_default()
}

fn headers(names: &[&str]) -> Vec<String> {
    names.iter().map(|s| s.to_string()).collect()
}

/// One row per report. Buckets without sentences leave their cells empty.
pub fn metrics_table(reports: &[MetricsReport]) -> Table {
    let mut header = headers(&["corpus", "C", "D", "R", "log_det_cov", "mean_norm_sq", "AU"]);
    for b in BUCKETS {
        for m in ["bleu2", "bleu4", "rouge2", "rouge4"] {
            header.push(format!("{}_{m}", b.label));
        }
    }
    header.extend(headers(&["unk_pct", "mean_len", "self_bleu4"]));
    let mut t = Table::new(METRICS_SCHEMA, header);
    for r in reports {
        let mut row = vec![
            r.corpus.clone(),
            num(r.c_target),
            num(r.distortion),
            num(r.rate),
            num(r.log_det_cov),
            num(r.mean_norm_sq),
            r.active_units.to_string(),
        ];
        for b in BUCKETS {
            match r.reconstruction.rows.iter().find(|s| s.bucket == b) {
                Some(s) => row.extend([
                    score(s.bleu2),
                    score(s.bleu4),
                    opt_score(s.rouge2),
                    opt_score(s.rouge4),
                ]),
                None => row.extend(std::iter::repeat_n(String::new(), 4)),
            }
        }
        row.extend([num(r.unk_rate), num(r.mean_len), score(r.self_bleu4)]);
        t.rows.push(row);
    }
    t
}

pub fn reconstruction_table(report: &ReconstructionReport) -> Table {
    let mut t = Table::new(
        RECONSTRUCTION_SCHEMA,
        headers(&["bucket", "sentences", "bleu2", "bleu4", "rouge2", "rouge4"]),
    );
    for s in &report.rows {
        t.rows.push(vec![
            s.bucket.label.to_string(),
            s.sentences.to_string(),
            score(s.bleu2),
            score(s.bleu4),
            opt_score(s.rouge2),
            opt_score(s.rouge4),
        ]);
    }
    t
}

/// FCE row with the model context that the run itself does not know.
#[derive(Clone, Debug, PartialEq)]
pub struct FceRow<'a> {
    pub corpus: &'a str,
    pub c_target: f64,
    pub vocab_size: usize,
    pub run: &'a FceRun,
}

pub fn fce_table(rows: &[FceRow<'_>]) -> Table {
    let mut t = Table::new(
        FCE_SCHEMA,
        headers(&[
            "corpus",
            "C",
            "policy",
            "vocab",
            "fce_mean",
            "fce_std",
            "repeats",
            "unk_pct_generated",
            "unk_pct_test",
            "mean_len",
            "self_bleu4",
        ]),
    );
    for r in rows {
        t.rows.push(vec![
            r.corpus.to_string(),
            num(r.c_target),
            r.run.source.clone(),
            r.vocab_size.to_string(),
            num(r.run.mean),
            num(r.run.std),
            r.run.nll.len().to_string(),
            num(r.run.unk_generated),
            num(r.run.unk_test),
            num(r.run.mean_len),
            score(r.run.self_bleu4),
        ]);
    }
    t
}

pub fn probe_table(rows: &[ProbeRow]) -> Table {
    let mut t = Table::new(
        PROBE_SCHEMA,
        headers(&[
            "category",
            "sub_category",
            "p1",
            "p2",
            "p1_bar",
            "p2_bar",
            "n_pairs",
        ]),
    );
    for r in rows {
        t.rows.push(vec![
            r.category.clone(),
            r.sub_category.clone(),
            num(r.p1),
            num(r.p2),
            num(r.p1_bar),
            num(r.p2_bar),
            r.n_pairs.to_string(),
        ]);
    }
    t
}

pub fn trace_table(trace: &[EpochRecord]) -> Table {
    let mut t = Table::new(TRACE_SCHEMA, headers(&["epoch", "train_loss", "dev_D", "dev_R"]));
    for r in trace {
        t.rows.push(vec![
            r.epoch.to_string(),
            num(r.train_loss),
            num(r.dev_distortion),
            num(r.dev_rate),
        ]);
    }
    t
}

pub fn bounds_table(world: &str, r: &BoundsReport) -> Table {
    let mut t = Table::new(
        BOUNDS_SCHEMA,
        headers(&[
            "world",
            "H",
            "D",
            "D_se",
            "I",
            "I_se",
            "R",
            "aggregate_kl",
            "aggregate_kl_se",
            "lower_margin",
            "upper_margin",
        ]),
    );
    t.rows.push(vec![
        world.to_string(),
        num(r.entropy),
        num(r.distortion.mean),
        num(r.distortion.se),
        num(r.mutual_information.mean),
        num(r.mutual_information.se),
        num(r.rate),
        num(r.aggregate_kl.mean),
        num(r.aggregate_kl.se),
        num(r.lower_margin()),
        num(r.upper_margin()),
    ]);
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_line_and_quoting() {
        let rows = vec![ProbeRow {
            category: "A, B".into(),
            sub_category: "Simple".into(),
            p1: 1.0,
            p2: 0.5,
            p1_bar: 0.25,
            p2_bar: 0.0,
            n_pairs: 4,
        }];
        let s = probe_table(&rows).to_csv_string();
        let mut lines = s.lines();
        assert_eq!(lines.next(), Some("# schema: probe v1"));
        assert_eq!(
            lines.next(),
            Some("category,sub_category,p1,p2,p1_bar,p2_bar,n_pairs")
        );
        assert_eq!(lines.next(), Some("\"A, B\",Simple,1,0.5,0.25,0,4"));
        assert_eq!(lines.next(), None);
    }
}
