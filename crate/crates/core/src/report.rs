//! CSV tables and content hashes for run outputs.
//!
//! Numbers are written with 17 significant digits in scientific notation,
//! independent of locale. Partial runs end with a `# partial=true` comment
//! line.

use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::experiments::{ConvergenceReport, MixingReport, RunStatus, TailReport, TruncationReport};
use crate::norming::NormingTable;
use crate::numeric::fmt_sci;
use crate::processes::ExampleConditionReport;

/// Rows of string cells, serialised under RFC 4180 quoting.
pub struct Table {
    rows: Vec<Vec<String>>,
    footer: Option<String>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            rows: vec![header.into_iter().map(Into::into).collect()],
            footer: None,
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    fn with_status(mut self, status: &RunStatus) -> Self {
        if status.partial {
            self.footer = Some(format!(
                "# partial=true completed={} requested={}",
                status.replicas_completed, status.replicas_requested
            ));
        }
        self
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::CRLF).from_writer(Vec::new());
        for r in &self.rows {
            w.write_record(r).expect("in-memory csv write");
        }
        let mut out = String::from_utf8(w.into_inner().expect("in-memory csv flush")).expect("utf-8 csv");
        if let Some(f) = &self.footer {
            out.push_str(f);
            out.push_str("\r\n");
        }
        out
    }
}

fn num(x: f64) -> String {
    fmt_sci(x)
}

fn opt(x: Option<f64>) -> String {
    x.map(fmt_sci).unwrap_or_default()
}

pub fn norming_csv(t: &NormingTable) -> String {
    let mut tab = Table::new(["n", "b", "zeta", "g", "d", "ratio_dg_over_ab"]);
    for r in &t.rows {
        tab.push(vec![r.n.to_string(), r.b.to_string(), num(r.zeta), num(r.g), num(r.d), num(r.ratio_dg_over_ab)]);
    }
    tab.to_csv()
}

fn eps_label(e: f64) -> String {
    format!("{e}")
}

pub fn convergence_csv(r: &ConvergenceReport) -> String {
    let eps: Vec<f64> = r
        .rows
        .first()
        .map(|row| row.dev_prob.iter().map(|d| d.epsilon).collect())
        .unwrap_or_default();
    let mut header: Vec<String> = ["n", "b", "d", "mean_abs_error", "mean_abs_error_se", "mean_ratio", "mean_ratio_se"]
        .map(String::from)
        .to_vec();
    for e in &eps {
        header.push(format!("dev_prob_{}", eps_label(*e)));
        header.push(format!("dev_prob_{}_se", eps_label(*e)));
    }
    let mut tab = Table::new(header);
    for row in &r.rows {
        let mut cells = vec![
            row.n.to_string(),
            row.b.to_string(),
            num(row.d),
            num(row.mean_abs_error),
            opt(row.mean_abs_error_se),
            num(row.mean_ratio),
            opt(row.mean_ratio_se),
        ];
        for d in &row.dev_prob {
            cells.push(num(d.prob));
            cells.push(num(d.se));
        }
        tab.push(cells);
    }
    tab.with_status(&r.status).to_csv()
}

pub fn tail_report_csv(r: &TailReport) -> String {
    let mut tab = Table::new([
        "n",
        "b",
        "replicas",
        "hill_k",
        "hill",
        "hill_ci_low",
        "hill_ci_high",
        "max_sample",
        "divergence_flag",
    ]);
    tab.push(vec![
        r.n.to_string(),
        r.b.to_string(),
        r.status.replicas_completed.to_string(),
        r.hill_k.to_string(),
        num(r.hill_index),
        num(r.hill_ci.0),
        num(r.hill_ci.1),
        num(r.max_sample),
        r.divergence_flag.to_string(),
    ]);
    tab.with_status(&r.status).to_csv()
}

pub fn running_means_csv(r: &TailReport) -> String {
    let mut tab = Table::new(["replicas", "running_mean", "se"]);
    for m in &r.running_means {
        tab.push(vec![m.replicas.to_string(), num(m.mean), opt(m.se)]);
    }
    tab.with_status(&r.status).to_csv()
}

pub fn omega_csv(r: &TailReport) -> String {
    let mut tab = Table::new(["omega", "threshold", "empirical_frequency", "minorant"]);
    for o in &r.omega_checks {
        tab.push(vec![num(o.omega), num(o.threshold), num(o.empirical_frequency), num(o.minorant)]);
    }
    tab.with_status(&r.status).to_csv()
}

pub fn mixing_csv(r: &MixingReport) -> String {
    let mut tab = Table::new(["lag", "psi_lower_bound", "argmax_B", "argmax_C", "M", "psi_se"]);
    for e in &r.estimates {
        tab.push(vec![
            e.lag.to_string(),
            num(e.value),
            e.argmax_events.0.clone(),
            e.argmax_events.1.clone(),
            e.sample_size.to_string(),
            opt(e.standard_error),
        ]);
    }
    tab.with_status(&r.status).to_csv()
}

pub fn truncation_csv(r: &TruncationReport) -> String {
    let mut tab = Table::new([
        "n",
        "b",
        "f",
        "mean_truncated",
        "mean_truncated_se",
        "exact",
        "asymptotic",
        "z_score",
        "mean_trimmed_ratio",
        "mean_trimmed_ratio_se",
    ]);
    for row in &r.rows {
        tab.push(vec![
            row.n.to_string(),
            row.b.to_string(),
            num(row.f),
            num(row.mean_truncated),
            opt(row.mean_truncated_se),
            num(row.exact),
            num(row.asymptotic),
            opt(row.z_score),
            num(row.mean_trimmed_ratio),
            opt(row.mean_trimmed_ratio_se),
        ]);
    }
    tab.with_status(&r.status).to_csv()
}

pub fn asymptotic_ratio_csv(r: &TruncationReport) -> String {
    let mut tab = Table::new(["f", "exact", "asymptotic", "ratio"]);
    for a in &r.asymptotic_ratios {
        tab.push(vec![num(a.f), num(a.exact), num(a.asymptotic), num(a.ratio)]);
    }
    tab.to_csv()
}

pub fn conditions_csv(r: &ExampleConditionReport) -> String {
    let mut tab = Table::new(["check", "passed", "witness"]);
    for c in r.checks() {
        tab.push(vec![c.name.to_string(), c.passed.to_string(), c.witness.clone()]);
    }
    let mixing = serde_json::to_value(r.topological_mixing).expect("enum to json");
    tab.push(vec![
        "topological_mixing".into(),
        String::new(),
        mixing.as_str().unwrap_or_default().to_string(),
    ]);
    tab.to_csv()
}

/// Tidy long-format rows `(series, x, y)` for external plotting.
#[derive(Debug, Default)]
pub struct PlotData {
    rows: Vec<(String, f64, f64)>,
}

impl PlotData {
    pub fn push(&mut self, series: impl Into<String>, x: f64, y: f64) {
        self.rows.push((series.into(), x, y));
    }

    pub fn to_csv(&self) -> String {
        let mut tab = Table::new(["series", "x", "y"]);
        for (s, x, y) in &self.rows {
            tab.push(vec![s.clone(), num(*x), num(*y)]);
        }
        tab.to_csv()
    }
}

pub fn convergence_plot(r: &ConvergenceReport) -> PlotData {
    let mut p = PlotData::default();
    for row in &r.rows {
        let n = row.n as f64;
        p.push("mean_abs_error", n, row.mean_abs_error);
        p.push("mean_ratio", n, row.mean_ratio);
        for d in &row.dev_prob {
            p.push(format!("dev_prob_{}", eps_label(d.epsilon)), n, d.prob);
        }
    }
    p
}

pub fn norming_plot(t: &NormingTable) -> PlotData {
    let mut p = PlotData::default();
    for r in &t.rows {
        let n = r.n as f64;
        p.push("d", n, r.d);
        p.push("g", n, r.g);
        p.push("ratio_dg_over_ab", n, r.ratio_dg_over_ab);
    }
    p
}

pub fn tail_plot(r: &TailReport) -> PlotData {
    let mut p = PlotData::default();
    for m in &r.running_means {
        p.push("running_mean", m.replicas as f64, m.mean);
    }
    p
}

pub fn mixing_plot(r: &MixingReport) -> PlotData {
    let mut p = PlotData::default();
    for e in &r.estimates {
        p.push("psi_lower_bound", e.lag as f64, e.value);
    }
    p
}

pub fn truncation_plot(r: &TruncationReport) -> PlotData {
    let mut p = PlotData::default();
    for a in &r.asymptotic_ratios {
        p.push("exact_over_asymptotic", a.f, a.ratio);
    }
    for row in &r.rows {
        p.push("mean_truncated", row.n as f64, row.mean_truncated);
        p.push("exact", row.n as f64, row.exact);
    }
    p
}

/// Git-style object hash: SHA-256 of `blob <len>\0<bytes>`, hex encoded.
pub fn content_hash(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(format!("blob {}\0", bytes.len()).as_bytes());
    h.update(bytes);
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Hash of the canonical JSON serialisation of a config.
pub fn config_hash<T: Serialize>(config: &T) -> String {
    content_hash(serde_json::to_string(config).expect("config to json").as_bytes())
}
