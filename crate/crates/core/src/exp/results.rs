//! Result rows and the delimited tables built from them. Every table is a
//! pure function of the rows, and the rows are read straight from each run's
//! `metrics.jsonl`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::runner::{RunSnapshot, METRICS, SNAPSHOT};
use super::stats::{paired_t_test, pct_delta, summarize, Summary};
use crate::train::MetricsLog;
use crate::{Error, Result};

/// One evaluated epoch of one run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub condition: String,
    pub seed: u64,
    pub d_model: usize,
    pub phase: String,
    pub epoch: usize,
    pub val_loss: f64,
    pub val_ppl: f64,
    /// Cumulative within the phase.
    pub micro_batches: u64,
}

pub fn rows_from_log(condition: &str, seed: u64, d_model: usize, log: &MetricsLog) -> Vec<ResultRow> {
    log.records
        .iter()
        .map(|r| ResultRow {
            condition: condition.to_string(),
            seed,
            d_model,
            phase: r.phase.clone(),
            epoch: r.epoch,
            val_loss: r.val_loss,
            val_ppl: r.val_ppl,
            micro_batches: r.micro_batches,
        })
        .collect()
}

/// Rows of every run under `<root>/runs`, sorted by condition, seed, then
/// file order.
pub fn collect_rows(root: &Path) -> Result<Vec<ResultRow>> {
    let runs = root.join("runs");
    let mut out = Vec::new();
    if !runs.exists() {
        return Err(Error::MissingArtifact(runs));
    }
    let mut dirs = Vec::new();
    for c in fs::read_dir(&runs).map_err(|e| Error::io(&runs, e))? {
        let c = c.map_err(|e| Error::io(&runs, e))?.path();
        if !c.is_dir() {
            continue;
        }
        for s in fs::read_dir(&c).map_err(|e| Error::io(&c, e))? {
            let s = s.map_err(|e| Error::io(&c, e))?.path();
            if s.join(METRICS).exists() && s.join(SNAPSHOT).exists() {
                dirs.push(s);
            }
        }
    }
    let mut keyed = Vec::new();
    for d in dirs {
        let snap: RunSnapshot = serde_json::from_slice(&fs::read(d.join(SNAPSHOT)).map_err(|e| Error::io(&d, e))?)?;
        let log = MetricsLog::load(&d.join(METRICS))?;
        keyed.push(((snap.condition.name.clone(), snap.seed), rows_from_log(&snap.condition.name, snap.seed, snap.condition.d_model, &log)));
    }
    keyed.sort_by(|a, b| a.0.cmp(&b.0));
    for (_, rows) in keyed {
        out.extend(rows);
    }
    Ok(out)
}

pub fn rows_to_jsonl(rows: &[ResultRow]) -> Result<String> {
    let mut s = String::new();
    for r in rows {
        s.push_str(&serde_json::to_string(r)?);
        s.push('\n');
    }
    Ok(s)
}

pub fn rows_from_jsonl(text: &str) -> Result<Vec<ResultRow>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: "results".into(),
                line: i as u64 + 1,
                msg: e.to_string(),
            })
        })
        .collect()
}

/// A printable, delimited table.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub title: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub notes: Vec<String>,
}

impl Table {
    fn new(title: &str, header: &[&str]) -> Self {
        Self {
            title: title.into(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
            notes: Vec::new(),
        }
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let map = |e: csv::Error| Error::Format(e.to_string());
        w.write_record(&self.header).map_err(map)?;
        for r in &self.rows {
            w.write_record(r).map_err(map)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn to_text(&self) -> String {
        let cols = self.header.len();
        let mut width = vec![0; cols];
        for r in std::iter::once(&self.header).chain(&self.rows) {
            for (i, c) in r.iter().enumerate() {
                width[i] = width[i].max(c.chars().count());
            }
        }
        let line = |r: &Vec<String>| {
            r.iter()
                .enumerate()
                .map(|(i, c)| format!("{c:<w$}", w = width[i]))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut s = format!("{}\n{}\n", self.title, line(&self.header));
        s.push_str(&"-".repeat(width.iter().sum::<usize>() + 2 * cols.saturating_sub(1)));
        s.push('\n');
        for r in &self.rows {
            s.push_str(&line(r));
            s.push('\n');
        }
        for n in &self.notes {
            s.push_str(n);
            s.push('\n');
        }
        s
    }
}

/// Index of rows by (condition, seed), language-phase rows only.
struct Index<'a> {
    runs: BTreeMap<(&'a str, u64), Vec<&'a ResultRow>>,
}

impl<'a> Index<'a> {
    fn new(rows: &'a [ResultRow]) -> Self {
        let mut runs: BTreeMap<(&str, u64), Vec<&ResultRow>> = BTreeMap::new();
        for r in rows.iter().filter(|r| r.phase != "music") {
            runs.entry((r.condition.as_str(), r.seed)).or_default().push(r);
        }
        Self { runs }
    }

    fn seeds(&self, cond: &str) -> Vec<u64> {
        self.runs.keys().filter(|(c, _)| *c == cond).map(|(_, s)| *s).collect()
    }

    fn prose(&self, cond: &str, seed: u64) -> Vec<&'a ResultRow> {
        self.runs
            .get(&(cond, seed))
            .map(|v| v.iter().copied().filter(|r| r.phase == "prose").collect())
            .unwrap_or_default()
    }

    fn ppl_at(&self, cond: &str, seed: u64, epoch: usize) -> Option<f64> {
        self.prose(cond, seed).into_iter().find(|r| r.epoch == epoch).map(|r| r.val_ppl)
    }

    /// Last prose epoch: (ppl, epochs run).
    fn last(&self, cond: &str, seed: u64) -> Option<(f64, usize)> {
        self.prose(cond, seed).into_iter().max_by_key(|r| r.epoch).map(|r| (r.val_ppl, r.epoch + 1))
    }

    /// Micro-batches over all language phases of a run.
    fn batches(&self, cond: &str, seed: u64) -> u64 {
        let mut per_phase: BTreeMap<&str, u64> = BTreeMap::new();
        for r in self.runs.get(&(cond, seed)).into_iter().flatten() {
            let e = per_phase.entry(r.phase.as_str()).or_default();
            *e = (*e).max(r.micro_batches);
        }
        per_phase.values().sum()
    }

    fn per_seed(&self, cond: &str, f: impl Fn(u64) -> Option<f64>) -> Vec<(u64, f64)> {
        self.seeds(cond).into_iter().filter_map(|s| f(s).map(|v| (s, v))).collect()
    }
}

fn fmt_summary(s: &Summary) -> String {
    format!("{s:.1}")
}

fn fmt_pct(x: f64) -> String {
    format!("{x:+.1}%")
}

fn fmt_p(p: f64) -> String {
    if p < 0.001 {
        "< 0.001".into()
    } else {
        format!("{p:.3}")
    }
}

/// Paired values of two conditions over their common seeds.
fn paired(a: &[(u64, f64)], b: &[(u64, f64)]) -> (Vec<f64>, Vec<f64>) {
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (s, v) in a {
        if let Some((_, w)) = b.iter().find(|(t, _)| t == s) {
            x.push(*v);
            y.push(*w);
        }
    }
    (x, y)
}

fn p_value(a: &[(u64, f64)], b: &[(u64, f64)]) -> Result<Option<f64>> {
    let (x, y) = paired(a, b);
    if x.len() < 2 {
        return Ok(None);
    }
    Ok(Some(paired_t_test(&x, &y)?.p))
}

fn vals(v: &[(u64, f64)]) -> Vec<f64> {
    v.iter().map(|(_, x)| *x).collect()
}

fn require(idx: &Index, cond: &str) -> Result<()> {
    if idx.seeds(cond).is_empty() {
        Err(Error::EmptyData(format!("no rows for condition {cond}")))
    } else {
        Ok(())
    }
}

/// Multi-seed E0-E2 table with deltas and paired tests against `A`.
pub fn table5(rows: &[ResultRow]) -> Result<Table> {
    let idx = Index::new(rows);
    require(&idx, "A")?;
    let mut t = Table::new(
        "Phase 2: validation perplexity (mean ± std over seeds)",
        &["Condition", "E0", "E1", "E2", "Delta", "p"],
    );
    let base_e2 = idx.per_seed("A", |s| idx.ppl_at("A", s, 2));
    let base_mean = summarize(&vals(&base_e2))?.mean;
    for (cond, label) in [
        ("A", "Random (baseline)"),
        ("B", "MAESTRO-12k → Prose"),
        ("D", "Synth-36k → Prose"),
        ("C", "MAESTRO → Poetry → Prose"),
    ] {
        if idx.seeds(cond).is_empty() {
            continue;
        }
        let mut row = vec![label.to_string()];
        for e in 0..3 {
            let v = vals(&idx.per_seed(cond, |s| idx.ppl_at(cond, s, e)));
            row.push(if v.is_empty() { "-".into() } else { fmt_summary(&summarize(&v)?) });
        }
        let e2 = idx.per_seed(cond, |s| idx.ppl_at(cond, s, 2));
        if cond == "A" || e2.is_empty() {
            row.extend(["-".into(), "-".into()]);
        } else {
            row.push(fmt_pct(pct_delta(summarize(&vals(&e2))?.mean, base_mean)));
            row.push(p_value(&e2, &base_e2)?.map_or("-".into(), fmt_p));
        }
        t.rows.push(row);
    }
    Ok(t)
}

/// Compute-matched control: language-phase batches and final perplexity.
pub fn table6(rows: &[ResultRow]) -> Result<Table> {
    let idx = Index::new(rows);
    require(&idx, "compute-matched")?;
    let mut t = Table::new(
        "Compute-matched control: final validation perplexity",
        &["Condition", "Batches", "Final PPL", "p (vs pipeline)"],
    );
    let final_of = |c: &str| idx.per_seed(c, |s| idx.last(c, s).map(|x| x.0));
    let pipeline = final_of("C");
    for (cond, label) in [
        ("A", "Random (3 ep prose)"),
        ("compute-matched", "Compute-matched (5 ep prose)"),
        ("C", "MAESTRO → Poetry → Prose"),
    ] {
        if idx.seeds(cond).is_empty() {
            continue;
        }
        let batches = idx.per_seed(cond, |s| Some(idx.batches(cond, s) as f64));
        let fin = final_of(cond);
        let p = if cond == "C" {
            p_value(&pipeline, &final_of("compute-matched"))?.map_or("-".into(), fmt_p)
        } else {
            "-".into()
        };
        t.rows.push(vec![
            label.into(),
            format!("{:.0}", summarize(&vals(&batches))?.mean),
            fmt_summary(&summarize(&vals(&fin))?),
            p,
        ]);
    }
    Ok(t)
}

/// Single-seed data-volume grid with deltas against `random` at E2.
pub fn table7(rows: &[ResultRow]) -> Result<Table> {
    let idx = Index::new(rows);
    require(&idx, "random")?;
    let mut t = Table::new("Phase 1: validation perplexity by pre-training data", &["Condition", "E0", "E1", "E2", "Delta"]);
    let seed = idx.seeds("random")[0];
    let base = idx.ppl_at("random", seed, 2);
    for (cond, label) in [
        ("random", "Random (baseline)"),
        ("synth-3k", "Synth-3k"),
        ("synth-12k", "Synth-12k"),
        ("synth-36k", "Synth-36k"),
        ("maestro-3k", "MAESTRO-3k"),
        ("maestro-12k", "MAESTRO-12k"),
        ("maestro-36k", "MAESTRO-36k"),
    ] {
        if idx.seeds(cond).is_empty() {
            continue;
        }
        let mut row = vec![label.to_string()];
        for e in 0..3 {
            row.push(idx.ppl_at(cond, seed, e).map_or("-".into(), |v| format!("{v:.1}")));
        }
        row.push(match (cond, idx.ppl_at(cond, seed, 2), base) {
            ("random", _, _) => "-".into(),
            (_, Some(v), Some(b)) => fmt_pct(pct_delta(v, b)),
            _ => "-".into(),
        });
        t.rows.push(row);
    }
    Ok(t)
}

/// `(random, 12k, 36k)` E2 perplexities per scale and the derived deltas.
pub fn scale_deltas(random: f64, m12: f64, m36: f64) -> (f64, f64, f64) {
    (pct_delta(m12, random), pct_delta(m36, random), 100.0 * (m12 - m36) / m12)
}

/// Scale x data-size table. `Delta_12/36 > 0` means 36k beats 12k.
pub fn table8(rows: &[ResultRow]) -> Result<Table> {
    let idx = Index::new(rows);
    let mut t = Table::new(
        "Scale x data size: validation perplexity at E2",
        &["Scale", "Random", "MAESTRO-12k", "Delta_R 12k", "MAESTRO-36k", "Delta_R 36k", "Delta_12/36"],
    );
    for d in [16, 32, 64] {
        let get = |c: &str| {
            let name = format!("d{d}-{c}");
            idx.seeds(&name).first().and_then(|&s| idx.ppl_at(&name, s, 2))
        };
        let (Some(r), Some(a), Some(b)) = (get("random"), get("maestro-12k"), get("maestro-36k")) else {
            continue;
        };
        let (da, db, d1236) = scale_deltas(r, a, b);
        t.rows.push(vec![
            format!("d={d}"),
            format!("{r:.1}"),
            format!("{a:.1}"),
            fmt_pct(da),
            format!("{b:.1}"),
            fmt_pct(db),
            fmt_pct(d1236),
        ]);
    }
    if t.rows.is_empty() {
        return Err(Error::EmptyData("no complete scale rows".into()));
    }
    Ok(t)
}

/// Per-seed convergence comparison at width `d`, with the paired test.
pub fn table9(rows: &[ResultRow], d: usize) -> Result<Table> {
    let idx = Index::new(rows);
    let (rc, pc) = (format!("conv-d{d}-random"), format!("conv-d{d}-pipeline"));
    require(&idx, &rc)?;
    require(&idx, &pc)?;
    let mut t = Table::new(
        &format!("Convergence at d={d}: plateau perplexity per seed"),
        &["Seed", "Random PPL (ep)", "Pipeline PPL (ep)", "Gap"],
    );
    let (mut a, mut b) = (Vec::new(), Vec::new());
    for s in idx.seeds(&rc) {
        let (Some((x, ex)), Some((y, ey))) = (idx.last(&rc, s), idx.last(&pc, s)) else {
            continue;
        };
        t.rows.push(vec![
            s.to_string(),
            format!("{x:.1} ({ex})"),
            format!("{y:.1} ({ey})"),
            fmt_pct(pct_delta(y, x)),
        ]);
        a.push(x);
        b.push(y);
    }
    let (sa, sb) = (summarize(&a)?, summarize(&b)?);
    t.rows.push(vec![
        "Mean ± std".into(),
        fmt_summary(&sa),
        fmt_summary(&sb),
        fmt_pct(pct_delta(sb.mean, sa.mean)),
    ]);
    if a.len() >= 2 {
        let tt = paired_t_test(&a, &b)?;
        t.notes.push(format!("paired t = {:.2}, p = {:.3}, df = {}", tt.t, tt.p, tt.df));
    }
    Ok(t)
}

pub fn table(number: u32, rows: &[ResultRow]) -> Result<Table> {
    match number {
        5 => table5(rows),
        6 => table6(rows),
        7 => table7(rows),
        8 => table8(rows),
        9 => table9(rows, 64),
        n => Err(Error::Config(format!("no table {n}; expected 5 to 9"))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(cond: &str, seed: u64, d: usize, phase: &str, epoch: usize, ppl: f64, mb: u64) -> ResultRow {
        ResultRow {
            condition: cond.into(),
            seed,
            d_model: d,
            phase: phase.into(),
            epoch,
            val_loss: ppl.ln(),
            val_ppl: ppl,
            micro_batches: mb,
        }
    }

    #[test]
    fn table9_from_published_cells() {
        let data = [
            (42, 122.0, 8, 112.9, 7),
            (123, 117.9, 9, 116.1, 6),
            (456, 118.3, 9, 114.9, 6),
            (789, 122.3, 8, 111.4, 7),
            (1024, 117.8, 9, 109.8, 8),
        ];
        let mut rows = Vec::new();
        for (s, r, er, p, ep) in data {
            rows.push(row("conv-d64-random", s, 64, "prose", er - 1, r, 0));
            rows.push(row("conv-d64-pipeline", s, 64, "prose", ep - 1, p, 0));
        }
        let t = table9(&rows, 64).unwrap();
        assert_eq!(t.rows[0], ["42", "122.0 (8)", "112.9 (7)", "-7.5%"]);
        assert_eq!(t.rows[5], ["Mean ± std", "119.7 ± 2.3", "113.0 ± 2.6", "-5.5%"]);
        assert!(t.notes[0].starts_with("paired t = 3.8"));
        let csv = t.to_csv().unwrap();
        assert!(csv.starts_with("Seed,Random PPL (ep),Pipeline PPL (ep),Gap\n"));
        let text = rows_to_jsonl(&rows).unwrap();
        assert_eq!(rows_from_jsonl(&text).unwrap(), rows);
    }

    #[test]
    fn scale_table_deltas() {
        let mut rows = Vec::new();
        for (d, r, a, b) in [(16, 418.9, 364.3, 375.4), (32, 263.3, 222.2, 215.0), (64, 167.2, 149.1, 140.0)] {
            rows.push(row(&format!("d{d}-random"), 42, d, "prose", 2, r, 0));
            rows.push(row(&format!("d{d}-maestro-12k"), 42, d, "prose", 2, a, 0));
            rows.push(row(&format!("d{d}-maestro-36k"), 42, d, "prose", 2, b, 0));
        }
        let t = table8(&rows).unwrap();
        // recomputed from rounded cells, so within 0.1 points of the printed column
        for (r, want) in t.rows.iter().zip([-3.1, 3.3, 6.1]) {
            let got: f64 = r[6].trim_end_matches('%').parse().unwrap();
            assert!((got - want).abs() <= 0.1 + 1e-9, "{got} vs {want}");
        }
        assert_eq!(t.rows[0][3], "-13.0%");
        assert_eq!(t.rows[1][5], "-18.3%");
        assert!(table8(&[]).is_err());
    }

    #[test]
    fn multi_seed_and_compute_tables() {
        let mut rows = Vec::new();
        for (i, s) in [42u64, 123, 456].into_iter().enumerate() {
            let j = i as f64;
            for e in 0..3 {
                rows.push(row("A", s, 16, "prose", e, 700.0 - 100.0 * e as f64 + j, 2842 * (e as u64 + 1)));
                rows.push(row("C", s, 16, "poetry", e, 500.0, 2025 * (e as u64 + 1)));
                rows.push(row("C", s, 16, "prose", e, 420.0 - 30.0 * e as f64 + 2.0 * j * j, 2842 * (e as u64 + 1)));
            }
            for e in 0..5 {
                rows.push(row("compute-matched", s, 16, "prose", e, 700.0 - 60.0 * e as f64 + j, 2842 * (e as u64 + 1)));
            }
            rows.push(row("C", s, 16, "music", 0, 3.0, 1));
        }
        let t5 = table5(&rows).unwrap();
        assert_eq!(t5.rows.len(), 2);
        assert_eq!(t5.rows[0][1], "701.0 ± 1.0");
        assert_eq!(t5.rows[1][4], fmt_pct(pct_delta(360.0 + 10.0 / 3.0, 501.0)));
        let t6 = table6(&rows).unwrap();
        assert_eq!(t6.rows[1][1], "14210");
        assert_eq!(t6.rows[2][1], format!("{}", 3 * 2025 + 3 * 2842));
        assert_ne!(t6.rows[2][3], "-");
        assert!(table(4, &rows).is_err());
    }
}
