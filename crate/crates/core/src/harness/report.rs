use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::{Evaluation, Method};
use crate::error::Result;
use crate::metrics::format_db;

/// Aggregate of one (condition, method) cell over shapes and seeds. Chamfer
/// values are scaled by 100.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub condition: String,
    pub method: Method,
    pub cd_sum_e2: f64,
    pub cd_sum_std_e2: f64,
    pub cd_mean_e2: f64,
    pub psnr_db: f64,
    pub shapes: usize,
    pub seeds: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TimingRow {
    pub condition: String,
    pub method: Method,
    pub adapt_ms: f64,
    pub infer_ms: f64,
}

impl TimingRow {
    pub fn total_ms(&self) -> f64 {
        self.adapt_ms + self.infer_ms
    }
}

fn mean(v: impl Iterator<Item = f64> + Clone) -> f64 {
    let n = v.clone().count().max(1) as f64;
    v.sum::<f64>() / n
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    if v.len().is_multiple_of(2) {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    }
}

/// Builds the metric and timing rows of one cell.
pub(crate) fn aggregate(
    condition: &str,
    method: Method,
    samples: &[Evaluation],
    shapes: usize,
    seeds: usize,
) -> (SweepRow, TimingRow) {
    let cd = samples.iter().map(|s| s.report.cd_sum * 100.0);
    let m = mean(cd.clone());
    let var = mean(cd.map(|c| (c - m) * (c - m)));
    let row = SweepRow {
        condition: condition.to_string(),
        method,
        cd_sum_e2: m,
        cd_sum_std_e2: var.sqrt(),
        cd_mean_e2: mean(samples.iter().map(|s| s.report.cd_mean * 100.0)),
        psnr_db: mean(samples.iter().map(|s| s.report.psnr_db)),
        shapes,
        seeds,
    };
    let timing = TimingRow {
        condition: condition.to_string(),
        method,
        adapt_ms: median(samples.iter().map(|s| s.adapt_ms).collect()),
        infer_ms: median(samples.iter().map(|s| s.infer_ms).collect()),
    };
    (row, timing)
}

/// Rows of one ablation. The metric table is a pure function of the
/// configuration and seeds; wall times live in a separate table.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub ablation: String,
    /// Header of the condition column, e.g. `noise_level`.
    pub condition_name: String,
    pub rows: Vec<SweepRow>,
    pub timing: Vec<TimingRow>,
}

impl SweepReport {
    pub fn row(&self, condition: &str, method: Method) -> Option<&SweepRow> {
        self.rows
            .iter()
            .find(|r| r.condition == condition && r.method == method)
    }

    pub fn timing_row(&self, condition: &str, method: Method) -> Option<&TimingRow> {
        self.timing
            .iter()
            .find(|r| r.condition == condition && r.method == method)
    }

    fn header(&self) -> [String; 8] {
        [
            self.condition_name.clone(),
            "method".into(),
            "cd_sum_e2".into(),
            "cd_sum_std_e2".into(),
            "cd_mean_e2".into(),
            "psnr_db".into(),
            "shapes".into(),
            "seeds".into(),
        ]
    }

    fn cells(&self) -> Vec<[String; 8]> {
        self.rows
            .iter()
            .map(|r| {
                [
                    r.condition.clone(),
                    r.method.to_string(),
                    format!("{:.6}", r.cd_sum_e2),
                    format!("{:.6}", r.cd_sum_std_e2),
                    format!("{:.6}", r.cd_mean_e2),
                    format_db(r.psnr_db),
                    r.shapes.to_string(),
                    r.seeds.to_string(),
                ]
            })
            .collect()
    }

    pub fn to_tsv(&self) -> String {
        let mut out = self.header().join("\t");
        out.push('\n');
        for c in self.cells() {
            out.push_str(&c.join("\t"));
            out.push('\n');
        }
        out
    }

    /// Space-aligned rendering of [`Self::to_tsv`]; numbers are right-aligned.
    pub fn to_table(&self) -> String {
        let header = self.header();
        let cells = self.cells();
        let mut width = header.clone().map(|h| h.len());
        for c in &cells {
            for (w, v) in width.iter_mut().zip(c) {
                *w = (*w).max(v.len());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, row: &[String; 8]| {
            let parts: Vec<String> = row
                .iter()
                .zip(&width)
                .enumerate()
                .map(|(i, (v, &w))| {
                    if i < 2 {
                        format!("{v:<w$}")
                    } else {
                        format!("{v:>w$}")
                    }
                })
                .collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&mut out, &header);
        let rule: Vec<String> = width.iter().map(|&w| "-".repeat(w)).collect();
        let _ = writeln!(out, "{}", rule.join("  "));
        for c in &cells {
            line(&mut out, c);
        }
        out
    }

    pub fn timing_tsv(&self) -> String {
        let mut out = format!(
            "{}\tmethod\tadapt_ms\tinfer_ms\ttotal_ms\n",
            self.condition_name
        );
        for t in &self.timing {
            let _ = writeln!(
                out,
                "{}\t{}\t{:.3}\t{:.3}\t{:.3}",
                t.condition,
                t.method,
                t.adapt_ms,
                t.infer_ms,
                t.total_ms()
            );
        }
        out
    }

    /// Writes `<ablation>.tsv`, `<ablation>.txt` and `<ablation>_timing.tsv`
    /// into `dir` and returns their paths in that order.
    pub fn write_files(&self, dir: &Path) -> Result<[PathBuf; 3]> {
        std::fs::create_dir_all(dir)?;
        let paths = [
            dir.join(format!("{}.tsv", self.ablation)),
            dir.join(format!("{}.txt", self.ablation)),
            dir.join(format!("{}_timing.tsv", self.ablation)),
        ];
        std::fs::write(&paths[0], self.to_tsv())?;
        std::fs::write(&paths[1], self.to_table())?;
        std::fs::write(&paths[2], self.timing_tsv())?;
        Ok(paths)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::MetricReport;

    fn sample(cd: f64, ms: f64) -> Evaluation {
        Evaluation {
            report: MetricReport {
                cd_sum: cd,
                cd_mean: cd / 10.0,
                psnr_db: 30.0,
                wall_time_ms: ms,
            },
            adapt_ms: ms,
            infer_ms: 1.0,
        }
    }

    #[test]
    fn aggregate_statistics() {
        let (row, t) = aggregate(
            "0.01",
            Method::MetaTta,
            &[sample(0.01, 2.0), sample(0.03, 4.0)],
            2,
            1,
        );
        assert!((row.cd_sum_e2 - 2.0).abs() < 1e-12);
        assert!((row.cd_sum_std_e2 - 1.0).abs() < 1e-12);
        assert!((row.cd_mean_e2 - 0.2).abs() < 1e-12);
        assert_eq!(t.total_ms(), 4.0);
    }

    #[test]
    fn renderings_agree() {
        let (r1, t1) = aggregate("0", Method::Frozen, &[sample(0.5, 0.0)], 1, 1);
        let (r2, t2) = aggregate("0", Method::NaiveTta, &[sample(0.25, 3.0)], 1, 1);
        let rep = SweepReport {
            ablation: "noise".into(),
            condition_name: "noise_level".into(),
            rows: vec![r1, r2],
            timing: vec![t1, t2],
        };
        let tsv = rep.to_tsv();
        assert_eq!(
            tsv.lines().next().unwrap(),
            "noise_level\tmethod\tcd_sum_e2\tcd_sum_std_e2\tcd_mean_e2\tpsnr_db\tshapes\tseeds"
        );
        assert_eq!(
            tsv.lines().nth(2).unwrap(),
            "0\tnaive-tta\t25.000000\t0.000000\t2.500000\t30.0000\t1\t1"
        );
        let table = rep.to_table();
        assert_eq!(table.lines().count(), 4);
        let widths: Vec<usize> = table.lines().map(str::len).collect();
        assert_eq!(widths[0], widths[2]);
        assert!(rep.timing_tsv().contains("naive-tta\t3.000\t1.000\t4.000"));
        assert_eq!(rep.row("0", Method::Frozen).unwrap().cd_sum_e2, 50.0);
    }
}
