use std::fmt::Write as _;

use super::{dvh, hf_energy_ratio, mean_std, paired_t_test, summary_metrics, DoseSummary, DvhCurve, TTest};
use crate::error::{contract, Error, Result};
use crate::numerics::Tensor;
use crate::phantom::{PhantomCase, OAR_NAMES};

pub const METRIC_NAMES: [&str; 5] = ["hi", "d98", "d2", "dmax", "dmean"];
const SUMMARY_IDS: [&str; 2] = ["mean", "std"];

fn metric(s: &DoseSummary, name: &str) -> Option<f64> {
    match name {
        "hi" => s.hi,
        "d98" => Some(s.d98),
        "d2" => Some(s.d2),
        "dmax" => Some(s.dmax),
        "dmean" => Some(s.dmean),
        _ => None,
    }
}

/// A prediction paired with its ground-truth case.
#[derive(Debug, Clone)]
pub struct EvalCase<'a> {
    pub pred: &'a Tensor,
    pub truth: &'a PhantomCase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseRow {
    pub case_id: String,
    pub pred: DoseSummary,
    pub truth: DoseSummary,
    pub hf_pred: f64,
    pub hf_truth: f64,
    /// `|metric(pred) − metric(truth)|` in [`METRIC_NAMES`] order, `None`
    /// where either side is undefined.
    pub deltas: [Option<f64>; 5],
}

impl CaseRow {
    pub fn new(case_id: String, pred: DoseSummary, truth: DoseSummary, hf_pred: f64, hf_truth: f64) -> Self {
        let deltas = METRIC_NAMES.map(|m| Some((metric(&pred, m)? - metric(&truth, m)?).abs()));
        Self {
            case_id,
            pred,
            truth,
            hf_pred,
            hf_truth,
            deltas,
        }
    }

    pub fn delta(&self, name: &str) -> Option<f64> {
        METRIC_NAMES.iter().position(|m| *m == name).and_then(|i| self.deltas[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CaseCurves {
    pub case_id: String,
    pub pred: Vec<DvhCurve>,
    pub truth: Vec<DvhCurve>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricComparison {
    pub metric: String,
    pub mean_delta: f64,
    pub mean_delta_other: f64,
    pub test: TTest,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct DoseReport {
    pub rows: Vec<CaseRow>,
    /// Not serialized to the report CSV.
    pub curves: Vec<CaseCurves>,
}

/// Per-case PTV metrics for prediction and truth, DVH curves for the PTV and
/// every nonempty OAR on a shared dose grid, and spectral scores.
pub fn evaluate(cases: &[EvalCase<'_>], n_bins: usize) -> Result<DoseReport> {
    let mut report = DoseReport::default();
    for c in cases {
        let truth = c.truth;
        contract!(
            c.pred.len() == truth.y.len(),
            "{}: prediction shape {:?} does not match dose shape {:?}",
            truth.case_id,
            c.pred.shape(),
            truth.y.shape()
        );
        let pred = c.pred.clone().reshape(truth.y.shape())?;
        let ptv = truth.ptv_mask();
        report.rows.push(CaseRow::new(
            truth.case_id.clone(),
            summary_metrics(&pred, &ptv)?,
            summary_metrics(&truth.y, &ptv)?,
            hf_energy_ratio(&pred)?,
            hf_energy_ratio(&truth.y)?,
        ));
        let top = pred
            .data()
            .iter()
            .chain(truth.y.data())
            .fold(0.0f64, |m, &d| m.max(d as f64));
        let mut structures = vec![("ptv".to_string(), ptv)];
        for (i, name) in OAR_NAMES.iter().enumerate() {
            let m = truth.oar_mask(i);
            if m.data().iter().any(|&v| v > 0.5) {
                structures.push((name.to_string(), m));
            }
        }
        let mut curves = CaseCurves {
            case_id: truth.case_id.clone(),
            pred: Vec::new(),
            truth: Vec::new(),
        };
        for (name, mask) in &structures {
            curves.pred.push(dvh(name, &pred, mask, n_bins, Some(top))?);
            curves.truth.push(dvh(name, &truth.y, mask, n_bins, Some(top))?);
        }
        report.curves.push(curves);
    }
    Ok(report)
}

fn fmt_value(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.8e}"),
        None => "NA".to_string(),
    }
}

fn parse_value(s: &str, line: usize) -> Result<Option<f64>> {
    if s == "NA" {
        return Ok(None);
    }
    s.parse::<f64>()
        .map(Some)
        .map_err(|_| Error::Csv(format!("line {line}: cannot parse number {s:?}")))
}

impl DoseReport {
    pub fn deltas(&self, name: &str) -> Vec<f64> {
        self.rows.iter().filter_map(|r| r.delta(name)).collect()
    }

    /// Mean and sample standard deviation of a metric's deltas.
    pub fn delta_stats(&self, name: &str) -> (f64, f64) {
        mean_std(&self.deltas(name))
    }

    pub fn mean_hf_pred(&self) -> f64 {
        mean_std(&self.rows.iter().map(|r| r.hf_pred).collect::<Vec<_>>()).0
    }

    pub fn header() -> String {
        let mut cols = vec!["case_id".to_string()];
        for m in METRIC_NAMES {
            cols.extend([format!("pred_{m}"), format!("gt_{m}"), format!("delta_{m}")]);
        }
        cols.extend(["hf_pred".to_string(), "hf_gt".to_string()]);
        cols.join(",")
    }

    fn row_values(r: &CaseRow) -> Vec<Option<f64>> {
        let mut v = Vec::new();
        for m in METRIC_NAMES {
            v.extend([metric(&r.pred, m), metric(&r.truth, m), r.delta(m)]);
        }
        v.extend([Some(r.hf_pred), Some(r.hf_truth)]);
        v
    }

    /// Per-case rows followed by `mean` and `std` rows over each column.
    /// Numbers carry 9 significant digits; the summary rows aggregate the
    /// printed values so a re-read report writes back identically.
    pub fn to_csv(&self) -> String {
        let mut out = Self::header();
        out.push('\n');
        let table: Vec<Vec<Option<f64>>> = self.rows.iter().map(Self::row_values).collect();
        for (r, vals) in self.rows.iter().zip(&table) {
            out.push_str(&r.case_id);
            for v in vals {
                let _ = write!(out, ",{}", fmt_value(*v));
            }
            out.push('\n');
        }
        let width = table.first().map_or(0, Vec::len);
        let columns: Vec<Vec<f64>> = (0..width)
            .map(|j| {
                table
                    .iter()
                    .filter_map(|row| row[j])
                    .map(|v| fmt_value(Some(v)).parse::<f64>().expect("formatted float"))
                    .collect()
            })
            .collect();
        for (k, id) in SUMMARY_IDS.iter().enumerate() {
            out.push_str(id);
            for col in &columns {
                let v = (!col.is_empty()).then(|| {
                    let (m, s) = mean_std(col);
                    if k == 0 {
                        m
                    } else {
                        s
                    }
                });
                let _ = write!(out, ",{}", fmt_value(v));
            }
            out.push('\n');
        }
        out
    }

    /// Reads the per-case rows back; summary rows are recomputed, not read.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let header = lines.next().ok_or_else(|| Error::Csv("empty report".into()))?;
        if header != Self::header() {
            return Err(Error::Csv(format!("unexpected header {header:?}")));
        }
        let mut rows = Vec::new();
        for (i, line) in lines.enumerate() {
            let n = i + 2;
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 1 + 3 * METRIC_NAMES.len() + 2 {
                return Err(Error::Csv(format!("line {n}: expected {} fields, got {}", 1 + 3 * METRIC_NAMES.len() + 2, cells.len())));
            }
            if SUMMARY_IDS.contains(&cells[0]) {
                continue;
            }
            let vals: Vec<Option<f64>> = cells[1..].iter().map(|c| parse_value(c, n)).collect::<Result<_>>()?;
            let need = |v: Option<f64>, what: &str| v.ok_or_else(|| Error::Csv(format!("line {n}: {what} is missing")));
            let side = |off: usize| -> Result<DoseSummary> {
                Ok(DoseSummary {
                    hi: vals[off],
                    d98: need(vals[3 + off], "D98")?,
                    d2: need(vals[6 + off], "D2")?,
                    dmax: need(vals[9 + off], "Dmax")?,
                    dmean: need(vals[12 + off], "Dmean")?,
                })
            };
            rows.push(CaseRow {
                case_id: cells[0].to_string(),
                pred: side(0)?,
                truth: side(1)?,
                hf_pred: need(vals[15], "hf_pred")?,
                hf_truth: need(vals[16], "hf_gt")?,
                deltas: std::array::from_fn(|k| vals[3 * k + 2]),
            });
        }
        Ok(Self {
            rows,
            curves: Vec::new(),
        })
    }

    /// Paired t-tests of this report's per-case deltas against `other`'s,
    /// matched by case id.
    pub fn compare(&self, other: &DoseReport) -> Result<Vec<MetricComparison>> {
        contract!(
            self.rows.len() == other.rows.len()
                && self.rows.iter().zip(&other.rows).all(|(a, b)| a.case_id == b.case_id),
            "reports cover different cases"
        );
        METRIC_NAMES
            .iter()
            .map(|&m| {
                let pairs: Vec<(f64, f64)> = self
                    .rows
                    .iter()
                    .zip(&other.rows)
                    .filter_map(|(a, b)| Some((a.delta(m)?, b.delta(m)?)))
                    .collect();
                let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
                Ok(MetricComparison {
                    metric: m.to_string(),
                    mean_delta: mean_std(&a).0,
                    mean_delta_other: mean_std(&b).0,
                    test: paired_t_test(&a, &b)?,
                })
            })
            .collect()
    }

    /// `metric,mean_delta,mean_delta_other,t,p,n` rows.
    pub fn comparison_csv(comparisons: &[MetricComparison]) -> String {
        let mut out = String::from("metric,mean_delta,mean_delta_other,t,p,n\n");
        for c in comparisons {
            let _ = writeln!(
                out,
                "{},{:.8e},{:.8e},{:.8e},{:.8e},{}",
                c.metric, c.mean_delta, c.mean_delta_other, c.test.t, c.test.p, c.test.n
            );
        }
        out
    }
}

/// DVH curves as long-format CSV: `case_id,source,structure,dose,volume`.
pub fn curves_csv(curves: &[CaseCurves]) -> String {
    let mut out = String::from("case_id,source,structure,dose,volume\n");
    for c in curves {
        for (source, set) in [("pred", &c.pred), ("gt", &c.truth)] {
            for curve in set.iter() {
                for (d, v) in curve.dose.iter().zip(&curve.volume) {
                    let _ = writeln!(out, "{},{source},{},{d:.8e},{v:.8e}", c.case_id, curve.structure);
                }
            }
        }
    }
    out
}
