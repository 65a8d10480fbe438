//! Confusion tallies, classification statistics, sweep grids and reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grader::{Parsed, Verdict};
use crate::quizgen::QuestionKind;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionTally {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    /// Unparseable answers, already folded into `fp`/`fn_`.
    pub unparseable: u64,
}

impl ConfusionTally {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    /// Records one answer. Unparseable answers count against the expected label.
    pub fn record(&mut self, expected: bool, parsed: &Parsed) {
        match (expected, parsed) {
            (true, Parsed::Tf(true)) => self.tp += 1,
            (true, Parsed::Tf(false)) => self.fn_ += 1,
            (false, Parsed::Tf(false)) => self.tn += 1,
            (false, Parsed::Tf(true)) => self.fp += 1,
            (true, _) => {
                self.fn_ += 1;
                self.unparseable += 1;
            }
            (false, _) => {
                self.fp += 1;
                self.unparseable += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &ConfusionTally) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
        self.unparseable += other.unparseable;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupBy {
    /// The question label (`Delete`, `nDelete`, ...).
    Question,
    Capability,
    /// Template id (the part of the instance id before `@`).
    Program,
    Instance,
    /// Sampling configuration `(t, top_p)`.
    Config,
}

pub fn group_key(v: &Verdict, by: GroupBy) -> String {
    match by {
        GroupBy::Question => v.label.clone(),
        GroupBy::Capability => v.label.strip_prefix('n').filter(|_| v.kind == QuestionKind::TfNeg).unwrap_or(&v.label).to_string(),
        GroupBy::Program => v.instance_id.split('@').next().unwrap_or(&v.instance_id).to_string(),
        GroupBy::Instance => v.instance_id.clone(),
        GroupBy::Config => config_key(v.temperature, v.top_p),
    }
}

pub fn config_key(t: f64, top_p: f64) -> String {
    format!("t={t:.1},top_p={top_p:.1}")
}

/// Tallies true/false verdicts per group; other kinds are ignored.
pub fn tally(verdicts: &[Verdict], group_by: GroupBy) -> BTreeMap<String, ConfusionTally> {
    tally_with(verdicts, |v| group_key(v, group_by))
}

pub fn tally_with(verdicts: &[Verdict], key: impl Fn(&Verdict) -> String) -> BTreeMap<String, ConfusionTally> {
    let mut out: BTreeMap<String, ConfusionTally> = BTreeMap::new();
    for v in verdicts {
        let Some(expected) = v.expected_bool() else { continue };
        out.entry(key(v)).or_default().record(expected, &v.parsed);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub ap: u64,
    pub an: u64,
    pub total: u64,
    pub null_error: f64,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub mcc: f64,
    pub precision_undefined: bool,
    pub recall_undefined: bool,
    pub f1_undefined: bool,
    pub mcc_undefined: bool,
    /// Integer numerators and denominators, kept for exact rounding.
    #[serde(skip)]
    ratios: Ratios,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct Ratios {
    null_error: (u64, u64),
    accuracy: (u64, u64),
    precision: (u64, u64),
    recall: (u64, u64),
    f1: (u64, u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricsError {
    #[error("cannot compute statistics of an empty tally")]
    EmptyTally,
    #[error("step {step} does not evenly divide [{lo}, {hi}]")]
    BadStep { lo: String, hi: String, step: String },
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

pub fn compute_metrics(t: &ConfusionTally) -> Result<MetricsRow, MetricsError> {
    let total = t.total();
    if total == 0 {
        return Err(MetricsError::EmptyTally);
    }
    let ap = t.tp + t.fn_;
    let an = t.tn + t.fp;
    let (accuracy, _) = ratio(t.tp + t.tn, total);
    let (null_error, _) = ratio(ap.min(an), total);
    let (precision, mut p_undef) = ratio(t.tp, t.tp + t.fp);
    let (recall, mut r_undef) = ratio(t.tp, ap);
    // 2PR/(P+R) reduces to 2tp/(2tp+fp+fn).
    let (f1, mut f_undef) = ratio(2 * t.tp, 2 * t.tp + t.fp + t.fn_);
    let num = i128::from(t.tp) * i128::from(t.tn) - i128::from(t.fp) * i128::from(t.fn_);
    let den = ((t.tp + t.fp) as f64 * (t.tp + t.fn_) as f64).sqrt() * ((t.tn + t.fp) as f64 * (t.tn + t.fn_) as f64).sqrt();
    let mut m_undef = den == 0.0;
    let mcc = if m_undef { 0.0 } else { (num as f64 / den).clamp(-1.0, 1.0) };
    if ap == 0 {
        p_undef = true;
        r_undef = true;
        f_undef = true;
        m_undef = true;
    }
    let zero_if = |undef: bool, x: f64| if undef { 0.0 } else { x };
    Ok(MetricsRow {
        ap,
        an,
        total,
        null_error,
        accuracy,
        precision: zero_if(p_undef, precision),
        recall: zero_if(r_undef, recall),
        f1: zero_if(f_undef, f1),
        mcc: zero_if(m_undef, mcc),
        precision_undefined: p_undef,
        recall_undefined: r_undef,
        f1_undefined: f_undef,
        mcc_undefined: m_undef,
        ratios: Ratios {
            null_error: (ap.min(an), total),
            accuracy: (t.tp + t.tn, total),
            precision: (t.tp, t.tp + t.fp),
            recall: (t.tp, ap),
            f1: (2 * t.tp, 2 * t.tp + t.fp + t.fn_),
        },
    })
}

/// `round(100 * num / den)` with halves rounded up, in exact integer arithmetic.
pub fn percent_half_up(num: u64, den: u64) -> i64 {
    if den == 0 {
        return 0;
    }
    ((200 * u128::from(num) + u128::from(den)) / (2 * u128::from(den))) as i64
}

/// Half-up rounding to an integer: `floor(x + 0.5)`.
pub fn round_half_up(x: f64) -> i64 {
    (x + 0.5).floor() as i64
}

/// A row shaped like the published statistics table: percentages as integers,
/// MCC scaled by 100, undefined cells as `None` (printed `-`).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundedRow {
    pub ap: u64,
    pub an: u64,
    pub null_error: i64,
    pub accuracy: i64,
    pub precision: Option<i64>,
    pub recall: Option<i64>,
    pub f1: Option<i64>,
    pub mcc: Option<i64>,
}

impl MetricsRow {
    pub fn rounded(&self) -> RoundedRow {
        let pct = |(n, d): (u64, u64)| percent_half_up(n, d);
        RoundedRow {
            ap: self.ap,
            an: self.an,
            null_error: pct(self.ratios.null_error),
            accuracy: pct(self.ratios.accuracy),
            precision: (!self.precision_undefined).then(|| pct(self.ratios.precision)),
            recall: (!self.recall_undefined).then(|| pct(self.ratios.recall)),
            f1: (!self.f1_undefined).then(|| pct(self.ratios.f1)),
            mcc: (!self.mcc_undefined).then(|| round_half_up(self.mcc * 100.0)),
        }
    }
}

fn snap(x: f64) -> f64 {
    (x * 1e9).round() / 1e9
}

/// The full `(temperature, top_p)` grid, temperature outer.
pub fn sweep_grid(lo: f64, hi: f64, step: f64) -> Result<Vec<(f64, f64)>, MetricsError> {
    let bad = || MetricsError::BadStep { lo: lo.to_string(), hi: hi.to_string(), step: step.to_string() };
    if !(lo.is_finite() && hi.is_finite() && step.is_finite()) || hi < lo {
        return Err(bad());
    }
    let axis: Vec<f64> = if hi == lo {
        vec![snap(lo)]
    } else {
        if step <= 0.0 {
            return Err(bad());
        }
        let n = (hi - lo) / step;
        if (n - n.round()).abs() > 1e-9 {
            return Err(bad());
        }
        (0..=n.round() as usize).map(|i| snap(lo + i as f64 * step)).collect()
    };
    Ok(axis.iter().flat_map(|&t| axis.iter().map(move |&p| (t, p))).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerQuestionRow {
    pub instance_id: String,
    pub label: String,
    pub kind: QuestionKind,
    pub temperature: f64,
    pub top_p: f64,
    pub correct: u64,
    pub n: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub asked: u64,
    pub correct: u64,
    /// Percent correct to two decimals; `None` when nothing was asked.
    pub percent: Option<f64>,
    pub provider_errors: u64,
}

impl Totals {
    pub fn new(asked: u64, correct: u64) -> Totals {
        let percent = (asked > 0).then(|| {
            let hundredths = (20_000 * u128::from(correct) + u128::from(asked)) / (2 * u128::from(asked));
            hundredths as f64 / 100.0
        });
        Totals { asked, correct, percent, provider_errors: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateRow {
    pub rate: f64,
    pub open_ended_correct: u64,
    pub open_ended_n: u64,
    pub open_ended_accuracy: Option<f64>,
    pub tf_correct: u64,
    pub tf_n: u64,
    pub tf_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelMetrics {
    pub label: String,
    pub tally: ConfusionTally,
    pub metrics: MetricsRow,
    pub rounded: RoundedRow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub per_question: Vec<PerQuestionRow>,
    pub label_metrics: Vec<LabelMetrics>,
    pub totals: Totals,
    pub rate_curves: Vec<RateRow>,
}

/// Builds every report table from a verdict stream.
pub fn aggregate_report(verdicts: &[Verdict]) -> Report {
    type Key = (String, String, QuestionKind, u64, u64);
    let mut per_q: BTreeMap<Key, (u64, u64)> = BTreeMap::new();
    for v in verdicts {
        let key = (v.instance_id.clone(), v.label.clone(), v.kind, v.temperature.to_bits(), v.top_p.to_bits());
        let e = per_q.entry(key).or_default();
        e.0 += u64::from(v.is_correct());
        e.1 += 1;
    }
    let per_question = per_q
        .into_iter()
        .map(|((instance_id, label, kind, t, p), (correct, n))| PerQuestionRow {
            instance_id,
            label,
            kind,
            temperature: f64::from_bits(t),
            top_p: f64::from_bits(p),
            correct,
            n,
        })
        .collect();

    let label_metrics = tally(verdicts, GroupBy::Question)
        .into_iter()
        .filter_map(|(label, tally)| {
            let metrics = compute_metrics(&tally).ok()?;
            Some(LabelMetrics { label, tally, rounded: metrics.rounded(), metrics })
        })
        .collect();

    let correct = verdicts.iter().filter(|v| v.is_correct()).count() as u64;
    let totals = Totals::new(verdicts.len() as u64, correct);

    let mut buckets: BTreeMap<u64, [u64; 4]> = BTreeMap::new();
    for v in verdicts {
        let Some(rate) = v.randomization_rate else { continue };
        let b = buckets.entry((rate * 1000.0).round() as u64).or_default();
        let ok = u64::from(v.is_correct());
        if v.kind.is_tf() {
            b[2] += ok;
            b[3] += 1;
        } else {
            b[0] += ok;
            b[1] += 1;
        }
    }
    let acc = |c: u64, n: u64| (n > 0).then(|| c as f64 / n as f64);
    let rate_curves = buckets
        .into_iter()
        .map(|(r, [oc, on, tc, tn])| RateRow {
            rate: r as f64 / 1000.0,
            open_ended_correct: oc,
            open_ended_n: on,
            open_ended_accuracy: acc(oc, on),
            tf_correct: tc,
            tf_n: tn,
            tf_accuracy: acc(tc, tn),
        })
        .collect();

    Report { per_question, label_metrics, totals, rate_curves }
}

fn csv_string(write: impl FnOnce(&mut csv::Writer<Vec<u8>>) -> csv::Result<()>) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    write(&mut w).expect("writing csv to memory");
    String::from_utf8(w.into_inner().expect("flush csv")).expect("csv is utf-8")
}

/// Long-form heatmap data: one row per (instance, question, config).
pub fn per_question_csv(report: &Report) -> String {
    csv_string(|w| {
        w.write_record(["instance", "question", "kind", "temperature", "top_p", "correct", "n"])?;
        for r in &report.per_question {
            w.write_record([
                r.instance_id.clone(),
                r.label.clone(),
                format!("{:?}", r.kind),
                format!("{:.1}", r.temperature),
                format!("{:.1}", r.top_p),
                r.correct.to_string(),
                r.n.to_string(),
            ])?;
        }
        Ok(())
    })
}

fn cell(x: Option<i64>) -> String {
    x.map_or_else(|| "-".to_string(), |v| v.to_string())
}

/// Per-question statistics with integer percentages and `-` for undefined cells.
pub fn metrics_table_csv(report: &Report) -> String {
    csv_string(|w| {
        w.write_record(["question", "AP", "AN", "null_error", "accuracy", "precision", "recall", "f1", "mcc"])?;
        for m in &report.label_metrics {
            let r = &m.rounded;
            w.write_record([
                m.label.clone(),
                r.ap.to_string(),
                r.an.to_string(),
                r.null_error.to_string(),
                r.accuracy.to_string(),
                cell(r.precision),
                cell(r.recall),
                cell(r.f1),
                cell(r.mcc),
            ])?;
        }
        Ok(())
    })
}

pub fn rate_curve_csv(report: &Report) -> String {
    let opt = |x: Option<f64>| x.map_or_else(String::new, |v| format!("{v:.4}"));
    csv_string(|w| {
        w.write_record(["rate", "open_ended_correct", "open_ended_n", "open_ended_accuracy", "tf_correct", "tf_n", "tf_accuracy"])?;
        for r in &report.rate_curves {
            w.write_record([
                format!("{:.2}", r.rate),
                r.open_ended_correct.to_string(),
                r.open_ended_n.to_string(),
                opt(r.open_ended_accuracy),
                r.tf_correct.to_string(),
                r.tf_n.to_string(),
                opt(r.tf_accuracy),
            ])?;
        }
        Ok(())
    })
}
