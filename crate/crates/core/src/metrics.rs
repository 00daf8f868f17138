//! Evaluation: detection matching, confusion matrices, precision/recall/F1,
//! throughput measurement and table rendering.

use std::fmt::Write as _;
use std::time::{Duration, Instant};

use crate::error::{Error, Result};
use crate::geometry::{rank_order, BBox, Detection};
use crate::scalar::Real;

/// Per-class true positive / false positive / false negative counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ClassCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ClassCounts {
    pub fn merge(self, other: Self) -> Self {
        Self {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fn_: self.fn_ + other.fn_,
        }
    }
}

/// Square count matrix: rows are the true class, columns the prediction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn add(&mut self, truth: usize, predicted: usize) {
        self.counts[truth * self.classes + predicted] += 1;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn row_total(&self, truth: usize) -> u64 {
        (0..self.classes).map(|p| self.get(truth, p)).sum()
    }

    pub fn column_total(&self, predicted: usize) -> u64 {
        (0..self.classes).map(|t| self.get(t, predicted)).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes).map(|k| self.get(k, k)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        ratio(self.correct(), self.total()).0
    }

    /// One-vs-rest counts per class.
    pub fn class_counts(&self) -> Vec<ClassCounts> {
        (0..self.classes)
            .map(|k| {
                let tp = self.get(k, k);
                ClassCounts {
                    tp,
                    fp: self.column_total(k) - tp,
                    fn_: self.row_total(k) - tp,
                }
            })
            .collect()
    }

    /// CSV with a header row and a leading column of class names.
    pub fn to_csv(&self, names: &[String]) -> String {
        let name = |k: usize| names.get(k).cloned().unwrap_or_else(|| k.to_string());
        let mut out = String::from("truth\\pred");
        for k in 0..self.classes {
            out.push(',');
            out.push_str(&csv_field(&name(k)));
        }
        out.push('\n');
        for t in 0..self.classes {
            out.push_str(&csv_field(&name(t)));
            for p in 0..self.classes {
                let _ = write!(out, ",{}", self.get(t, p));
            }
            out.push('\n');
        }
        out
    }
}

/// Greedy confidence-ordered matching of predictions to ground truth.
///
/// Predictions are visited in [`rank_order`]; each one claims the unmatched
/// same-class truth with the highest IoU, provided that IoU reaches
/// `iou_threshold`. Unclaimed truths are false negatives. Class ids at or
/// beyond `num_classes` are ignored.
pub fn match_detections<T: Real>(
    pred: &[Detection<T>],
    truth: &[(BBox<T>, usize)],
    iou_threshold: T,
    num_classes: usize,
) -> Vec<ClassCounts> {
    let mut counts = vec![ClassCounts::default(); num_classes];
    let mut ranked: Vec<&Detection<T>> = pred.iter().filter(|d| d.class_id < num_classes).collect();
    ranked.sort_by(|a, b| rank_order(a, b));
    let mut taken = vec![false; truth.len()];

    for det in ranked {
        let mut best: Option<(usize, T)> = None;
        for (i, (bbox, class_id)) in truth.iter().enumerate() {
            if taken[i] || *class_id != det.class_id {
                continue;
            }
            let v = det.bbox.iou(bbox);
            if v >= iou_threshold && best.is_none_or(|(_, b)| v > b) {
                best = Some((i, v));
            }
        }
        match best {
            Some((i, _)) => {
                taken[i] = true;
                counts[det.class_id].tp += 1;
            }
            None => counts[det.class_id].fp += 1,
        }
    }
    for (i, (_, class_id)) in truth.iter().enumerate() {
        if !taken[i] && *class_id < num_classes {
            counts[*class_id].fn_ += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Set when a 0/0 ratio was replaced by 0.
    pub undefined: bool,
}

impl Prf {
    pub fn from_counts(c: &ClassCounts) -> Self {
        let (precision, p_undef) = ratio(c.tp, c.tp + c.fp);
        let (recall, r_undef) = ratio(c.tp, c.tp + c.fn_);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            undefined: p_undef || r_undef,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrfReport {
    pub per_class: Vec<Prf>,
    /// Unweighted mean of the per-class figures.
    pub macro_avg: Prf,
    /// Figures computed from the summed counts.
    pub micro: Prf,
}

pub fn precision_recall_f1(counts: &[ClassCounts]) -> PrfReport {
    let per_class: Vec<Prf> = counts.iter().map(Prf::from_counts).collect();
    let n = per_class.len().max(1) as f64;
    let macro_avg = Prf {
        precision: per_class.iter().map(|p| p.precision).sum::<f64>() / n,
        recall: per_class.iter().map(|p| p.recall).sum::<f64>() / n,
        f1: per_class.iter().map(|p| p.f1).sum::<f64>() / n,
        undefined: per_class.is_empty() || per_class.iter().any(|p| p.undefined),
    };
    let total = counts.iter().fold(ClassCounts::default(), |a, &b| a.merge(b));
    PrfReport {
        per_class,
        macro_avg,
        micro: Prf::from_counts(&total),
    }
}

fn ratio(num: u64, den: u64) -> (f64, bool) {
    if den == 0 {
        (0.0, true)
    } else {
        (num as f64 / den as f64, false)
    }
}

/// Throughput normalized to milliseconds per 100 images.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpeedReport {
    pub images: usize,
    /// Median wall time of one pass over all images.
    pub wall: Duration,
    pub ms_per_100: f64,
}

impl SpeedReport {
    pub fn new(images: usize, wall: Duration) -> Self {
        Self {
            images,
            wall,
            ms_per_100: per_100_ms(wall, images),
        }
    }
}

pub fn per_100_ms(wall: Duration, items: usize) -> f64 {
    if items == 0 {
        0.0
    } else {
        100.0 * wall.as_secs_f64() * 1e3 / items as f64
    }
}

/// Times `worker` over `images` on the calling thread.
///
/// One untimed warm-up pass precedes `repetitions` timed passes; the report
/// carries the median pass.
pub fn speed_bench<I, F>(mut worker: F, images: &[I], repetitions: usize) -> Result<SpeedReport>
where
    F: FnMut(&I) -> Result<()>,
{
    if images.is_empty() {
        return Err(Error::EmptyInput("speed benchmark needs at least one image".into()));
    }
    if repetitions == 0 {
        return Err(Error::config("repetitions must be at least 1"));
    }
    let mut pass = |timed: bool| -> Result<Duration> {
        let start = Instant::now();
        for (i, img) in images.iter().enumerate() {
            worker(img).map_err(|e| Error::Model {
                frame: i,
                message: format!("{} pass: {e}", if timed { "timed" } else { "warm-up" }),
            })?;
        }
        Ok(start.elapsed())
    };
    pass(false)?;
    let mut times = (0..repetitions).map(|_| pass(true)).collect::<Result<Vec<_>>>()?;
    times.sort();
    let median = if times.len() % 2 == 1 {
        times[times.len() / 2]
    } else {
        (times[times.len() / 2 - 1] + times[times.len() / 2]) / 2
    };
    Ok(SpeedReport::new(images.len(), median))
}

/// How a numeric cell is printed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CellFormat {
    Fixed(usize),
    /// Shortest representation that round-trips.
    Shortest,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Column {
    pub header: String,
    pub csv_name: String,
    pub format: CellFormat,
}

impl Column {
    pub fn new(header: &str, csv_name: &str, format: CellFormat) -> Self {
        Self {
            header: header.into(),
            csv_name: csv_name.into(),
            format,
        }
    }
}

/// A results table: a label column followed by numeric columns.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportTable {
    pub label: Column,
    pub columns: Vec<Column>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportStyle {
    Text,
    Csv,
}

/// One row of a detection comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRow {
    pub method: String,
    pub precision: f64,
    pub f1: f64,
    pub speed_ms_per_100: f64,
}

impl ReportTable {
    /// Method / Precision / F1 / Speed layout.
    pub fn detection(rows: &[DetectionRow]) -> Self {
        Self {
            label: Column::new("Method", "method", CellFormat::Shortest),
            columns: vec![
                Column::new("Precision", "precision", CellFormat::Fixed(3)),
                Column::new("F1", "f1", CellFormat::Fixed(3)),
                Column::new("Speed*", "speed_ms_per_100", CellFormat::Shortest),
            ],
            rows: rows
                .iter()
                .map(|r| {
                    (
                        r.method.clone(),
                        vec![Some(r.precision), Some(r.f1), Some(r.speed_ms_per_100)],
                    )
                })
                .collect(),
        }
    }

    /// Settings rows against one accuracy column per feature extractor.
    pub fn few_shot(extractors: &[&str], rows: Vec<(String, Vec<Option<f64>>)>) -> Self {
        Self {
            label: Column::new("Settings", "setting", CellFormat::Shortest),
            columns: extractors
                .iter()
                .map(|e| Column::new(e, &e.to_lowercase().replace(' ', "_"), CellFormat::Fixed(4)))
                .collect(),
            rows,
        }
    }
}

fn format_cell(v: Option<f64>, f: CellFormat) -> String {
    match (v, f) {
        (None, _) => "-".into(),
        (Some(x), CellFormat::Fixed(dp)) => format!("{x:.dp$}"),
        (Some(x), CellFormat::Shortest) => format!("{x}"),
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Renders a table as aligned plain text or as CSV.
pub fn render_report(table: &ReportTable, style: ReportStyle) -> String {
    let cells: Vec<Vec<String>> = table
        .rows
        .iter()
        .map(|(label, values)| {
            std::iter::once(label.clone())
                .chain(
                    table
                        .columns
                        .iter()
                        .enumerate()
                        .map(|(i, c)| format_cell(values.get(i).copied().flatten(), c.format)),
                )
                .collect()
        })
        .collect();

    let mut out = String::new();
    match style {
        ReportStyle::Csv => {
            let header: Vec<String> = std::iter::once(&table.label)
                .chain(&table.columns)
                .map(|c| csv_field(&c.csv_name))
                .collect();
            out.push_str(&header.join(","));
            out.push('\n');
            for row in &cells {
                let row: Vec<String> = row.iter().map(|c| csv_field(c)).collect();
                out.push_str(&row.join(","));
                out.push('\n');
            }
        }
        ReportStyle::Text => {
            let headers: Vec<&str> = std::iter::once(&table.label)
                .chain(&table.columns)
                .map(|c| c.header.as_str())
                .collect();
            let widths: Vec<usize> = (0..headers.len())
                .map(|i| {
                    cells
                        .iter()
                        .map(|r| r[i].chars().count())
                        .chain(std::iter::once(headers[i].chars().count()))
                        .max()
                        .unwrap_or(0)
                })
                .collect();
            let line = |fields: &[&str]| -> String {
                let mut s = String::new();
                for (i, f) in fields.iter().enumerate() {
                    if i == 0 {
                        let _ = write!(s, "{f:<w$}", w = widths[0]);
                    } else {
                        let _ = write!(s, "  {f:>w$}", w = widths[i]);
                    }
                }
                s.trim_end().to_string()
            };
            out.push_str(&line(&headers));
            out.push('\n');
            let rule: Vec<String> = widths.iter().map(|&w| "-".repeat(w)).collect();
            let rule: Vec<&str> = rule.iter().map(String::as_str).collect();
            out.push_str(&line(&rule));
            out.push('\n');
            for row in &cells {
                let row: Vec<&str> = row.iter().map(String::as_str).collect();
                out.push_str(&line(&row));
                out.push('\n');
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn b(x1: f64, y1: f64, x2: f64, y2: f64) -> BBox<f64> {
        BBox::new(x1, y1, x2, y2)
    }

    #[test]
    fn exact_predictions_are_all_true_positives() {
        let truth = vec![(b(0.1, 0.1, 0.3, 0.3), 0), (b(0.5, 0.5, 0.9, 0.8), 2)];
        let pred: Vec<_> = truth.iter().map(|&(bb, k)| Detection::new(bb, 0.9, k)).collect();
        let c = match_detections(&pred, &truth, 0.5, 3);
        assert_eq!(c[0], ClassCounts { tp: 1, fp: 0, fn_: 0 });
        assert_eq!(c[2], ClassCounts { tp: 1, fp: 0, fn_: 0 });
        let r = precision_recall_f1(&[c[0], c[2]]);
        assert_eq!((r.macro_avg.precision, r.macro_avg.f1), (1.0, 1.0));
    }

    #[test]
    fn prediction_without_truth_is_false_positive() {
        let pred = [Detection::new(b(0.1, 0.1, 0.3, 0.3), 0.9, 1)];
        let c = match_detections(&pred, &[], 0.5, 3);
        assert_eq!(c[1], ClassCounts { tp: 0, fp: 1, fn_: 0 });
    }

    #[test]
    fn duplicate_prediction_on_one_truth() {
        let truth = [(b(0.1, 0.1, 0.3, 0.3), 0)];
        let pred = [
            Detection::new(b(0.1, 0.1, 0.3, 0.3), 0.9, 0),
            Detection::new(b(0.11, 0.1, 0.3, 0.31), 0.8, 0),
        ];
        let c = match_detections(&pred, &truth, 0.5, 3);
        assert_eq!(c[0], ClassCounts { tp: 1, fp: 1, fn_: 0 });
    }

    #[test]
    fn greedy_matching_is_confidence_ordered() {
        // The confident prediction overlaps both truths and takes the one
        // it overlaps most, leaving the weaker prediction without a partner.
        let truth = [(b(0.0, 0.0, 0.4, 0.4), 0), (b(0.1, 0.0, 0.5, 0.4), 0)];
        let pred = [
            Detection::new(b(0.08, 0.0, 0.48, 0.4), 0.9, 0),
            Detection::new(b(0.3, 0.0, 0.7, 0.4), 0.5, 0),
        ];
        let c = match_detections(&pred, &truth, 0.5, 1);
        assert_eq!(c[0], ClassCounts { tp: 1, fp: 1, fn_: 1 });
    }

    #[test]
    fn prf_hand_arithmetic() {
        let p = Prf::from_counts(&ClassCounts { tp: 9, fp: 1, fn_: 3 });
        assert!((p.precision - 0.9).abs() < 1e-15);
        assert!((p.recall - 0.75).abs() < 1e-15);
        assert!((p.f1 - 9.0 / 11.0).abs() < 1e-15);
        assert!(!p.undefined);

        let empty = Prf::from_counts(&ClassCounts::default());
        assert_eq!((empty.precision, empty.recall, empty.f1), (0.0, 0.0, 0.0));
        assert!(empty.undefined);
    }

    #[test]
    fn diagonal_confusion_is_perfect() {
        let mut cm = ConfusionMatrix::new(3);
        for k in 0..3 {
            for _ in 0..(k + 2) {
                cm.add(k, k);
            }
        }
        let r = precision_recall_f1(&cm.class_counts());
        for p in &r.per_class {
            assert_eq!((p.precision, p.recall, p.f1), (1.0, 1.0, 1.0));
        }
        assert_eq!(cm.accuracy(), 1.0);
    }

    #[test]
    fn confusion_csv_has_named_header() {
        let mut cm = ConfusionMatrix::new(2);
        cm.add(0, 1);
        cm.add(1, 1);
        let names = vec!["with_mask".to_string(), "without_mask".to_string()];
        assert_eq!(
            cm.to_csv(&names),
            "truth\\pred,with_mask,without_mask\nwith_mask,0,1\nwithout_mask,0,1\n"
        );
    }

    #[test]
    fn speed_bench_rejects_empty_input() {
        let imgs: Vec<u8> = Vec::new();
        assert!(matches!(speed_bench(|_| Ok(()), &imgs, 3), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn speed_bench_normalizes_per_100() {
        let r = SpeedReport::new(50, Duration::from_millis(40));
        assert!((r.ms_per_100 - 80.0).abs() < 1e-9);
    }

    #[test]
    fn worker_failure_aborts_with_context() {
        let imgs = [0u8, 1, 2];
        let err = speed_bench(|&i| if i == 2 { Err(Error::config("boom")) } else { Ok(()) }, &imgs, 1).unwrap_err();
        assert!(matches!(err, Error::Model { frame: 2, .. }));
    }

    #[test]
    fn empty_table_renders_header_only() {
        let t = ReportTable::detection(&[]);
        assert_eq!(
            render_report(&t, ReportStyle::Csv),
            "method,precision,f1,speed_ms_per_100\n"
        );
        let text = render_report(&t, ReportStyle::Text);
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("Method"));
    }

    proptest! {
        #[test]
        fn count_identities(
            truth in prop::collection::vec((0.0..0.8f64, 0.0..0.8f64, 0.05..0.2f64, 0usize..3), 0..8),
            pred in prop::collection::vec((0.0..0.8f64, 0.0..0.8f64, 0.05..0.2f64, 0usize..3, 0.0..1.0f64), 0..8),
            t in 0.1..0.9f64,
        ) {
            let truth: Vec<_> = truth.iter().map(|&(x, y, s, k)| (b(x, y, x + s, y + s), k)).collect();
            let pred: Vec<_> = pred.iter().map(|&(x, y, s, k, c)| Detection::new(b(x, y, x + s, y + s), c, k)).collect();
            let counts = match_detections(&pred, &truth, t, 3);
            for k in 0..3 {
                let n_truth = truth.iter().filter(|x| x.1 == k).count() as u64;
                let n_pred = pred.iter().filter(|x| x.class_id == k).count() as u64;
                prop_assert_eq!(counts[k].tp + counts[k].fn_, n_truth);
                prop_assert_eq!(counts[k].tp + counts[k].fp, n_pred);
            }
        }

        #[test]
        fn f1_lies_between_precision_and_recall(tp in 0u64..50, fp in 0u64..50, fn_ in 0u64..50) {
            let p = Prf::from_counts(&ClassCounts { tp, fp, fn_ });
            if p.precision > 0.0 && p.recall > 0.0 {
                prop_assert!(p.f1 <= p.precision.max(p.recall) + 1e-15);
                prop_assert!(p.f1 >= p.precision.min(p.recall) - 1e-15);
            }
        }
    }
}
