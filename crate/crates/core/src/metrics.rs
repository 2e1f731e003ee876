//! Calibration, misclassification-rejection and OOD-detection metrics.

use std::cmp::Ordering;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::dirichlet::{alphas_from_logits, expected_data_uncertainty, knowledge_uncertainty};
use crate::ensemble::{uncertainties_of_block, Ensemble};
use crate::net::{argmax, entropy, softmax_rows, Mlp};
use crate::{Error, Result};

pub const DEFAULT_ECE_BINS: usize = 15;
const PROB_FLOOR: f64 = 1e-12;

fn check_labels(probs: ArrayView2<f64>, labels: &[usize]) -> Result<()> {
    if probs.nrows() != labels.len() {
        return Err(Error::Shape(format!("{} probability rows for {} labels", probs.nrows(), labels.len())));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= probs.ncols()) {
        return Err(Error::LabelOutOfRange { label, num_classes: probs.ncols() });
    }
    Ok(())
}

/// Mean negative log-likelihood of the labels, probabilities floored at 1e-12.
pub fn nll(probs: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    check_labels(probs, labels)?;
    if labels.is_empty() {
        return Err(Error::Empty("nll"));
    }
    let total: f64 = labels.iter().enumerate().map(|(i, &y)| -probs[[i, y]].max(PROB_FLOOR).ln()).sum();
    Ok(total / labels.len() as f64)
}

pub fn error_rate(probs: ArrayView2<f64>, labels: &[usize]) -> Result<f64> {
    check_labels(probs, labels)?;
    if labels.is_empty() {
        return Err(Error::Empty("error rate"));
    }
    let wrong = probs
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &y)| argmax(row.as_slice().expect("row-major")) != y)
        .count();
    Ok(wrong as f64 / labels.len() as f64)
}

/// Expected calibration error over `bins` equal-width confidence bins on
/// `[0, 1]`. A confidence of exactly 1 falls in the last bin.
pub fn ece(probs: ArrayView2<f64>, labels: &[usize], bins: usize) -> Result<f64> {
    check_labels(probs, labels)?;
    if bins == 0 {
        return Err(Error::Config("ece needs at least one bin".into()));
    }
    if labels.is_empty() {
        return Err(Error::Empty("ece"));
    }
    let mut count = vec![0usize; bins];
    let mut hits = vec![0.0; bins];
    let mut conf = vec![0.0; bins];
    for (row, &y) in probs.rows().into_iter().zip(labels) {
        let row = row.as_slice().expect("row-major");
        let pred = argmax(row);
        let c = row[pred];
        let b = ((c * bins as f64).floor() as usize).min(bins - 1);
        count[b] += 1;
        conf[b] += c;
        if pred == y {
            hits[b] += 1.0;
        }
    }
    let n = labels.len() as f64;
    Ok((0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| {
            let nb = count[b] as f64;
            nb / n * (hits[b] / nb - conf[b] / nb).abs()
        })
        .sum())
}

fn check_scores(pos: &[f64], neg: &[f64]) -> Result<()> {
    if pos.is_empty() {
        return Err(Error::Empty("positive scores"));
    }
    if neg.is_empty() {
        return Err(Error::Empty("negative scores"));
    }
    if pos.iter().chain(neg).any(|s| s.is_nan()) {
        return Err(Error::UndefinedMetric("NaN score".into()));
    }
    Ok(())
}

// Merged (score, is_positive) sorted by descending score.
fn merged_desc(pos: &[f64], neg: &[f64]) -> Vec<(f64, bool)> {
    let mut all: Vec<(f64, bool)> = pos.iter().map(|&s| (s, true)).chain(neg.iter().map(|&s| (s, false))).collect();
    all.sort_by(|a, b| b.0.total_cmp(&a.0));
    all
}

// (true positives, false positives) cumulated after each distinct threshold.
fn threshold_counts(pos: &[f64], neg: &[f64]) -> Vec<(usize, usize)> {
    let all = merged_desc(pos, neg);
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < all.len() {
        let s = all[i].0;
        while i < all.len() && all[i].0 == s {
            if all[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        out.push((tp, fp));
    }
    out
}

/// Probability that a random positive scores above a random negative, ties
/// counted as one half.
pub fn roc_auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    check_scores(pos, neg)?;
    // trapezoid over tie groups gives the half-credit convention exactly
    let mut area = 0.0;
    let (mut prev_tp, mut prev_fp) = (0usize, 0usize);
    for (tp, fp) in threshold_counts(pos, neg) {
        area += (fp - prev_fp) as f64 * (tp + prev_tp) as f64 / 2.0;
        prev_tp = tp;
        prev_fp = fp;
    }
    Ok(area / (pos.len() as f64 * neg.len() as f64))
}

/// ROC points `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, one per distinct score.
pub fn roc_curve(pos: &[f64], neg: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_scores(pos, neg)?;
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let mut pts = vec![(0.0, 0.0)];
    pts.extend(threshold_counts(pos, neg).into_iter().map(|(tp, fp)| (fp as f64 / nn, tp as f64 / np)));
    Ok(pts)
}

/// Area under the precision-recall curve with step interpolation
/// (average precision).
pub fn pr_auc(pos: &[f64], neg: &[f64]) -> Result<f64> {
    if pos.is_empty() {
        return Err(Error::Empty("positive scores"));
    }
    if pos.iter().chain(neg).any(|s| s.is_nan()) {
        return Err(Error::UndefinedMetric("NaN score".into()));
    }
    let np = pos.len() as f64;
    let mut area = 0.0;
    let mut prev_tp = 0usize;
    for (tp, fp) in threshold_counts(pos, neg) {
        if tp > prev_tp {
            area += (tp - prev_tp) as f64 / np * (tp as f64 / (tp + fp) as f64);
        }
        prev_tp = tp;
    }
    Ok(area)
}

/// Score used to rank samples. Uncertainty measures rank descending;
/// confidence ranks ascending.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Confidence,
    Total,
    ExpectedData,
    Knowledge,
}

impl Measure {
    pub const ALL: [Measure; 4] = [Measure::Confidence, Measure::Total, Measure::ExpectedData, Measure::Knowledge];

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::Confidence => "confidence",
            Measure::Total => "total",
            Measure::ExpectedData => "expected_data",
            Measure::Knowledge => "knowledge",
        }
    }
}

/// Per-sample predictions and uncertainties, stored column-wise.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPredictions {
    pub kind: &'static str,
    pub probs: Array2<f64>,
    pub predicted: Vec<usize>,
    pub confidence: Vec<f64>,
    pub total: Vec<f64>,
    pub expected_data: Option<Vec<f64>>,
    pub knowledge: Option<Vec<f64>>,
    /// Present when labels were supplied.
    pub correct: Option<Vec<bool>>,
}

impl ScoredPredictions {
    fn from_probs(kind: &'static str, probs: Array2<f64>, labels: Option<&[usize]>) -> Result<Self> {
        if let Some(l) = labels {
            check_labels(probs.view(), l)?;
        }
        let mut predicted = Vec::with_capacity(probs.nrows());
        let mut confidence = Vec::with_capacity(probs.nrows());
        let mut total = Vec::with_capacity(probs.nrows());
        for row in probs.rows() {
            let row = row.as_slice().expect("row-major");
            let c = argmax(row);
            predicted.push(c);
            confidence.push(row[c]);
            total.push(entropy(row));
        }
        let correct = labels.map(|l| predicted.iter().zip(l).map(|(p, y)| p == y).collect());
        Ok(Self { kind, probs, predicted, confidence, total, expected_data: None, knowledge: None, correct })
    }

    pub fn len(&self) -> usize {
        self.predicted.len()
    }

    pub fn is_empty(&self) -> bool {
        self.predicted.is_empty()
    }

    pub fn supports(&self, measure: Measure) -> bool {
        match measure {
            Measure::Confidence | Measure::Total => true,
            Measure::ExpectedData => self.expected_data.is_some(),
            Measure::Knowledge => self.knowledge.is_some(),
        }
    }

    /// Raw column for `measure`.
    pub fn column(&self, measure: Measure) -> Result<&[f64]> {
        let col = match measure {
            Measure::Confidence => Some(&self.confidence),
            Measure::Total => Some(&self.total),
            Measure::ExpectedData => self.expected_data.as_ref(),
            Measure::Knowledge => self.knowledge.as_ref(),
        };
        col.map(Vec::as_slice).ok_or(Error::UnsupportedMeasure { kind: self.kind, measure: measure.as_str() })
    }

    /// Scores oriented so that larger means more uncertain.
    pub fn uncertainty(&self, measure: Measure) -> Result<Vec<f64>> {
        let col = self.column(measure)?;
        Ok(match measure {
            Measure::Confidence => col.iter().map(|c| -c).collect(),
            _ => col.to_vec(),
        })
    }

    pub fn error_rate(&self) -> Result<f64> {
        let correct = self.correct.as_ref().ok_or(Error::Config("predictions carry no labels".into()))?;
        if correct.is_empty() {
            return Err(Error::Empty("predictions"));
        }
        Ok(correct.iter().filter(|c| !**c).count() as f64 / correct.len() as f64)
    }
}

/// Any model that `score_model` can evaluate.
#[derive(Debug, Clone)]
pub enum Predictor {
    Dnn(Mlp),
    End(Mlp),
    End2(Mlp),
    Ensemble(Ensemble),
}

impl Predictor {
    pub fn kind(&self) -> &'static str {
        match self {
            Predictor::Dnn(_) => "dnn",
            Predictor::End(_) => "end",
            Predictor::End2(_) => "end2",
            Predictor::Ensemble(_) => "ensemble",
        }
    }
}

/// Predictive distribution and uncertainty columns of `predictor` on
/// `inputs`. Softmax models get confidence and total uncertainty only; the
/// ensemble and the prior network also get the data/knowledge split.
pub fn score_model(predictor: &Predictor, inputs: ArrayView2<f64>, labels: Option<&[usize]>) -> Result<ScoredPredictions> {
    let kind = predictor.kind();
    match predictor {
        Predictor::Dnn(m) | Predictor::End(m) => {
            let probs = softmax_rows(m.predict_logits(inputs)?.view(), 1.0);
            ScoredPredictions::from_probs(kind, probs, labels)
        }
        Predictor::End2(m) => {
            let logits = m.predict_logits(inputs)?;
            let mut probs = Array2::zeros(logits.raw_dim());
            let mut data = Vec::with_capacity(logits.nrows());
            let mut know = Vec::with_capacity(logits.nrows());
            for (i, row) in logits.rows().into_iter().enumerate() {
                let d = alphas_from_logits(row.as_slice().expect("row-major"), 1.0)?;
                let a0 = d.alpha0();
                probs.row_mut(i).iter_mut().zip(d.alpha()).for_each(|(p, a)| *p = a / a0);
                data.push(expected_data_uncertainty(&d));
                know.push(knowledge_uncertainty(&d));
            }
            let mut s = ScoredPredictions::from_probs(kind, probs, labels)?;
            s.expected_data = Some(data);
            s.knowledge = Some(know);
            Ok(s)
        }
        Predictor::Ensemble(e) => {
            let member_probs = e.member_probs(inputs)?;
            let mut probs = Array2::zeros((inputs.nrows(), e.num_classes()));
            let mut data = Vec::with_capacity(inputs.nrows());
            let mut know = Vec::with_capacity(inputs.nrows());
            for (i, block) in member_probs.outer_iter().enumerate() {
                let (mean, u) = uncertainties_of_block(block);
                probs.row_mut(i).assign(&ndarray::ArrayView1::from(&mean[..]));
                data.push(u.expected_data);
                know.push(u.knowledge);
            }
            let mut s = ScoredPredictions::from_probs(kind, probs, labels)?;
            s.expected_data = Some(data);
            s.knowledge = Some(know);
            Ok(s)
        }
    }
}

/// Detection of OOD (positive) against ID (negative) samples by a measure.
pub fn detection_auroc(id: &ScoredPredictions, ood: &ScoredPredictions, measure: Measure) -> Result<f64> {
    roc_auc(&ood.uncertainty(measure)?, &id.uncertainty(measure)?)
}

pub fn detection_aupr(id: &ScoredPredictions, ood: &ScoredPredictions, measure: Measure) -> Result<f64> {
    pr_auc(&ood.uncertainty(measure)?, &id.uncertainty(measure)?)
}

/// Error rate after rejecting a growing number of the most uncertain
/// samples, which are then counted as correct. Index `k` of each curve is
/// the point at fraction `k / N`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RejectionCurve {
    pub fractions: Vec<f64>,
    pub measured: Vec<f64>,
    pub random: Vec<f64>,
    pub oracle: Vec<f64>,
    pub num_errors: usize,
}

impl RejectionCurve {
    pub fn len(&self) -> usize {
        self.fractions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fractions.is_empty()
    }

    pub fn base_error(&self) -> f64 {
        self.measured[0]
    }
}

/// Rejection curve from raw uncertainties (larger rejected first, ties by
/// index) and correctness flags.
pub fn rejection_curve_from(uncertainty: &[f64], correct: &[bool]) -> Result<RejectionCurve> {
    let n = uncertainty.len();
    if correct.len() != n {
        return Err(Error::Shape(format!("{n} scores for {} correctness flags", correct.len())));
    }
    if n < 2 {
        return Err(Error::Empty("rejection curve needs at least two samples"));
    }
    if uncertainty.iter().any(|u| u.is_nan()) {
        return Err(Error::UndefinedMetric("NaN uncertainty".into()));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| uncertainty[b].partial_cmp(&uncertainty[a]).unwrap_or(Ordering::Equal));
    let errors = correct.iter().filter(|c| !**c).count();
    let nf = n as f64;
    let base = errors as f64 / nf;
    let mut measured = Vec::with_capacity(n + 1);
    let mut remaining = errors;
    measured.push(remaining as f64 / nf);
    for &i in &order {
        if !correct[i] {
            remaining -= 1;
        }
        measured.push(remaining as f64 / nf);
    }
    let fractions = (0..=n).map(|k| k as f64 / nf).collect();
    let random = (0..=n).map(|k| base * (1.0 - k as f64 / nf)).collect();
    let oracle = (0..=n).map(|k| errors.saturating_sub(k) as f64 / nf).collect();
    Ok(RejectionCurve { fractions, measured, random, oracle, num_errors: errors })
}

pub fn rejection_curve(scores: &ScoredPredictions, measure: Measure) -> Result<RejectionCurve> {
    let correct = scores.correct.as_ref().ok_or(Error::Config("rejection curve needs labels".into()))?;
    rejection_curve_from(&scores.uncertainty(measure)?, correct)
}

fn trapezoid(x: &[f64], y: &[f64]) -> f64 {
    x.windows(2).zip(y.windows(2)).map(|(x, y)| (x[1] - x[0]) * (y[0] + y[1]) / 2.0).sum()
}

/// Area between the random and measured curves over the area between the
/// random and oracle curves.
pub fn prr(curve: &RejectionCurve) -> Result<f64> {
    if curve.num_errors == 0 {
        return Err(Error::UndefinedMetric("rejection ratio with zero base error".into()));
    }
    let gap = |c: &[f64]| -> Vec<f64> { curve.random.iter().zip(c).map(|(r, v)| r - v).collect() };
    let oracle_area = trapezoid(&curve.fractions, &gap(&curve.oracle));
    if oracle_area <= 0.0 {
        return Err(Error::UndefinedMetric("oracle curve coincides with the random baseline".into()));
    }
    Ok(trapezoid(&curve.fractions, &gap(&curve.measured)) / oracle_area)
}

/// Ranks starting at 1, tied values sharing their average rank.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && x[order[j + 1]] == x[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!("{} vs {} samples", a.len(), b.len())));
    }
    if a.len() < 2 {
        return Err(Error::UndefinedMetric("correlation of fewer than two samples".into()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::UndefinedMetric("NaN value".into()));
    }
    let (ra, rb) = (average_ranks(a), average_ranks(b));
    let n = a.len() as f64;
    let (ma, mb) = (ra.iter().sum::<f64>() / n, rb.iter().sum::<f64>() / n);
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa == 0.0 || sbb == 0.0 {
        return Err(Error::UndefinedMetric("correlation with a constant column".into()));
    }
    Ok(sab / (saa * sbb).sqrt())
}

/// Mean of a column, used for per-model uncertainty summaries.
pub fn mean(x: &[f64]) -> Option<f64> {
    (!x.is_empty()).then(|| x.iter().sum::<f64>() / x.len() as f64)
}
