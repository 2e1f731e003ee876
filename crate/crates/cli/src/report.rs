//! Evaluation reports: `metrics.json` plus long-format CSVs for plotting.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{anyhow, Context, Result};
use endd_core::metrics::{self, detection_aupr, detection_auroc, prr, rejection_curve, roc_curve, score_model};
use endd_core::{Dataset2D, Measure, Predictor, RejectionCurve, ScoredPredictions};
use ndarray::Array2;
use serde::{Deserialize, Serialize};
use serde_json::Value;

pub const SCHEMA_ID: &str = "endd-metrics/1";
pub const SCHEMA: &str = include_str!("../schema/metrics.schema.json");
pub const HIST_BINS: usize = 40;

/// One value per uncertainty measure; `None` where the model lacks it or
/// the metric is undefined.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ByMeasure {
    pub confidence: Option<f64>,
    pub total: Option<f64>,
    pub expected_data: Option<f64>,
    pub knowledge: Option<f64>,
}

impl ByMeasure {
    pub fn get(&self, m: Measure) -> Option<f64> {
        match m {
            Measure::Confidence => self.confidence,
            Measure::Total => self.total,
            Measure::ExpectedData => self.expected_data,
            Measure::Knowledge => self.knowledge,
        }
    }

    fn set(&mut self, m: Measure, v: Option<f64>) {
        let slot = match m {
            Measure::Confidence => &mut self.confidence,
            Measure::Total => &mut self.total,
            Measure::ExpectedData => &mut self.expected_data,
            Measure::Knowledge => &mut self.knowledge,
        };
        *slot = v;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestMetrics {
    pub error: f64,
    pub nll: f64,
    pub ece: f64,
    pub prr: ByMeasure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OodMetrics {
    pub auroc: ByMeasure,
    pub aupr: ByMeasure,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UncertaintyMeans {
    pub total: f64,
    pub expected_data: Option<f64>,
    pub knowledge: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanUncertainty {
    pub id: UncertaintyMeans,
    pub ood: UncertaintyMeans,
}

/// Member averages for ensembles: each member scored on its own.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndividualMetrics {
    pub size: usize,
    pub error: f64,
    pub nll: f64,
    pub ece: f64,
    /// Mean confidence PRR over members where it is defined.
    pub prr: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelReport {
    pub name: String,
    pub kind: String,
    pub test: TestMetrics,
    pub ood: OodMetrics,
    pub mean_uncertainty: MeanUncertainty,
    pub individual: Option<IndividualMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema: String,
    pub config_hash: String,
    pub ece_bins: usize,
    pub n_test: usize,
    pub n_ood: usize,
    pub models: Vec<ModelReport>,
}

/// Scored test and OOD predictions for one model, kept for the CSVs.
pub struct Scored {
    pub name: String,
    pub id: ScoredPredictions,
    pub ood: ScoredPredictions,
}

fn defined(r: endd_core::Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(endd_core::Error::UndefinedMetric(_) | endd_core::Error::UnsupportedMeasure { .. }) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn means(s: &ScoredPredictions) -> UncertaintyMeans {
    UncertaintyMeans {
        total: metrics::mean(&s.total).unwrap_or(f64::NAN),
        expected_data: s.expected_data.as_deref().and_then(metrics::mean),
        knowledge: s.knowledge.as_deref().and_then(metrics::mean),
    }
}

fn test_metrics(s: &ScoredPredictions, labels: &[usize], bins: usize) -> Result<TestMetrics> {
    let mut prr_cells = ByMeasure::default();
    for m in Measure::ALL {
        let v = if s.supports(m) { defined(rejection_curve(s, m).and_then(|c| prr(&c)))? } else { None };
        prr_cells.set(m, v);
    }
    Ok(TestMetrics {
        error: s.error_rate()?,
        nll: metrics::nll(s.probs.view(), labels)?,
        ece: metrics::ece(s.probs.view(), labels, bins)?,
        prr: prr_cells,
    })
}

fn individual(predictor: &Predictor, test: &Dataset2D, bins: usize) -> Result<Option<IndividualMetrics>> {
    let Predictor::Ensemble(e) = predictor else { return Ok(None) };
    let (mut error, mut nll, mut ece) = (0.0, 0.0, 0.0);
    let mut prrs = Vec::new();
    for member in &e.members {
        let s = score_model(&Predictor::Dnn(member.model.clone()), test.points.view(), Some(&test.labels))?;
        let t = test_metrics(&s, &test.labels, bins)?;
        error += t.error;
        nll += t.nll;
        ece += t.ece;
        prrs.extend(t.prr.confidence);
    }
    let m = e.len() as f64;
    Ok(Some(IndividualMetrics { size: e.len(), error: error / m, nll: nll / m, ece: ece / m, prr: metrics::mean(&prrs) }))
}

/// Scores `predictor` on the labelled test set and on OOD inputs.
pub fn evaluate_model(
    name: &str,
    predictor: &Predictor,
    test: &Dataset2D,
    ood: &Array2<f64>,
    bins: usize,
) -> Result<(ModelReport, Scored)> {
    let id = score_model(predictor, test.points.view(), Some(&test.labels))?;
    let oo = score_model(predictor, ood.view(), None)?;
    let mut auroc = ByMeasure::default();
    let mut aupr = ByMeasure::default();
    for m in Measure::ALL {
        if id.supports(m) {
            auroc.set(m, defined(detection_auroc(&id, &oo, m))?);
            aupr.set(m, defined(detection_aupr(&id, &oo, m))?);
        }
    }
    let report = ModelReport {
        name: name.to_string(),
        kind: predictor.kind().to_string(),
        test: test_metrics(&id, &test.labels, bins)?,
        ood: OodMetrics { auroc, aupr },
        mean_uncertainty: MeanUncertainty { id: means(&id), ood: means(&oo) },
        individual: individual(predictor, test, bins)?,
    };
    Ok((report, Scored { name: name.to_string(), id, ood: oo }))
}

/// Checks a report against the bundled JSON schema.
pub fn validate_metrics(value: &Value) -> Result<()> {
    let schema: Value = serde_json::from_str(SCHEMA).expect("bundled schema is valid JSON");
    let validator = jsonschema::validator_for(&schema).map_err(|e| anyhow!("bundled schema: {e}"))?;
    let errors: Vec<String> = validator.iter_errors(value).map(|e| format!("{} at {}", e, e.instance_path())).collect();
    if errors.is_empty() {
        Ok(())
    } else {
        Err(anyhow!("metrics report violates schema: {}", errors.join("; ")))
    }
}

/// Histogram range per measure: confidence on `[0, 1]`, entropies on `[0, ln K]`.
fn hist_range(m: Measure, k: usize) -> (f64, f64) {
    match m {
        Measure::Confidence => (0.0, 1.0),
        _ => (0.0, (k as f64).ln()),
    }
}

fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<usize> {
    let mut counts = vec![0; bins];
    let width = (hi - lo) / bins as f64;
    for &v in values {
        let b = (((v - lo) / width).floor().max(0.0) as usize).min(bins - 1);
        counts[b] += 1;
    }
    counts
}

fn create(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

/// `model,split,measure,bin,lo,hi,count` for every supported measure.
pub fn write_histograms(path: &Path, scored: &[Scored]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["model", "split", "measure", "bin", "lo", "hi", "count"])?;
    for s in scored {
        let k = s.id.probs.ncols();
        for m in Measure::ALL.into_iter().filter(|&m| s.id.supports(m)) {
            let (lo, hi) = hist_range(m, k);
            let width = (hi - lo) / HIST_BINS as f64;
            for (split, p) in [("id", &s.id), ("ood", &s.ood)] {
                let counts = histogram(p.column(m)?, lo, hi, HIST_BINS);
                for (b, c) in counts.iter().enumerate() {
                    let bl = lo + b as f64 * width;
                    w.write_record([
                        s.name.clone(),
                        split.into(),
                        m.as_str().into(),
                        b.to_string(),
                        bl.to_string(),
                        (bl + width).to_string(),
                        c.to_string(),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `model,measure,fraction,measured,random,oracle`.
pub fn write_rejection(path: &Path, scored: &[Scored]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["model", "measure", "fraction", "measured", "random", "oracle"])?;
    for s in scored {
        for m in Measure::ALL.into_iter().filter(|&m| s.id.supports(m)) {
            let c: RejectionCurve = rejection_curve(&s.id, m)?;
            for i in 0..c.len() {
                w.write_record([
                    s.name.clone(),
                    m.as_str().into(),
                    c.fractions[i].to_string(),
                    c.measured[i].to_string(),
                    c.random[i].to_string(),
                    c.oracle[i].to_string(),
                ])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// `model,measure,fpr,tpr` for ID-vs-OOD detection, OOD positive.
pub fn write_roc(path: &Path, scored: &[Scored]) -> Result<()> {
    let mut w = create(path)?;
    w.write_record(["model", "measure", "fpr", "tpr"])?;
    for s in scored {
        for m in Measure::ALL.into_iter().filter(|&m| s.id.supports(m)) {
            for (fpr, tpr) in roc_curve(&s.ood.uncertainty(m)?, &s.id.uncertainty(m)?)? {
                w.write_record([s.name.clone(), m.as_str().into(), fpr.to_string(), tpr.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Pretty JSON with a trailing newline, read back and reparsed before returning.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<Value> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    let mut f = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(text.as_bytes())?;
    f.sync_all()?;
    let back: Value = serde_json::from_str(&fs::read_to_string(path)?)
        .with_context(|| format!("re-reading {}", path.display()))?;
    Ok(back)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn histogram_clamps_to_range() {
        let c = histogram(&[0.0, 0.49, 0.5, 1.0, 1.2, -0.1], 0.0, 1.0, 2);
        assert_eq!(c, vec![3, 3]);
    }

    #[test]
    fn schema_rejects_missing_and_extra_keys() {
        let ok = serde_json::json!({
            "schema": SCHEMA_ID, "config_hash": "0".repeat(64), "ece_bins": 15,
            "n_test": 3, "n_ood": 2, "models": []
        });
        validate_metrics(&ok).unwrap();
        let mut extra = ok.clone();
        extra["surprise"] = Value::Bool(true);
        assert!(validate_metrics(&extra).is_err());
        let mut missing = ok;
        missing.as_object_mut().unwrap().remove("n_ood");
        assert!(validate_metrics(&missing).is_err());
    }

    #[test]
    fn by_measure_round_trips_nulls() {
        let b = ByMeasure { confidence: Some(0.5), total: None, expected_data: None, knowledge: Some(0.25) };
        let s = serde_json::to_string(&b).unwrap();
        assert_eq!(s, r#"{"confidence":0.5,"total":null,"expected_data":null,"knowledge":0.25}"#);
        assert_eq!(serde_json::from_str::<ByMeasure>(&s).unwrap(), b);
    }
}
