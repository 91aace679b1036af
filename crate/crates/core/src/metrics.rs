//! Evaluation metrics: set-level mIoU, depth errors and S³R spectrogram /
//! envelope errors, with JSON and aligned-text rendering.

use crate::dsp::{envelope, DspError, StftPlan, Waveform};
use crate::grid::Grid;
use crate::scene::{LabelGrid, SourceClass};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("ground-truth depth {0} is not positive")]
    NonpositiveGroundTruth(f64),
    #[error(transparent)]
    Dsp(#[from] DspError),
}

fn check_shapes<A, B>(a: &Grid<A>, b: &Grid<B>) -> Result<(), MetricsError> {
    if a.shape() == b.shape() {
        Ok(())
    } else {
        Err(MetricsError::ShapeMismatch(format!("{:?} vs {:?}", a.shape(), b.shape())))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticReport {
    /// Keyed by class name; classes absent from both prediction and truth
    /// over the whole set are left out.
    pub per_class_iou: BTreeMap<String, f64>,
    /// Unweighted mean of `per_class_iou`; 0 when no class occurs.
    pub mean_iou: f64,
}

/// Confusion counts accumulated over an evaluation set.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IouAccumulator {
    /// class id -> (tp, fp, fn)
    counts: BTreeMap<u8, (u64, u64, u64)>,
}

impl IouAccumulator {
    pub fn add(&mut self, pred: &LabelGrid, gt: &LabelGrid, classes: &[u8]) -> Result<(), MetricsError> {
        check_shapes(pred, gt)?;
        for &c in classes {
            let e = self.counts.entry(c).or_default();
            for (&p, &g) in pred.as_slice().iter().zip(gt.as_slice()) {
                match (p == c, g == c) {
                    (true, true) => e.0 += 1,
                    (true, false) => e.1 += 1,
                    (false, true) => e.2 += 1,
                    _ => {}
                }
            }
        }
        Ok(())
    }

    pub fn report(&self) -> SemanticReport {
        let mut per_class_iou = BTreeMap::new();
        for (&c, &(tp, fp, fn_)) in &self.counts {
            let denom = tp + fp + fn_;
            if denom == 0 {
                continue;
            }
            let name = SourceClass::from_id(c).map_or_else(|| c.to_string(), |k| k.name().to_string());
            per_class_iou.insert(name, tp as f64 / denom as f64);
        }
        let mean_iou = if per_class_iou.is_empty() {
            0.0
        } else {
            per_class_iou.values().sum::<f64>() / per_class_iou.len() as f64
        };
        SemanticReport { per_class_iou, mean_iou }
    }
}

/// Target class ids (background excluded).
pub fn target_class_ids() -> Vec<u8> {
    SourceClass::ALL.iter().map(|c| c.id()).collect()
}

pub fn miou(preds: &[LabelGrid], gts: &[LabelGrid], classes: &[u8]) -> Result<SemanticReport, MetricsError> {
    if preds.len() != gts.len() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{} predictions vs {} labels",
            preds.len(),
            gts.len()
        )));
    }
    let mut acc = IouAccumulator::default();
    for (p, g) in preds.iter().zip(gts) {
        acc.add(p, g, classes)?;
    }
    Ok(acc.report())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DepthReport {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    /// On depths divided by the far depth.
    pub mse: f64,
}

pub fn depth_metrics(preds: &[Grid<f64>], gts: &[Grid<f64>], far_depth: f64) -> Result<DepthReport, MetricsError> {
    if preds.len() != gts.len() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{} predictions vs {} targets",
            preds.len(),
            gts.len()
        )));
    }
    let (mut abs_rel, mut sq_rel, mut sq, mut n) = (0.0, 0.0, 0.0, 0usize);
    for (p, g) in preds.iter().zip(gts) {
        check_shapes(p, g)?;
        for (&p, &g) in p.as_slice().iter().zip(g.as_slice()) {
            if !(g > 0.0) {
                return Err(MetricsError::NonpositiveGroundTruth(g));
            }
            let d = p - g;
            abs_rel += d.abs() / g;
            sq_rel += d * d / g;
            sq += d * d;
            n += 1;
        }
    }
    let n = n.max(1) as f64;
    Ok(DepthReport {
        abs_rel: abs_rel / n,
        sq_rel: sq_rel / n,
        rmse: (sq / n).sqrt(),
        mse: sq / n / (far_depth * far_depth),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct S3RReport {
    #[serde(rename = "s3r_mse")]
    pub mse_per_channel: Vec<f64>,
    #[serde(rename = "s3r_env")]
    pub env_per_channel: Vec<f64>,
}

impl S3RReport {
    pub fn mean_mse(&self) -> f64 {
        mean(&self.mse_per_channel)
    }

    pub fn mean_env(&self) -> f64 {
        mean(&self.env_per_channel)
    }
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Mean squared complex difference of two waveforms' spectrograms.
pub fn spectrogram_mse(pred: &Waveform, gt: &Waveform, plan: &StftPlan) -> Result<f64, MetricsError> {
    if pred.len() != gt.len() || pred.sample_rate() != gt.sample_rate() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{} samples @ {} Hz vs {} samples @ {} Hz",
            pred.len(),
            pred.sample_rate(),
            gt.len(),
            gt.sample_rate()
        )));
    }
    let a = plan.forward(pred)?;
    let b = plan.forward(gt)?;
    let cells = a.bins().as_slice();
    let total: f64 = cells.iter().zip(b.bins().as_slice()).map(|(x, y)| (x - y).norm_sqr()).sum();
    Ok(total / cells.len() as f64)
}

/// Mean absolute difference of analytic envelopes.
pub fn envelope_error(pred: &Waveform, gt: &Waveform) -> Result<f64, MetricsError> {
    if pred.len() != gt.len() {
        return Err(MetricsError::ShapeMismatch(format!("{} vs {} samples", pred.len(), gt.len())));
    }
    let (a, b) = (envelope(pred), envelope(gt));
    Ok(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len().max(1) as f64)
}

/// One entry per channel, in the given order.
pub fn s3r_metrics(preds: &[Waveform], gts: &[Waveform], plan: &StftPlan) -> Result<S3RReport, MetricsError> {
    if preds.len() != gts.len() {
        return Err(MetricsError::ShapeMismatch(format!("{} vs {} channels", preds.len(), gts.len())));
    }
    let mut report = S3RReport {
        mse_per_channel: Vec::with_capacity(preds.len()),
        env_per_channel: Vec::with_capacity(preds.len()),
    };
    for (p, g) in preds.iter().zip(gts) {
        report.mse_per_channel.push(spectrogram_mse(p, g, plan)?);
        report.env_per_channel.push(envelope_error(p, g)?);
    }
    Ok(report)
}

/// Left-aligned first column, right-aligned numbers, single spaces of
/// padding, dashed rule under the header.
pub fn format_table(header: &[String], rows: &[Vec<String>]) -> String {
    let cols = header.len();
    let mut width = vec![0; cols];
    for row in std::iter::once(header).chain(rows.iter().map(|r| r.as_slice())) {
        for (i, cell) in row.iter().enumerate().take(cols) {
            width[i] = width[i].max(cell.chars().count());
        }
    }
    let line = |row: &[String]| {
        let cells: Vec<String> = (0..cols)
            .map(|i| {
                let cell = row.get(i).map(String::as_str).unwrap_or("");
                if i == 0 {
                    format!("{cell:<w$}", w = width[i])
                } else {
                    format!("{cell:>w$}", w = width[i])
                }
            })
            .collect();
        cells.join("  ").trim_end().to_string()
    };
    let mut out = line(header);
    out.push('\n');
    out.push_str(&"-".repeat(width.iter().sum::<usize>() + 2 * cols.saturating_sub(1)));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

fn s(v: &str) -> String {
    v.to_string()
}

/// Car / MC / Train / All, as percentages.
pub fn semantic_table(rows: &[(String, &SemanticReport)]) -> String {
    let header = vec![s("Method"), s("Car"), s("MC"), s("Train"), s("All")];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, r)| {
            let mut row = vec![name.clone()];
            for c in SourceClass::ALL {
                row.push(r.per_class_iou.get(c.name()).map_or(s("-"), |v| format!("{:.2}", 100.0 * v)));
            }
            row.push(format!("{:.2}", 100.0 * r.mean_iou));
            row
        })
        .collect();
    format_table(&header, &body)
}

pub fn depth_table(rows: &[(String, &DepthReport)]) -> String {
    let header = vec![s("Method"), s("AbsRel"), s("SqRel"), s("RMSE"), s("MSE")];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, r)| {
            vec![
                name.clone(),
                format!("{:.4}", r.abs_rel),
                format!("{:.4}", r.sq_rel),
                format!("{:.4}", r.rmse),
                format!("{:.4}", r.mse),
            ]
        })
        .collect();
    format_table(&header, &body)
}

/// Columns per channel, labelled `MSE-k` and `ENV-k` (1-based).
pub fn s3r_table(rows: &[(String, &S3RReport)]) -> String {
    let channels = rows.iter().map(|(_, r)| r.mse_per_channel.len()).max().unwrap_or(0);
    let mut header = vec![s("Method")];
    header.extend((1..=channels).map(|k| format!("MSE-{k}")));
    header.extend((1..=channels).map(|k| format!("ENV-{k}")));
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, r)| {
            let mut row = vec![name.clone()];
            row.extend(r.mse_per_channel.iter().map(|v| format!("{v:.4}")));
            row.extend(r.env_per_channel.iter().map(|v| format!("{v:.4}")));
            row
        })
        .collect();
    format_table(&header, &body)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn g(rows: usize, cols: usize, v: &[u8]) -> LabelGrid {
        Grid::from_vec(rows, cols, v.to_vec()).unwrap()
    }

    #[test]
    fn perfect_prediction_scores_one() {
        let gt = g(2, 3, &[0, 1, 2, 3, 0, 1]);
        let r = miou(&[gt.clone()], &[gt], &target_class_ids()).unwrap();
        assert_eq!(r.mean_iou, 1.0);
        assert_eq!(r.per_class_iou.len(), 3);
    }

    #[test]
    fn hand_counted_two_by_two() {
        let gt = g(2, 2, &[1, 1, 0, 0]);
        let pred = g(2, 2, &[1, 0, 0, 0]);
        let r = miou(&[pred], &[gt], &target_class_ids()).unwrap();
        assert_eq!(r.per_class_iou["car"], 0.5);
        // Motorcycle and train are absent everywhere.
        assert_eq!(r.per_class_iou.len(), 1);
        assert_eq!(r.mean_iou, 0.5);
    }

    #[test]
    fn iou_accumulates_over_the_set() {
        // Image A: car tp=1; image B: car fp=3. Set IoU = 1/4, while the
        // per-image mean would be (1 + 0)/2.
        let a = (g(1, 4, &[1, 0, 0, 0]), g(1, 4, &[1, 0, 0, 0]));
        let b = (g(1, 4, &[1, 1, 1, 0]), g(1, 4, &[0, 0, 0, 0]));
        let r = miou(&[a.0, b.0], &[a.1, b.1], &[1]).unwrap();
        assert_eq!(r.per_class_iou["car"], 0.25);
    }

    #[test]
    fn depth_scalar_case() {
        let r = depth_metrics(&[Grid::filled(1, 1, 6.0)], &[Grid::filled(1, 1, 4.0)], 50.0).unwrap();
        assert_eq!(r.abs_rel, 0.5);
        assert_eq!(r.sq_rel, 1.0);
        assert_eq!(r.rmse, 2.0);
        assert!((r.mse - 4.0 / 2500.0).abs() < 1e-15);
        let zero = depth_metrics(&[Grid::filled(2, 2, 3.0)], &[Grid::filled(2, 2, 3.0)], 50.0).unwrap();
        assert_eq!(
            zero,
            DepthReport {
                abs_rel: 0.0,
                sq_rel: 0.0,
                rmse: 0.0,
                mse: 0.0
            }
        );
        assert!(matches!(
            depth_metrics(&[Grid::filled(1, 1, 1.0)], &[Grid::filled(1, 1, 0.0)], 50.0),
            Err(MetricsError::NonpositiveGroundTruth(_))
        ));
    }

    #[test]
    fn s3r_identity_and_silence_against_sine() {
        let plan = StftPlan::new(512, 160).unwrap();
        let sr = 16_000;
        let sine = Waveform::new(
            (0..sr as usize)
                .map(|t| (2.0 * std::f64::consts::PI * 440.0 * t as f64 / sr as f64).sin())
                .collect(),
            sr,
        )
        .unwrap();
        let same = s3r_metrics(&[sine.clone()], &[sine.clone()], &plan).unwrap();
        assert_eq!(same.mse_per_channel, vec![0.0]);
        assert_eq!(same.env_per_channel, vec![0.0]);
        let silent = Waveform::zeros(sine.len(), sr);
        let env = envelope_error(&silent, &sine).unwrap();
        assert!((env - 1.0).abs() < 0.02, "{env}");
    }

    #[test]
    fn json_keys_are_fixed() {
        let sem = miou(&[g(1, 1, &[1])], &[g(1, 1, &[1])], &[1]).unwrap();
        let depth = DepthReport {
            abs_rel: 0.0,
            sq_rel: 0.0,
            rmse: 0.0,
            mse: 0.0,
        };
        let s3r = S3RReport {
            mse_per_channel: vec![0.1],
            env_per_channel: vec![0.2],
        };
        let mut keys: Vec<String> = Vec::new();
        for v in [
            serde_json::to_value(&sem).unwrap(),
            serde_json::to_value(&depth).unwrap(),
            serde_json::to_value(&s3r).unwrap(),
        ] {
            keys.extend(v.as_object().unwrap().keys().cloned());
        }
        keys.sort();
        assert_eq!(
            keys,
            [
                "abs_rel",
                "mean_iou",
                "mse",
                "per_class_iou",
                "rmse",
                "s3r_env",
                "s3r_mse",
                "sq_rel"
            ]
        );
    }

    #[test]
    fn tables_align() {
        let sem = miou(&[g(1, 2, &[1, 2])], &[g(1, 2, &[1, 1])], &target_class_ids()).unwrap();
        let t = semantic_table(&[("Ours(B)".into(), &sem), ("Mono".into(), &sem)]);
        let lines: Vec<&str> = t.lines().collect();
        assert!(lines[0].starts_with("Method"));
        assert_eq!(lines[2].len(), lines[3].len());
        assert_eq!(lines[1].len(), lines[0].len());
        assert!(lines[2].contains("50.00"));
    }

    proptest! {
        #[test]
        fn miou_is_permutation_invariant(v in prop::collection::vec(0u8..4, 4 * 12), shift in 1usize..4) {
            let grids: Vec<LabelGrid> = v.chunks(12).map(|c| g(3, 4, c)).collect();
            let preds: Vec<LabelGrid> = grids.iter().map(|x| x.map(|&c| (c + 1) % 4)).collect();
            let a = miou(&preds, &grids, &target_class_ids()).unwrap();
            let mut p2 = preds.clone();
            let mut g2 = grids.clone();
            p2.rotate_left(shift);
            g2.rotate_left(shift);
            prop_assert_eq!(a, miou(&p2, &g2, &target_class_ids()).unwrap());
        }

        #[test]
        fn depth_scale_law(
            p in prop::collection::vec(0.5f64..40.0, 8),
            t in prop::collection::vec(2.0f64..40.0, 8),
            k in 0.1f64..10.0,
        ) {
            let pg = Grid::from_vec(2, 4, p.clone()).unwrap();
            let tg = Grid::from_vec(2, 4, t.clone()).unwrap();
            let a = depth_metrics(&[pg.clone()], &[tg.clone()], 50.0).unwrap();
            let b = depth_metrics(&[pg.map(|v| v * k)], &[tg.map(|v| v * k)], 50.0).unwrap();
            prop_assert!((b.rmse - k * a.rmse).abs() <= 1e-9 * (1.0 + b.rmse));
            prop_assert!((b.abs_rel - a.abs_rel).abs() <= 1e-12 * (1.0 + a.abs_rel));
        }
    }
}
