use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Curve, CurveKind};
use crate::data::{percentile_threshold, Dataset, Matrix, Split};
use crate::error::{Error, Result};
use crate::models::Model;

/// Groups rows by score, highest first, and returns cumulative
/// (true positive, false positive) counts at the end of each group.
fn ranked_counts(labels: &[bool], scores: &[f64]) -> Result<Vec<(usize, usize)>> {
    if labels.len() != scores.len() {
        return Err(Error::shape(format!("{} scores", labels.len()), format!("{}", scores.len())));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0, 0);
    for (pos, &i) in order.iter().enumerate() {
        if labels[i] {
            tp += 1;
        } else {
            fp += 1;
        }
        let last_of_group = order.get(pos + 1).is_none_or(|&n| scores[n] != scores[i]);
        if last_of_group {
            out.push((tp, fp));
        }
    }
    Ok(out)
}

/// ROC curve with trapezoidal AUC; tied scores form one segment.
pub fn roc_auc(labels: &[bool], scores: &[f64]) -> Result<Curve> {
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::OneClassOnly);
    }
    let mut points = vec![(0.0, 0.0)];
    let mut auc = 0.0;
    for (tp, fp) in ranked_counts(labels, scores)? {
        let p = (fp as f64 / neg as f64, tp as f64 / pos as f64);
        let (x0, y0) = *points.last().expect("non-empty");
        auc += (p.0 - x0) * (p.1 + y0) / 2.0;
        points.push(p);
    }
    Ok(Curve {
        kind: CurveKind::Roc,
        points,
        summary: auc,
    })
}

/// Precision-recall curve with step-interpolated average precision.
pub fn pr_ap(labels: &[bool], scores: &[f64]) -> Result<Curve> {
    let pos = labels.iter().filter(|&&l| l).count();
    if pos == 0 {
        return Err(Error::NoPositives);
    }
    let mut points = Vec::new();
    let mut ap = 0.0;
    let mut prev_recall = 0.0;
    for (tp, fp) in ranked_counts(labels, scores)? {
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / (tp + fp) as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        points.push((recall, precision));
    }
    Ok(Curve {
        kind: CurveKind::PrecisionRecall,
        points,
        summary: ap,
    })
}

/// Mean and standard deviation of the AUC under random label permutations.
pub fn auc_permutation_null(labels: &[bool], scores: &[f64], rounds: usize, seed: u64) -> Result<(f64, f64)> {
    if rounds < 2 {
        return Err(Error::InvalidArgument("permutation test needs at least 2 rounds".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut shuffled = labels.to_vec();
    let mut aucs = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        shuffled.shuffle(&mut rng);
        aucs.push(roc_auc(&shuffled, scores)?.summary);
    }
    let mean = aucs.iter().sum::<f64>() / rounds as f64;
    let var = aucs.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / (rounds - 1) as f64;
    Ok((mean, var.sqrt()))
}

/// Tail-event labels and model scores for one split.
#[derive(Clone, Debug, PartialEq)]
pub struct TailScores {
    /// Per-response thresholds on the standardised scale, from the training split.
    pub thresholds: Vec<f64>,
    pub labels: Vec<bool>,
    /// `1 − F(thresholds | x)` per row.
    pub scores: Vec<f64>,
}

/// A row is positive when any response exceeds its training `q`-quantile;
/// its score is the model probability of leaving the joint lower orthant.
pub fn tail_labels_scores(model: &Model, dataset: &Dataset, split: Split, q: f64) -> Result<TailScores> {
    let (_, ytrain) = dataset.split_xy(Split::Train);
    let thresholds = (0..dataset.k())
        .map(|j| percentile_threshold(&ytrain.column(j), q))
        .collect::<Result<Vec<_>>>()?;
    let (x, y) = dataset.split_xy(split);
    let labels = (0..y.rows)
        .map(|r| y.row(r).iter().zip(&thresholds).any(|(v, t)| v > t))
        .collect();
    let ythr = Matrix::new(y.rows, y.cols, thresholds.iter().copied().cycle().take(y.rows * y.cols).collect())?;
    let scores = model.cdf(&x, &ythr)?.into_iter().map(|f| 1.0 - f).collect();
    Ok(TailScores {
        thresholds,
        labels,
        scores,
    })
}
