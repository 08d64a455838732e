//! Mini-batch Adam on the (composite) log-likelihood with restart and
//! batch-doubling policies.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Matrix, Split};
use crate::error::{Error, Result};
use crate::models::{DataStats, Model};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub early_stop_patience: usize,
    pub plateau_patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    /// Largest batch size; defaults to the number of training rows.
    pub batch_cap: Option<usize>,
    /// Epochs whose loss is forced to NaN to exercise the recovery path.
    pub inject_nan_epochs: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 128,
            max_epochs: 1000,
            early_stop_patience: 30,
            plateau_patience: 10,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
            seed: 0,
            batch_cap: None,
            inject_nan_epochs: Vec::new(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidArgument(msg.into()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be finite and non-negative");
        }
        if self.batch_size == 0 || self.batch_cap == Some(0) {
            return bad("batch sizes must be at least 1");
        }
        if self.early_stop_patience == 0 || self.plateau_patience == 0 {
            return bad("patience values must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.epsilon > 0.0) {
            return bad("Adam needs beta1, beta2 in [0, 1) and epsilon > 0");
        }
        Ok(())
    }
}

/// Adam moments aligned with the parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl OptimState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam descent step on `params` along `grads`.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut OptimState, lr: f64, cfg: &TrainConfig) -> Result<()> {
    if grads.len() != params.len() || state.m.len() != params.len() {
        return Err(Error::shape(
            format!("{} gradients and moments", params.len()),
            format!("{} gradients, {} moments", grads.len(), state.m.len()),
        ));
    }
    if grads.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient);
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        *p -= lr * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrainEvent {
    /// Non-finite loss: parameters restored and batch size doubled.
    Restart,
    /// Validation plateau: batch size doubled.
    PlateauDouble,
    EarlyStop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean negative objective over the epoch's batches; NaN on a restart.
    pub train_loss: f64,
    pub val_ll: f64,
    /// Batch size in effect after the epoch's events.
    pub batch_size: usize,
    pub event: Option<TrainEvent>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_val_ll: f64,
}

impl TrainHistory {
    pub fn restarts(&self) -> usize {
        self.records.iter().filter(|r| r.event == Some(TrainEvent::Restart)).count()
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let csv_err = |e: csv::Error| Error::InvalidArgument(format!("csv: {e}"));
        w.write_record(["epoch", "train_loss", "val_ll", "batch_size", "event"])
            .map_err(csv_err)?;
        for r in &self.records {
            let event = match r.event {
                Some(TrainEvent::Restart) => "restart",
                Some(TrainEvent::PlateauDouble) => "plateau-double",
                Some(TrainEvent::EarlyStop) => "early-stop",
                None => "",
            };
            w.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.val_ll.to_string(),
                r.batch_size.to_string(),
                event.to_string(),
            ])
            .map_err(csv_err)?;
        }
        w.flush().map_err(|e| Error::io("history", e))
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Failures a restart with a larger batch can recover from.
fn recoverable(e: &Error) -> bool {
    matches!(
        e,
        Error::NumericalFailure { .. }
            | Error::NonFiniteGradient
            | Error::SingularCorrelation
            | Error::NonPositiveD { .. }
            | Error::DegenerateColumn { .. }
    )
}

/// Runs one epoch; `Ok(None)` signals a non-finite loss or gradient.
fn run_epoch(
    model: &mut Model,
    x: &Matrix,
    y: &Matrix,
    order: &[usize],
    batch: usize,
    state: &mut OptimState,
    cfg: &TrainConfig,
) -> Result<Option<f64>> {
    let mut total = 0.0;
    for idx in order.chunks(batch) {
        let (xb, yb) = (x.gather_rows(idx), y.gather_rows(idx));
        let (eval, mut grad) = match model.objective_grad(&xb, &yb) {
            Ok(v) => v,
            Err(e) if recoverable(&e) => return Ok(None),
            Err(e) => return Err(e),
        };
        let sum: f64 = eval.values.iter().sum();
        if !sum.is_finite() {
            return Ok(None);
        }
        total -= sum;
        let scale = -1.0 / idx.len() as f64;
        grad.iter_mut().for_each(|g| *g *= scale);
        match adam_step(model.params.values_mut(), &grad, state, cfg.learning_rate, cfg) {
            Ok(()) => {}
            Err(Error::NonFiniteGradient) => return Ok(None),
            Err(e) => return Err(e),
        }
    }
    Ok(Some(total / order.len() as f64))
}

fn validation_ll(model: &Model, x: &Matrix, y: &Matrix) -> Result<Option<f64>> {
    match model.objective(x, y) {
        Ok(eval) => {
            let m = mean(&eval.values);
            Ok(m.is_finite().then_some(m))
        }
        Err(e) if recoverable(&e) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Maximises the training objective and leaves `model` at its best
/// validation epoch. The validation metric is the training objective's mean
/// on the standardised scale.
pub fn train(model: &mut Model, dataset: &Dataset, cfg: &TrainConfig) -> Result<TrainHistory> {
    cfg.validate()?;
    let (xt, yt) = dataset.split_xy(Split::Train);
    let (xv, yv) = dataset.split_xy(Split::Validation);
    if yt.rows == 0 || yv.rows == 0 {
        return Err(Error::EmptyInput);
    }
    model.stats = Some(DataStats {
        x: dataset.x_stats.clone(),
        y: dataset.y_stats.clone(),
    });
    let mut history = TrainHistory {
        best_val_ll: f64::NEG_INFINITY,
        ..Default::default()
    };
    if !model.is_trainable() {
        model.refit_closed_form(&xt, &yt)?;
        let val = mean(&model.objective(&xv, &yv)?.values);
        history.records.push(EpochRecord {
            epoch: 0,
            train_loss: -mean(&model.objective(&xt, &yt)?.values),
            val_ll: val,
            batch_size: yt.rows,
            event: None,
        });
        history.best_epoch = Some(0);
        history.best_val_ll = val;
        return Ok(history);
    }

    let cap = cfg.batch_cap.unwrap_or(yt.rows).min(yt.rows);
    let mut batch = cfg.batch_size.min(cap);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = OptimState::new(model.params.len());
    let mut snapshot = (model.clone(), state.clone());
    let mut best = model.clone();
    let mut since_best = 0;
    let mut since_double = 0;
    let mut cap_failures = 0;
    let mut order: Vec<usize> = (0..yt.rows).collect();

    for epoch in 0..cfg.max_epochs {
        let refit = match model.refit_closed_form(&xt, &yt) {
            Ok(()) => true,
            Err(e) if recoverable(&e) => false,
            Err(e) => return Err(e),
        };
        order.shuffle(&mut rng);
        let mut loss = if refit {
            run_epoch(model, &xt, &yt, &order, batch, &mut state, cfg)?
        } else {
            None
        };
        if cfg.inject_nan_epochs.contains(&epoch) {
            loss = None;
        }
        let val = match loss {
            Some(_) => validation_ll(model, &xv, &yv)?,
            None => None,
        };
        let (Some(loss), Some(val)) = (loss, val) else {
            (*model, state) = (snapshot.0.clone(), snapshot.1.clone());
            if batch == cap {
                cap_failures += 1;
                if cap_failures >= 2 {
                    return Err(Error::TrainingDiverged { cap });
                }
            }
            batch = (batch * 2).min(cap);
            log::warn!("epoch {epoch}: non-finite loss, restored last good parameters, batch size {batch}");
            history.records.push(EpochRecord {
                epoch,
                train_loss: f64::NAN,
                val_ll: validation_ll(model, &xv, &yv)?.unwrap_or(f64::NAN),
                batch_size: batch,
                event: Some(TrainEvent::Restart),
            });
            continue;
        };
        cap_failures = 0;
        snapshot = (model.clone(), state.clone());
        let mut event = None;
        if val > history.best_val_ll {
            history.best_val_ll = val;
            history.best_epoch = Some(epoch);
            best = model.clone();
            since_best = 0;
            since_double = 0;
        } else {
            since_best += 1;
            since_double += 1;
            if since_best >= cfg.early_stop_patience {
                event = Some(TrainEvent::EarlyStop);
            } else if since_double >= cfg.plateau_patience && batch < cap {
                batch = (batch * 2).min(cap);
                since_double = 0;
                event = Some(TrainEvent::PlateauDouble);
            }
        }
        log::debug!("epoch {epoch}: loss {loss:.6} val {val:.6} batch {batch}");
        history.records.push(EpochRecord {
            epoch,
            train_loss: loss,
            val_ll: val,
            batch_size: batch,
            event,
        });
        if event == Some(TrainEvent::EarlyStop) {
            break;
        }
    }
    if history.best_epoch.is_some() {
        *model = best;
    }
    Ok(history)
}

/// Mean and standard error of per-row values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitScore {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

impl SplitScore {
    pub fn from_values(values: &[f64]) -> Result<SplitScore> {
        let n = values.len();
        if n == 0 {
            return Err(Error::EmptyInput);
        }
        let m = mean(values);
        let stderr = if n > 1 {
            let var = values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1) as f64;
            (var / n as f64).sqrt()
        } else {
            0.0
        };
        Ok(SplitScore { mean: m, stderr, n })
    }
}

/// Per-row log-likelihood on the original response scale.
pub fn split_logpdf(model: &Model, dataset: &Dataset, split: Split) -> Result<Vec<f64>> {
    let (x, y) = dataset.split_xy(split);
    let shift = dataset.y_stats.log_jacobian(&(0..dataset.k()).collect::<Vec<_>>());
    Ok(model.logpdf(&x, &y)?.values.into_iter().map(|v| v - shift).collect())
}

/// Mean test log-likelihood per row on the original response scale.
pub fn evaluate_split(model: &Model, dataset: &Dataset, split: Split) -> Result<SplitScore> {
    SplitScore::from_values(&split_logpdf(model, dataset, split)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let cfg = TrainConfig::default();
        let mut p = vec![0.3, -1.2];
        let mut s = OptimState::new(2);
        adam_step(&mut p, &[0.0, 0.0], &mut s, 1e-3, &cfg).unwrap();
        assert_eq!(p, vec![0.3, -1.2]);
        assert_eq!(s.m, vec![0.0, 0.0]);
        assert_eq!(s.v, vec![0.0, 0.0]);
        assert_eq!(s.step, 1);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let cfg = TrainConfig::default();
        let mut p = vec![0.0];
        let mut s = OptimState::new(1);
        adam_step(&mut p, &[1.0], &mut s, 1e-3, &cfg).unwrap();
        assert!(p[0] <= -0.000999 && p[0] >= -0.001, "{}", p[0]);
    }

    #[test]
    fn adam_is_deterministic_and_rejects_nan() {
        let cfg = TrainConfig::default();
        let run = || {
            let mut p = vec![0.5, 0.1];
            let mut s = OptimState::new(2);
            for i in 0..5 {
                adam_step(&mut p, &[0.1 * i as f64, -0.7], &mut s, 1e-2, &cfg).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
        let mut p = vec![1.0];
        let mut s = OptimState::new(1);
        assert!(matches!(
            adam_step(&mut p, &[f64::NAN], &mut s, 1e-3, &cfg),
            Err(Error::NonFiniteGradient)
        ));
        assert_eq!(p, vec![1.0]);
        assert_eq!(s.step, 0);
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let cfg = TrainConfig::default();
        let mut p = vec![0.25, 4.0];
        let mut s = OptimState::new(2);
        adam_step(&mut p, &[3.0, -2.0], &mut s, 0.0, &cfg).unwrap();
        assert_eq!(p, vec![0.25, 4.0]);
    }

    #[test]
    fn split_score_examples() {
        let one = SplitScore::from_values(&[-1.0]).unwrap();
        assert_eq!((one.mean, one.stderr), (-1.0, 0.0));
        let two = SplitScore::from_values(&[-1.0, -3.0]).unwrap();
        assert_eq!(two.mean, -2.0);
        let v = [0.2, -1.5, 3.0, 0.7, -0.1];
        let s = SplitScore::from_values(&v).unwrap();
        let m = v.iter().sum::<f64>() / 5.0;
        let sd = (v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 4.0).sqrt();
        assert!((s.stderr - sd / 5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(SplitScore::from_values(&[]), Err(Error::EmptyInput)));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = [
            TrainConfig {
                batch_size: 0,
                ..Default::default()
            },
            TrainConfig {
                early_stop_patience: 0,
                ..Default::default()
            },
            TrainConfig {
                learning_rate: f64::NAN,
                ..Default::default()
            },
        ];
        assert!(bad.iter().all(|c| c.validate().is_err()));
    }
}
