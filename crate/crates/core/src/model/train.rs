use super::{Autoencoder, StepMetrics};
use crate::dataset::{batches, BatchPlan, LabeledSet};
use crate::error::{Error, Result};
use crate::losses::{recon_loss, xcov_loss, XCovInputs};
use crate::optim::{Adadelta, AdadeltaState};
use crate::tensor::{Rng, Tensor};

pub const METRICS_CSV_HEADER: &str = "epoch,step,recon,xent,xcov,total";

/// Stream ids for [`Rng::derived`], so initialization and shuffling never
/// share draws.
pub(crate) const INIT_STREAM: u64 = 1;
pub(crate) const SHUFFLE_STREAM: u64 = 2;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectiveConfig {
    pub beta: f64,
    pub gamma: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for ObjectiveConfig {
    fn default() -> Self {
        ObjectiveConfig {
            beta: 10.0,
            gamma: 10.0,
            batch_size: 100,
            epochs: 30,
            seed: 0,
        }
    }
}

impl ObjectiveConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.beta >= 0.0 && self.beta.is_finite()) || !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return Err(Error::invalid(format!(
                "beta and gamma must be finite and >= 0, got beta={}, gamma={}",
                self.beta, self.gamma
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be >= 1"));
        }
        Ok(())
    }
}

/// One row of the metrics CSV.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub epoch: u64,
    pub step: u64,
    pub metrics: StepMetrics,
}

impl StepRecord {
    /// Formats with shortest round-trip floats, so equal records give equal
    /// lines.
    pub fn csv_line(&self) -> String {
        let m = &self.metrics;
        format!(
            "{},{},{:?},{:?},{:?},{:?}",
            self.epoch, self.step, m.recon, m.xent, m.xcov, m.total
        )
    }
}

/// Model plus everything needed to continue training bit-exactly.
#[derive(Clone, Debug, PartialEq)]
pub struct Trainer {
    pub model: Autoencoder,
    pub optimizer: Adadelta,
    pub states: Vec<AdadeltaState>,
    pub rng: Rng,
    /// Completed epochs.
    pub epoch: u64,
    /// Completed optimizer steps.
    pub step: u64,
}

impl Trainer {
    /// Fresh network initialized from `seed`.
    pub fn new(arch: &super::Architecture, seed: u64) -> Result<Self> {
        let model = Autoencoder::new(arch, &mut Rng::derived(seed, INIT_STREAM))?;
        Ok(Trainer::from_model(model, Adadelta::default(), seed))
    }

    pub fn from_model(model: Autoencoder, optimizer: Adadelta, seed: u64) -> Self {
        let states = model.params().into_iter().map(AdadeltaState::zeros_like).collect();
        Trainer {
            model,
            optimizer,
            states,
            rng: Rng::derived(seed, SHUFFLE_STREAM),
            epoch: 0,
            step: 0,
        }
    }

    /// One combined backward pass and one ADADELTA update per parameter
    /// tensor.
    pub fn train_step(&mut self, x: &Tensor, y: Option<&Tensor>, cfg: &ObjectiveConfig) -> Result<StepMetrics> {
        cfg.validate()?;
        let (metrics, grads) = self.model.loss_and_grads(x, y, cfg.beta, cfg.gamma)?;
        let params = self.model.params_mut();
        for ((p, g), st) in params.into_iter().zip(&grads).zip(&mut self.states) {
            self.optimizer.update(st, p, g)?;
        }
        self.step += 1;
        Ok(metrics)
    }

    /// One shuffled pass over `set`, dropping the ragged tail batch.
    /// `labeled` chooses between the supervised and unlabeled objective.
    pub fn train_epoch(
        &mut self,
        set: &LabeledSet,
        cfg: &ObjectiveConfig,
        labeled: bool,
        mut on_step: impl FnMut(&StepRecord),
    ) -> Result<StepMetrics> {
        cfg.validate()?;
        if set.len() < cfg.batch_size {
            return Err(Error::invalid(format!(
                "training set has {} rows, fewer than one batch of {}",
                set.len(),
                cfg.batch_size
            )));
        }
        let plan = BatchPlan::new(cfg.batch_size, self.rng.next_u64());
        let mut sum = StepMetrics::default();
        let mut count = 0.0;
        for batch in batches(set, &plan)? {
            let batch = batch?;
            let m = self.train_step(&batch.x, labeled.then_some(&batch.y), cfg)?;
            on_step(&StepRecord {
                epoch: self.epoch,
                step: self.step,
                metrics: m,
            });
            sum.recon += m.recon;
            sum.xent += m.xent;
            sum.xcov += m.xcov;
            sum.total += m.total;
            count += 1.0;
        }
        self.epoch += 1;
        Ok(StepMetrics {
            recon: sum.recon / count,
            xent: sum.xent / count,
            xcov: sum.xcov / count,
            total: sum.total / count,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalMetrics {
    pub accuracy: f64,
    /// Mean over examples of ‖x − G(ŷ, z)‖².
    pub recon: f64,
    /// Mean over full batches of the batch XCov; 0 if no full batch exists.
    pub xcov: f64,
}

/// Fraction of rows where `argmax ŷ == argmax y`.
pub fn accuracy(yhat: &Tensor, y: &Tensor) -> Result<f64> {
    if yhat.shape() != y.shape() {
        return Err(Error::Shape {
            op: "accuracy",
            left: yhat.shape(),
            right: y.shape(),
        });
    }
    let p = yhat.argmax_rows()?;
    let t = y.argmax_rows()?;
    let hits = p.iter().zip(&t).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / p.len() as f64)
}

/// Walks `set` in order in chunks of `batch_size`.
pub fn evaluate(model: &Autoencoder, set: &LabeledSet, batch_size: usize) -> Result<EvalMetrics> {
    if batch_size == 0 {
        return Err(Error::invalid("batch size must be >= 1"));
    }
    if set.is_empty() {
        return Err(Error::Empty("evaluate"));
    }
    let (mut hits, mut sq, mut xcov_sum, mut full) = (0usize, 0.0, 0.0, 0usize);
    let mut start = 0;
    while start < set.len() {
        let end = (start + batch_size).min(set.len());
        let part = set.slice(start, end)?;
        let e = model.encode(part.images())?;
        let xhat = model.decode(&e.yhat, &e.z)?;
        let n = end - start;
        hits += (accuracy(&e.yhat, part.labels())? * n as f64).round() as usize;
        sq += recon_loss(part.images(), &xhat)? * n as f64;
        if n == batch_size {
            xcov_sum += xcov_loss(XCovInputs::new(&e.yhat, &e.z)?)?;
            full += 1;
        }
        start = end;
    }
    Ok(EvalMetrics {
        accuracy: hits as f64 / set.len() as f64,
        recon: sq / set.len() as f64,
        xcov: if full == 0 { 0.0 } else { xcov_sum / full as f64 },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::one_hot;
    use crate::model::Architecture;

    fn tiny() -> Architecture {
        Architecture::symmetric(6, &[5], 2, 2)
    }

    fn random_set(rng: &mut Rng, n: usize, d: usize, classes: usize) -> LabeledSet {
        let x = Tensor::from_vec(n, d, (0..n * d).map(|_| rng.next_f64()).collect()).unwrap();
        let c: Vec<usize> = (0..n).map(|_| rng.below(classes)).collect();
        LabeledSet::new(x, one_hot(&c, classes).unwrap()).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(ObjectiveConfig::default().validate().is_ok());
        let bad = ObjectiveConfig {
            beta: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = ObjectiveConfig {
            batch_size: 0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn plain_autoencoder_step_still_reports_terms() {
        let mut rng = Rng::new(4);
        let set = random_set(&mut rng, 10, 6, 2);
        let mut t = Trainer::new(&tiny(), 4).unwrap();
        let cfg = ObjectiveConfig {
            beta: 0.0,
            gamma: 0.0,
            batch_size: 10,
            ..Default::default()
        };
        let m = t.train_step(set.images(), Some(set.labels()), &cfg).unwrap();
        assert!(m.xent > 0.0 && m.xcov >= 0.0);
        assert_eq!(m.total, m.recon);
        assert_eq!(t.step, 1);
    }

    #[test]
    fn hundred_steps_stay_finite() {
        let mut rng = Rng::new(9);
        let set = random_set(&mut rng, 20, 6, 2);
        let mut t = Trainer::new(&tiny(), 9).unwrap();
        let cfg = ObjectiveConfig {
            beta: 1.0,
            gamma: 1.0,
            batch_size: 20,
            ..Default::default()
        };
        for _ in 0..100 {
            let m = t.train_step(set.images(), Some(set.labels()), &cfg).unwrap();
            assert!(m.recon.is_finite() && m.xent.is_finite() && m.xcov.is_finite() && m.total.is_finite());
        }
    }

    #[test]
    fn single_row_batch_trains() {
        let mut rng = Rng::new(1);
        let set = random_set(&mut rng, 1, 6, 2);
        let mut t = Trainer::new(&tiny(), 1).unwrap();
        let cfg = ObjectiveConfig {
            batch_size: 1,
            ..Default::default()
        };
        let m = t.train_step(set.images(), Some(set.labels()), &cfg).unwrap();
        assert_eq!(m.xcov, 0.0);
    }

    #[test]
    fn perfect_predictor_accuracy() {
        let y = one_hot(&[0, 3, 9, 9], 10).unwrap();
        assert_eq!(accuracy(&y, &y).unwrap(), 1.0);
    }

    #[test]
    fn random_predictions_give_chance_accuracy() {
        let mut rng = Rng::new(77);
        let n = 10_000;
        let c: Vec<usize> = (0..n).map(|i| i % 10).collect();
        let y = one_hot(&c, 10).unwrap();
        let yhat = Tensor::from_vec(n, 10, (0..n * 10).map(|_| rng.next_f64()).collect()).unwrap();
        let acc = accuracy(&yhat, &y).unwrap();
        // Binomial(10⁴, 0.1) has std 0.003.
        assert!((acc - 0.1).abs() <= 0.02, "{acc}");
    }

    #[test]
    fn evaluate_counts_full_batches_for_xcov() {
        let mut rng = Rng::new(5);
        let set = random_set(&mut rng, 25, 6, 2);
        let t = Trainer::new(&tiny(), 5).unwrap();
        let e = evaluate(&t.model, &set, 10).unwrap();
        assert!(e.xcov >= 0.0);
        assert!((0.0..=1.0).contains(&e.accuracy));
        let direct = {
            let p = set.slice(0, 10).unwrap();
            let q = set.slice(10, 20).unwrap();
            let a = t.model.encode(p.images()).unwrap();
            let b = t.model.encode(q.images()).unwrap();
            (xcov_loss(XCovInputs::new(&a.yhat, &a.z).unwrap()).unwrap()
                + xcov_loss(XCovInputs::new(&b.yhat, &b.z).unwrap()).unwrap())
                / 2.0
        };
        assert!((e.xcov - direct).abs() < 1e-15);
        let whole = evaluate(&t.model, &set, 100).unwrap();
        assert_eq!(whole.xcov, 0.0);
        assert!((whole.recon - e.recon).abs() < 1e-12);
    }

    /// Class-dependent inputs, so an unpenalized latent picks up class
    /// information.
    fn clustered_set(rng: &mut Rng, n: usize) -> LabeledSet {
        let c: Vec<usize> = (0..n).map(|_| rng.below(3)).collect();
        let mut data = Vec::with_capacity(n * 6);
        for &k in &c {
            for j in 0..6 {
                let centre = if j / 2 == k { 0.8 } else { 0.2 };
                data.push((centre + 0.1 * rng.normal()).clamp(0.0, 1.0));
            }
        }
        let x = Tensor::from_vec(n, 6, data).unwrap();
        LabeledSet::new(x, one_hot(&c, 3).unwrap()).unwrap()
    }

    #[test]
    fn large_gamma_drives_xcov_down() {
        let mut rng = Rng::new(21);
        let set = clustered_set(&mut rng, 50);
        let mut t = Trainer::new(&Architecture::symmetric(6, &[8], 3, 2), 21).unwrap();
        let mut cfg = ObjectiveConfig {
            beta: 1.0,
            gamma: 0.0,
            batch_size: 50,
            ..Default::default()
        };
        // Unpenalized warm-up lets the latent absorb class information first.
        for _ in 0..500 {
            t.train_step(set.images(), Some(set.labels()), &cfg).unwrap();
        }
        cfg.gamma = 1e3;
        let xs: Vec<f64> = (0..500)
            .map(|_| t.train_step(set.images(), Some(set.labels()), &cfg).unwrap().xcov)
            .collect();
        let means: Vec<f64> = xs.chunks(50).map(|c| c.iter().sum::<f64>() / 50.0).collect();
        // After the drop the series wanders at a floor about 1% of the start,
        // so the trend is judged against the initial value.
        assert!(xs[0] > 1e-2, "warm-up left xcov at {}", xs[0]);
        assert!(means.iter().all(|&m| m < 0.1 * xs[0]), "{means:?} from {}", xs[0]);
        assert!(means[9] < 0.02 * xs[0], "{means:?} from {}", xs[0]);
    }

    #[test]
    fn csv_line_round_trips() {
        let r = StepRecord {
            epoch: 2,
            step: 7,
            metrics: StepMetrics {
                recon: 0.1,
                xent: 1.0 / 3.0,
                xcov: 0.0,
                total: 3.5,
            },
        };
        let line = r.csv_line();
        assert_eq!(line.split(',').count(), METRICS_CSV_HEADER.split(',').count());
        let v: Vec<f64> = line.split(',').skip(2).map(|s| s.parse().unwrap()).collect();
        assert_eq!(v[1], 1.0 / 3.0);
    }
}
