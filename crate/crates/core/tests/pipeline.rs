//! Train, checkpoint, analyse and score a small model on synthetic data
//! through the public API only.

use xcov::analysis::{decoder_jacobian, jacobian_spectrum, latent_stats, DecoderPoint, JacobianLayer};
use xcov::dataset::{one_hot, LabeledSet};
use xcov::generative::{fit_latent_model, parzen_evaluate, sample_and_decode};
use xcov::model::{evaluate, load_checkpoint, save_checkpoint, Architecture, ObjectiveConfig, StepRecord, Trainer};
use xcov::{Rng, Tensor};

/// Three noisy prototypes in `[0, 1]^12`.
fn prototypes(n: usize, rng: &mut Rng) -> LabeledSet {
    let centres = [[0.9, 0.1, 0.1], [0.1, 0.9, 0.1], [0.1, 0.1, 0.9]];
    let mut x = Vec::with_capacity(n * 12);
    let mut classes = Vec::with_capacity(n);
    for _ in 0..n {
        let c = rng.below(3);
        classes.push(c);
        for j in 0..12 {
            x.push((centres[c][j % 3] + 0.05 * rng.normal()).clamp(0.0, 1.0));
        }
    }
    LabeledSet::new(Tensor::from_vec(n, 12, x).unwrap(), one_hot(&classes, 3).unwrap()).unwrap()
}

#[test]
fn small_model_end_to_end() {
    let mut rng = Rng::new(3);
    let train = prototypes(600, &mut rng);
    let test = prototypes(200, &mut rng);
    let cfg = ObjectiveConfig {
        batch_size: 20,
        epochs: 4,
        ..ObjectiveConfig::default()
    };
    let mut t = Trainer::new(&Architecture::symmetric(12, &[16], 3, 2), 11).unwrap();
    let mut steps = 0;
    for _ in 0..cfg.epochs {
        t.train_epoch(&train, &cfg, true, |_: &StepRecord| steps += 1).unwrap();
    }
    assert_eq!(steps, 4 * 30);
    let m = evaluate(&t.model, &test, 20).unwrap();
    assert!(m.accuracy > 0.95, "accuracy {}", m.accuracy);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    save_checkpoint(&t, &path).unwrap();
    let back = load_checkpoint(&path).unwrap();
    assert_eq!(back.model.params(), t.model.params());
    assert_eq!(evaluate(&back.model, &test, 20).unwrap(), m);

    let stats = latent_stats(&back.model, test.images()).unwrap();
    assert_eq!(stats.mean.len(), 2);
    assert!(stats.std.iter().all(|s| s.is_finite() && *s >= 0.0));

    for layer in [JacobianLayer::Latent, JacobianLayer::FromOutput(2)] {
        let r = decoder_jacobian(&back.model, &DecoderPoint::class(&back.model, 0).unwrap(), layer).unwrap();
        if r.retained.is_empty() {
            continue;
        }
        let s = jacobian_spectrum(&r, 2).unwrap();
        assert!((s.normalized[0] - 1.0).abs() < 1e-12);
        assert!(s.normalized.windows(2).all(|w| w[0] >= w[1]));
    }

    let latent = fit_latent_model(&back.model, train.images()).unwrap();
    let samples = sample_and_decode(&back.model, &latent, 300, &mut Rng::new(5)).unwrap();
    assert_eq!(samples.shape(), (300, 12));
    let report = parzen_evaluate(&samples, &train.images().clone(), test.images(), &[0.05, 0.1, 0.2, 0.5]).unwrap();
    assert!(report.test.mean.is_finite());
    assert_eq!(report.test.per_example.len(), 200);
}
