use super::*;
use rand::Rng;

fn random_segment(seed: u64) -> FeatureSegment {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    // Smooth-ish field plus noise, like a normalized spectrogram.
    let v = (0..INPUT_SIZE * INPUT_SIZE)
        .map(|i| {
            let (r, c) = ((i / INPUT_SIZE) as f64, (i % INPUT_SIZE) as f64);
            let base = 0.5 + 0.3 * (r / 20.0).sin() * (c / 31.0).cos();
            (base + 0.1 * rng.random::<f64>()).clamp(0.0, 1.0)
        })
        .collect();
    FeatureSegment::new(v, 0, 0).unwrap()
}

fn zeros_segment() -> FeatureSegment {
    FeatureSegment::new(vec![0.0; INPUT_SIZE * INPUT_SIZE], 0, 0).unwrap()
}

#[test]
fn parameter_counts_match_the_architecture() {
    let m = Autoencoder::new(1);
    assert_eq!(m.param_count(), TOTAL_PARAMS);
    let per_layer: Vec<usize> = m.layers().iter().map(LayerSpec::param_count).collect();
    assert_eq!(per_layer, vec![156, 0, 2416, 0, 870, 0, 2406, 0, 151]);
    assert_eq!(m.trainable_count(), TOTAL_PARAMS);

    let mut m = m;
    m.freeze_all_but_bottleneck();
    assert_eq!(m.trainable_count(), BOTTLENECK_PARAMS);
    let (start, _) = m.layer_range(BOTTLENECK_LAYER);
    assert_eq!(m.trainable_ranges(), vec![(start, 841)]);
}

#[test]
fn construction_is_deterministic() {
    let a = Autoencoder::new(7);
    let b = Autoencoder::new(7);
    let c = Autoencoder::new(8);
    assert!(a.params().iter().zip(b.params()).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_ne!(a.params(), c.params());
}

#[test]
fn init_respects_fan_in_bounds() {
    let m = Autoencoder::new(3);
    for (l, spec) in m.layers().iter().enumerate() {
        let (s, e) = m.layer_range(l);
        if s == e {
            continue;
        }
        let bound = 1.0 / (spec.fan_in() as f64).sqrt();
        assert!(m.params()[s..e].iter().all(|p| p.abs() <= bound));
    }
}

#[test]
fn forward_reproduces_the_shape_chain() {
    let m = Autoencoder::new(0);
    let (y, cache) = m.forward(&random_segment(1)).unwrap();
    assert_eq!(
        cache.shapes(),
        vec![
            (1, 128, 128),
            (6, 124, 124),
            (6, 62, 62),
            (16, 58, 58),
            (16, 29, 29),
            (16, 29, 29),
            (16, 58, 58),
            (6, 62, 62),
            (6, 124, 124),
            (1, 128, 128),
        ]
    );
    assert!(y.data.iter().all(|v| *v > 0.0 && *v < 1.0));
}

#[test]
fn zero_input_gives_open_unit_interval_output() {
    let m = Autoencoder::new(0);
    let (y, _) = m.forward(&zeros_segment()).unwrap();
    assert!(y.data.iter().all(|v| *v > 0.0 && *v < 1.0));
}

#[test]
fn forward_is_pure() {
    let m = Autoencoder::new(5);
    let x = random_segment(2);
    let (a, _) = m.forward(&x).unwrap();
    let (b, _) = m.forward(&x).unwrap();
    assert_eq!(a, b);
}

#[test]
fn feature_segment_validation() {
    assert!(FeatureSegment::new(vec![0.0; 10], 0, 0).is_err());
    let mut v = vec![0.5; INPUT_SIZE * INPUT_SIZE];
    v[3] = 1.5;
    assert!(FeatureSegment::new(v, 0, 0).is_err());
}

#[test]
fn mse_examples() {
    assert_eq!(mse(&[0.3, 0.4], &[0.3, 0.4]).unwrap(), 0.0);
    assert_eq!(mse(&[1.0, 1.0], &[0.0, 0.0]).unwrap(), 1.0);
    assert_eq!(mse(&[1.0, 0.0], &[0.0, 0.0]).unwrap(), 0.5);
    assert!(mse(&[1.0], &[1.0, 2.0]).is_err());
}

#[test]
fn stale_cache_is_rejected() {
    let mut m = Autoencoder::new(0);
    let x = random_segment(0);
    let (_, cache) = m.forward(&x).unwrap();
    m.set_param(0, 0.1);
    assert!(matches!(m.backward(&cache, &x), Err(Error::StaleCache { .. })));
}

/// Central finite differences of the loss for one parameter, or `None`
/// when the interval around the parameter holds a non-differentiable
/// point (ReLU hinge or a max-pool argmax switch).
fn numeric_grad(m: &Autoencoder, x: &FeatureSegment, i: usize, h: f64) -> Option<f64> {
    let mut p = m.clone();
    let orig = p.params()[i];
    let l0 = p.loss(x).unwrap();
    p.set_param(i, orig + h);
    let lp = p.loss(x).unwrap();
    p.set_param(i, orig - h);
    let lm = p.loss(x).unwrap();
    let (fwd, bwd) = ((lp - l0) / h, (l0 - lm) / h);
    if (fwd - bwd).abs() > 1e-2 * fwd.abs().max(bwd.abs()) + 1e-8 {
        return None;
    }
    // A smooth loss gives the same central difference at h and h/2 up to
    // O(h^2); a kink inside the interval does not.
    let central = (lp - lm) / (2.0 * h);
    p.set_param(i, orig + h / 2.0);
    let lp2 = p.loss(x).unwrap();
    p.set_param(i, orig - h / 2.0);
    let lm2 = p.loss(x).unwrap();
    let half = (lp2 - lm2) / h;
    if (central - half).abs() > 1e-5 * central.abs().max(half.abs()) + 1e-11 {
        return None;
    }
    Some(central)
}

/// Relative error with a floor on the denominator; below the floor the
/// finite-difference estimate is dominated by rounding of the loss sum.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[test]
fn gradient_matches_finite_differences() {
    let m = Autoencoder::new(11);
    let x = random_segment(4);
    let (_, cache) = m.forward(&x).unwrap();
    let g = m.backward(&cache, &x).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut checked = 0;
    let mut worst: f64 = 0.0;
    for l in 0..m.layers().len() {
        let (s, e) = m.layer_range(l);
        if s == e {
            continue;
        }
        let nw = m.layers()[l].weight_count();
        // Every bias (up to ten) plus a random sample of weights.
        let mut idx: Vec<usize> = (s + nw..e).take(10).collect();
        idx.extend((0..36).map(|_| rng.random_range(s..s + nw)));
        for i in idx {
            let Some(num) = numeric_grad(&m, &x, i, 1e-5) else {
                continue;
            };
            worst = worst.max(rel_err(g[i], num));
            checked += 1;
        }
    }
    assert!(checked >= 200, "only {checked} smooth parameters");
    assert!(worst < 1e-4, "worst relative error {worst}");
}

#[test]
fn perfect_reconstruction_has_zero_gradient() {
    let m = Autoencoder::new(2);
    let x = random_segment(3);
    let (y, _) = m.forward(&x).unwrap();
    let target = FeatureSegment::new(y.data.clone(), 0, 0).unwrap();
    let (_, cache) = m.forward(&x).unwrap();
    let g = m.backward(&cache, &target).unwrap();
    let (s, e) = m.layer_range(8);
    assert_eq!(g[e - 1], 0.0, "output bias");
    assert!(g.as_slice()[s..e].iter().all(|v| *v == 0.0));
}

#[test]
fn dead_bottleneck_has_zero_weight_gradient() {
    // Zero dense weights with non-positive bias keep every bottleneck unit
    // in the flat part of the ReLU.
    let mut m = Autoencoder::new(2);
    let (s, e) = m.layer_range(BOTTLENECK_LAYER);
    for i in s..e {
        let v = if i < s + 841 { 0.0 } else { -m.params()[i].abs() };
        m.set_param(i, v);
    }
    let x = zeros_segment();
    let (_, cache) = m.forward(&x).unwrap();
    let g = m.backward(&cache, &x).unwrap();
    assert!(g.as_slice()[s..s + 841].iter().all(|v| *v == 0.0));
}

#[test]
fn sgd_with_zero_lr_is_a_no_op() {
    let mut m = Autoencoder::new(4);
    m.freeze_all_but_bottleneck();
    let before = m.params().to_vec();
    let d = m.sgd_epoch(&[random_segment(1)], 0.0, true).unwrap();
    assert_eq!(d.len(), 841);
    assert!(d.as_slice().iter().all(|v| *v == 0.0));
    assert_eq!(before, m.params());
}

#[test]
fn masked_sgd_leaves_frozen_parameters_untouched() {
    let mut m = Autoencoder::new(4);
    m.freeze_all_but_bottleneck();
    let before = m.params().to_vec();
    let data = [random_segment(1), random_segment(2)];
    for _ in 0..3 {
        let d = m.sgd_epoch(&data, 0.1, true).unwrap();
        assert_eq!(d.len(), 841);
    }
    for (i, (a, b)) in before.iter().zip(m.params()).enumerate() {
        if !m.trainable_mask()[i] {
            assert_eq!(a.to_bits(), b.to_bits(), "frozen parameter {i} moved");
        }
    }
}

#[test]
fn single_step_equals_negative_scaled_gradient() {
    let mut m = Autoencoder::new(6);
    m.freeze_all_but_bottleneck();
    let x = random_segment(8);
    let (_, cache) = m.forward(&x).unwrap();
    let g = m.backward(&cache, &x).unwrap();
    let lr = 0.1;
    let d = m.clone().sgd_epoch(std::slice::from_ref(&x), lr, true).unwrap();
    let masked: Vec<f64> = g
        .as_slice()
        .iter()
        .zip(m.trainable_mask())
        .filter(|(_, t)| **t)
        .map(|(g, _)| -lr * g)
        .collect();
    for (a, b) in d.as_slice().iter().zip(&masked) {
        assert!((a - b).abs() <= 1e-15 + 1e-12 * b.abs());
    }
}

#[test]
fn sgd_is_deterministic() {
    let data = [random_segment(1), random_segment(5)];
    let run = || {
        let mut m = Autoencoder::new(9);
        m.freeze_all_but_bottleneck();
        m.sgd_epoch(&data, 0.1, true).unwrap()
    };
    let (a, b) = (run(), run());
    assert!(a.as_slice().iter().zip(b.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn encoded_training_matches_plain_masked_training() {
    let data = [random_segment(2), random_segment(3), random_segment(4)];
    let mut a = Autoencoder::new(11);
    a.freeze_all_but_bottleneck();
    let mut b = a.clone();
    let encoded: Vec<_> = data.iter().map(|x| b.encode(x).unwrap()).collect();
    for _ in 0..2 {
        let da = a.sgd_epoch(&data, 0.1, true).unwrap();
        let db = b.sgd_epoch_encoded(&encoded, 0.1).unwrap();
        assert!(da.as_slice().iter().zip(db.as_slice()).all(|(x, y)| x.to_bits() == y.to_bits()));
    }
    assert_eq!(a.params(), b.params());
}

#[test]
fn encoded_segments_reject_a_changed_encoder() {
    let mut m = Autoencoder::new(1);
    m.freeze_all_but_bottleneck();
    let e = m.encode(&random_segment(1)).unwrap();
    m.set_param(0, m.params()[0] + 1e-3);
    assert!(m.sgd_epoch_encoded(&[e.clone()], 0.1).is_err());
    let mut all = Autoencoder::new(1);
    all.set_trainable_ranges(&[(0, TOTAL_PARAMS)]);
    assert!(all.sgd_epoch_encoded(&[e], 0.1).is_err());
}

#[test]
fn sgd_rejects_empty_data() {
    let mut m = Autoencoder::new(0);
    assert!(matches!(m.sgd_epoch(&[], 0.1, true), Err(Error::Empty(_))));
}

#[test]
fn reinit_touches_only_the_mask() {
    let mut m = Autoencoder::new(1);
    m.freeze_all_but_bottleneck();
    let before = m.clone();
    m.reinit_trainable(42);
    let a = m.extract_masked();
    let mut other = before.clone();
    other.reinit_trainable(43);
    assert_ne!(a, other.extract_masked());
    assert_ne!(a, before.extract_masked());
    assert_eq!(m.trainable_count(), 841);
    for (i, t) in m.trainable_mask().iter().enumerate() {
        if !t {
            assert_eq!(m.params()[i].to_bits(), before.params()[i].to_bits());
        }
    }
}

#[test]
fn masked_delta_roundtrip() {
    let mut m1 = Autoencoder::new(1);
    m1.freeze_all_but_bottleneck();
    let mut m2 = m1.clone();
    m2.reinit_trainable(5);
    let delta = m2.extract_masked().sub(&m1.extract_masked()).unwrap();
    m1.apply_delta(&delta).unwrap();
    for (a, b) in m1.extract_masked().as_slice().iter().zip(m2.extract_masked().as_slice()) {
        assert!((a - b).abs() < 1e-15);
    }
    let snapshot = m1.params().to_vec();
    m1.apply_delta(&ParamVector::zeros(841)).unwrap();
    assert_eq!(snapshot, m1.params());
    assert!(m1.apply_delta(&ParamVector::zeros(840)).is_err());
}

#[test]
fn pretrain_zero_epochs_is_identity() {
    let mut m = Autoencoder::new(3);
    let before = m.params().to_vec();
    let trace = m.pretrain(&[random_segment(1)], 0, 0.1).unwrap();
    assert!(trace.is_empty());
    assert_eq!(before, m.params());
    assert!(m.pretrain(&[], 1, 0.1).is_err());
}

#[test]
fn pretrain_reports_divergence() {
    let mut m = Autoencoder::new(3);
    let err = m.pretrain(&[random_segment(1)], 2, f64::MAX).unwrap_err();
    assert!(matches!(err, Error::Diverged { .. }), "{err:?}");
}

#[test]
fn checkpoint_roundtrip_preserves_everything() {
    let mut m = Autoencoder::new(12);
    m.freeze_all_but_bottleneck();
    let mut buf = Vec::new();
    write_checkpoint(&m, &mut buf).unwrap();
    assert_eq!(&buf[..8], CHECKPOINT_MAGIC);
    let r = read_checkpoint(&buf[..]).unwrap();
    assert_eq!(r.seed(), 12);
    assert_eq!(r.trainable_count(), 841);
    assert!(r.params().iter().zip(m.params()).all(|(a, b)| a.to_bits() == b.to_bits()));

    let mut again = Vec::new();
    write_checkpoint(&r, &mut again).unwrap();
    assert_eq!(buf, again);

    assert!(read_checkpoint(&buf[..buf.len() - 1]).is_err());
    let mut corrupt = buf.clone();
    corrupt[0] = b'X';
    assert!(read_checkpoint(&corrupt[..]).is_err());
}
