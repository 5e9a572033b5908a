use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;

fn tiny(f: usize, h: usize, layers: usize, seed: u64) -> LstmClassifier {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = LstmClassifier::new(
        ModelDims {
            n_features: f,
            hidden: h,
            layers,
            n_classes: N_CLASSES,
        },
        0.0,
        false,
        &mut rng,
    );
    // non-trivial biases so every gradient path is exercised
    for t in m.params.tensors_mut() {
        if t.nrows() == 1 {
            t.mapv_inplace(|v| v + rng.random_range(-0.5..0.5));
        }
    }
    m
}

fn random_batch(b: usize, t: usize, f: usize, seed: u64) -> Array3<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array3::from_shape_simple_fn((b, t, f), || rng.random_range(-1.5..1.5))
}

fn sig(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Step-by-step scalar recomputation of the forward pass, one window at a time.
fn scalar_logits(m: &LstmClassifier, x: &Array3<f64>) -> Vec<Vec<f64>> {
    let p = &m.params;
    let (b, t_len, f) = x.dim();
    let h = p.proj_w.ncols();
    let c_out = p.out_w.ncols();
    (0..b)
        .map(|bi| {
            // projection + ReLU for every time step
            let mut seq: Vec<Vec<f64>> = (0..t_len)
                .map(|t| {
                    (0..h)
                        .map(|k| {
                            let mut s = p.proj_b[[0, k]];
                            for i in 0..f {
                                s += x[[bi, t, i]] * p.proj_w[[i, k]];
                            }
                            s.max(0.0)
                        })
                        .collect()
                })
                .collect();
            for lp in &p.layers {
                let mut hp = vec![0.0; h];
                let mut cp = vec![0.0; h];
                let mut out = Vec::with_capacity(t_len);
                for input in &seq {
                    let mut hn = vec![0.0; h];
                    let mut cn = vec![0.0; h];
                    for k in 0..h {
                        let pre = |gate: usize| {
                            let col = gate * h + k;
                            let mut s = lp.bias[[0, col]];
                            for (i, v) in input.iter().enumerate() {
                                s += v * lp.w_in[[i, col]];
                            }
                            for (i, v) in hp.iter().enumerate() {
                                s += v * lp.w_rec[[i, col]];
                            }
                            s
                        };
                        let (ig, fg, gg, og) = (sig(pre(0)), sig(pre(1)), pre(2).tanh(), sig(pre(3)));
                        cn[k] = fg * cp[k] + ig * gg;
                        hn[k] = og * cn[k].tanh();
                    }
                    out.push(hn.clone());
                    hp = hn;
                    cp = cn;
                }
                seq = out;
            }
            let last = &seq[t_len - 1];
            (0..c_out)
                .map(|c| p.out_b[[0, c]] + (0..h).map(|k| last[k] * p.out_w[[k, c]]).sum::<f64>())
                .collect()
        })
        .collect()
}

#[test]
fn forward_matches_scalar_oracle() {
    let m = tiny(5, 4, 2, 3);
    let x = random_batch(3, 3, 5, 4);
    let logits = m.forward(&x.view(), false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let oracle = scalar_logits(&m, &x);
    for (b, row) in oracle.iter().enumerate() {
        for (c, v) in row.iter().enumerate() {
            assert!((logits[[b, c]] - v).abs() < 1e-12, "b{b} c{c}: {} vs {v}", logits[[b, c]]);
        }
    }
    let preds = predict(&m, &windows_of(&x, &[0, 1, 2])).unwrap();
    for (p, row) in preds.iter().zip(&oracle) {
        assert_eq!(p.class, argmax(row));
    }
}

fn windows_of(x: &Array3<f64>, labels: &[usize]) -> WindowSet {
    let (b, t, f) = x.dim();
    let mats = (0..b)
        .map(|i| (Array2::from_shape_fn((t, f), |(r, c)| x[[i, r, c]]), labels[i]))
        .collect();
    WindowSet::from_matrices(mats, t, t).unwrap()
}

#[test]
fn zero_parameters_give_uniform_output() {
    let m = LstmClassifier {
        params: Params::zeros(ModelDims {
            n_features: 3,
            hidden: 4,
            layers: 2,
            n_classes: N_CLASSES,
        }),
        dropout: 0.0,
        dropout_after_last: false,
    };
    let x = random_batch(2, 4, 3, 1);
    let logits = m.forward(&x.view(), false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!(logits.iter().all(|&v| v == 0.0));
    let (loss, _) = m.loss_and_grad(&x.view(), &[0, 7], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!((loss - 13f64.ln()).abs() < 1e-12);
    assert!((loss - 2.5649).abs() < 1e-4);
}

#[test]
fn shape_mismatch_is_an_error() {
    let m = tiny(3, 4, 1, 0);
    let x = random_batch(2, 4, 5, 1);
    assert!(m.forward(&x.view(), false, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    assert!(m.loss_and_grad(&random_batch(2, 4, 3, 1).view(), &[0], &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    assert!(m.loss_and_grad(&random_batch(1, 4, 3, 1).view(), &[13], &mut ChaCha8Rng::seed_from_u64(0)).is_err());
}

#[test]
fn inference_is_deterministic() {
    let mut m = tiny(3, 6, 2, 5);
    m.dropout = 0.5;
    let x = random_batch(4, 6, 3, 6);
    let a = m.forward(&x.view(), false, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let b = m.forward(&x.view(), false, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    assert_eq!(a, b);
}

fn loss_of(m: &LstmClassifier, x: &Array3<f64>, labels: &[usize]) -> f64 {
    let logits = m.forward(&x.view(), false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let lp = log_softmax(&logits.view());
    -labels.iter().enumerate().map(|(i, &l)| lp[[i, l]]).sum::<f64>() / labels.len() as f64
}

#[test]
fn gradients_match_central_differences() {
    let (f, h, t, b) = (3, 4, 5, 2);
    let model = tiny(f, h, 4, 11);
    let x = random_batch(b, t, f, 12);
    let labels = [3, 9];
    let (loss, grads) = model.loss_and_grad(&x.view(), &labels, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert!((loss - loss_of(&model, &x, &labels)).abs() < 1e-12);

    // 1e-4 balances truncation (O(eps^2)) against roundoff in the loss difference
    let eps = 1e-4;
    let names = model.params.tensor_names();
    let n_tensors = names.len();
    let mut worst = 0.0f64;
    for ti in 0..n_tensors {
        let analytic = grads.tensors()[ti].clone();
        for idx in 0..analytic.len() {
            let (r, c) = (idx / analytic.ncols(), idx % analytic.ncols());
            let mut plus = model.clone();
            plus.params.tensors_mut()[ti][[r, c]] += eps;
            let mut minus = model.clone();
            minus.params.tensors_mut()[ti][[r, c]] -= eps;
            let numeric = (loss_of(&plus, &x, &labels) - loss_of(&minus, &x, &labels)) / (2.0 * eps);
            let a = analytic[[r, c]];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-7);
            worst = worst.max(rel);
            assert!(rel < 1e-4, "{}[{r},{c}]: analytic {a:e} numeric {numeric:e} rel {rel:e}", names[ti]);
        }
    }
    assert!(worst < 1e-4, "worst {worst:e}");
}

#[test]
fn gradients_match_with_dropout_after_last_masks() {
    // fixed masks: a seeded rng replays the same draws for the perturbed runs
    let mut model = tiny(2, 3, 2, 21);
    model.dropout = 0.3;
    model.dropout_after_last = true;
    let x = random_batch(2, 3, 2, 22);
    let labels = [1, 4];
    let packed = pack_time_major(&x.view());
    let (_, grads) = model.loss_and_grad_packed(&packed, &labels, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    let train_loss = |m: &LstmClassifier| m.loss_and_grad_packed(&packed, &labels, &mut ChaCha8Rng::seed_from_u64(5)).unwrap().0;
    let eps = 1e-4;
    for ti in 0..model.params.tensors().len() {
        let a_t = grads.tensors()[ti].clone();
        for idx in 0..a_t.len() {
            let (r, c) = (idx / a_t.ncols(), idx % a_t.ncols());
            let mut plus = model.clone();
            plus.params.tensors_mut()[ti][[r, c]] += eps;
            let mut minus = model.clone();
            minus.params.tensors_mut()[ti][[r, c]] -= eps;
            let numeric = (train_loss(&plus) - train_loss(&minus)) / (2.0 * eps);
            let a = a_t[[r, c]];
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-7);
            assert!(rel < 1e-4, "tensor {ti} [{r},{c}]: {a:e} vs {numeric:e}");
        }
    }
}

#[test]
fn training_loss_uses_same_masks_as_forward() {
    let mut model = tiny(3, 5, 2, 31);
    model.dropout = 0.5;
    let x = random_batch(3, 4, 3, 32);
    let labels = [0, 5, 12];
    let logits = model.forward(&x.view(), true, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
    let lp = log_softmax(&logits.view());
    let expect = -labels.iter().enumerate().map(|(i, &l)| lp[[i, l]]).sum::<f64>() / 3.0;
    let (loss, _) = model.loss_and_grad(&x.view(), &labels, &mut ChaCha8Rng::seed_from_u64(77)).unwrap();
    assert_eq!(loss, expect);
}

#[test]
fn duplicated_batch_keeps_loss() {
    let m = tiny(3, 4, 2, 41);
    let x = random_batch(2, 4, 3, 42);
    let doubled = ndarray::concatenate(ndarray::Axis(0), &[x.view(), x.view()]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let (a, _) = m.loss_and_grad(&x.view(), &[1, 2], &mut rng).unwrap();
    let (b, _) = m.loss_and_grad(&doubled.view(), &[1, 2, 1, 2], &mut rng).unwrap();
    assert!((a - b).abs() < 1e-14);
}

#[test]
fn dropout_mask_statistics() {
    let m = dropout_mask(200, 100, 0.5, &mut ChaCha8Rng::seed_from_u64(3));
    let zeros = m.iter().filter(|&&v| v == 0.0).count() as f64 / m.len() as f64;
    // binomial sd at n = 20000 is 0.0035
    assert!((zeros - 0.5).abs() < 0.02, "{zeros}");
    assert!(m.iter().all(|&v| v == 0.0 || v == 2.0));
    let mean = m.mean().unwrap();
    assert!((mean - 1.0).abs() < 0.04);
}

#[test]
fn softmax_properties() {
    let logits = ndarray::array![[1.0, 2.0, 3.0], [1000.0, 1000.0, -1000.0]];
    let p = softmax(&logits.view());
    for row in p.rows() {
        assert!((row.sum() - 1.0).abs() < 1e-9);
    }
    let shifted = logits.mapv(|v| v + 17.5);
    let q = softmax(&shifted.view());
    for (a, b) in p.rows().into_iter().zip(q.rows()) {
        assert_eq!(argmax(&a.to_vec()), argmax(&b.to_vec()));
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-12);
        }
    }
}

#[test]
fn predictions_are_distributions() {
    let m = tiny(3, 4, 2, 51);
    let x = random_batch(5, 4, 3, 52);
    for p in predict(&m, &windows_of(&x, &[0; 5])).unwrap() {
        assert_eq!(p.probabilities.len(), N_CLASSES);
        assert!((p.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        assert_eq!(p.class, argmax(&p.probabilities));
    }
}

#[test]
fn learning_rate_schedule() {
    let cfg = TrainConfig::default();
    assert_eq!(lr_schedule(0, &cfg), 0.0002);
    assert_eq!(lr_schedule(199, &cfg), 0.0002);
    assert!((lr_schedule(200, &cfg) - 0.00001).abs() < 1e-18);
    assert!((lr_schedule(249, &cfg) - 0.00001).abs() < 1e-18);
    let two = TrainConfig {
        milestones: vec![2, 4],
        epochs: 6,
        lr0: 1.0,
        decay: 0.5,
        ..cfg
    };
    assert_eq!(lr_schedule(5, &two), 0.25);
}

#[test]
fn config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    let bad = TrainConfig {
        epochs: 100,
        ..TrainConfig::default()
    };
    assert!(bad.validate().is_err());
    let bad = TrainConfig {
        batch_size: 0,
        ..TrainConfig::default()
    };
    assert!(bad.validate().is_err());
    let partial: TrainConfig = serde_json::from_str(r#"{"epochs": 10, "milestones": []}"#).unwrap();
    assert_eq!(partial.batch_size, 256);
    assert!(partial.validate().is_ok());
}

/// Two classes separated by the sign of the mean of feature 0.
fn separable(n: usize, seed: u64) -> WindowSet {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mats = (0..n)
        .map(|i| {
            let label = i % 2;
            let shift = if label == 0 { -1.0 } else { 1.0 };
            let m = Array2::from_shape_fn((8, 3), |(_, j)| rng.random_range(-0.5..0.5) + if j == 0 { shift } else { 0.0 });
            (m, label)
        })
        .collect();
    WindowSet::from_matrices(mats, 8, 8).unwrap()
}

fn small_config(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 32,
        lr0: 1e-2,
        milestones: vec![],
        decay: 0.1,
        seed: 7,
        window_len: 8,
        window_stride: 8,
        hidden: 8,
        layers: 1,
        dropout: 0.0,
        dropout_after_last: false,
    }
}

#[test]
fn separable_windows_are_learned_quickly() {
    let out = train(&separable(200, 1), &separable(100, 2), &small_config(30)).unwrap();
    let best = out.history.val_accuracy.iter().cloned().fold(0.0, f64::max);
    assert!(best >= 0.99, "best val acc {best}");
    assert_eq!(out.history.val_accuracy[out.best_epoch], best);
    assert!(out.history.train_loss.last().unwrap() < &out.history.train_loss[0]);
}

#[test]
fn training_is_deterministic() {
    let mut cfg = small_config(4);
    cfg.dropout = 0.5;
    cfg.layers = 2;
    let a = train(&separable(64, 1), &separable(32, 2), &cfg).unwrap();
    let b = train(&separable(64, 1), &separable(32, 2), &cfg).unwrap();
    assert_eq!(a.history, b.history);
    assert_eq!(a.final_model, b.final_model);
    cfg.seed += 1;
    let c = train(&separable(64, 1), &separable(32, 2), &cfg).unwrap();
    assert_ne!(a.final_model, c.final_model);
}

#[test]
fn shuffled_labels_stay_at_chance() {
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let make = |n: usize, rng: &mut ChaCha8Rng| {
        let mats = (0..n)
            .map(|i| (Array2::from_shape_simple_fn((4, 3), || rng.random_range(-1.0..1.0)), i % N_CLASSES))
            .collect();
        WindowSet::from_matrices(mats, 4, 4).unwrap()
    };
    let train_set = make(N_CLASSES * 60, &mut rng);
    let val = make(N_CLASSES * 100, &mut rng);
    let mut cfg = small_config(5);
    cfg.window_len = 4;
    cfg.window_stride = 4;
    let out = train(&train_set, &val, &cfg).unwrap();
    let chance = 1.0 / N_CLASSES as f64;
    for acc in &out.history.val_accuracy {
        assert!((acc - chance).abs() <= 0.03, "val acc {acc}");
    }
}

#[test]
fn divergence_reports_history() {
    let cfg = small_config(3);
    let mut mats: Vec<(Array2<f64>, usize)> = (0..40).map(|i| (Array2::from_elem((8, 3), 0.1), i % 2)).collect();
    mats[17].0[[3, 0]] = f64::INFINITY;
    let ws = WindowSet::from_matrices(mats, 8, 8).unwrap();
    match train(&ws, &separable(8, 4), &cfg) {
        Err(crate::Error::Diverged { source, history }) => {
            assert!(matches!(*source, crate::Error::NonFiniteLoss { epoch: 0, .. }));
            assert!(history.train_loss.is_empty());
        }
        other => panic!("expected divergence, got {:?}", other.map(|o| o.history)),
    }
}
