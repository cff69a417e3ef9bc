//! Whole-model properties: gradients of the joint objective, masking,
//! reproducibility and basic optimization behavior.

use ecpe::autodiff::{grad_check, Tape, Tensor};
use ecpe::corpus::{build_vocab, gen_synthetic, Batch, EncodedDocument, SyntheticProfile};
use ecpe::network::{Mode, ModelConfig, ParameterSet};
use ecpe::training::{batch_loss, init_params, pair_loss, train, TrainConfig, Trainer};

fn shrunken() -> ModelConfig {
    ModelConfig {
        d_e: 4,
        kernel_sizes: vec![2, 3],
        d_c: 2,
        d_h: 5,
        d_z: 3,
        epsilon: 1.0,
    }
}

fn setup(model: &ModelConfig, n: usize, seed: u64) -> (ParameterSet, Vec<EncodedDocument>) {
    let profile = SyntheticProfile {
        mean_clauses: 4.0,
        min_clauses: 2,
        max_clauses: 6,
        ..SyntheticProfile::default()
    };
    let docs = gen_synthetic(n, seed, &profile);
    let vocab = build_vocab(&docs, 1);
    let params = init_params(model, &vocab, None, seed).unwrap();
    (params, docs.iter().map(|d| vocab.encode(d)).collect())
}

fn loss_value(params: &ParameterSet, docs: &[EncodedDocument], cfg: &TrainConfig) -> (f64, f64, f64) {
    let batch = Batch::from_encoded(docs).unwrap();
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, false);
    let l = batch_loss(&mut tape, &bound, params, &batch, cfg, &mut Mode::Eval).unwrap();
    let v = |x| tape.value(x).data()[0];
    (v(l.total), v(l.pair), v(l.aux))
}

#[test]
fn joint_objective_gradient_matches_finite_differences() {
    let (params, docs) = setup(&shrunken(), 2, 3);
    let batch = Batch::from_encoded(&docs).unwrap();
    let cfg = TrainConfig {
        lambda_l2: 1e-3,
        dropout_p: 0.0,
        ..TrainConfig::default()
    };
    let tensors: Vec<Tensor> = (0..params.len()).map(|i| params.tensor(i).clone()).collect();
    let err = grad_check(&tensors, 1e-5, |t, vars| {
        let bound = params.bind_vars(vars.to_vec());
        Ok(batch_loss(t, &bound, &params, &batch, &cfg, &mut Mode::Eval)?.total)
    })
    .unwrap();
    assert!(err < 1e-4, "max relative error {err}");
}

#[test]
fn batch_loss_equals_sum_of_unbatched_losses() {
    let (params, docs) = setup(&shrunken(), 5, 8);
    let cfg = TrainConfig::default();
    let (total, pair, aux) = loss_value(&params, &docs, &cfg);
    let (mut p_sum, mut a_sum) = (0.0, 0.0);
    for d in &docs {
        let (_, p, a) = loss_value(&params, std::slice::from_ref(d), &cfg);
        p_sum += p;
        a_sum += a;
    }
    assert!((pair - p_sum).abs() < 1e-9);
    assert!((aux - a_sum).abs() < 1e-9);
    let reg = cfg.lambda_l2 * params.squared_norm();
    assert!((total - (pair + aux + reg)).abs() < 1e-9);
}

#[test]
fn padded_pair_matrix_leaves_loss_unchanged() {
    let mut tape = Tape::new();
    let small = Tensor::new(vec![2, 2], vec![0.2, 0.7, 0.9, 0.1]).unwrap();
    let s = tape.leaf(small, true);
    let base = pair_loss(&mut tape, s, &[0.0, 0.0, 1.0, 0.0], &[1.0, 1.0]).unwrap();
    let padded = Tensor::new(vec![3, 3], vec![0.2, 0.7, 0.99, 0.9, 0.1, 0.5, 0.01, 0.3, 0.6]).unwrap();
    let p = tape.leaf(padded, true);
    let y = [0.0, 0.0, 1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 1.0];
    let masked = pair_loss(&mut tape, p, &y, &[1.0, 1.0, 0.0]).unwrap();
    let (a, b) = (tape.value(base).data()[0], tape.value(masked).data()[0]);
    assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    let g = tape.backward(masked).unwrap();
    let grad = g.get(p).unwrap();
    for i in [2, 5, 6, 7, 8] {
        assert_eq!(grad[i], 0.0);
    }
}

#[test]
fn dropout_free_step_is_bit_reproducible() {
    let (params, docs) = setup(&shrunken(), 4, 2);
    let cfg = TrainConfig {
        dropout_p: 0.0,
        ..TrainConfig::default()
    };
    let run = || {
        let mut t = Trainer::new(params.clone(), docs.clone(), cfg.clone()).unwrap();
        let loss = t.step(&[0, 1, 2, 3]).unwrap();
        (loss.total.to_bits(), t.into_params())
    };
    assert_eq!(run(), run());
}

#[test]
fn regularizer_shrinks_weights_without_data_gradient() {
    // with β=0 the auxiliary heads get no data gradient, so only the
    // regularizer can move them
    let (params, docs) = setup(&shrunken(), 3, 4);
    let step = |lambda: f64| {
        let cfg = TrainConfig {
            lambda_l2: lambda,
            beta_aux: 0.0,
            dropout_p: 0.0,
            ..TrainConfig::default()
        };
        let mut t = Trainer::new(params.clone(), docs.clone(), cfg).unwrap();
        t.step(&[0, 1, 2]).unwrap();
        t.into_params()
    };
    let (plain, decayed) = (step(0.0), step(1e-2));
    for name in ["aux_emotion_out.weight", "aux_cause_proj.weight"] {
        let norm = |p: &ParameterSet| p.get(name).unwrap().sum_squares();
        assert_eq!(norm(&plain), norm(&params), "{name} moved without gradient");
        assert!(norm(&decayed) < norm(&plain), "{name}");
    }
}

#[test]
fn initialization_is_centered() {
    let model = ModelConfig {
        d_e: 8,
        kernel_sizes: vec![2, 3, 4, 5],
        d_c: 50,
        d_h: 150,
        d_z: 2,
        epsilon: 1.0,
    };
    let (params, _) = setup(&model, 2, 1);
    // lstm_fwd.w_ih is 4·d_h × |t|·d_c = 600 × 200, bound √(6/200)
    let w = params.get("lstm_fwd.w_ih").unwrap();
    assert_eq!(w.shape(), &[600, 200]);
    let bound = (6.0f64 / 200.0).sqrt();
    let n = w.len() as f64;
    let mean = w.data().iter().sum::<f64>() / n;
    let sigma = bound / 3f64.sqrt() / n.sqrt();
    assert!(mean.abs() < 3.0 * sigma, "mean {mean}, 3σ {}", 3.0 * sigma);
    assert!(w.data().iter().all(|v| v.abs() <= bound));
}

#[test]
fn early_epochs_reduce_loss_for_most_seeds() {
    let model = ModelConfig {
        d_e: 16,
        kernel_sizes: vec![2, 3],
        d_c: 8,
        d_h: 16,
        d_z: 16,
        epsilon: 1.0,
    };
    let mut decreasing = 0;
    for seed in 0..10 {
        let (params, docs) = setup(&model, 32, 100 + seed);
        let cfg = TrainConfig {
            epochs: 5,
            batch_size: 8,
            seed,
            ..TrainConfig::default()
        };
        let (_, log) = train(params, &docs, None, &cfg).unwrap();
        let losses: Vec<f64> = log.epochs.iter().map(|e| e.loss).collect();
        assert!(losses.iter().all(|l| l.is_finite() && *l >= 0.0));
        if losses.windows(2).all(|w| w[1] < w[0]) {
            decreasing += 1;
        }
    }
    assert!(decreasing >= 8, "{decreasing}/10 seeds decreased monotonically");
}
