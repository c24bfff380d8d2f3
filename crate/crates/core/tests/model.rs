use std::sync::Arc;

use defog_core::baselines::Baseline;
use defog_core::dataset::{default_step, generate_replays, samples_for_replays, Sample};
use defog_core::eval::{score_existence_task, score_huber, Aggregation, Task};
use defog_core::grid::{CountGrid, GridSpec, Player, TerrainMap};
use defog_core::model::{load_model, save_model, train, BlockKind, EncoderKind, Model, ModelConfig, TrainConfig};
use defog_core::rng::SplitMix64;
use defog_core::sim::SimConfig;
use defog_core::tech::default_tech;
use defog_tensor::gradcheck::{check_params, Tolerance};
use defog_tensor::{Tape, Tensor};

/// 16x16 map, 4-tile cells: a 3x3 grid.
fn tiny_config(encoder: EncoderKind, block: BlockKind) -> ModelConfig {
    ModelConfig {
        encoder,
        block,
        conv_channels: 4,
        embed_channels: 3,
        terrain_channels: 2,
        faction_channels: 2,
        zero_init_heads: false,
        r: 4,
        g: 4,
        map_height: 16,
        map_width: 16,
        num_types: 2,
        num_factions: 2,
        ..ModelConfig::desk(encoder)
    }
}

fn random_grid(rng: &mut SplitMix64, spec: &GridSpec, channels: usize) -> CountGrid {
    let data = (0..spec.cells() * channels).map(|_| rng.below(3) as f32).collect();
    CountGrid::from_data(spec.rows, spec.cols, channels, data).unwrap()
}

fn tiny_sample(cfg: &ModelConfig, steps: usize, seed: u64) -> Sample {
    let spec = cfg.spec().unwrap();
    assert_eq!((spec.rows, spec.cols), (3, 3));
    let mut rng = SplitMix64::new(seed);
    let terrain: Vec<f32> = (0..16 * 16 * 3).map(|_| rng.next_f64() as f32).collect();
    let ch = cfg.unit_channels();
    Sample {
        player: Player::Zero,
        spec,
        step: 5.0,
        horizon: 5.0,
        times: (0..steps).map(|k| 5.0 * k as f64).collect(),
        terrain: Arc::new(TerrainMap::new(16, 16, terrain).unwrap()),
        faction_me: 1,
        faction_op: 0,
        inputs: (0..steps).map(|_| random_grid(&mut rng, &spec, ch)).collect(),
        input_visible: vec![vec![true; spec.cells()]; steps],
        targets: (0..steps).map(|_| random_grid(&mut rng, &spec, ch)).collect(),
        target_obs: (0..steps).map(|_| CountGrid::zeros(3, 3, ch)).collect(),
        global_targets: (0..steps).map(|k| vec![k % 2 == 0, true]).collect(),
        enemy_start: (2, 2),
    }
}

fn grad_check(encoder: EncoderKind, block: BlockKind) {
    let cfg = tiny_config(encoder, block);
    let sample = tiny_sample(&cfg, 2, 11);
    let model = Model::<f64>::new(cfg.clone(), 5).unwrap();
    let (_, grads) = model.loss_and_grad(&sample).unwrap();
    let report = check_params(model.params(), &grads, 1, Tolerance { rtol: 1e-3, atol: 1e-6, step: 1e-5 }, |p| {
        Model::with_params(cfg.clone(), p.clone()).unwrap().loss(&sample).unwrap().total
    });
    assert!(report.checked == model.param_count());
    assert!(report.passed(), "{:?} {:?}: {:?}", encoder, block, &report.mismatches[..report.mismatches.len().min(5)]);
}

#[test]
fn full_model_gradients_conv_basic() {
    grad_check(EncoderKind::Conv, BlockKind::Basic);
}

#[test]
fn full_model_gradients_conv_gated() {
    grad_check(EncoderKind::Conv, BlockKind::Gated);
}

#[test]
fn full_model_gradients_conv_residual() {
    grad_check(EncoderKind::Conv, BlockKind::Residual);
}

#[test]
fn full_model_gradients_conv_lstm_basic() {
    grad_check(EncoderKind::ConvLstm, BlockKind::Basic);
}

#[test]
fn full_model_gradients_conv_lstm_gated() {
    grad_check(EncoderKind::ConvLstm, BlockKind::Gated);
}

#[test]
fn full_model_gradients_conv_lstm_residual() {
    grad_check(EncoderKind::ConvLstm, BlockKind::Residual);
}

#[test]
fn deep_conv_lstm_gradients() {
    let cfg = ModelConfig { depth: 9, ..tiny_config(EncoderKind::ConvLstm, BlockKind::Residual) };
    let sample = tiny_sample(&cfg, 2, 3);
    let model = Model::<f64>::new(cfg.clone(), 8).unwrap();
    let (_, grads) = model.loss_and_grad(&sample).unwrap();
    let report = check_params(model.params(), &grads, 1, Tolerance::default(), |p| {
        Model::with_params(cfg.clone(), p.clone()).unwrap().loss(&sample).unwrap().total
    });
    assert!(report.passed(), "{:?}", &report.mismatches[..report.mismatches.len().min(5)]);
}

#[test]
fn conv_encoder_reaches_one_cell() {
    for depth in [4, 9] {
        for block in [BlockKind::Basic, BlockKind::Gated, BlockKind::Residual] {
            let cfg = ModelConfig { depth, ..tiny_config(EncoderKind::Conv, block) };
            let model = Model::<f32>::new(cfg, 0).unwrap();
            for h in 1..=16 {
                for w in 1..=16 {
                    let shape = model.encoder_output_shape(h, w).unwrap();
                    assert_eq!(&shape[..2], &[1, 1], "{depth} {block:?} {h}x{w}");
                }
            }
        }
    }
}

#[test]
fn conv_lstm_blocks_halve_the_grid() {
    let cfg = ModelConfig { depth: 9, ..tiny_config(EncoderKind::ConvLstm, BlockKind::Basic) };
    let model = Model::<f32>::new(cfg, 0).unwrap();
    for n in 1..=16usize {
        let shape = model.encoder_output_shape(n, n + 1).unwrap();
        assert_eq!(shape, vec![n.div_ceil(4), (n + 1).div_ceil(4), 3]);
    }
}

fn permute_rows(t: &Tensor<f64>, perm: &[usize]) -> Tensor<f64> {
    let w = t.shape()[1];
    let mut data = vec![0.0; t.len()];
    for (dst, &src) in perm.iter().enumerate() {
        data[dst * w..(dst + 1) * w].copy_from_slice(&t.data()[src * w..(src + 1) * w]);
    }
    Tensor::new(t.shape(), data).unwrap()
}

#[test]
fn spatial_lstm_commutes_with_position_permutation() {
    let mut rng = SplitMix64::new(21);
    let (n, din, hd) = (6, 3, 4);
    let mut rand = |shape: &[usize]| {
        let len = shape.iter().product();
        Tensor::new(shape, (0..len).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap()
    };
    let (x, h, c) = (rand(&[n, din]), rand(&[n, hd]), rand(&[n, hd]));
    let (w, b) = (rand(&[din + hd, 4 * hd]), rand(&[4 * hd]));
    let run = |x: &Tensor<f64>, h: &Tensor<f64>, c: &Tensor<f64>| {
        let mut tape = Tape::new();
        let (x, h, c) = (tape.constant(x.clone()), tape.constant(h.clone()), tape.constant(c.clone()));
        let (w, b) = (tape.constant(w.clone()), tape.constant(b.clone()));
        let (h2, c2) = tape.lstm_cell(x, h, c, w, b).unwrap();
        (tape.value(h2).clone(), tape.value(c2).clone())
    };
    let perm = [3, 0, 5, 1, 4, 2];
    let (h_ref, c_ref) = run(&x, &h, &c);
    let (h_p, c_p) = run(&permute_rows(&x, &perm), &permute_rows(&h, &perm), &permute_rows(&c, &perm));
    assert_eq!(h_p, permute_rows(&h_ref, &perm));
    assert_eq!(c_p, permute_rows(&c_ref, &perm));
}

fn sim_samples(games: usize, horizon: f64, seed: u64) -> Vec<Sample> {
    let tech = default_tech();
    let replays: Vec<_> = generate_replays(seed, games, &SimConfig::default()).unwrap().into_iter().map(|g| g.1).collect();
    let spec = ModelConfig::desk(EncoderKind::ConvLstm).spec().unwrap();
    samples_for_replays(&replays, &spec, horizon, default_step(horizon), &tech).unwrap()
}

#[test]
fn untrained_model_reproduces_input_baseline() {
    let tech = default_tech();
    let samples = sim_samples(2, 15.0, 4);
    for encoder in [EncoderKind::Conv, EncoderKind::ConvLstm] {
        let model = Model::<f32>::new(ModelConfig::desk(encoder), 9).unwrap();
        let preds: Vec<_> = samples.iter().map(|s| model.predict(s).unwrap()).collect();
        let input: Vec<_> = samples.iter().map(|s| Baseline::Input.predict(s, &tech)).collect();
        for (p, i) in preds.iter().zip(&input) {
            assert_eq!(p.counts, i.counts);
        }
        for task in [Task::OpponentUnits, Task::HiddenUnits] {
            for thr in [0.001, 0.5, 1.2] {
                let a = score_existence_task(&preds, &samples, task, thr, &tech, Aggregation::Pooled).unwrap();
                let b = score_existence_task(&input, &samples, task, thr, &tech, Aggregation::Pooled).unwrap();
                assert_eq!(a, b);
            }
        }
        assert_eq!(score_huber(&preds, &samples, 1.0).unwrap(), score_huber(&input, &samples, 1.0).unwrap());
    }
}

#[test]
fn predictions_are_non_negative_and_reset_per_game() {
    let samples = sim_samples(1, 15.0, 2);
    let cfg = ModelConfig { zero_init_heads: false, ..ModelConfig::desk(EncoderKind::ConvLstm) };
    let model = Model::<f32>::new(cfg, 3).unwrap();
    let a = model.predict(&samples[0]).unwrap();
    model.predict(&samples[1]).unwrap();
    let b = model.predict(&samples[0]).unwrap();
    assert_eq!(a, b);
    assert!(a.counts.iter().all(|g| g.data().iter().all(|&v| v >= 0.0)));
    assert!(a.global.iter().flatten().all(|&v| (0.0..=1.0).contains(&v)));
}

#[test]
fn loss_is_zero_for_a_perfect_prediction_without_classification() {
    let mut samples = sim_samples(1, 0.0, 5);
    let mut s = samples.swap_remove(0);
    s.targets = s.inputs.clone();
    let model =
        Model::<f32>::new(ModelConfig { horizon: 0.0, class_weight: 0.0, ..ModelConfig::desk(EncoderKind::Conv) }, 1).unwrap();
    let loss = model.loss(&s).unwrap();
    assert_eq!(loss.huber, 0.0);
    assert_eq!(loss.total, 0.0);
}

#[test]
fn mismatched_sample_is_rejected() {
    let cfg = tiny_config(EncoderKind::Conv, BlockKind::Basic);
    let sample = tiny_sample(&cfg, 2, 1);
    let other = ModelConfig { num_types: 3, ..cfg };
    assert!(Model::<f64>::new(other, 0).unwrap().predict(&sample).is_err());
}

#[test]
fn checkpoint_round_trip_preserves_predictions() {
    let samples = sim_samples(1, 15.0, 6);
    let cfg = ModelConfig { zero_init_heads: false, block: BlockKind::Gated, ..ModelConfig::desk(EncoderKind::ConvLstm) };
    let model = Model::<f32>::new(cfg, 4).unwrap();
    let dir = std::env::temp_dir().join(format!("defog-ckpt-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("m.ckpt");
    save_model(&path, &model).unwrap();
    let loaded = load_model(&path).unwrap();
    assert_eq!(loaded.config(), model.config());
    assert_eq!(loaded.predict(&samples[0]).unwrap(), model.predict(&samples[0]).unwrap());
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn training_is_deterministic_and_reduces_loss() {
    let tech = default_tech();
    let cfg = tiny_config(EncoderKind::ConvLstm, BlockKind::Basic);
    let samples: Vec<_> = (0..3).map(|i| tiny_sample(&cfg, 3, i)).collect();
    let tc = TrainConfig { steps: 60, lr: 1e-2, seed: 7, valid_every: 30, log_every: 10 };
    let run = || {
        let mut model = Model::<f32>::new(cfg.clone(), 2).unwrap();
        let mut log = Vec::new();
        let out = train(&mut model, &samples, &samples[..1], &tech, &tc, &mut log).unwrap();
        (out, String::from_utf8(log).unwrap())
    };
    let (a, log_a) = run();
    let (b, log_b) = run();
    assert_eq!(a.losses, b.losses);
    assert_eq!(log_a, log_b);
    assert_eq!(a.validations.len(), 2);
    let head: f64 = a.losses[..6].iter().sum();
    let tail: f64 = a.losses[54..].iter().sum();
    assert!(tail < head, "{head} -> {tail}");
    assert!(log_a.lines().any(|l| l.starts_with("step=60 epoch=20 train_loss=")));
}
