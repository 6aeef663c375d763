mod common;

use autograd::Tensor;
use common::*;
use kfseg::baselines::BlockKind;
use kfseg::encoder::EncoderVariant;
use kfseg::harness::*;
use kfseg::model::{ModelConfig, SegModel};
use kfseg::synthgen::{generate_video, video_id, SynthConfig};

fn data(n: usize) -> (Dataset, FoldSpec) {
    let sc = SynthConfig {
        image_size: 32,
        n_frames: 12,
        ..SynthConfig::default()
    };
    let ids: Vec<String> = (0..n).map(video_id).collect();
    let d = Dataset::from_videos((0..n).map(|i| generate_video(&sc, i, None).unwrap()));
    let fold = FoldSpec {
        fold_id: 0,
        train: ids[1..].to_vec(),
        test: ids[..1].to_vec(),
        train_frames: 12 * (n - 1),
        test_frames: 12,
    };
    (d, fold)
}

fn tiny(kind: BlockKind, seed: u64) -> ModelConfig {
    let mut c = ModelConfig::new(EncoderVariant::Vanilla, kind, 2, 32, seed);
    c.block.lstm_hidden = 8;
    c
}

fn quick(seed: u64) -> TrainConfig {
    TrainConfig {
        epochs: 2,
        steps_per_epoch: Some(3),
        seq_len: [2, 3],
        seed,
        ..TrainConfig::default()
    }
}

#[test]
fn zero_logits_give_ln2_loss() {
    for kind in [BlockKind::None, BlockKind::Kf] {
        let model = SegModel::<f64>::new(&tiny(kind, 1)).unwrap();
        model.decoder.head.weight.update(|w| w.fill(0.0));
        model.decoder.head.bias.as_ref().unwrap().update(|b| b.fill(0.0));
        let mut r = rng(2);
        let xs: Vec<Tensor<f64>> = (0..3).map(|_| random_tensor(&mut r, &[2, 1, 32, 32], 1.0)).collect();
        use rand::Rng;
        let ys: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..2 * 32 * 32).map(|_| f64::from(r.random_bool(0.3))).collect())
            .collect();
        let l = sequence_loss(&model, model.reset_sequence(None).unwrap(), &xs, &ys).unwrap();
        assert!((l.item() - std::f64::consts::LN_2).abs() <= 1e-9, "{kind:?}: {}", l.item());
    }
}

#[test]
fn training_is_deterministic() {
    let (d, fold) = data(3);
    for kind in [BlockKind::None, BlockKind::Kf, BlockKind::Stack] {
        let a = train_fold::<f32>(&quick(5), &fold, &tiny(kind, 5), &d).unwrap();
        let b = train_fold::<f32>(&quick(5), &fold, &tiny(kind, 5), &d).unwrap();
        assert_eq!(a.trace, b.trace, "{kind:?}");
        assert!(a.trace.iter().all(|r| r.loss.is_finite()));
        assert_eq!(a.trace.len(), 6);
        let (ma, mb) = (
            evaluate_fold(&a.model, &fold, &d, 0.5).unwrap(),
            evaluate_fold(&b.model, &fold, &d, 0.5).unwrap(),
        );
        assert_eq!(serde_json::to_string(&ma).unwrap(), serde_json::to_string(&mb).unwrap());
        let c = train_fold::<f32>(&quick(6), &fold, &tiny(kind, 5), &d).unwrap();
        assert_ne!(a.trace, c.trace, "{kind:?}: seed ignored");
    }
}

#[test]
fn streaming_and_per_frame_reset_differ_for_recurrent_models() {
    let (d, fold) = data(3);
    let out = train_fold::<f32>(&quick(7), &fold, &tiny(BlockKind::Kf, 7), &d).unwrap();
    let seq = d.get(&fold.test[0]).unwrap();
    let logits = |streaming: bool| {
        let mut s = out.model.reset_sequence(None).unwrap();
        let mut v = Vec::new();
        for t in 0..seq.len() {
            if !streaming {
                s = out.model.reset_sequence(None).unwrap();
            }
            let x = model_input::<f32>(out.model.config(), seq, t).unwrap();
            let (y, next) = autograd::no_grad(|| out.model.forward_frame(&s, t, &x)).unwrap();
            v.push(y.to_vec());
            s = next;
        }
        v
    };
    let (a, b) = (logits(true), logits(false));
    assert_eq!(a[0], b[0]);
    assert!(a[1..].iter().zip(&b[1..]).any(|(x, y)| x != y));

    let stateless = train_fold::<f32>(&quick(7), &fold, &tiny(BlockKind::None, 7), &d).unwrap();
    assert_eq!(
        predict_video(&stateless.model, seq, 0.5, true).unwrap(),
        predict_video(&stateless.model, seq, 0.5, false).unwrap()
    );
}

#[test]
fn experiment_writes_artifacts_and_records_failures() {
    let (d, fold) = data(3);
    let dir = tempfile::tempdir().unwrap();
    let good = tiny(BlockKind::None, 8);
    let mut bad = tiny(BlockKind::Kf, 8);
    bad.encoder.input_size = [48, 48]; // does not match the 32×32 videos
    let out = run_experiment(&[good.clone(), bad.clone()], &quick(8), &d, &[fold.clone()], dir.path()).unwrap();
    assert!(out[0].error.is_none());
    assert_eq!(out[0].reports.len(), 1);
    assert!(out[1].error.is_some());

    let fd = fold_dir(dir.path(), &good, 0);
    for f in [METRICS_FILE, LOSS_TRACE_FILE, CHECKPOINT_FILE] {
        assert!(fd.join(f).exists(), "{f}");
    }
    assert_eq!(std::fs::read_to_string(fd.join(LOSS_TRACE_FILE)).unwrap().lines().count(), 7);
    let summary = std::fs::read_to_string(dir.path().join(SUMMARY_FILE)).unwrap();
    assert!(summary.contains("| V "), "{summary}");
    assert!(summary.contains("failed"), "{summary}");

    // re-evaluating the stored checkpoint reproduces the stored metrics
    let stored = read_metrics(&fd.join(METRICS_FILE)).unwrap();
    let again = evaluate_checkpoint(&fd.join(CHECKPOINT_FILE), &fold, &d, 0.5, Some(&dir.path().join("m.json"))).unwrap();
    assert_eq!(serde_json::to_string(&stored).unwrap(), serde_json::to_string(&again).unwrap());
    assert_eq!(summarize_runs(dir.path()).unwrap(), summary);
}

#[test]
fn invalid_training_settings_are_rejected() {
    let (d, fold) = data(2);
    let mut c = quick(0);
    c.lr = 0.0;
    assert!(train_fold::<f32>(&c, &fold, &tiny(BlockKind::None, 0), &d).is_err());
    let mut c = quick(0);
    c.seq_len = [5, 40];
    assert!(train_fold::<f32>(&c, &fold, &tiny(BlockKind::None, 0), &d).is_err());
    let leaky = FoldSpec {
        test: fold.train.clone(),
        ..fold.clone()
    };
    assert!(train_fold::<f32>(&quick(0), &leaky, &tiny(BlockKind::None, 0), &d).is_err());
}
