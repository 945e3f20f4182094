mod common;

use candle_core::{DType, Device};

use crr_model::experiment::run_toy;
use crr_model::trainer::{train_stage1, train_stage2, TrainLog, TrainingSet};
use crr_model::{CrrModel, Error};

use common::tiny::{tiny_config, tiny_data};

#[test]
fn freeze_contracts_hold_across_both_stages() {
    let cfg = tiny_config(1);
    let run = run_toy(&cfg, tiny_data(&cfg, 1)).unwrap();
    let s1 = (run.stage1.checksums(1, "start").unwrap(), run.stage1.checksums(1, "end").unwrap());
    assert_eq!(s1.0.encoder, s1.1.encoder);
    assert_ne!(s1.0.repair, s1.1.repair);
    let log2 = run.stage2.as_ref().unwrap();
    let s2 = (log2.checksums(2, "start").unwrap(), log2.checksums(2, "end").unwrap());
    assert_eq!(s2.0.encoder, s2.1.encoder);
    assert_eq!(s2.0.repair, s2.1.repair);
    assert_eq!(s2.0.repair, s1.1.repair);
    assert_ne!(s2.0.seg, s2.1.seg);
}

#[test]
fn training_is_deterministic() {
    let cfg = tiny_config(2);
    let a = run_toy(&cfg, tiny_data(&cfg, 2)).unwrap();
    let b = run_toy(&cfg, tiny_data(&cfg, 2)).unwrap();
    assert_eq!(a.stage1.losses(1), b.stage1.losses(1));
    assert_eq!(a.stage2.as_ref().unwrap().losses(2), b.stage2.as_ref().unwrap().losses(2));
    assert_eq!(a.model.checksums().unwrap(), b.model.checksums().unwrap());
}

#[test]
fn zero_iterations_leave_parameters_unchanged() {
    let mut cfg = tiny_config(3);
    cfg.trainer.stage1.iterations = 0;
    cfg.trainer.stage2.iterations = 0;
    let data = tiny_data(&cfg, 3);
    let mut model = CrrModel::new(&cfg, DType::F32, &Device::Cpu).unwrap();
    let before = model.checksums().unwrap();
    train_stage1(&mut model, &data.train, &data.textures).unwrap();
    train_stage2(&mut model, &data.train, &data.textures).unwrap();
    assert_eq!(model.checksums().unwrap(), before);
}

#[test]
fn stage2_requires_stage1_and_data() {
    let cfg = tiny_config(4);
    let data = tiny_data(&cfg, 4);
    let mut model = CrrModel::cpu(&cfg).unwrap();
    let err = train_stage2(&mut model, &data.train, &data.textures).unwrap_err();
    assert!(matches!(err, Error::State(_)), "{err}");
    assert!(model.infer(&[], &[]).is_err());
    let empty = TrainingSet::default();
    assert!(matches!(train_stage1(&mut model, &empty, &data.textures), Err(Error::Config(_))));
}

#[test]
fn checkpoints_round_trip_and_reject_mismatches() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(5);
    let run = run_toy(&cfg, tiny_data(&cfg, 5)).unwrap();
    let (p1, p2) = (dir.path().join("s1.safetensors"), dir.path().join("s2.safetensors"));
    run.model.save_stage1(&p1).unwrap();
    run.model.save_stage2(&p2).unwrap();

    let mut fresh = CrrModel::cpu(&cfg).unwrap();
    assert!(matches!(fresh.load_stage2(&p2), Err(Error::State(_))));
    fresh.load_stage1(&p1).unwrap();
    fresh.load_stage2(&p2).unwrap();
    assert!(fresh.stage1_complete() && fresh.stage2_complete());
    assert_eq!(fresh.checksums().unwrap(), run.model.checksums().unwrap());

    let imgs: Vec<_> = run.data.test.iter().map(|t| crr_model::backbone::normalize(&t.image, &cfg.backbone)).collect();
    let refs: Vec<_> = imgs.iter().collect();
    let idx: Vec<u64> = (0..refs.len() as u64).collect();
    let a = run.model.infer(&refs, &idx).unwrap();
    let b = fresh.infer(&refs, &idx).unwrap();
    assert_eq!(a.iter().map(|i| &i.anomaly).collect::<Vec<_>>(), b.iter().map(|i| &i.anomaly).collect::<Vec<_>>());

    let mut other = tiny_config(5);
    other.repair_net.bottleneck_ratio = 2.0;
    let mut wrong = CrrModel::cpu(&other).unwrap();
    let before = wrong.checksums().unwrap();
    assert!(matches!(wrong.load_stage1(&p1), Err(Error::Checkpoint(_))));
    assert_eq!(wrong.checksums().unwrap(), before);
    assert!(!wrong.stage1_complete());
    assert!(CrrModel::cpu(&cfg).unwrap().load_stage1(&dir.path().join("missing")).is_err());
}

#[test]
fn logs_round_trip_through_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny_config(6);
    let run = run_toy(&cfg, tiny_data(&cfg, 6)).unwrap();
    let path = dir.path().join("log.jsonl");
    run.stage1.append_jsonl(&path).unwrap();
    run.stage2.as_ref().unwrap().append_jsonl(&path).unwrap();
    let back = TrainLog::read_jsonl(&path).unwrap();
    assert_eq!(back.losses(1), run.stage1.losses(1));
    assert_eq!(back.losses(2), run.stage2.unwrap().losses(2));
}
