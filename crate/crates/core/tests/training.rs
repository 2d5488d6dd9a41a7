mod common;

use common::{tiny_config, tiny_data};
use mcd_core::checkpoint::Checkpoint;
use mcd_core::data::batch_tensors;
use mcd_core::train::{check_classes, evaluate, train};
use mcd_core::{Error, Forward, Group, Model};
use mcd_tensor::{Tape, Tensor};

fn logits(model: &Model<f64>, samples: &[mcd_core::data::BiTemporalSample]) -> Tensor<f64> {
    let refs: Vec<_> = samples.iter().collect();
    let (t1, t2, _) = batch_tensors::<f64>(&refs).unwrap();
    let tape = Tape::new();
    let fx = Forward::eval(&tape, &model.store);
    let y = model.forward(&fx, &tape.constant(t1), &tape.constant(t2)).unwrap();
    let v = y.value();
    (*v).clone()
}

#[test]
fn zero_epochs_leave_the_model_untouched() {
    let mut c = tiny_config();
    c.set("epochs", "0").unwrap();
    let mut model: Model<f64> = Model::build(&c).unwrap();
    let before = model.store.clone();
    let out = train(&mut model, &tiny_data(2, 1), &[], &mut |_| {}).unwrap();
    assert!(out.history.records.is_empty());
    assert!(out.best.is_none());
    assert_eq!(model.store, before);
}

#[test]
fn empty_evaluation_set_is_an_error() {
    let model: Model<f64> = Model::build(&tiny_config()).unwrap();
    let err = evaluate(&model, &[], 2).unwrap_err();
    assert!(matches!(err, Error::EmptyDataset));
    assert_eq!(err.to_string(), "empty dataset");
}

#[test]
fn class_count_mismatch_is_rejected() {
    let model: Model<f64> = Model::build(&tiny_config()).unwrap();
    assert!(check_classes(&model, 2).is_ok());
    assert!(matches!(check_classes(&model, 5), Err(Error::ClassMismatch { .. })));
}

#[test]
fn runs_are_reproducible_and_frozen_weights_stay_put() {
    let data = tiny_data(4, 2);
    let run = || {
        let mut model: Model<f64> = Model::build(&tiny_config()).unwrap();
        let out = train(&mut model, &data, &[], &mut |_| {}).unwrap();
        (model, out)
    };
    let (a, out_a) = run();
    let (b, out_b) = run();
    assert_eq!(out_a.history.to_csv(), out_b.history.to_csv());
    assert_eq!(a.store, b.store);
    assert_eq!(out_a.steps, 4);
    assert_eq!(out_a.history.records.len(), 2);

    let fresh: Model<f64> = Model::build(&tiny_config()).unwrap();
    for p in fresh.store.params() {
        let trained = a.store.get(&p.name).unwrap();
        if p.group == Group::Frozen {
            assert!(trained.value.bit_eq(&p.value), "{} moved", p.name);
        }
    }
    // LoRA B starts at zero and must have been updated
    let moved = |g: Group| {
        fresh
            .store
            .params()
            .iter()
            .filter(|p| p.group == g)
            .any(|p| !a.store.get(&p.name).unwrap().value.bit_eq(&p.value))
    };
    for g in Group::ALL.into_iter().filter(|g| g.trainable()) {
        assert!(moved(g), "{} did not train", g.name());
    }
}

#[test]
fn best_snapshot_has_the_highest_validation_score() {
    let mut c = tiny_config();
    c.set("epochs", "3").unwrap();
    let mut model: Model<f64> = Model::build(&c).unwrap();
    let out = train(&mut model, &tiny_data(2, 4), &[], &mut |_| {}).unwrap();
    let best = out.best.unwrap();
    let top = out.history.records.iter().map(|r| r.val_miou).fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(best.val_miou, top);
    assert_eq!(out.history.best().unwrap().epoch, best.epoch);
}

#[test]
fn max_steps_stops_mid_epoch() {
    let mut c = tiny_config();
    c.set("max_steps", "3").unwrap();
    c.set("epochs", "10").unwrap();
    let mut model: Model<f64> = Model::build(&c).unwrap();
    let out = train(&mut model, &tiny_data(4, 6), &[], &mut |_| {}).unwrap();
    assert_eq!(out.steps, 3);
    assert_eq!(out.history.records.last().unwrap().steps, 3);
    assert_eq!(out.history.records.len(), 2);
}

#[test]
fn diverging_run_names_the_batch() {
    let mut c = tiny_config();
    c.set("base_lr", "1e300").unwrap();
    c.set("epochs", "5").unwrap();
    let mut model: Model<f64> = Model::build(&c).unwrap();
    match train(&mut model, &tiny_data(2, 8), &[], &mut |_| {}) {
        Err(Error::NonFiniteLoss { ids, .. }) => assert!(!ids.is_empty()),
        other => panic!("expected a non-finite loss, got {:?}", other.map(|o| o.steps)),
    }
}

#[test]
fn checkpoint_round_trip_is_bit_exact() {
    let data = tiny_data(2, 3);
    let cfg = tiny_config();
    let mut model: Model<f64> = Model::build(&cfg).unwrap();
    let out = train(&mut model, &data, &[], &mut |_| {}).unwrap();
    let ckpt = Checkpoint::capture(&model.store, Some(&out.optimizer), 1, cfg.hash());
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    ckpt.save(&path).unwrap();

    let loaded = Checkpoint::load(&path).unwrap();
    assert_eq!(loaded, ckpt);
    let mut restored: Model<f64> = Model::build(&cfg).unwrap();
    loaded.restore(&mut restored.store).unwrap();
    assert_eq!(restored.store, model.store);
    assert!(logits(&restored, &data).bit_eq(&logits(&model, &data)));
    let (cm_a, _) = evaluate(&model, &data, 2).unwrap();
    let (cm_b, _) = evaluate(&restored, &data, 2).unwrap();
    assert_eq!(cm_a, cm_b);
    assert_eq!(loaded.restore_optimizer::<f64>().unwrap(), out.optimizer);
    assert_eq!(loaded.epoch(), Some(1));
}
