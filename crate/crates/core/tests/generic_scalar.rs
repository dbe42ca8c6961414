//! The training stack in single precision, against the double precision run.

use std::collections::BTreeMap;

use fedmm::client::{Fusion, LambdaMode};
use fedmm::experiment::{prepare_splits, ExperimentConfig};
use fedmm::server::{run_training, Aggregation, Participant, RoundPolicy, ServerState};
use fedmm::{LocalModelF32, TrainHyper};

#[test]
fn f32_federation_tracks_f64() {
    let mut cfg = ExperimentConfig::default();
    cfg.train.rounds = 3;
    cfg.train.lr = 0.01;
    cfg.model.fusion = Fusion::Concat;
    let hospitals = cfg.load_hospitals().unwrap();
    let splits = prepare_splits(&cfg, &hospitals, 1).unwrap();
    let template = cfg.template().unwrap();
    let hyper: TrainHyper = cfg.hyper().unwrap();
    let hyper32 = fedmm::client::TrainHyper::<f32> {
        local_epochs: hyper.local_epochs,
        batch_size: hyper.batch_size,
        lr: hyper.lr as f32,
        schedule: fedmm::loss::LossSchedule::new(
            hyper.schedule.alpha as f32,
            hyper.schedule.t0,
            hyper.schedule.beta as f32,
            hyper.schedule.embed_dim,
        )
        .unwrap(),
        lambda: LambdaMode::Scheduled,
        prox_mu: 0.0,
        freeze_classifier_rounds: 0,
        classifier_loss: hyper.classifier_loss,
    };

    let mut ps64: Vec<Participant<f64>> = Vec::new();
    let mut ps32: Vec<Participant<f32>> = Vec::new();
    for (id, train, test) in &splits {
        let model = template.init_local_model::<f64>(&train.mask(), *id, 1).unwrap();
        let model32: LocalModelF32 = template.init_local_model(&train.mask(), *id, 1).unwrap();
        ps64.push(Participant { id: *id, train: train.clone(), test: test.clone(), model });
        ps32.push(Participant { id: *id, train: train.cast(), test: test.cast(), model: model32 });
    }
    let mut s64 = ServerState::new(template.clone(), 1, Aggregation::FedAvg, RoundPolicy::FEDMM).unwrap();
    let mut s32 = ServerState::new(template, 1, Aggregation::FedAvg, RoundPolicy::FEDMM).unwrap();
    let r64 = run_training(&mut s64, &mut ps64, &hyper, 3, 1).unwrap();
    let r32 = run_training(&mut s32, &mut ps32, &hyper32, 3, 1).unwrap();
    assert_eq!(r64.len(), r32.len());
    let mut gaps = BTreeMap::new();
    for (a, b) in r64.iter().zip(&r32) {
        assert_eq!((a.round, a.client), (b.round, b.client));
        gaps.insert((a.round, a.client), (a.test_auc - b.test_auc).abs());
        assert!((a.loss_bce - b.loss_bce).abs() < 1e-3, "{a:?} vs {b:?}");
    }
    assert!(gaps.values().all(|&g| g < 0.02), "{gaps:?}");
}
