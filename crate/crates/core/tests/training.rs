use maskbeam::estimator::{mask_mse, train, train_with_monitor, TrainingExample};
use maskbeam::mask_cov::oracle_psm;
use maskbeam::pipeline::{run_pipeline, summarize};
use maskbeam::scene::generate_scene;
use maskbeam::{
    BeamformerKind, EstimatorModel, LossKind, Method, PipelineConfig, SceneConfig, StftConfig, TrainConfig,
};

fn example(seed: u64, duration: f64) -> TrainingExample {
    let scene = generate_scene(&SceneConfig { seed, duration, ..SceneConfig::default() }).unwrap();
    TrainingExample::from_scene(&scene, &StftConfig::speech(8000)).unwrap()
}

#[test]
fn psa_training_moves_masks_toward_the_oracle() {
    let ex = example(21, 0.792);
    let target = oracle_psm(&ex.mixture, &ex.images, 0).unwrap();
    let cfg = TrainConfig::new(LossKind::Psa, 300, 1);
    let init = EstimatorModel::new(cfg.model_spec(ex.mixture.bins(), 2), 1);
    let mut mse = Vec::new();
    let (_, curve) = train_with_monitor(&init, std::slice::from_ref(&ex), &cfg, |step, model| {
        if step % 100 == 0 || step + 1 == cfg.steps {
            let out = model.forward(&ex.feature).unwrap();
            // either labelling of the two streams is a valid answer
            let direct = mask_mse(out.mask.tensor(), target.tensor());
            let swapped = mask_mse(&out.mask.permute_sources(&[1, 0]), target.tensor());
            mse.push(direct.min(swapped));
        }
    })
    .unwrap();
    assert!(curve.iter().all(|l| l.is_finite()));
    assert!(mse.windows(2).all(|w| w[1] < w[0]), "mask MSE {mse:?}");
    assert!(mse.last().unwrap() < &(0.75 * mse[0]), "mask MSE {mse:?}");
}

#[test]
fn heads_follow_the_loss() {
    let ex = example(5, 0.3);
    for kind in [LossKind::Psa, LossKind::L1, LossKind::L2] {
        let cfg = TrainConfig::new(kind, 3, 0);
        let model = EstimatorModel::new(cfg.model_spec(129, 2), 0);
        assert_eq!(model.forward(&ex.feature).unwrap().activation.is_some(), kind == LossKind::L1);
        assert!(train(&model, std::slice::from_ref(&ex), &cfg).is_ok());
    }
}

#[test]
fn l2_model_drives_every_time_invariant_beamformer() {
    let data: Vec<TrainingExample> = (0..2).map(|i| example(40 + i, 0.5)).collect();
    let cfg = TrainConfig::new(LossKind::L2, 20, 2);
    let init = EstimatorModel::new(cfg.model_spec(129, 2), 2);
    let (model, _) = train(&init, &data, &cfg).unwrap();
    let scenes = vec![generate_scene(&SceneConfig { seed: 99, duration: 0.5, ..SceneConfig::default() }).unwrap()];
    let bfs = [BeamformerKind::Mvdr, BeamformerKind::Gev, BeamformerKind::MwfTi];
    let res = run_pipeline(&scenes, Method::L2, &bfs, Some(&model), &PipelineConfig::default()).unwrap();
    assert_eq!(summarize(&res).len(), 3);
    assert!(res.iter().all(|r| r.report.sdr.iter().all(|v| v.is_finite())));
    assert!(run_pipeline(&scenes, Method::L2, &[BeamformerKind::MwfTv], Some(&model), &PipelineConfig::default()).is_err());
}
