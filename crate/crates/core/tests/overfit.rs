use localframe::data::{dimer_sweep, LennardJones};
use localframe::model::{ModelConfig, ModelState};
use localframe::train::{evaluate_frames, Trainer, TrainConfig};

#[test]
fn dimer_sweep_overfits() {
    let lj = LennardJones::new(0.0104, 3.4, 10.2);
    let frames = dimer_sweep(18, 3.3, 4.8, 50, &lj).unwrap();
    let model = ModelConfig {
        num_layers: 2,
        hidden_channels: 16,
        num_heads: 4,
        num_basis: 16,
        ..ModelConfig::default()
    };
    let cfg = TrainConfig {
        epochs: 400,
        batch_size: 10,
        lr: 2e-3,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(ModelState::init(&model, 0).unwrap(), cfg, frames.clone(), Vec::new()).unwrap();
    assert_eq!(trainer.total_steps(), 2000);
    trainer.run(None, &mut |_| {}).unwrap();
    let refs: Vec<_> = frames.iter().collect();
    let report = evaluate_frames(trainer.state(), &refs, None).unwrap();
    assert!(report.force_mae < 5.0, "force MAE {} meV/Å", report.force_mae);
}
