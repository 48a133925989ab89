//! Temporary probe: chase cls-only overfit hyperparameters.
use umafd_core::backbone::BackboneConfig;
use umafd_core::data::{Dataset, SynthConfig};
use umafd_core::synth;
use umafd_core::trainer::{fit, EnabledLosses, StepMode, TrainConfig};

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let scfg = SynthConfig { n_train_pairs: 4, n_test_depth: 2, t: 8, h: 16, w: 16, noise_level: 0.0, seed: 21 };
    synth::synth_generate(&scfg, dir.path()).unwrap();
    let ds = Dataset::open(dir.path(), (4, 16, 16)).unwrap();
    let bcfg = BackboneConfig { stage1_channels: 4, embedding_dim: 6, n_stages: 2, idm_enabled: true };
    for (lr, epochs, decay_at) in [
        (0.3, 200, 100),
        (0.3, 200, 150),
        (0.1, 300, 200),
        (0.5, 200, 100),
        (0.3, 400, 200),
        (0.05, 400, 400),
    ] {
        let cfg = TrainConfig {
            epochs,
            base_lr: lr,
            lr_decay_epoch: decay_at,
            enabled: EnabledLosses::cls_only(),
            seed: 4,
            ..TrainConfig::default()
        };
        let out = dir.path().join(format!("run_{lr}_{epochs}_{decay_at}"));
        fit(&ds, &cfg, &bcfg, StepMode::RgbOnly, &out, None).unwrap();
        let trace = std::fs::read_to_string(out.join("train_log.csv")).unwrap();
        let tail: Vec<f64> = trace
            .lines()
            .skip(1)
            .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        let worst = tail[tail.len() - 4..].iter().cloned().fold(0.0, f64::max);
        println!("lr={lr:<5} epochs={epochs:<4} decay_at={decay_at:<4} worst-final-epoch cls={worst:.6}");
    }
}
