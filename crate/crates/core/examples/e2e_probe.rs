//! Temporary probe: one pass of the end-to-end directional experiment.
use std::time::Instant;
use umafd_core::backbone::BackboneConfig;
use umafd_core::data::{Dataset, SynthConfig};
use umafd_core::eval::{evaluate_depth_test, run_protocol, Protocol};
use umafd_core::trainer::{checkpoint_path, fit, load_params, StepMode};
use umafd_core::synth;
use umafd_core::trainer::{TrainConfig, WeightMode};


fn main() {
    // args: seed lr protocols(b/u/s) [adaptive] [grl] [tau] [momentum] [tag]
    let a: Vec<String> = std::env::args().collect();
    let seed: u64 = a.get(1).map(|s| s.parse().unwrap()).unwrap_or(0);
    let lr: f64 = a.get(2).map(|s| s.parse().unwrap()).unwrap_or(1e-4);
    let which: String = a.get(3).cloned().unwrap_or_else(|| "bus".into());
    let adaptive: bool = a.get(4).map(|s| s == "1").unwrap_or(false);
    let grl: f64 = a.get(5).map(|s| s.parse().unwrap()).unwrap_or(1.0);
    let tau: f64 = a.get(6).map(|s| s.parse().unwrap()).unwrap_or(0.7);
    let momentum: f64 = a.get(7).map(|s| s.parse().unwrap()).unwrap_or(0.9);
    let tag: String = a.get(8).cloned().unwrap_or_else(|| "x".into());
    let n_stages: usize = a.get(9).map(|s| s.parse().unwrap()).unwrap_or(3);
    let root = std::path::PathBuf::from("/tmp/e2e_data");
    let scfg = SynthConfig { n_train_pairs: 200, n_test_depth: 80, t: 8, h: 64, w: 64, noise_level: 0.1, seed: 12345 };
    let t0 = Instant::now();
    if !root.join("manifest.csv").exists() {
        synth::synth_generate(&scfg, &root).unwrap();
    }
    let ds = Dataset::open(&root, (8, 64, 64)).unwrap();
    let bcfg = BackboneConfig { n_stages, ..BackboneConfig::default() };
    let cfg = TrainConfig {
        epochs: 30,
        base_lr: lr,
        lr_decay_epoch: 20,
        seed,
        weight_mode: if adaptive { WeightMode::Adaptive } else { WeightMode::Fixed },
        grl_lambda: grl,
        tau,
        momentum,
        ..TrainConfig::default()
    };
    let out = std::path::PathBuf::from(format!("/tmp/e2e_runs/{tag}_seed{seed}"));
    for c in which.chars() {
        let t = Instant::now();
        if c == 'w' {
            // Warm-started adaptation: cls-only RGB pretrain, then the full
            // pipeline initialized from it.
            let pre_dir = out.join("pretrain");
            let mut pre_cfg = cfg.clone();
            pre_cfg.enabled = umafd_core::trainer::EnabledLosses::cls_only();
            pre_cfg.weight_mode = WeightMode::Fixed;
            fit(&ds, &pre_cfg, &bcfg, StepMode::RgbOnly, &pre_dir, None).unwrap();
            let pre = load_params(&checkpoint_path(&pre_dir, cfg.epochs - 1)).unwrap();
            let adapt_dir = out.join("umafd_warm");
            let mut adapt_cfg = cfg.clone();
            adapt_cfg.base_lr = cfg.base_lr * cfg.lr_decay_factor;
            adapt_cfg.momentum = 0.0;
            let fin = fit(&ds, &adapt_cfg, &bcfg, StepMode::Paired, &adapt_dir, Some(&pre)).unwrap();
            let params = load_params(&fin.final_checkpoint).unwrap();
            let m = evaluate_depth_test(&params, &bcfg, &ds).unwrap();
            println!(
                "{tag} seed {seed} {:<18} acc {:>6.2}% auc {:>6.2}%  ({:.1}s)",
                "umafd_warm",
                m.accuracy * 100.0,
                m.auc * 100.0,
                t.elapsed().as_secs_f64()
            );
            continue;
        }
        let p = match c {
            'b' => Protocol::Baseline,
            'u' => Protocol::Umafd,
            's' => Protocol::SupervisedTarget,
            _ => panic!("b|u|s|w"),
        };
        let r = run_protocol(p, &ds, &cfg, &bcfg, &out.join(p.as_str())).unwrap();
        println!(
            "{tag} seed {seed} {:<18} acc {:>6.2}% auc {:>6.2}%  ({:.1}s)",
            p.as_str(),
            r.metrics.accuracy * 100.0,
            r.metrics.auc * 100.0,
            t.elapsed().as_secs_f64()
        );
    }
    println!("total: {:.1}s", t0.elapsed().as_secs_f64());
}
