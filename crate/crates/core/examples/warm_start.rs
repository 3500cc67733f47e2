//! Epochs needed to reach 90% validation mAP on the three-cluster fixture,
//! from a random head and from a head pre-trained on a separate draw of the
//! same clusters.
//!
//! `cargo run -p mir-core --release --example warm_start`

#[path = "../tests/common/mod.rs"]
mod common;

use mir_core::losses::LossKind;
use mir_core::trainer::{init_head, train, train_from, TrainConfig, TrainingCurve};

fn epochs_to(curve: &TrainingCurve, target: f64) -> Option<usize> {
    curve
        .records
        .iter()
        .find(|r| r.map_avg >= target)
        .map(|r| r.epoch + 1)
}

const NOISE: f64 = 1.0;
const LR: f64 = 0.01;

fn main() -> mir_core::Result<()> {
    // Same seed, so the same cluster centers; the sample counts differ, so
    // the noisy rows are fresh draws.
    let pretrain = common::three_clusters_with_noise(7, 20, 5, NOISE);
    let finetune = common::three_clusters_with_noise(7, 30, 10, NOISE);
    let cfg = TrainConfig {
        loss_kind: LossKind::AdaptiveMiMm,
        learning_rate: LR,
        epochs: 100,
        batch_size: 16,
        d_out: 8,
        seed: 3,
        ..TrainConfig::default()
    };

    let (_, cold) = train(&finetune.train, &finetune.val, &cfg)?;
    let (warm_head, _) = train(
        &pretrain.train,
        &pretrain.val,
        &TrainConfig {
            epochs: 50,
            ..cfg.clone()
        },
    )?;
    let (_, warm) = train_from(warm_head, &finetune.train, &finetune.val, &cfg)?;
    let fresh = init_head(common::FEATURE_DIM, cfg.d_out, cfg.seed)?;
    let (_, fresh_again) = train_from(fresh, &finetune.train, &finetune.val, &cfg)?;
    assert_eq!(cold, fresh_again);

    for (name, curve) in [("random init", &cold), ("pre-trained", &warm)] {
        let last = curve.records.last().expect("at least one epoch");
        match epochs_to(curve, 90.0) {
            Some(e) => println!(
                "{name:>12}: 90% mAP after {e} epochs (final mAP {:.2}, nDCG {:.2})",
                last.map_avg, last.ndcg_avg
            ),
            None => println!(
                "{name:>12}: 90% mAP not reached (final mAP {:.2}, nDCG {:.2})",
                last.map_avg, last.ndcg_avg
            ),
        }
    }
    Ok(())
}
