//! Trains a small stretching-mode LSTM on synthetic loading cycles, saves it,
//! and reads a live window back through the loaded copy.
//!
//! ```text
//! cargo run --release --example lstm_stretch_model
//! ```

use tenserecon::lstm::{load_model, save_model, synthetic_stretch_series, train, StretchDatasetConfig, TrainConfig};
use tenserecon::sensor::{StretchEstimator, StretchTable};

fn main() -> tenserecon::Result<()> {
    let table = StretchTable::default();
    let recipe = StretchDatasetConfig {
        stride: 4,
        ..Default::default()
    };
    let data = recipe.build(&table, 1)?;
    let cfg = TrainConfig {
        hidden_size: 16,
        epochs: 60,
        seed: 1,
        ..Default::default()
    };
    let (model, report) = train(&data, &cfg)?;
    println!("{} training windows, {} validation windows", data.train.len(), data.validation.len());
    for e in (0..=cfg.epochs).step_by(10) {
        println!("epoch {e:>3}  validation MSE {:.3e}", report.validation_loss[e]);
    }
    println!(
        "best epoch {}, held-out error {:+.4} ± {:.4} strain",
        report.best_epoch, report.error_mean, report.error_std
    );

    let path = std::env::temp_dir().join("tenserecon_example_model.json");
    save_model(&model, &path)?;
    let loaded = load_model(&path)?;

    let probe = &synthetic_stretch_series(&table, &[0.1], 10.0, 0.4, 1, 0.0, 9)?[0];
    let w = loaded.window_len();
    println!("\n  true     predicted");
    for end in (w..probe.ratios.len()).step_by(10) {
        let pred = loaded.estimate(&probe.ratios[end - w..end], true)?;
        println!("  {:.4}   {pred:.4}", probe.strains[end - 1]);
    }
    Ok(())
}
