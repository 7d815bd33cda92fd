//! Trains one experiment file and prints per-epoch metrics.
//!
//! `cargo run --release -p vitstem --example desk_train -- configs/desk_p.toml`

use vitstem::experiment::{load_dataset, train, ExperimentConfig};

fn main() -> vitstem::Result<()> {
    let path = std::env::args().nth(1).unwrap_or_else(|| "configs/desk_p.toml".into());
    let cfg = ExperimentConfig::load(path.as_ref())?;
    let data = load_dataset(&cfg.dataset)?;
    let out = train(&cfg, &data, &mut |p| {
        println!("epoch {:>3}  loss {:.4}  val_err {:?}  ema {:?}  lr {:.2e}", p.epoch, p.train_loss, p.val_err, p.val_err_ema, p.lr);
    })?;
    println!("{}", serde_json::to_string_pretty(&out.record)?);
    Ok(())
}
