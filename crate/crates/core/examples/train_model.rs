//! Trains the co-attention classifier on synthetic data and reports the
//! learning curve. Pass an epoch count as the first argument (default 8).
use cofuse::data::{split_train_val, synth_generate, SyntheticConfig};
use cofuse::model::ModelSpec;
use cofuse::train::{evaluate, train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let epochs = std::env::args().nth(1).map(|s| s.parse()).transpose()?.unwrap_or(8);
    let data = synth_generate(&SyntheticConfig { k: 4, ..Default::default() }, 240)?;
    let (tr, va) = split_train_val(&data.examples, |e| e.label(), 0.2, 0)?;
    let cfg = TrainConfig {
        epochs,
        model: ModelSpec { hidden: 16, d: 16, ..Default::default() },
        ..Default::default()
    };
    let out = train(&cfg, data.header, &tr, &va)?;
    for e in &out.log {
        println!("epoch {:>2}  train loss {:.4}  val macro-F1 {:.3}", e.epoch, e.train_loss, e.val_macro_f1);
    }
    let train_f1 = evaluate(&out.best.model, &tr, cfg.max_seq_len)?.macro_f1;
    println!("best epoch {} (val {:.3}, train {:.3})", out.best.epoch, out.best.val_macro_f1, train_f1);
    Ok(())
}
