//! Saves a trained checkpoint, reloads it and checks the reloaded model
//! scores the validation set identically.
use cofuse::data::{split_train_val, synth_generate, SyntheticConfig};
use cofuse::model::{ModelSpec, ModelVariant};
use cofuse::train::{evaluate, train, Checkpoint, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = synth_generate(&SyntheticConfig { k: 3, ..Default::default() }, 120)?;
    let (tr, va) = split_train_val(&data.examples, |e| e.label(), 0.2, 1)?;
    let cfg = TrainConfig {
        epochs: 12,
        model: ModelSpec { variant: ModelVariant::BaselineConcat, ..Default::default() },
        ..Default::default()
    };
    let best = train(&cfg, data.header, &tr, &va)?.best;
    let dir = tempfile::tempdir()?;
    best.save(dir.path())?;
    let back = Checkpoint::load(dir.path())?;
    let ev = evaluate(&back.model, &va, back.config.max_seq_len)?;
    assert_eq!(ev.macro_f1.to_bits(), best.val_macro_f1.to_bits());
    println!("epoch {} val macro-F1 {:.4} (reloaded: {:.4})", best.epoch, best.val_macro_f1, ev.macro_f1);
    println!("confusion:\n{:?}", ev.confusion(3).counts);
    Ok(())
}
