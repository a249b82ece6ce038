//! Trains the full model and its four ablations for a few epochs each and
//! prints a validation macro-F1 table.
use cofuse::cli::ablation_specs;
use cofuse::data::{split_train_val, synth_generate, SyntheticConfig};
use cofuse::model::{Model, ModelSpec};
use cofuse::train::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = synth_generate(&SyntheticConfig { k: 4, ..Default::default() }, 160)?;
    let (tr, va) = split_train_val(&data.examples, |e| e.label(), 0.2, 0)?;
    let base = ModelSpec { hidden: 12, d: 12, ..Default::default() };
    println!("{:<16} {:>8} {:>8}", "config", "params", "val F1");
    for (name, spec) in ablation_specs(&base) {
        let params = Model::new(spec.clone(), data.header, 0)?.store.num_scalars();
        let cfg = TrainConfig { epochs: 5, model: spec, ..Default::default() };
        let best = train(&cfg, data.header, &tr, &va)?.best;
        println!("{name:<16} {params:>8} {:>8.3}", best.val_macro_f1);
    }
    Ok(())
}
