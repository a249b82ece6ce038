//! Stacks three base models' validation probabilities and trains the
//! meta-network on half of them.
use cofuse::data::{split_train_val, synth_generate, SyntheticConfig};
use cofuse::ensemble::{collect_probs, predict_ensemble, split_meta, train_meta, MetaConfig};
use cofuse::model::ModelSpec;
use cofuse::analysis::macro_f1;
use cofuse::train::{train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = synth_generate(&SyntheticConfig { k: 4, ..Default::default() }, 200)?;
    let (tr, va) = split_train_val(&data.examples, |e| e.label(), 0.2, 0)?;
    let bases = (0..3)
        .map(|seed| {
            let cfg = TrainConfig { epochs: 4, seed, model: ModelSpec { hidden: 12, d: 12, ..Default::default() }, ..Default::default() };
            train(&cfg, data.header, &tr, &va).map(|o| o.best)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let stacked = collect_probs(&bases, &va)?;
    let (meta_train, meta_test) = split_meta(&stacked, 0.5, 0)?;
    let meta = train_meta(&meta_train, &meta_test, &MetaConfig::default())?.meta;
    let (pred, _) = predict_ensemble(&meta, &meta_test)?;
    for j in 0..stacked.m {
        println!("base {j}: meta-test macro-F1 {:.3}", meta_test.base_macro_f1(j));
    }
    println!("stacked: {:.3} (meta epoch {})", macro_f1(&meta_test.labels, &pred, meta_test.k)?, meta.epoch);
    Ok(())
}
