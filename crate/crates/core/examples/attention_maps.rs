//! Inspects the co-attention distributions of an untrained model on one
//! synthetic item, highlighting which regions carry class signal.
use cofuse::data::{synth_generate, SyntheticConfig};
use cofuse::model::{Model, ModelSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = synth_generate(&SyntheticConfig { k: 4, n_range: [6, 10], ..Default::default() }, 4)?;
    let model = Model::new(ModelSpec::default(), data.header, 3)?;
    let ex = &data.examples[1];
    let trace = model.attention_trace(ex)?.ok_or("baseline models have no attention")?;
    println!("C: {:?}", trace.c.shape());
    if let Some(a) = &trace.a_i {
        let bars: Vec<String> = a.iter().map(|p| format!("{p:.3}")).collect();
        println!("a_i ({} regions, sum {:.12}): {}", a.len(), a.iter().sum::<f64>(), bars.join(" "));
    }
    if let Some(a) = &trace.a_t {
        println!("a_t ({} tokens, sum {:.12})", a.len(), a.iter().sum::<f64>());
    }
    println!("feature width {}, class probabilities {:?}", trace.feature.len(), model.predict(ex)?);
    Ok(())
}
