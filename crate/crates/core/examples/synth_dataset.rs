//! Generates a small synthetic corpus, writes it as a dataset directory and
//! reads it back.
use cofuse::data::{synth_generate, text_length_histogram, write_dataset, Dtype, Manifest, SyntheticConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = SyntheticConfig { k: 4, n_range: [5, 50], ..Default::default() };
    let data = synth_generate(&cfg, 200)?;
    let dir = tempfile::tempdir()?;
    let path = write_dataset(dir.path(), data.header, &data.examples, Dtype::F32)?;
    let back = Manifest::read(&path)?.load_examples()?;
    for (a, b) in back.iter().zip(&data.examples) {
        assert!(a.text == b.text && a.image == b.image);
    }

    let nodesc = data.examples.iter().filter(|e| !e.record.has_description).count();
    println!("{} items, {nodesc} without description, header {:?}", back.len(), data.header);
    let lengths: Vec<usize> = data.examples.iter().map(|e| e.record.text_len).collect();
    for b in text_length_histogram(&lengths, 10)? {
        println!("{:>3}-{:<3} {}", b.start, b.end, "#".repeat(b.count / 2));
    }
    Ok(())
}
