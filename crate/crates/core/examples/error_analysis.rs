//! Confusion matrix, most frequent error types and the grouped loss
//! comparison on a briefly trained model, exported as a report directory.
use cofuse::analysis::{export_report, group_loss_stats, top_error_types, Report};
use cofuse::data::{split_train_val, synth_generate, text_length_histogram, SyntheticConfig};
use cofuse::model::ModelSpec;
use cofuse::train::{evaluate, train, TrainConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let data = synth_generate(&SyntheticConfig { k: 4, ..Default::default() }, 240)?;
    let (tr, va) = split_train_val(&data.examples, |e| e.label(), 0.2, 0)?;
    let cfg = TrainConfig { epochs: 5, model: ModelSpec { hidden: 16, d: 16, ..Default::default() }, ..Default::default() };
    let model = train(&cfg, data.header, &tr, &va)?.best.model;
    let ev = evaluate(&model, &va, cfg.max_seq_len)?;
    let cm = ev.confusion(4);
    let has_desc: Vec<bool> = va.iter().map(|e| e.record.has_description).collect();
    let lengths: Vec<usize> = va.iter().map(|e| e.record.text_len).collect();
    let report = Report {
        macro_f1: cm.macro_f1(),
        per_class_f1: cm.per_class_f1(),
        top_errors: top_error_types(&cm, 3),
        group_stats: group_loss_stats(&ev.losses, &has_desc).ok(),
        histogram: text_length_histogram(&lengths, 5)?,
        ..Report::default()
    };
    for e in &report.top_errors {
        println!("actual {} predicted as {}: {}", e.actual, e.predicted, e.count);
    }
    if let Some(g) = &report.group_stats {
        println!("mean loss no-desc {:.3} vs desc {:.3}, t = {:.3}, p = {:.3e}", g.nodesc.mean, g.desc.mean, g.welch.t, g.welch.p_one_sided);
    }
    let dir = tempfile::tempdir()?;
    for p in export_report(dir.path(), &report, &cm)? {
        println!("wrote {}", p.file_name().unwrap_or_default().to_string_lossy());
    }
    Ok(())
}
