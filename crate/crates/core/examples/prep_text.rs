//! Text cleaning, title/description assembly and a stratified split.
use cofuse::data::{build_corpus_text, clean_text, normalize_description, split_indices};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let rows = [
        ("Jeep Police", None),
        ("<b>Sauna</b>  infrarouge", Some("Cabine <br/>2 places")),
        ("Lampe de chevet", Some("Nan")),
        ("Tapis", Some("   ")),
    ];
    for (title, desc) in rows {
        let text = build_corpus_text(title, desc)?;
        let has_desc = normalize_description(desc).is_some();
        println!("{:<40} has_description={has_desc}", text);
    }
    println!("{:?}", clean_text("a<br/>b <p>c</p>"));
    assert!(build_corpus_text("<i></i>", None).is_err());

    let labels: Vec<usize> = (0..50).map(|i| i % 3).collect();
    let s = split_indices(&labels, 0.2, 7)?;
    println!("{} train / {} val", s.train.len(), s.val.len());
    Ok(())
}
