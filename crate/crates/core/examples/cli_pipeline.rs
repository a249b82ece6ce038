//! Drives the command-line front end in-process: synth, train, eval and
//! analyze into a temporary run directory.
use cofuse::cli::main_with_args;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let d = |p: &str| dir.path().join(p).display().to_string();
    std::fs::write(d("train.json"), r#"{"epochs": 2, "model": {"hidden": 8, "d": 8}}"#)?;
    let steps: Vec<Vec<String>> = vec![
        vec!["synth".into(), "--count".into(), "96".into(), "--out".into(), d("data")],
        vec!["train".into(), "--config".into(), d("train.json"), "--data".into(), d("data"), "--out".into(), d("train")],
        vec!["eval".into(), "--checkpoint".into(), d("train"), "--data".into(), d("data"), "--out".into(), d("eval")],
        vec!["analyze".into(), "--predictions".into(), d("eval/predictions.json"), "--manifest".into(), d("data"), "--out".into(), d("report")],
    ];
    for s in steps {
        let code = main_with_args(std::iter::once("cofuse".to_string()).chain(s.clone()));
        println!("{} -> exit {code}", s[0]);
        if code != 0 {
            return Err(format!("{} failed", s[0]).into());
        }
    }
    println!("{}", std::fs::read_to_string(d("report/artifacts.json"))?);
    Ok(())
}
