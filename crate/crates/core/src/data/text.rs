use std::sync::OnceLock;

use regex::Regex;

use super::DataError;

fn tag_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"<[^>]*>").expect("valid regex"))
}

/// Strips `<...>` tags (each replaced by a space), collapses whitespace runs
/// and trims. Other characters, accents included, are untouched.
pub fn clean_text(raw: &str) -> String {
    let stripped = tag_re().replace_all(raw, " ");
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Cleans a description and maps empty, whitespace-only and `Nan`
/// placeholders to `None`.
pub fn normalize_description(raw: Option<&str>) -> Option<String> {
    let cleaned = clean_text(raw?);
    if cleaned.is_empty() || cleaned.eq_ignore_ascii_case("nan") {
        None
    } else {
        Some(cleaned)
    }
}

/// Title followed by the description, both cleaned.
pub fn build_corpus_text(title: &str, description: Option<&str>) -> Result<String, DataError> {
    let title = clean_text(title);
    if title.is_empty() {
        return Err(DataError::Malformed("empty title".into()));
    }
    Ok(match normalize_description(description) {
        Some(d) => format!("{title} {d}"),
        None => title,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clean_examples() {
        assert_eq!(clean_text("<b>Sauna</b>  infrarouge"), "Sauna infrarouge");
        assert_eq!(clean_text("plain text"), "plain text");
        assert_eq!(clean_text("a<br/>b <p>c</p>"), "a b c");
        assert_eq!(clean_text(""), "");
        assert_eq!(clean_text("  Taie  Sofé\t\n"), "Taie Sofé");
    }

    #[test]
    fn corpus_examples() {
        assert_eq!(build_corpus_text("Jeep Police", None).unwrap(), "Jeep Police");
        assert_eq!(build_corpus_text("Jeep Police", Some("Nan")).unwrap(), "Jeep Police");
        assert_eq!(build_corpus_text("T", Some("D")).unwrap(), "T D");
        assert_eq!(build_corpus_text("A <i>B</i>", Some("C  D")).unwrap(), "A B C D");
        assert!(matches!(build_corpus_text(" <b></b> ", Some("x")), Err(DataError::Malformed(_))));
    }

    #[test]
    fn placeholder_descriptions_are_absent() {
        for d in ["", "   ", "Nan", "nan", "NaN", "<p> </p>"] {
            assert_eq!(normalize_description(Some(d)), None, "{d:?}");
        }
        assert_eq!(normalize_description(Some("Nov'1 en peluche")), Some("Nov'1 en peluche".into()));
    }
}
