/// Lowercased whitespace tokens with leading and trailing punctuation
/// stripped. Internal punctuation (`60-mph`) is kept.
pub fn tokenize(text: &str) -> Vec<String> {
    text.split_whitespace()
        .map(|w| w.trim_matches(is_punctuation).to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}

fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '\u{2018}'..='\u{201F}' | '\u{2010}'..='\u{2015}' | '\u{2026}' | '«' | '»' | '¡' | '¿'
        )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn narrative_sentence() {
        assert_eq!(
            tokenize("Extreme gusts caused significant property damage."),
            ["extreme", "gusts", "caused", "significant", "property", "damage"]
        );
    }

    #[test]
    fn empty_and_punctuation_only() {
        assert!(tokenize("").is_empty());
        assert!(tokenize("  ... !! ").is_empty());
    }

    #[test]
    fn internal_punctuation_kept() {
        assert_eq!(tokenize("60-MPH wind!"), ["60-mph", "wind"]);
        assert_eq!(
            tokenize("“Downed” lines…\tnear  town"),
            ["downed", "lines", "near", "town"]
        );
    }
}
