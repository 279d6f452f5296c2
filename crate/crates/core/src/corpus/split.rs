/// Lowercased tokens (without the trailing period) that do not end a sentence.
const ABBREVIATIONS: &[&str] = &[
    "dr", "mr", "mrs", "ms", "prof", "st", "jr", "sr", "vs", "etc", "e.g", "i.e", "no", "mt", "fig", "gen", "gov",
    "sen", "rep", "rev", "capt", "col", "lt", "sgt", "inc", "ltd", "co", "corp", "approx", "dept", "est", "vol", "p",
    "pp", "jan", "feb", "mar", "apr", "jun", "jul", "aug", "sep", "sept", "oct", "nov", "dec", "mme", "mlle", "m",
];

const TERMINALS: [char; 3] = ['.', '!', '?'];
const CLOSERS: [char; 4] = ['"', '\'', ')', '\u{201d}'];

fn is_abbreviation(word: &str) -> bool {
    let w = word.trim_start_matches(|c: char| !c.is_alphanumeric());
    let Some(stem) = w.strip_suffix('.') else {
        return false;
    };
    let lower = stem.to_lowercase();
    // single-letter initials such as "J."
    if stem.chars().count() == 1 && stem.chars().all(char::is_uppercase) {
        return true;
    }
    ABBREVIATIONS.contains(&lower.as_str())
}

/// Splits a document after terminal punctuation that is followed by
/// whitespace and an uppercase letter, unless the token ending there is a
/// known abbreviation. Newlines inside the document become spaces.
pub fn split_sentences(document: &str) -> Vec<String> {
    let words: Vec<&str> = document.split_whitespace().collect();
    let mut out = Vec::new();
    let mut current: Vec<&str> = Vec::new();
    for (i, w) in words.iter().enumerate() {
        current.push(w);
        let stripped = w.trim_end_matches(CLOSERS);
        let ends = stripped.ends_with(TERMINALS);
        let next_upper = words
            .get(i + 1)
            .and_then(|n| {
                n.trim_start_matches(|c: char| CLOSERS.contains(&c) || c == '\u{201c}')
                    .chars()
                    .next()
            })
            .is_some_and(char::is_uppercase);
        if ends && next_upper && !is_abbreviation(stripped) {
            out.push(current.join(" "));
            current.clear();
        }
    }
    if !current.is_empty() {
        out.push(current.join(" "));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_sentences() {
        assert_eq!(
            split_sentences("Hello there. How are you?"),
            ["Hello there.", "How are you?"]
        );
    }

    #[test]
    fn abbreviation_guard() {
        assert_eq!(split_sentences("Dr. Smith arrived."), ["Dr. Smith arrived."]);
        assert_eq!(
            split_sentences("See J. Doe today. Then go."),
            ["See J. Doe today.", "Then go."]
        );
    }

    #[test]
    fn no_terminal_punctuation() {
        assert_eq!(
            split_sentences("just some words without an end"),
            ["just some words without an end"]
        );
        assert!(split_sentences("   ").is_empty());
    }

    #[test]
    fn lowercase_continuation_does_not_split() {
        assert_eq!(
            split_sentences("It costs 3.5 dollars. ok then"),
            ["It costs 3.5 dollars. ok then"]
        );
    }

    #[test]
    fn quotes_and_newlines() {
        assert_eq!(
            split_sentences("He said \"go!\" Then\nwe left."),
            ["He said \"go!\"", "Then we left."]
        );
    }
}
