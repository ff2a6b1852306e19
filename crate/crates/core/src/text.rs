/// Lowercase and split into words, treating every character other than
/// letters, digits and apostrophes (commas, dashes, semicolons, ...) as a
/// separator.
pub fn normalize_words(s: &str) -> Vec<String> {
    s.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|w| w.trim_matches('\'').to_lowercase())
        .filter(|w| !w.is_empty())
        .collect()
}
