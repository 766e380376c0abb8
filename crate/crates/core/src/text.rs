//! Sentence splitting shared by the dataset builder and the concept client.

const PUNCT: &[char] = &['.', ',', '!', '?', ';', ':', '"', '(', ')'];

/// Splits on whitespace and peels leading/trailing punctuation into their
/// own tokens, so `"I baked a cake."` becomes `[I, baked, a, cake, .]`.
pub fn split_sentence(sentence: &str) -> Vec<String> {
    let mut out = Vec::new();
    for word in sentence.split_whitespace() {
        let mut core = word;
        let mut lead = Vec::new();
        while let Some(c) = core.chars().next().filter(|c| PUNCT.contains(c)) {
            lead.push(c.to_string());
            core = &core[c.len_utf8()..];
        }
        let mut trail = Vec::new();
        while let Some(c) = core.chars().last().filter(|c| PUNCT.contains(c)) {
            trail.push(c.to_string());
            core = &core[..core.len() - c.len_utf8()];
        }
        out.extend(lead);
        if !core.is_empty() {
            out.push(core.to_string());
        }
        out.extend(trail.into_iter().rev());
    }
    out
}

/// Inverse of [`split_sentence`] for ordinary text: tokens are joined with
/// single spaces, except that closing punctuation attaches to the left.
pub fn join_tokens<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    for (i, t) in tokens.iter().enumerate() {
        let t = t.as_ref();
        let closing = t.chars().all(|c| matches!(c, '.' | ',' | '!' | '?' | ';' | ':' | ')'));
        let prev_open = i > 0 && tokens[i - 1].as_ref() == "(";
        if i > 0 && !closing && !prev_open {
            out.push(' ');
        }
        out.push_str(t);
    }
    out
}

/// Capitalizes `word` when `like` starts with an uppercase letter.
pub fn restore_case(word: &str, like: &str) -> String {
    if like.chars().next().is_some_and(char::is_uppercase) {
        let mut cs = word.chars();
        match cs.next() {
            Some(first) => first.to_uppercase().chain(cs).collect(),
            None => String::new(),
        }
    } else {
        word.to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_trailing_punctuation() {
        assert_eq!(split_sentence("I baked a cake."), ["I", "baked", "a", "cake", "."]);
        assert_eq!(split_sentence("  (hello),  world!? "), ["(", "hello", ")", ",", "world", "!", "?"]);
        assert!(split_sentence("   ").is_empty());
    }

    #[test]
    fn join_inverts_split_on_plain_text() {
        for s in ["I baked a cake.", "Well, it rained (again)!", "no punctuation here"] {
            assert_eq!(join_tokens(&split_sentence(s)), s);
        }
    }

    #[test]
    fn case_restoration() {
        assert_eq!(restore_case("pie", "Cake"), "Pie");
        assert_eq!(restore_case("pie", "cake"), "pie");
        assert_eq!(restore_case("baked goods", "Cake"), "Baked goods");
    }
}
