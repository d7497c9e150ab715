use serde::{Deserialize, Serialize};

/// A token with its character offsets (`end` exclusive) in the source text.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub start: usize,
    pub end: usize,
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '‘' | '’' | '“' | '”' | '–' | '—' | '…' | '«' | '»' | '¿' | '¡' | '·' | '′' | '″'
        )
}

/// Splits on Unicode whitespace, then detaches every punctuation character
/// as its own token. Offsets count characters, not bytes.
pub fn tokenize(text: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut current = String::new();
    let mut start = 0;
    let flush = |current: &mut String, start: usize, out: &mut Vec<Token>| {
        if !current.is_empty() {
            let len = current.chars().count();
            out.push(Token {
                text: std::mem::take(current),
                start,
                end: start + len,
            });
        }
    };
    for (i, c) in text.chars().enumerate() {
        if c.is_whitespace() {
            flush(&mut current, start, &mut out);
        } else if is_punct(c) {
            flush(&mut current, start, &mut out);
            out.push(Token {
                text: c.to_string(),
                start: i,
                end: i + 1,
            });
        } else {
            if current.is_empty() {
                start = i;
            }
            current.push(c);
        }
    }
    flush(&mut current, start, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn texts(t: &[Token]) -> Vec<&str> {
        t.iter().map(|t| t.text.as_str()).collect()
    }

    #[test]
    fn punctuation_detached() {
        let t = tokenize("Super Bowl 50, (the \"Broncos\") won.");
        assert_eq!(
            texts(&t),
            ["Super", "Bowl", "50", ",", "(", "the", "\"", "Broncos", "\"", ")", "won", "."]
        );
        assert_eq!((t[3].start, t[3].end), (13, 14));
    }

    #[test]
    fn unicode_offsets_are_characters() {
        let t = tokenize("café\u{00a0}über—naïve");
        assert_eq!(texts(&t), ["café", "über", "—", "naïve"]);
        assert_eq!((t[1].start, t[1].end), (5, 9));
        assert_eq!((t[3].start, t[3].end), (10, 15));
    }

    #[test]
    fn empty_and_blank() {
        assert!(tokenize("").is_empty());
        assert!(tokenize(" \t\n").is_empty());
    }

    proptest! {
        #[test]
        fn offsets_reconstruct_text(s in "[ a-zA-Zé.,!?'\\-\t]{0,40}") {
            let chars: Vec<char> = s.chars().collect();
            let toks = tokenize(&s);
            let mut covered = vec![false; chars.len()];
            let mut last_end = 0;
            for t in &toks {
                prop_assert!(t.start >= last_end && t.end > t.start);
                let sub: String = chars[t.start..t.end].iter().collect();
                prop_assert_eq!(&sub, &t.text);
                for c in covered.iter_mut().take(t.end).skip(t.start) {
                    *c = true;
                }
                last_end = t.end;
            }
            for (c, cov) in chars.iter().zip(&covered) {
                prop_assert_eq!(!c.is_whitespace(), *cov);
            }
        }
    }
}
