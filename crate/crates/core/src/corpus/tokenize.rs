use serde::{Deserialize, Serialize};

/// A token with byte offsets into the text it was cut from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Token {
    pub text: String,
    pub char_start: usize,
    pub char_end: usize,
}

impl Token {
    pub fn is_punctuation(&self) -> bool {
        !self.text.chars().any(char::is_alphanumeric)
    }
}

/// Splits on whitespace and around every punctuation character.
///
/// Alphanumeric runs stay whole (`3rd`, `1990s`). A run that starts with a
/// digit may absorb `,` followed by exactly three digits (`1,000`) and a single
/// `.` followed by a digit (`3.5`); such a grouped/fractional number stops
/// before any letter. Hyphens are always separate tokens, so `53-yard`
/// becomes `53`, `-`, `yard`.
pub fn tokenize(text: &str) -> Vec<Token> {
    let chars: Vec<(usize, char)> = text.char_indices().collect();
    let end_of = |idx: usize| chars.get(idx).map_or(text.len(), |&(b, _)| b);
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let (start, c) = chars[i];
        if c.is_whitespace() {
            i += 1;
            continue;
        }
        if !c.is_alphanumeric() {
            tokens.push(Token {
                text: c.to_string(),
                char_start: start,
                char_end: end_of(i + 1),
            });
            i += 1;
            continue;
        }
        let numeric_start = c.is_ascii_digit();
        let mut pure_number = numeric_start;
        let mut punctuated = false;
        let mut seen_point = false;
        let mut j = i + 1;
        while j < chars.len() {
            let ch = chars[j].1;
            let prev_digit = chars[j - 1].1.is_ascii_digit();
            if ch.is_alphanumeric() {
                if punctuated && !ch.is_ascii_digit() {
                    break;
                }
                if !ch.is_ascii_digit() {
                    pure_number = false;
                }
                j += 1;
                continue;
            }
            if pure_number && prev_digit && ch == ',' && !seen_point && comma_group_at(&chars, j) {
                punctuated = true;
                j += 4;
                continue;
            }
            if pure_number && prev_digit && ch == '.' && !seen_point && digit_at(&chars, j + 1) {
                punctuated = true;
                seen_point = true;
                j += 2;
                continue;
            }
            break;
        }
        let end = end_of(j);
        tokens.push(Token {
            text: text[start..end].to_string(),
            char_start: start,
            char_end: end,
        });
        i = j;
    }
    tokens
}

fn digit_at(chars: &[(usize, char)], idx: usize) -> bool {
    chars.get(idx).is_some_and(|&(_, c)| c.is_ascii_digit())
}

/// `,ddd` at `idx` not followed by a further digit.
fn comma_group_at(chars: &[(usize, char)], idx: usize) -> bool {
    (1..=3).all(|k| digit_at(chars, idx + k)) && !digit_at(chars, idx + 4)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn texts(s: &str) -> Vec<String> {
        tokenize(s).into_iter().map(|t| t.text).collect()
    }

    #[test]
    fn splits_words_and_punctuation() {
        assert_eq!(
            texts("Who threw the longest pass?"),
            ["Who", "threw", "the", "longest", "pass", "?"]
        );
        assert!(texts("").is_empty());
        assert!(texts("   \n\t").is_empty());
    }

    #[test]
    fn hyphenated_numbers_stand_alone() {
        let t = texts("a 53-yard and a 24-yard field goal");
        assert_eq!(t, ["a", "53", "-", "yard", "and", "a", "24", "-", "yard", "field", "goal"]);
        assert_eq!(texts("(1963-1974,"), ["(", "1963", "-", "1974", ","]);
    }

    #[test]
    fn grouped_and_decimal_numbers() {
        assert_eq!(texts("1,000 people"), ["1,000", "people"]);
        assert_eq!(texts("3.5 percent."), ["3.5", "percent", "."]);
        assert_eq!(texts("1,00 and 1.2.3"), ["1", ",", "00", "and", "1.2", ".", "3"]);
        assert_eq!(texts("12,345,678"), ["12,345,678"]);
        assert_eq!(texts("3rd 1990s"), ["3rd", "1990s"]);
        assert_eq!(texts("3.5kg"), ["3.5", "kg"]);
    }

    #[test]
    fn offsets_round_trip_with_multibyte() {
        let s = "Zoë scored 2 touchdowns — “late”.";
        for t in tokenize(s) {
            assert_eq!(&s[t.char_start..t.char_end], t.text);
        }
    }
}
