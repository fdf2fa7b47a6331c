#![no_main]

use libfuzzer_sys::fuzz_target;
use opreason::corpus::{extract_numbers, tokenize, Decimal, Segment};

fuzz_target!(|text: &str| {
    let tokens = tokenize(text);
    for t in &tokens {
        assert_eq!(text.get(t.char_start..t.char_end), Some(t.text.as_str()));
    }
    for m in extract_numbers(&tokens, Segment::Passage) {
        assert!(m.token_index < tokens.len());
        let _ = m.value.to_string();
    }
    if let Some(d) = Decimal::parse(text) {
        assert_eq!(Decimal::parse(&d.to_string()), Some(d));
    }
});
