#![no_main]

use libfuzzer_sys::fuzz_target;
use opreason::eval::{em_f1, normalize};

fuzz_target!(|text: &str| {
    let once = normalize(text).text;
    assert_eq!(normalize(&once).text, once);
    let pred: Vec<&str> = text.split('|').collect();
    let gold: Vec<&str> = text.split('|').rev().collect();
    let (em, f1) = em_f1(&pred, &gold);
    assert!((0.0..=1.0).contains(&em) && (0.0..=1.0).contains(&f1));
});
