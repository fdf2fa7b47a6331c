#![no_main]

use libfuzzer_sys::fuzz_target;
use opreason::rules::compile_ruleset;

fuzz_target!(|text: &str| {
    // Split so part of the input serves as the rule file and part as a question.
    let (rules, question) = text.split_once('\u{0}').unwrap_or((text, "How many yards was the longest field goal?"));
    if let Ok(rs) = compile_ruleset(rules) {
        let ops = rs.match_question(question);
        assert_eq!(ops, rs.match_question(&question.to_uppercase()));
    }
});
