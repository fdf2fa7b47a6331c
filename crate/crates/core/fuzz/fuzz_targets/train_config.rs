#![no_main]

use libfuzzer_sys::fuzz_target;
use opreason::training::TrainConfig;

fuzz_target!(|text: &str| {
    if let Ok(cfg) = TrainConfig::parse(text) {
        let again = TrainConfig::parse(&cfg.to_text()).expect("printed config parses");
        assert_eq!(again, cfg);
    }
});
