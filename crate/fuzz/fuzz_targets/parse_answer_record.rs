#![no_main]

use libfuzzer_sys::fuzz_target;
use rog_core::query::parse_answer_record;

fuzz_target!(|text: &str| {
    if let Ok(rec) = parse_answer_record(text) {
        assert!(rec.easy.is_disjoint(&rec.hard));
    }
});
