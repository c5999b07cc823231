#![no_main]

use std::collections::BTreeSet;

use libfuzzer_sys::fuzz_target;
use rog_core::evidence::parse_answer;

fuzz_target!(|text: &str| {
    let parsed = parse_answer(text);
    let unique: BTreeSet<_> = parsed.entities.iter().collect();
    assert_eq!(unique.len(), parsed.entities.len());
    assert!(!(parsed.explicit_none && !parsed.entities.is_empty()));
});
