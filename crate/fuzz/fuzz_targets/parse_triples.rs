#![no_main]

use libfuzzer_sys::fuzz_target;
use rog_core::kg::{parse_triple_lines, GraphSplit};

fuzz_target!(|text: &str| {
    if let Ok(raw) = parse_triple_lines(text, "train") {
        if let Ok(split) = GraphSplit::from_raw(&raw, &[], &[], false) {
            assert!(split.full.triple_count() <= raw.len());
        }
    }
});
