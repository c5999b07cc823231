#![no_main]

use libfuzzer_sys::fuzz_target;
use rog_core::evidence::parse_evidence;

fuzz_target!(|text: &str| {
    let _ = parse_evidence(text);
});
