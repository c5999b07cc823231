#![no_main]

use libfuzzer_sys::fuzz_target;
use rog_core::evidence::PromptTemplate;

fuzz_target!(|text: &str| {
    if let Ok(t) = PromptTemplate::parse(text) {
        assert_eq!(t.hash().len(), 64);
    }
});
