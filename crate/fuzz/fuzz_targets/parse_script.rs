#![no_main]

use libfuzzer_sys::fuzz_target;
use rog_core::exec::parse_script;

fuzz_target!(|text: &str| {
    let _ = parse_script(text);
});
