#![no_main]

use libfuzzer_sys::fuzz_target;
use rog_core::plan::compile;
use rog_core::query::parse_query;

fuzz_target!(|text: &str| {
    if let Ok(q) = parse_query(text) {
        let again = parse_query(&q.to_record().to_string()).expect("record round-trips");
        assert_eq!(again, q);
        compile(&q.ast).expect("typed queries compile");
    }
});
