#![no_main]

use libfuzzer_sys::fuzz_target;
use rog_core::config::RunConfig;

fuzz_target!(|text: &str| {
    if let Ok(cfg) = RunConfig::parse(text) {
        assert!(cfg.consensus_threshold() <= cfg.consensus_agents);
    }
});
