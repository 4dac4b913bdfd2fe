#![no_main]

use expclust::experiments::GridConfig;
use expclust::pipeline::PipelineConfig;
use libfuzzer_sys::fuzz_target;

// Configuration files reach the library through serde; validation must
// reject what deserialisation lets through without panicking.
fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = serde_json::from_slice::<PipelineConfig>(data) {
        let _ = cfg.validate();
        let _ = cfg.hash();
    }
    if let Ok(cfg) = serde_json::from_slice::<GridConfig>(data) {
        let _ = cfg.validate();
    }
});
