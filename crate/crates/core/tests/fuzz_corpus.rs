//! Replays the checked-in fuzz corpus through the decoders on stable
//! toolchains, with the same round-trip checks the fuzz targets make.

use std::path::PathBuf;

use expclust::experiments::GridConfig;
use expclust::pipeline::PipelineConfig;
use expclust::{Dataset, NetworkParams};

fn corpus(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut files: Vec<_> = std::fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    assert!(!files.is_empty(), "empty corpus {target}");
    files
        .into_iter()
        .map(|p| (p.display().to_string(), std::fs::read(&p).unwrap()))
        .collect()
}

#[test]
fn network_json_corpus() {
    let mut parsed = 0;
    for (name, bytes) in corpus("network_json") {
        let Ok(text) = std::str::from_utf8(&bytes) else {
            continue;
        };
        if let Ok(net) = NetworkParams::from_json(text) {
            let again = NetworkParams::from_json(&net.to_json()).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(again, net, "{name}");
            parsed += 1;
        }
    }
    assert!(parsed >= 1);
}

#[test]
fn dataset_corpora() {
    let mut parsed = 0;
    for (name, bytes) in corpus("dataset_bytes") {
        if let Ok(d) = Dataset::from_bytes(&bytes) {
            assert_eq!(d.to_bytes(), bytes, "{name}");
            parsed += 1;
        }
    }
    for (name, bytes) in corpus("dataset_json") {
        let Ok(text) = std::str::from_utf8(&bytes) else {
            continue;
        };
        if let Ok(d) = Dataset::from_json(text) {
            let again = Dataset::from_json(&d.to_json()).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!((again.x, again.y), (d.x, d.y), "{name}");
            parsed += 1;
        }
    }
    assert!(parsed >= 2);
}

#[test]
fn config_corpus() {
    for (_, bytes) in corpus("config_json") {
        if let Ok(cfg) = serde_json::from_slice::<PipelineConfig>(&bytes) {
            let _ = cfg.validate();
            let _ = cfg.hash();
        }
        if let Ok(cfg) = serde_json::from_slice::<GridConfig>(&bytes) {
            let _ = cfg.validate();
        }
    }
}
