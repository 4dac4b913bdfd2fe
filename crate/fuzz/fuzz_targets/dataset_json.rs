#![no_main]

use expclust::Dataset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(d) = Dataset::from_json(text) {
        let again = Dataset::from_json(&d.to_json()).expect("own output parses");
        assert_eq!(again.x, d.x);
        assert_eq!(again.y, d.y);
    }
});
