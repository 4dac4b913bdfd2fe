#![no_main]

use expclust::Dataset;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(d) = Dataset::from_bytes(data) {
        let again = Dataset::from_bytes(&d.to_bytes()).expect("own output decodes");
        assert_eq!(again.x, d.x);
        assert_eq!(again.y, d.y);
    }
});
