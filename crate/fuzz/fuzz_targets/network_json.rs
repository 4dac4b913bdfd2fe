#![no_main]

use expclust::NetworkParams;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(net) = NetworkParams::from_json(text) {
        let again = NetworkParams::from_json(&net.to_json()).expect("own output parses");
        assert_eq!(again.dims(), net.dims());
    }
});
