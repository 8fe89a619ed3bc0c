#![no_main]

use imflow::Scenario;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(scenario) = Scenario::from_json(text) else {
        return;
    };
    let again = Scenario::from_json(&scenario.to_json()).expect("serialized scenario parses");
    assert_eq!(format!("{scenario:?}"), format!("{again:?}"));
    // validation must report problems, never panic
    let _ = scenario.validate();
});
