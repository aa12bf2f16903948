#![no_main]

use capvae::oracle::DiscreteWorld;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|text: &str| {
    if let Ok(world) = DiscreteWorld::parse(text) {
        assert!(world.rate() >= 0.0);
        assert!(world.entropy() >= -1e-12);
        let again = DiscreteWorld::parse(&world.to_file_string()).expect("re-parse");
        assert_eq!(again, world);
    }
});
