#![no_main]

use capvae::checkpoint::{Checkpoint, Precision};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = Checkpoint::from_bytes(data) {
        let bytes = ckpt.to_bytes(Precision::F64);
        let again = Checkpoint::from_bytes(&bytes).expect("re-decode");
        assert_eq!(again.config, ckpt.config);
        assert_eq!(again.epochs_done, ckpt.epochs_done);
    }
});
