#![no_main]
use libfuzzer_sys::fuzz_target;
use pup::vae::Vae;

fuzz_target!(|data: &[u8]| {
    if let Ok(model) = Vae::from_bytes(data, None) {
        assert_eq!(model.to_bytes(), data);
    }
});
