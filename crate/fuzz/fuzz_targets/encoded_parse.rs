#![no_main]
use libfuzzer_sys::fuzz_target;
use pup::text::{parse_encoded, EOS, SOS};

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(seqs) = parse_encoded(s, 40) {
            for seq in seqs {
                assert_eq!(seq.ids().first(), Some(&SOS));
                assert_eq!(seq.ids().last(), Some(&EOS));
                assert!(seq.ids().iter().all(|&id| (id as usize) < 40));
            }
        }
    }
});
