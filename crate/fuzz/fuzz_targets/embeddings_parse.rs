#![no_main]
use libfuzzer_sys::fuzz_target;
use pup::embed::EmbeddingTable;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(loaded) = EmbeddingTable::parse(s) {
            let t = loaded.table;
            assert!(t.dim() > 0);
            let mut out = Vec::new();
            t.write_to(&mut out).unwrap();
            let again = EmbeddingTable::parse(std::str::from_utf8(&out).unwrap()).unwrap().table;
            assert_eq!(again.len(), t.len());
        }
    }
});
