#![no_main]
use libfuzzer_sys::fuzz_target;
use pup::text::{build_vocabulary, decode_ids, tokenize, TokenId};

fuzz_target!(|data: &[u8]| {
    let corpus = vec![tokenize("how can i find a job at google ?"), tokenize("why do people like music ?")];
    let vocab = build_vocabulary(&corpus, 1, 100);
    let ids: Vec<TokenId> = data
        .chunks(2)
        .map(|c| u16::from_le_bytes([c[0], *c.get(1).unwrap_or(&0)]) as TokenId % 32)
        .collect();
    match decode_ids(&vocab, &ids) {
        Ok(toks) => assert!(toks.len() <= ids.len()),
        Err(_) => assert!(ids.iter().any(|&id| id as usize >= vocab.len())),
    }
});
