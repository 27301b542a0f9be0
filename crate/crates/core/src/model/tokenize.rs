/// Byte-level tokenization: one token per byte, vocabulary of 256.
pub fn tokenize(text: &str) -> Vec<usize> {
    tokenize_bytes(text.as_bytes())
}

pub fn tokenize_bytes(bytes: &[u8]) -> Vec<usize> {
    bytes.iter().map(|&b| b as usize).collect()
}

/// Inverse of [`tokenize_bytes`]. Ids above 255 are not bytes and are rejected.
pub fn detokenize(tokens: &[usize]) -> Option<Vec<u8>> {
    tokens.iter().map(|&t| u8::try_from(t).ok()).collect()
}

/// Splits a token stream into consecutive chunks of at most `len` tokens.
/// A trailing chunk shorter than 2 tokens is dropped.
pub fn chunk(tokens: &[usize], len: usize) -> Vec<Vec<usize>> {
    tokens
        .chunks(len.max(2))
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Windows of `len` tokens starting every `stride` tokens; the last window
/// may be shorter but keeps at least 2 tokens.
pub fn windows(tokens: &[usize], len: usize, stride: usize) -> Vec<Vec<usize>> {
    let (len, stride) = (len.max(2), stride.max(1));
    (0..tokens.len())
        .step_by(stride)
        .map(|s| tokens[s..(s + len).min(tokens.len())].to_vec())
        .filter(|w| w.len() >= 2)
        .collect()
}
