/// FNV-1a, used wherever a seed has to be derived from a string in a way that
/// is stable across builds and platforms.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

pub(crate) fn mix_seed(seed: u64, key: &str) -> u64 {
    let mut buf = seed.to_le_bytes().to_vec();
    buf.extend_from_slice(key.as_bytes());
    fnv1a(&buf)
}

/// Keep at most `limit` whitespace-separated words. Returns the text and
/// whether anything was cut.
pub(crate) fn truncate_words(text: &str, limit: usize) -> (String, bool) {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() <= limit {
        (words.join(" "), false)
    } else {
        (words[..limit].join(" "), true)
    }
}
