//! Letter-trigram extraction for sender addresses.

/// Boundary marker prepended/appended before windowing.
const BOUNDARY: char = '#';

/// Lowercases `address`, truncates it to `max_chars` characters, wraps it in
/// boundary markers and emits every consecutive 3-character window in order.
/// A non-empty input of n characters yields exactly n trigrams.
pub fn letter_trigrams(address: &str, max_chars: usize) -> Vec<String> {
    let chars: Vec<char> = address
        .to_lowercase()
        .chars()
        .take(max_chars)
        .collect();
    if chars.is_empty() {
        return Vec::new();
    }
    let mut padded = Vec::with_capacity(chars.len() + 2);
    padded.push(BOUNDARY);
    padded.extend(chars);
    padded.push(BOUNDARY);
    padded
        .windows(3)
        .map(|w| w.iter().collect::<String>())
        .collect()
}
