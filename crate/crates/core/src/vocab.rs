//! The 29-symbol CTC vocabulary: blank, `a`–`z`, space, apostrophe.

use crate::error::{Error, Result};

pub const BLANK: usize = 0;
pub const VOCAB_SIZE: usize = 29;
/// Non-blank symbols.
pub const NUM_CHARS: usize = 28;

/// Position of `c` among the 28 characters (`a`=0 … `z`=25, space=26, `'`=27).
pub fn char_index(c: char) -> Option<usize> {
    match c {
        'a'..='z' => Some(c as usize - 'a' as usize),
        ' ' => Some(26),
        '\'' => Some(27),
        _ => None,
    }
}

pub fn index_char(i: usize) -> char {
    match i {
        0..=25 => (b'a' + i as u8) as char,
        26 => ' ',
        27 => '\'',
        _ => panic!("character index {i} out of range"),
    }
}

/// Vocabulary id (blank = 0) of a transcript character.
pub fn symbol_id(c: char) -> Option<usize> {
    char_index(c).map(|i| i + 1)
}

pub fn symbol_char(id: usize) -> Option<char> {
    (id != BLANK && id < VOCAB_SIZE).then(|| index_char(id - 1))
}

/// Encodes a (lowercase) transcript as vocabulary ids.
pub fn encode(text: &str) -> Result<Vec<usize>> {
    text.chars()
        .map(|c| symbol_id(c).ok_or_else(|| Error::IllegalChar { ch: c, text: text.to_string() }))
        .collect()
}

pub fn decode_ids(ids: &[usize]) -> String {
    ids.iter().filter_map(|&i| symbol_char(i)).collect()
}

/// Lowercases and checks every character against the vocabulary.
pub fn normalize_transcript(text: &str) -> Result<String> {
    let lower = text.to_lowercase();
    encode(&lower)?;
    Ok(lower)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout() {
        assert_eq!(symbol_id('a'), Some(1));
        assert_eq!(symbol_id('z'), Some(26));
        assert_eq!(symbol_id(' '), Some(27));
        assert_eq!(symbol_id('\''), Some(28));
        assert_eq!(symbol_char(BLANK), None);
        for id in 1..VOCAB_SIZE {
            assert_eq!(symbol_id(symbol_char(id).unwrap()), Some(id));
        }
    }

    #[test]
    fn rejects_foreign_characters() {
        assert!(matches!(encode("ab1"), Err(Error::IllegalChar { ch: '1', .. })));
        assert_eq!(normalize_transcript("Hello There").unwrap(), "hello there");
    }
}
