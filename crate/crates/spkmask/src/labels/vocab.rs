//! Token inventory: control tokens, character-level text tokens, speaker
//! tokens, and a 20 ms timestamp grid.
//!
//! Fixed id layout: PAD=0, SOT=1, EOT=2, then the text characters in the
//! order given, then `<s_1>..<s_K>`, then `<t_0>..<t_N>`.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::MASK_FRAME_S;

pub const PAD_TOKEN: &str = "<pad>";
pub const SOT_TOKEN: &str = "<sot>";
pub const EOT_TOKEN: &str = "<eot>";

/// What a token id means.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TokenClass {
    Pad,
    Sot,
    Eot,
    Text(char),
    /// 1-based speaker index.
    Speaker(usize),
    /// Timestamp grid index; time = index * 0.02 s.
    Timestamp(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    chars: Vec<char>,
    kmax: usize,
    num_timestamps: usize,
}

impl Vocabulary {
    /// Builds the vocabulary over the given characters (duplicates rejected),
    /// `kmax` speaker tokens, and timestamps covering `[0, max_s]`.
    pub fn new(chars: &str, kmax: usize, max_s: f64) -> Result<Self> {
        let chars: Vec<char> = chars.chars().collect();
        for (i, c) in chars.iter().enumerate() {
            if chars[..i].contains(c) {
                return Err(Error::Config(format!("duplicate vocabulary character {c:?}")));
            }
        }
        if chars.is_empty() {
            return Err(Error::Config("vocabulary needs at least one character".into()));
        }
        if kmax == 0 {
            return Err(Error::Config("vocabulary needs at least one speaker token".into()));
        }
        if !(max_s > 0.0) || !max_s.is_finite() {
            return Err(Error::Config(format!("max label time must be positive, got {max_s}")));
        }
        let num_timestamps = (max_s / MASK_FRAME_S).round() as usize + 1;
        Ok(Self { chars, kmax, num_timestamps })
    }

    /// Lowercase a-z plus space, 4 speakers, 30 s grid.
    pub fn default_desk() -> Self {
        Self::new(" abcdefghijklmnopqrstuvwxyz", 4, 30.0)
            .expect("built-in vocabulary parameters are valid")
    }

    pub fn size(&self) -> usize {
        3 + self.chars.len() + self.kmax + self.num_timestamps
    }

    pub fn kmax(&self) -> usize {
        self.kmax
    }

    /// Latest representable label time: the last grid point.
    pub fn max_s(&self) -> f64 {
        (self.num_timestamps - 1) as f64 * MASK_FRAME_S
    }

    pub fn num_timestamps(&self) -> usize {
        self.num_timestamps
    }

    pub fn pad_id(&self) -> u32 {
        0
    }

    pub fn sot_id(&self) -> u32 {
        1
    }

    pub fn eot_id(&self) -> u32 {
        2
    }

    fn char_base(&self) -> u32 {
        3
    }

    fn speaker_base(&self) -> u32 {
        3 + self.chars.len() as u32
    }

    fn timestamp_base(&self) -> u32 {
        self.speaker_base() + self.kmax as u32
    }

    /// Token id of `<s_k>` (1-based k).
    pub fn speaker_id(&self, k: usize) -> Result<u32> {
        if k == 0 || k > self.kmax {
            return Err(Error::Label(format!(
                "speaker index {k} outside 1..={}",
                self.kmax
            )));
        }
        Ok(self.speaker_base() + (k - 1) as u32)
    }

    /// Token id of `<t_index>`.
    pub fn timestamp_id(&self, index: usize) -> Result<u32> {
        if index >= self.num_timestamps {
            return Err(Error::Label(format!(
                "timestamp index {index} outside the {}-token grid",
                self.num_timestamps
            )));
        }
        Ok(self.timestamp_base() + index as u32)
    }

    pub fn char_id(&self, c: char) -> Result<u32> {
        self.chars
            .iter()
            .position(|&x| x == c)
            .map(|i| self.char_base() + i as u32)
            .ok_or_else(|| Error::Label(format!("character {c:?} is not in the vocabulary")))
    }

    /// Classifies an id; None when the id is outside the vocabulary.
    pub fn classify(&self, id: u32) -> Option<TokenClass> {
        if id == self.pad_id() {
            Some(TokenClass::Pad)
        } else if id == self.sot_id() {
            Some(TokenClass::Sot)
        } else if id == self.eot_id() {
            Some(TokenClass::Eot)
        } else if id < self.speaker_base() {
            Some(TokenClass::Text(self.chars[(id - self.char_base()) as usize]))
        } else if id < self.timestamp_base() {
            Some(TokenClass::Speaker((id - self.speaker_base()) as usize + 1))
        } else if id < self.size() as u32 {
            Some(TokenClass::Timestamp((id - self.timestamp_base()) as usize))
        } else {
            None
        }
    }

    /// The display string of a token id.
    pub fn token_string(&self, id: u32) -> Result<String> {
        match self.classify(id) {
            Some(TokenClass::Pad) => Ok(PAD_TOKEN.into()),
            Some(TokenClass::Sot) => Ok(SOT_TOKEN.into()),
            Some(TokenClass::Eot) => Ok(EOT_TOKEN.into()),
            Some(TokenClass::Text(c)) => Ok(c.to_string()),
            Some(TokenClass::Speaker(k)) => Ok(format!("<s_{k}>")),
            Some(TokenClass::Timestamp(i)) => Ok(format!("<t_{i}>")),
            None => Err(Error::Label(format!("token id {id} outside the vocabulary"))),
        }
    }

    /// Character-level encoding; errors on any character not in the set.
    pub fn encode_text(&self, text: &str) -> Result<Vec<u32>> {
        text.chars().map(|c| self.char_id(c)).collect()
    }

    /// Writes the vocabulary as a JSON object mapping token string -> id.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut map = BTreeMap::new();
        for id in 0..self.size() as u32 {
            map.insert(self.token_string(id)?, id);
        }
        let json = serde_json::to_string_pretty(&map)?;
        std::fs::write(path, json)?;
        Ok(())
    }

    /// Reads a vocabulary written by [`Vocabulary::save`], validating the id
    /// layout.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let map: BTreeMap<String, u32> = serde_json::from_str(&text)?;
        let mut chars_by_id: Vec<(u32, char)> = Vec::new();
        let mut kmax = 0usize;
        let mut num_timestamps = 0usize;
        for (token, &id) in &map {
            match token.as_str() {
                PAD_TOKEN | SOT_TOKEN | EOT_TOKEN => {}
                t if t.starts_with("<s_") && t.ends_with('>') => {
                    let k: usize = t[3..t.len() - 1]
                        .parse()
                        .map_err(|_| Error::Data(format!("bad speaker token '{t}'")))?;
                    kmax = kmax.max(k);
                }
                t if t.starts_with("<t_") && t.ends_with('>') => {
                    let i: usize = t[3..t.len() - 1]
                        .parse()
                        .map_err(|_| Error::Data(format!("bad timestamp token '{t}'")))?;
                    num_timestamps = num_timestamps.max(i + 1);
                }
                t => {
                    let mut it = t.chars();
                    match (it.next(), it.next()) {
                        (Some(c), None) => chars_by_id.push((id, c)),
                        _ => return Err(Error::Data(format!("unrecognized token '{t}'"))),
                    }
                }
            }
        }
        chars_by_id.sort_by_key(|&(id, _)| id);
        let chars: String = chars_by_id.iter().map(|&(_, c)| c).collect();
        if num_timestamps < 2 {
            return Err(Error::Data("vocabulary has no timestamp grid".into()));
        }
        let max_s = (num_timestamps - 1) as f64 * MASK_FRAME_S;
        let vocab = Self::new(&chars, kmax, max_s)?;
        if vocab.num_timestamps != num_timestamps {
            return Err(Error::Data(format!(
                "timestamp grid mismatch: file has {num_timestamps}, layout expects {}",
                vocab.num_timestamps
            )));
        }
        // The file must assign exactly the canonical ids.
        if map.len() != vocab.size() {
            return Err(Error::Data(format!(
                "vocabulary has {} tokens, layout expects {}",
                map.len(),
                vocab.size()
            )));
        }
        for (token, &id) in &map {
            let expected = vocab.token_string(id)?;
            if &expected != token {
                return Err(Error::Data(format!(
                    "token id {id} is '{token}' in the file but '{expected}' in the layout"
                )));
            }
        }
        Ok(vocab)
    }
}
