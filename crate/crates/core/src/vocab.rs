//! Token inventories and the sequence types built on top of them.

use std::collections::HashMap;
use std::fmt;
use std::ops::Deref;

use crate::error::{Error, Result};

pub type TokenId = usize;

/// Reserved id of the CTC blank symbol.
pub const BLANK_ID: TokenId = 0;
/// Reserved id of the `[MASK]` symbol.
pub const MASK_ID: TokenId = 1;

pub const BLANK_SYMBOL: &str = "<blank>";
pub const MASK_SYMBOL: &str = "<mask>";

/// Ordered token inventory. Ids 0 and 1 are always blank and mask.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from the regular tokens; the two special symbols
    /// are prepended.
    pub fn from_regular<I, S>(regular: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens = vec![BLANK_SYMBOL.to_string(), MASK_SYMBOL.to_string()];
        tokens.extend(regular.into_iter().map(Into::into));
        Self::from_tokens(tokens)
    }

    /// Builds a vocabulary from a full token list whose first two entries
    /// must be the blank and mask symbols.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[BLANK_ID] != BLANK_SYMBOL || tokens[MASK_ID] != MASK_SYMBOL {
            return Err(Error::InvalidVocabulary(format!(
                "first two entries must be {BLANK_SYMBOL:?} and {MASK_SYMBOL:?}"
            )));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (id, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.contains('\n') {
                return Err(Error::InvalidVocabulary(format!("bad token at line {id}")));
            }
            if index.insert(tok.clone(), id).is_some() {
                return Err(Error::InvalidVocabulary(format!("duplicate token {tok:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// Number of ids including the two specials.
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    /// Number of regular (non-special) tokens.
    pub fn regular_count(&self) -> usize {
        self.tokens.len() - 2
    }

    pub fn blank_id(&self) -> TokenId {
        BLANK_ID
    }

    pub fn mask_id(&self) -> TokenId {
        MASK_ID
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Ids of the regular tokens, in order.
    pub fn regular_ids(&self) -> std::ops::Range<TokenId> {
        2..self.tokens.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// One token per line, line 0 `<blank>`, line 1 `<mask>`.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for tok in &self.tokens {
            out.push_str(tok);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let tokens: Vec<String> = text
            .lines()
            .map(|l| l.trim_end_matches('\r').to_string())
            .filter(|l| !l.is_empty())
            .collect();
        Self::from_tokens(tokens)
    }

    /// Checks that every id in `ids` is in range.
    pub fn check_ids(&self, ids: &[TokenId]) -> Result<()> {
        match ids.iter().find(|&&id| id >= self.size()) {
            Some(id) => Err(Error::InvalidSequence(format!(
                "token id {id} out of range for vocabulary of size {}",
                self.size()
            ))),
            None => Ok(()),
        }
    }

    /// Renders ids as space-separated token strings; masked ids render as `[MASK]`.
    pub fn render(&self, ids: &[TokenId]) -> String {
        ids.iter()
            .map(|&id| match id {
                MASK_ID => "[MASK]".to_string(),
                _ => self.token(id).unwrap_or("<unk>").to_string(),
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// An output token sequence `W`: no blanks, no masks.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct TokenSequence(Vec<TokenId>);

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>) -> Result<Self> {
        if let Some(pos) = ids.iter().position(|&id| id == BLANK_ID || id == MASK_ID) {
            return Err(Error::InvalidSequence(format!(
                "special id {} at position {pos}",
                ids[pos]
            )));
        }
        Ok(Self(ids))
    }

    pub fn empty() -> Self {
        Self(Vec::new())
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn into_ids(self) -> Vec<TokenId> {
        self.0
    }

    /// Number of adjacent equal pairs; each needs a separating blank in CTC.
    pub fn repeat_count(&self) -> usize {
        self.0.windows(2).filter(|w| w[0] == w[1]).count()
    }

    /// Shortest frame count admitting a CTC alignment.
    pub fn min_ctc_frames(&self) -> usize {
        self.0.len() + self.repeat_count()
    }
}

impl Deref for TokenSequence {
    type Target = [TokenId];
    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|id| id.to_string()).collect();
        write!(f, "({})", parts.join(","))
    }
}

/// A frame-level CTC alignment `A`: tokens and blanks, never masks.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Alignment(Vec<TokenId>);

impl Alignment {
    pub fn new(ids: Vec<TokenId>) -> Result<Self> {
        if let Some(pos) = ids.iter().position(|&id| id == MASK_ID) {
            return Err(Error::InvalidAlignment(format!("mask id at frame {pos}")));
        }
        Ok(Self(ids))
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.0
    }

    pub fn frames(&self) -> usize {
        self.0.len()
    }
}

impl Deref for Alignment {
    type Target = [TokenId];
    fn deref(&self) -> &[TokenId] {
        &self.0
    }
}

/// An RNN-T alignment `Z` of length `T + N` holding exactly `T` blanks.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct RnntAlignment {
    ids: Vec<TokenId>,
    frames: usize,
}

impl RnntAlignment {
    pub fn new(ids: Vec<TokenId>, frames: usize) -> Result<Self> {
        if ids.contains(&MASK_ID) {
            return Err(Error::InvalidAlignment("mask id in RNN-T alignment".into()));
        }
        let blanks = ids.iter().filter(|&&id| id == BLANK_ID).count();
        if blanks != frames {
            return Err(Error::InvalidAlignment(format!(
                "RNN-T alignment has {blanks} blanks but {frames} frames"
            )));
        }
        Ok(Self { ids, frames })
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn frames(&self) -> usize {
        self.frames
    }
}

/// CTC collapsing function: merge adjacent repeats, then drop blanks.
pub fn collapse_ctc(a: &Alignment) -> TokenSequence {
    let mut out = Vec::new();
    let mut prev = None;
    for &id in a.ids() {
        if Some(id) != prev && id != BLANK_ID {
            out.push(id);
        }
        prev = Some(id);
    }
    TokenSequence(out)
}

/// Convenience wrapper over raw ids; rejects masks.
pub fn collapse_ctc_ids(ids: &[TokenId]) -> Result<TokenSequence> {
    Alignment::new(ids.to_vec()).map(|a| collapse_ctc(&a))
}

/// RNN-T collapsing function: drop blanks, keep repeats.
pub fn collapse_rnnt(z: &RnntAlignment) -> TokenSequence {
    TokenSequence(z.ids().iter().copied().filter(|&id| id != BLANK_ID).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    const A: TokenId = 2;
    const B: TokenId = 3;
    const E: TokenId = BLANK_ID;

    #[test]
    fn collapse_ctc_examples() {
        let a = Alignment::new(vec![A, A, E, A, B, B]).unwrap();
        assert_eq!(collapse_ctc(&a).ids(), &[A, A, B]);
        let a = Alignment::new(vec![E, E, E]).unwrap();
        assert!(collapse_ctc(&a).is_empty());
        let a = Alignment::new(vec![A, E, A]).unwrap();
        assert_eq!(collapse_ctc(&a).ids(), &[A, A]);
        let a = Alignment::new(vec![]).unwrap();
        assert!(collapse_ctc(&a).is_empty());
    }

    #[test]
    fn collapse_ctc_rejects_mask() {
        assert!(matches!(
            collapse_ctc_ids(&[A, MASK_ID]),
            Err(Error::InvalidAlignment(_))
        ));
    }

    #[test]
    fn collapse_rnnt_examples() {
        let z = RnntAlignment::new(vec![E, A, A, E], 2).unwrap();
        assert_eq!(collapse_rnnt(&z).ids(), &[A, A]);
        let z = RnntAlignment::new(vec![E, E], 2).unwrap();
        assert!(collapse_rnnt(&z).is_empty());
        let z = RnntAlignment::new(vec![A, E, B, E], 2).unwrap();
        assert_eq!(collapse_rnnt(&z).ids(), &[A, B]);
    }

    #[test]
    fn rnnt_alignment_blank_count_checked() {
        assert!(matches!(
            RnntAlignment::new(vec![E, A], 2),
            Err(Error::InvalidAlignment(_))
        ));
    }

    #[test]
    fn token_sequence_rejects_specials() {
        assert!(TokenSequence::new(vec![A, BLANK_ID]).is_err());
        assert!(TokenSequence::new(vec![MASK_ID]).is_err());
        let w = TokenSequence::new(vec![A, A, B, B, B]).unwrap();
        assert_eq!(w.repeat_count(), 3);
        assert_eq!(w.min_ctc_frames(), 8);
    }

    #[test]
    fn vocabulary_text_round_trip() {
        let v = Vocabulary::from_regular(["a", "b", "c"]).unwrap();
        assert_eq!(v.size(), 5);
        assert_eq!(v.id("a"), Some(2));
        let text = v.to_text();
        assert!(text.starts_with("<blank>\n<mask>\n"));
        assert_eq!(Vocabulary::from_text(&text).unwrap(), v);
    }

    #[test]
    fn vocabulary_rejects_bad_inputs() {
        assert!(Vocabulary::from_regular(["a", "a"]).is_err());
        assert!(Vocabulary::from_text("a\nb\n").is_err());
        let v = Vocabulary::from_regular(["a"]).unwrap();
        assert!(v.check_ids(&[0, 1, 2]).is_ok());
        assert!(v.check_ids(&[3]).is_err());
    }
}
