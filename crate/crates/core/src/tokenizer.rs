//! Tokenizer abstraction plus two reference tokenizers: a byte-level one that
//! round-trips any string and a word-level one for readable fixtures.

use std::collections::HashMap;
use std::sync::RwLock;

pub type TokenId = u32;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TokenizerError {
    #[error("token id {0} is not in the vocabulary")]
    UnknownId(TokenId),
    #[error("decoded bytes are not valid UTF-8")]
    InvalidUtf8,
    #[error("{0}")]
    Other(String),
}

pub trait Tokenizer: Send + Sync {
    fn encode(&self, text: &str) -> Result<Vec<TokenId>, TokenizerError>;
    fn decode(&self, ids: &[TokenId]) -> Result<String, TokenizerError>;
    fn eos_id(&self) -> TokenId;
    /// Id reserved for a dedicated input/target separator token.
    fn sep_id(&self) -> TokenId;
    fn vocab_size(&self) -> usize;
}

/// One token per UTF-8 byte. Ids 0..=255 are bytes, 256 is EOS, 257 the
/// separator.
#[derive(Debug, Clone, Copy, Default)]
pub struct ByteTokenizer;

impl ByteTokenizer {
    pub const EOS: TokenId = 256;
    pub const SEP: TokenId = 257;
}

impl Tokenizer for ByteTokenizer {
    fn encode(&self, text: &str) -> Result<Vec<TokenId>, TokenizerError> {
        Ok(text.bytes().map(TokenId::from).collect())
    }

    fn decode(&self, ids: &[TokenId]) -> Result<String, TokenizerError> {
        let bytes = ids
            .iter()
            .filter(|&&id| id != Self::EOS && id != Self::SEP)
            .map(|&id| u8::try_from(id).map_err(|_| TokenizerError::UnknownId(id)))
            .collect::<Result<Vec<u8>, _>>()?;
        String::from_utf8(bytes).map_err(|_| TokenizerError::InvalidUtf8)
    }

    fn eos_id(&self) -> TokenId {
        Self::EOS
    }

    fn sep_id(&self) -> TokenId {
        Self::SEP
    }

    fn vocab_size(&self) -> usize {
        258
    }
}

/// Word-level tokenizer: each maximal run of non-whitespace characters is
/// one token and decoding joins tokens with a single space. Round-trips every
/// whitespace-normalized string (single spaces, no leading or trailing
/// whitespace). The vocabulary is open and assigned on first sight.
///
/// Ids 0 and 1 are EOS and the separator. The vocabulary sits behind a lock so
/// the tokenizer can be shared across threads; ids depend on first-seen order,
/// so callers that need reproducible ids encode in a fixed order or pre-seed
/// the vocabulary with [`WhitespaceTokenizer::with_vocab`].
#[derive(Debug, Default)]
pub struct WhitespaceTokenizer {
    vocab: RwLock<Vocab>,
}

#[derive(Debug, Default)]
struct Vocab {
    ids: HashMap<String, TokenId>,
    pieces: Vec<String>,
}

impl WhitespaceTokenizer {
    pub const EOS: TokenId = 0;
    pub const SEP: TokenId = 1;
    const RESERVED: usize = 2;

    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_vocab<I, S>(pieces: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let tok = Self::new();
        for piece in pieces {
            tok.intern(&piece.into());
        }
        tok
    }

    fn intern(&self, piece: &str) -> TokenId {
        if let Some(&id) = self.vocab.read().expect("vocab lock").ids.get(piece) {
            return id;
        }
        let mut vocab = self.vocab.write().expect("vocab lock");
        if let Some(&id) = vocab.ids.get(piece) {
            return id;
        }
        let id = (vocab.pieces.len() + Self::RESERVED) as TokenId;
        vocab.ids.insert(piece.to_string(), id);
        vocab.pieces.push(piece.to_string());
        id
    }

    pub fn id_of(&self, piece: &str) -> Option<TokenId> {
        self.vocab.read().expect("vocab lock").ids.get(piece).copied()
    }
}

impl Tokenizer for WhitespaceTokenizer {
    fn encode(&self, text: &str) -> Result<Vec<TokenId>, TokenizerError> {
        Ok(text.split_whitespace().map(|p| self.intern(p)).collect())
    }

    fn decode(&self, ids: &[TokenId]) -> Result<String, TokenizerError> {
        let vocab = self.vocab.read().expect("vocab lock");
        let mut words = Vec::with_capacity(ids.len());
        for &id in ids {
            if id == Self::EOS || id == Self::SEP {
                continue;
            }
            let piece = (id as usize)
                .checked_sub(Self::RESERVED)
                .and_then(|i| vocab.pieces.get(i))
                .ok_or(TokenizerError::UnknownId(id))?;
            words.push(piece.as_str());
        }
        Ok(words.join(" "))
    }

    fn eos_id(&self) -> TokenId {
        Self::EOS
    }

    fn sep_id(&self) -> TokenId {
        Self::SEP
    }

    fn vocab_size(&self) -> usize {
        self.vocab.read().expect("vocab lock").pieces.len() + Self::RESERVED
    }
}
