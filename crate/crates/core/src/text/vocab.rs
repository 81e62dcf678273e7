//! Frequency-built vocabulary and whitespace tokenization.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{CoreError, Result};

pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const CLS_ID: usize = 2;
pub const RESERVED_TOKENS: usize = 3;

/// Token-to-id map with fixed reserved ids (PAD=0, UNK=1, CLS=2).
///
/// Building is deterministic: tokens are ranked by frequency descending with
/// ascending lexicographic tie-break, then assigned dense ids starting at 3.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    token_to_id: BTreeMap<String, usize>,
    tokens: Vec<String>,
}

impl Vocab {
    /// Build from a corpus of texts, keeping at most `max_size` ids in total
    /// (including the three reserved ids).
    pub fn build<'a, I>(corpus: I, max_size: usize) -> Result<Vocab>
    where
        I: IntoIterator<Item = &'a str>,
    {
        if max_size < 4 {
            return Err(CoreError::Config {
                field: "vocab_max_size".into(),
                reason: alloc::format!("must be >= 4 to hold any real token, got {max_size}"),
            });
        }
        let mut counts: BTreeMap<String, u64> = BTreeMap::new();
        for text in corpus {
            for tok in text.split_whitespace() {
                *counts.entry(tok.to_lowercase()).or_insert(0) += 1;
            }
        }
        let mut ranked: Vec<(String, u64)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(max_size - RESERVED_TOKENS);
        let tokens: Vec<String> = ranked.into_iter().map(|(t, _)| t).collect();
        Vocab::from_tokens(tokens)
    }

    /// Rebuild from a persisted token list (ids follow list order).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Vocab> {
        let mut token_to_id = BTreeMap::new();
        for (i, tok) in tokens.iter().enumerate() {
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(CoreError::Parse {
                    line: i + 1,
                    reason: alloc::format!("invalid vocab token `{tok}`"),
                });
            }
            if token_to_id.insert(tok.clone(), RESERVED_TOKENS + i).is_some() {
                return Err(CoreError::Parse {
                    line: i + 1,
                    reason: alloc::format!("duplicate vocab token `{tok}`"),
                });
            }
        }
        Ok(Vocab {
            token_to_id,
            tokens,
        })
    }

    /// Total id count, reserved ids included.
    pub fn size(&self) -> usize {
        RESERVED_TOKENS + self.tokens.len()
    }

    /// Id of a (already lowercased) token; unknown tokens map to UNK.
    pub fn id_of(&self, token: &str) -> usize {
        self.token_to_id.get(token).copied().unwrap_or(UNK_ID)
    }

    /// Non-reserved tokens in id order, for persistence.
    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

/// Token id sequence; always starts with CLS, PAD may only appear as a
/// suffix. `attn_len` counts the non-PAD prefix.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    ids: Vec<usize>,
    attn_len: usize,
}

impl TokenSequence {
    pub fn from_ids(ids: Vec<usize>) -> Result<TokenSequence> {
        if ids.first() != Some(&CLS_ID) {
            return Err(CoreError::Contract(
                "token sequence must begin with CLS".into(),
            ));
        }
        let attn_len = ids.iter().take_while(|&&id| id != PAD_ID).count();
        if ids[attn_len..].iter().any(|&id| id != PAD_ID) {
            return Err(CoreError::Contract(
                "PAD may only appear as a suffix".into(),
            ));
        }
        Ok(TokenSequence { ids, attn_len })
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        false // CLS is always present
    }

    /// Count of non-PAD positions.
    pub fn attn_len(&self) -> usize {
        self.attn_len
    }

    /// Copy extended with PAD up to `len`.
    pub fn padded_to(&self, len: usize) -> Result<TokenSequence> {
        if len < self.ids.len() {
            return Err(CoreError::Contract(alloc::format!(
                "cannot pad length {} down to {len}",
                self.ids.len()
            )));
        }
        let mut ids = self.ids.clone();
        ids.resize(len, PAD_ID);
        Ok(TokenSequence {
            ids,
            attn_len: self.attn_len,
        })
    }

    /// Join two sequences into one cross-encoder input:
    /// `[CLS] a-tokens b-tokens`, truncated to `max_len`.
    pub fn joined(a: &TokenSequence, b: &TokenSequence, max_len: usize) -> Result<TokenSequence> {
        check_max_len(max_len)?;
        let mut ids = vec![CLS_ID];
        for &id in a.ids[1..a.attn_len].iter().chain(&b.ids[1..b.attn_len]) {
            if ids.len() == max_len {
                break;
            }
            ids.push(id);
        }
        TokenSequence::from_ids(ids)
    }
}

fn check_max_len(max_len: usize) -> Result<()> {
    if max_len < 2 {
        return Err(CoreError::Config {
            field: "max_len".into(),
            reason: alloc::format!("must be >= 2, got {max_len}"),
        });
    }
    Ok(())
}

/// Lowercase, split on whitespace, prepend CLS, truncate to `max_len`.
/// Empty text yields the bare `[CLS]` sequence.
pub fn tokenize(vocab: &Vocab, text: &str, max_len: usize) -> Result<TokenSequence> {
    check_max_len(max_len)?;
    let mut ids = vec![CLS_ID];
    for tok in text.split_whitespace() {
        if ids.len() == max_len {
            break;
        }
        ids.push(vocab.id_of(&tok.to_lowercase()));
    }
    Ok(TokenSequence {
        attn_len: ids.len(),
        ids,
    })
}
