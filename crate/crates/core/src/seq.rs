//! Alphabets, tokenizers and the token sequence every edit acts on.
//!
//! Positions anywhere in this crate are token indices, never character
//! offsets. A SMILES bracket atom such as `[C@@H]` is one token.

use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// The twenty canonical amino acids, in alphabetical one-letter order.
pub const AMINO_ACIDS: [&str; 20] =
    ["A", "C", "D", "E", "F", "G", "H", "I", "K", "L", "M", "N", "P", "Q", "R", "S", "T", "V", "W", "Y"];

/// Placeholder for a noncanonical residue. Accepted on input, reported by [`lint_protein`].
pub const UNKNOWN_RESIDUE: &str = "X";

/// SMILES token pattern.
///
/// This is the widely used atom-level SMILES regex with one change: bracket
/// atoms may not contain whitespace, so no token ever does.
pub const SMILES_TOKEN_PATTERN: &str =
    r"(\[[^\]\s]+]|Br?|Cl?|N|O|S|P|F|I|b|c|n|o|s|p|\(|\)|\.|=|#|-|\+|\\|/|:|~|@|\?|>|\*|\$|%[0-9]{2}|[0-9])";

/// Tokens used when an operation has to draw a random SMILES token.
pub const SMILES_SAMPLING_TOKENS: [&str; 22] = [
    "C", "c", "N", "n", "O", "o", "S", "s", "F", "Cl", "Br", "I", "P", "(", ")", "=", "#", "1", "2", "[nH]", "[C@H]",
    "[C@@H]",
];

fn smiles_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(SMILES_TOKEN_PATTERN).expect("static SMILES pattern compiles"))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SeqError {
    #[error("invalid residue {ch:?} at position {position}")]
    InvalidResidue { position: usize, ch: char },
    #[error("SMILES tokenization gap at character {position}")]
    TokenizationGap { position: usize },
    #[error("token {token:?} is not a single {kind} token")]
    InvalidToken { kind: AlphabetKind, token: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlphabetKind {
    Protein,
    Smiles,
}

impl fmt::Display for AlphabetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AlphabetKind::Protein => f.write_str("protein"),
            AlphabetKind::Smiles => f.write_str("smiles"),
        }
    }
}

impl std::str::FromStr for AlphabetKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "protein" => Ok(AlphabetKind::Protein),
            "smiles" | "molecule" => Ok(AlphabetKind::Smiles),
            other => Err(format!("unknown alphabet {other:?} (expected protein or smiles)")),
        }
    }
}

/// An alphabet tag plus the token set used for validation and sampling.
///
/// The protein alphabet is closed (20 residues plus `X`). The SMILES alphabet
/// is open: any single token of [`SMILES_TOKEN_PATTERN`] is admissible, and
/// `tokens` only lists the sampling set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Alphabet {
    pub kind: AlphabetKind,
    pub tokens: Vec<String>,
}

impl Alphabet {
    pub fn protein() -> Self {
        let mut tokens: Vec<String> = AMINO_ACIDS.iter().map(|s| s.to_string()).collect();
        tokens.push(UNKNOWN_RESIDUE.to_string());
        Alphabet { kind: AlphabetKind::Protein, tokens }
    }

    pub fn smiles() -> Self {
        Alphabet { kind: AlphabetKind::Smiles, tokens: SMILES_SAMPLING_TOKENS.iter().map(|s| s.to_string()).collect() }
    }

    pub fn for_kind(kind: AlphabetKind) -> Self {
        match kind {
            AlphabetKind::Protein => Self::protein(),
            AlphabetKind::Smiles => Self::smiles(),
        }
    }

    /// Tokens random edits draw from. `X` is never sampled.
    pub fn sampling_tokens(&self) -> Vec<String> {
        self.tokens
            .iter()
            .filter(|t| t.as_str() != UNKNOWN_RESIDUE || self.kind != AlphabetKind::Protein)
            .cloned()
            .collect()
    }

    pub fn admits(&self, token: &str) -> bool {
        is_valid_token(self.kind, token)
    }
}

/// True when `token` is exactly one token of the given alphabet.
pub fn is_valid_token(kind: AlphabetKind, token: &str) -> bool {
    match kind {
        AlphabetKind::Protein => token == UNKNOWN_RESIDUE || AMINO_ACIDS.contains(&token),
        AlphabetKind::Smiles => smiles_regex().find(token).is_some_and(|m| m.start() == 0 && m.end() == token.len()),
    }
}

pub fn check_token(kind: AlphabetKind, token: &str) -> Result<(), SeqError> {
    if is_valid_token(kind, token) {
        Ok(())
    } else {
        Err(SeqError::InvalidToken { kind, token: token.to_string() })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    pub kind: AlphabetKind,
    pub tokens: Vec<String>,
}

impl TokenSequence {
    pub fn new(kind: AlphabetKind, tokens: Vec<String>) -> Self {
        TokenSequence { kind, tokens }
    }

    pub fn empty(kind: AlphabetKind) -> Self {
        TokenSequence { kind, tokens: Vec::new() }
    }

    /// Builds a sequence from string slices without validation. Mostly for tests.
    pub fn from_strs(kind: AlphabetKind, tokens: &[&str]) -> Self {
        TokenSequence { kind, tokens: tokens.iter().map(|s| s.to_string()).collect() }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl fmt::Display for TokenSequence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for t in &self.tokens {
            f.write_str(t)?;
        }
        Ok(())
    }
}

/// One uppercase token per residue. Case-insensitive; `X` is accepted.
pub fn tokenize_protein(raw: &str) -> Result<TokenSequence, SeqError> {
    let mut tokens = Vec::with_capacity(raw.len());
    for (position, ch) in raw.chars().enumerate() {
        let up = ch.to_ascii_uppercase();
        let s = up.to_string();
        if !ch.is_ascii() || !is_valid_token(AlphabetKind::Protein, &s) {
            return Err(SeqError::InvalidResidue { position, ch });
        }
        tokens.push(s);
    }
    Ok(TokenSequence { kind: AlphabetKind::Protein, tokens })
}

/// Splits SMILES with [`SMILES_TOKEN_PATTERN`]. Every character must be covered.
pub fn tokenize_smiles(raw: &str) -> Result<TokenSequence, SeqError> {
    let mut tokens = Vec::new();
    let mut cursor = 0;
    for m in smiles_regex().find_iter(raw) {
        if m.start() != cursor {
            return Err(SeqError::TokenizationGap { position: cursor });
        }
        tokens.push(m.as_str().to_string());
        cursor = m.end();
    }
    if cursor != raw.len() {
        return Err(SeqError::TokenizationGap { position: cursor });
    }
    Ok(TokenSequence { kind: AlphabetKind::Smiles, tokens })
}

pub fn tokenize(kind: AlphabetKind, raw: &str) -> Result<TokenSequence, SeqError> {
    match kind {
        AlphabetKind::Protein => tokenize_protein(raw),
        AlphabetKind::Smiles => tokenize_smiles(raw),
    }
}

pub fn detokenize(seq: &TokenSequence) -> String {
    seq.tokens.concat()
}

/// Positions holding the unknown residue `X`.
pub fn lint_protein(seq: &TokenSequence) -> Vec<usize> {
    if seq.kind != AlphabetKind::Protein {
        return Vec::new();
    }
    seq.tokens.iter().enumerate().filter(|(_, t)| t.as_str() == UNKNOWN_RESIDUE).map(|(i, _)| i).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn toks(seq: &TokenSequence) -> Vec<&str> {
        seq.tokens.iter().map(String::as_str).collect()
    }

    #[test]
    fn protein_examples() {
        assert_eq!(toks(&tokenize_protein("MKV").unwrap()), ["M", "K", "V"]);
        assert!(tokenize_protein("").unwrap().is_empty());
        let s = tokenize_protein("mkXv").unwrap();
        assert_eq!(toks(&s), ["M", "K", "X", "V"]);
        assert_eq!(detokenize(&s), "MKXV");
        assert_eq!(lint_protein(&s), vec![2]);
    }

    #[test]
    fn protein_rejects_non_residues() {
        assert_eq!(tokenize_protein("MKB"), Err(SeqError::InvalidResidue { position: 2, ch: 'B' }));
        assert!(matches!(tokenize_protein("MK V"), Err(SeqError::InvalidResidue { position: 2, .. })));
        assert!(tokenize_protein("Mé").is_err());
    }

    #[test]
    fn smiles_examples() {
        assert_eq!(toks(&tokenize_smiles("CCO").unwrap()), ["C", "C", "O"]);
        assert_eq!(toks(&tokenize_smiles("c1ccccc1Cl").unwrap()), ["c", "1", "c", "c", "c", "c", "c", "1", "Cl"]);
        assert_eq!(toks(&tokenize_smiles("[C@@H](CCO)").unwrap()), ["[C@@H]", "(", "C", "C", "O", ")"]);
        assert_eq!(toks(&tokenize_smiles("C%12CC%12").unwrap()), ["C", "%12", "C", "C", "%12"]);
        let t1 = "N[C@@H](CCO)c2cccs2";
        assert_eq!(detokenize(&tokenize_smiles(t1).unwrap()), t1);
    }

    #[test]
    fn smiles_gap_is_reported() {
        assert_eq!(tokenize_smiles("CC O"), Err(SeqError::TokenizationGap { position: 2 }));
        assert_eq!(tokenize_smiles("C[C H]"), Err(SeqError::TokenizationGap { position: 1 }));
        assert_eq!(tokenize_smiles("CCx"), Err(SeqError::TokenizationGap { position: 2 }));
    }

    #[test]
    fn detokenize_concatenates() {
        let s = TokenSequence::from_strs(AlphabetKind::Smiles, &["C", "Cl"]);
        assert_eq!(detokenize(&s), "CCl");
        assert_eq!(detokenize(&TokenSequence::empty(AlphabetKind::Smiles)), "");
        assert_eq!(detokenize(&tokenize_smiles("CC(=O)N").unwrap()), "CC(=O)N");
    }

    #[test]
    fn single_token_check() {
        assert!(is_valid_token(AlphabetKind::Smiles, "Cl"));
        assert!(is_valid_token(AlphabetKind::Smiles, "[nH]"));
        assert!(!is_valid_token(AlphabetKind::Smiles, "CC"));
        assert!(!is_valid_token(AlphabetKind::Smiles, ""));
        assert!(is_valid_token(AlphabetKind::Protein, "X"));
        assert!(!is_valid_token(AlphabetKind::Protein, "m"));
        assert_eq!(Alphabet::protein().sampling_tokens().len(), 20);
        for t in SMILES_SAMPLING_TOKENS {
            assert!(is_valid_token(AlphabetKind::Smiles, t), "{t}");
        }
    }

    proptest! {
        #[test]
        fn protein_round_trip(s in "[ACDEFGHIKLMNPQRSTVWYX]{0,40}") {
            prop_assert_eq!(detokenize(&tokenize_protein(&s).unwrap()), s);
        }

        #[test]
        fn smiles_round_trip(parts in proptest::collection::vec(
            proptest::sample::select(vec![
                "C", "c", "N", "n", "O", "Cl", "Br", "(", ")", "=", "#", "1", "2", "%10",
                "[C@@H]", "[nH]", "[O-]", "/", "\\", "@", "+", "-", ".", "B", "S", "s",
            ]), 1..40))
        {
            let s: String = parts.concat();
            let seq = tokenize_smiles(&s).unwrap();
            prop_assert_eq!(detokenize(&seq), s.clone());
            prop_assert!(seq.tokens.iter().all(|t| !t.is_empty() && !t.contains(char::is_whitespace)));
            // deterministic
            prop_assert_eq!(tokenize_smiles(&s).unwrap(), seq);
        }
    }
}
