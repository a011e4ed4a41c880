//! Text preparation: tokenization, letter trigrams, vocabulary construction
//! and fixed-length index encoding.

mod chi2;
mod tokenize;
mod trigram;
mod vocab;

pub use chi2::chi_square_scores;
pub use tokenize::tokenize_words;
pub use trigram::letter_trigrams;
pub use vocab::{build_vocabulary, encode, Vocabulary, VocabularyKind, OOV_INDEX, PAD_INDEX};

/// Fixed sequence lengths for every model input. Encoded outputs always have
/// exactly these lengths; longer inputs are truncated, shorter ones are
/// right-padded with index 0.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct SequenceSpec {
    pub subject: usize,
    pub content_train: usize,
    pub content_infer: usize,
    /// Sender address length in characters (before boundary markers); each
    /// character yields one trigram.
    pub address: usize,
    pub name: usize,
    pub salutation: usize,
}

impl Default for SequenceSpec {
    fn default() -> Self {
        Self {
            subject: 30,
            content_train: 1000,
            content_infer: 2000,
            address: 1000,
            name: 30,
            salutation: 10,
        }
    }
}

impl SequenceSpec {
    pub fn validate(&self) -> crate::Result<()> {
        let all = [
            self.subject,
            self.content_train,
            self.content_infer,
            self.address,
            self.name,
            self.salutation,
        ];
        if all.iter().any(|&l| l == 0) {
            return Err(crate::Error::InvalidConfig(
                "sequence lengths must be positive".into(),
            ));
        }
        Ok(())
    }
}
