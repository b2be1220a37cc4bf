//! Tokenization, vocabulary, TF-IDF truncation and skip-gram pre-training.

mod skipgram;
mod tfidf;
mod tokenizer;
mod vocab;

pub use skipgram::{skipgram_pretrain, SkipGram, SkipGramConfig};
pub use tfidf::{idf, tfidf_scores, truncate_by_tfidf, truncate_positions, Document};
pub use tokenizer::TokenizerMode;
pub use vocab::{build_vocab, Vocab, PAD, PAD_TOKEN, UNK, UNK_TOKEN};
