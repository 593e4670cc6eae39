//! Narrative stream: tokenization, vocabulary, TF-IDF features and the
//! transformer encoder.

pub mod encoder;
pub mod tfidf;
pub mod tokenize;
pub mod train;
pub mod vocab;

pub use encoder::{softmax2, EncoderConfig, EncoderWeights, TextEncoderModel};
pub use tfidf::{fit_tfidf, SparseVector, TfidfVectorizer};
pub use tokenize::tokenize;
pub use train::{keyword_corpus, train_encoder, EncoderDataset};
pub use vocab::{Vocabulary, CLS, PAD, UNK};
