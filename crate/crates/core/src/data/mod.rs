//! Corpora, vocabularies, minibatches and the synthetic generator.

mod batch;
mod corpus;
mod embeddings;
mod synth;
mod vocab;

pub use batch::{batch_examples, batch_order, encode_example, make_batches, Batch};
pub use corpus::{
    check_bio, parse_columns, parse_corpus, parse_jsonl, parse_str, write_columns, write_corpus,
    write_jsonl, CorpusFormat, Example,
};
pub use embeddings::{load_embeddings, parse_embeddings, EmbeddingOverlay};
pub use synth::{split_counts, split_default, synth_generate, SlotDef, SynthCorpus, SynthSpec, Template};
pub use vocab::{Vocab, PAD, PAD_TOKEN, UNK, UNK_TOKEN};
