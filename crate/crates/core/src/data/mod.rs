//! Pose, text and gloss data: vocabularies, pose files, synthetic corpora
//! and batching.

mod batch;
mod corpus;
mod pose;
mod synthetic;
mod vocab;

pub use batch::{make_batches, pad_sequences, Batch};
pub use corpus::{
    gloss_vocabulary, load_corpus, source_vocabulary, word_vocabulary, write_corpus, CorpusSample, DatasetAdapter,
    ManifestDataset, SourceKind, MANIFEST_FILE, SPEC_FILE,
};
pub use pose::{
    decode_pose, encode_pose, joint_names, load_pose, rest_pose, save_pose, skeleton_edges, PoseFormat, PoseSequence,
    DIMS, FRAME_WIDTH, JOINTS, LEFT_HAND_START, RIGHT_HAND_START,
};
pub use synthetic::{generate_synthetic_corpus, SyntheticSpec};
pub use vocab::{tokenize, VocabKind, Vocabulary};
