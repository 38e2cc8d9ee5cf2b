//! Multi-modal interaction module: text and frozen GC vectors encoded
//! together, the three pre-training tasks, and the bi-encoder and
//! cross-encoder relevance heads with listwise fine-tuning.

mod dataset;
mod finetune;
mod model;
mod pretrain;
mod tokenizer;

pub use dataset::{Entity, MatchDataset, MatchQuery};
pub use finetune::{finetune, listwise_loss, scheduled_lr, FinetuneConfig, FinetuneReport, GcUse, Head, ListExample, Scorer, BI_TEMPERATURE};
pub use model::{
    bi_score, cross_score, multimodal_forward, tower_vector, EncoderOutput, GcVectors, InteractionConfig,
    InteractionModel, PairExample, Role,
};
pub use pretrain::{
    pretrain_loss, pretrain_round_robin, pretrain_step, FrozenGeo, PretrainConfig, PretrainExample, PretrainTask,
    PretrainTraceRow,
};
pub use tokenizer::{split_words, Tokenizer, CLS, MASK, NUM_SPECIAL, PAD, SEP, UNK};

#[cfg(test)]
mod tests;
