//! Zero-shot scoring, AUC, token interpretability ranking, and the few-shot
//! downstream harness.

mod auc;
mod classifier;
mod protocol;
mod split;
mod zero_shot;

pub use auc::auc;
pub use classifier::{standardize, train_classifier, ClassifierConfig, ClassifierKind};
pub use protocol::{run_protocol, FewShotConfig, MetricsReport};
pub use split::{few_shot_split, Split};
pub use zero_shot::{rank_tokens_by_auc, zero_shot_predict, zero_shot_scores, RawVocabSet, TokenRef, VocabSet};
