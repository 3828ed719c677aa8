//! Label-free smart word substitution: masked-LM candidate pools, a
//! likelihood scorer with a persistent cache, significance statistics,
//! ranking losses and a fine-tuning harness.

/// Library version.
pub const VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod candidates;
pub mod data;
pub mod eval;
pub mod llm;
pub mod losses;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod scorer;
pub mod sentence;
pub mod stats;
pub mod subst;
pub mod toy;
pub mod train;
pub mod types;
pub mod vocab;

pub use candidates::{build_candidate_pool, sample_token_sites, EligibilityFilter, SamplingPlan};
pub use sentence::{apply_substitution, tokenize, Sentence, TokenSite};
pub use types::{Action, AnnotatedToken, CandidatePool, ScoreRecord, SubstitutionDecision};
pub use vocab::Vocab;
