//! Classifiers defined by co-authored class descriptions.
//!
//! A user states a purpose and a set of classes, then annotates a handful
//! of examples while a language model asks clarifying questions. After each
//! example the model rewrites the description of the labeled class. The
//! finished classifier prompts the model with those descriptions only.

pub mod classifier;
pub mod corpus;
pub mod evalharness;
pub mod llm;
pub mod promptkit;
pub mod store;
pub mod summarizer;
pub mod textbudget;
pub mod trainer;
