pub mod audit;
pub mod eval;
pub mod mixture;
pub mod pack;
pub mod scorers;
pub mod shard;
pub mod template;
pub mod tokenizer;
