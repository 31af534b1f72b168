pub mod angle;
pub mod bench;
pub mod error;
pub mod evalstats;
pub mod graph;
pub mod nnet;
pub mod search;
pub mod shrink;
pub mod supernet;

mod entries;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/search-spaces.md")]
    pub struct SearchSpaces;
    #[doc = include_str!("../../../book/src/angle.md")]
    pub struct Angle;
    #[doc = include_str!("../../../book/src/shrinking.md")]
    pub struct Shrinking;
    #[doc = include_str!("../../../book/src/benchmark.md")]
    pub struct Benchmark;
    #[doc = include_str!("../../../book/src/evaluation.md")]
    pub struct Evaluation;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
}
