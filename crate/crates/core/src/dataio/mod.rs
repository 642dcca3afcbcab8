//! Series ingestion, splitting, normalization and run configuration.

pub mod config;
pub mod series;
pub mod synthetic;

pub use config::{
    load_config, load_suite, parse_config, parse_suite, BaselineConfig, DatasetSource, ModelConfig, OptimizerConfig,
    RunConfig, Strategy, Suite, SuiteCell,
};
pub use series::{
    load_csv, parse_csv, split, write_csv, zscore_fit, NormalizationStats, RawSeries, SplitFractions, Splits,
};
pub use synthetic::{generate, SyntheticConfig};
