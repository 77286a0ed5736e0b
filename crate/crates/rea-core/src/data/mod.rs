//! Transaction datasets: ingestion, target definition, scaling, splits and
//! synthetic generation.

mod csvio;
mod record;
mod scaler;
mod split;
mod synth;
mod target;

pub use csvio::{load_csv, write_csv, CsvSchema};
pub use record::{Dataset, PropertyRecord};
pub use scaler::ScalerParams;
pub use split::{random_split, temporal_split, Partition, SplitMode, SplitSpec};
pub use synth::{generate_synthetic, SynthConfig, SynthLatents};
pub use target::{TargetKind, TargetTransform};

/// Days-per-year constant used wherever calendar spans are converted to
/// fractional years (offset cutoffs, time-delta features).
pub const DAYS_PER_YEAR: f64 = 365.25;
