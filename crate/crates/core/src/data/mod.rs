//! Measurement tables, windowed instances and masked batches.

mod instance;
mod series;
mod standardize;
mod synth;
mod window;

pub use instance::{batch, Instance, MaskedBatch, PAD_LOCATION};
pub use series::RawSeries;
pub use standardize::{standardize, Standardizer};
pub use synth::{daily_profiles, ring_diffusion, synth_diffusion, SynthConfig};
pub use window::{chronological_split, make_windows, SplitFractions, WindowSpec};

#[cfg(test)]
pub(crate) use instance::random_instance;
