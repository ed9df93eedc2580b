//! Benchmark environments.

pub mod lightdark;
pub mod rocksample;

pub use lightdark::{LdState, LightDark, ACT_DOWN, ACT_STOP, ACT_UP};
pub use rocksample::{
    RockSample, RsObs, RsState, ACT_EAST, ACT_NORTH, ACT_SAMPLE, ACT_SENSE_BASE, ACT_SOUTH,
    ACT_WEST,
};
