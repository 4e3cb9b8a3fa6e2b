//! File formats, external backends, end-to-end pipelines and the command
//! line for uncertainty-aware knob tuning. Algorithms live in
//! [`knobcf_core`].

pub mod cli;
pub mod config;
pub mod external;
pub mod formats;
pub mod pipeline;
