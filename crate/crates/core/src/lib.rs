//! Blue whale call detection in underwater recordings.
//!
//! Raw audio is conditioned window by window ([`dsp`]), expert labels are
//! repaired by similarity-based propagation ([`labelprop`]), and a 1D
//! convolutional network classifies the conditioned waveforms directly
//! ([`nn`]). [`detector`] ties these into dataset assembly, training and
//! evaluation; [`synth`] generates labelled corpora for testing.

pub mod audio_io;
pub mod cli;
pub mod config;
pub mod dsp;
pub mod par;
pub mod detector;
pub mod labelprop;
pub mod nn;
pub mod synth;
