//! Signal processing, binaural scene simulation, pseudo-labelling and
//! evaluation metrics for auditory scene perception.

pub mod dsp;
pub mod grid;
pub mod io;
pub mod metrics;
pub mod pseudo;
pub mod rig;
pub mod scene;
