//! Simulator for a self-homodyne QPSK optical link: the transmit laser's own
//! carrier travels on the orthogonal polarization and serves as the LO at a
//! coherent receiver, followed by an analog-style CMA butterfly equalizer.
//!
//! Pipeline: [`sigcore`] → [`txchain`] → [`fiberchan`] → [`rxfront`] →
//! [`cmaeq`] → [`linkmetrics`], orchestrated by [`scenario`].

pub mod cmaeq;
pub mod fiberchan;
pub mod linkmetrics;
pub mod rxfront;
pub mod scenario;
pub mod sigcore;
mod spectral;
pub mod txchain;

pub use num_complex::Complex64;
