//! Numerical machinery for summability of divergent power series in
//! Carleman ultraholomorphic classes defined by strongly regular sequences.
//!
//! The crate covers the full pipeline: sequence regularity certification
//! and the flatness gauge `h_M` ([`seqcore`]), construction of the flat
//! kernel `e_M` ([`kernel`]), its moment sequence ([`moments`]), formal
//! Borel/Laplace transforms on truncated series ([`formal`]), the
//! truncated-Laplace extension operator ([`extend`]), and directional
//! M-Laplace summation ([`summation`]).

pub mod cli;
pub mod extend;
pub mod formal;
pub mod kernel;
pub mod moments;
pub mod quad;
pub mod seqcore;
pub mod summation;

pub use num_complex::Complex64;
