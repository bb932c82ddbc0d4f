//! Structural enforcement of sequential statistical rigor.
//!
//! * [`protocol`]: pure online-FDR protocols (LORD++, fixed threshold).
//! * [`session`]: a transactional testing session: every p-value that
//!   comes back is accounted for, and a protocol violation halts the
//!   session with its state rolled back to the last valid step.
//! * [`scaffold`]: generation and audit of execution harnesses that keep
//!   validation data away from untrusted experiment code.
//! * [`executor`]: runs a harness as a child process and parses the
//!   p-value it reports.
//! * [`simulation`]: Monte Carlo FDR / power study of the protocols.
//! * [`cli`]: the `rigor` command line.

pub mod cli;
pub mod executor;
pub mod protocol;
pub mod scaffold;
pub mod session;
pub mod simulation;
