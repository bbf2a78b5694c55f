//! One module per subcommand.

pub mod analyze;
pub mod calibrate;
pub mod phase;
pub mod simulate;
