//! One module per subcommand.

pub mod ablate;
pub mod eval;
pub mod gen;
pub mod track;
pub mod train;
