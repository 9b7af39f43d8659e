pub mod eval;
pub mod gen;
pub mod gradcheck;
pub mod plot;
pub mod train;
