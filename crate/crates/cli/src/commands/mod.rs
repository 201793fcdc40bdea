pub mod demo;
pub mod eval;
pub mod generate;
pub mod predict;
pub mod train;
