pub mod annotations;
pub mod cli;
pub mod eval;
pub mod featstore;
pub mod pairgeom;
pub mod pipeline;
pub mod splits;
pub mod svm;
pub mod synthgen;
pub mod taxonomy;
