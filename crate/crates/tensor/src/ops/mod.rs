pub mod conv;
pub mod norm;
