mod conv;
pub(crate) mod elementwise;
mod matmul;
pub(crate) mod norm;
mod pool;
mod reduce;
mod shape;
