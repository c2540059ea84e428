pub mod activation;
pub mod conv;
pub mod dynamic;
pub mod elementwise;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod pool;
pub mod reduce;
pub mod resize;
pub mod shape;
