pub mod array;
pub mod bench;
pub mod covmodel;
pub mod error;
pub mod estimator;
pub mod linalg;
pub mod mle;
pub mod optim;
pub mod shapes;
pub mod sim;
pub mod stats;
