pub mod error;
pub mod layers;
pub mod tensor;
pub mod graph;
pub mod gradcheck;
pub mod optim;
pub mod checkpoint;
pub mod preprocess;
pub mod analysis;
pub mod sim;
pub mod models;
pub mod harness;
