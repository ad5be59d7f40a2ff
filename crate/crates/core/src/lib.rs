pub mod metrics;
pub mod multinet;
pub mod objectives;
pub mod reference;
pub mod scene;
pub mod stagewise;
pub mod tensor;
