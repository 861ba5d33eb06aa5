pub mod estimators;
pub mod factors;
pub mod imu;
pub mod manifold;
pub mod metrics;
pub mod optimizer;
pub mod sim;
