pub mod baselines;
pub mod drivesim;
pub mod expert;
pub mod harness;
pub mod policy;
pub mod sac;
