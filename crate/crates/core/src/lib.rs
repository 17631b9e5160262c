pub mod asymptotics;
pub mod blackscholes;
pub mod calibrate;
pub mod drivers;
pub mod error;
pub mod mc;
pub mod models;
pub mod pde;

pub use error::{Error, Result};
