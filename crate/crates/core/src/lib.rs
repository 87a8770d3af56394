pub mod error;
pub mod kinv;
pub mod krylov;
pub mod matrix;
pub mod nkp;
pub mod operator;
pub mod oracle;
pub mod problems;
pub mod sylvester;
pub mod verify;

#[cfg(test)]
mod testing;

pub use error::{Error, Result, Side};
