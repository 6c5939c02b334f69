//! Black-box sample source contracts.
//!
//! Sampling algorithms only ever see these traits. A source's true parameter
//! (bias, mean) is never exposed here; synthetic sources with readable true
//! parameters live in [`crate::verify`] and are handed to algorithms as trait
//! objects, so the black-box model is enforced by the type system.

use crate::rng::{Session, SourceId};
use crate::Result;

/// A coin: i.i.d. draws from `{heads, tails}` with a fixed unknown bias.
/// Every flip is metered on the source's ledger entry.
pub trait BitSource {
    fn id(&self) -> SourceId;
    fn flip(&self, s: &mut Session) -> Result<bool>;
}

/// A distribution supported on `[0,1]` with a fixed unknown mean.
/// Every draw is metered on the source's ledger entry.
pub trait RealSource {
    fn id(&self) -> SourceId;
    fn draw(&self, s: &mut Session) -> Result<f64>;
}

impl<T: BitSource + ?Sized> BitSource for &T {
    fn id(&self) -> SourceId {
        (**self).id()
    }
    fn flip(&self, s: &mut Session) -> Result<bool> {
        (**self).flip(s)
    }
}

impl<T: RealSource + ?Sized> RealSource for &T {
    fn id(&self) -> SourceId {
        (**self).id()
    }
    fn draw(&self, s: &mut Session) -> Result<f64> {
        (**self).draw(s)
    }
}
