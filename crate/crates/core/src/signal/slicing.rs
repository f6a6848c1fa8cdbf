use rand::Rng as _;

use super::IqSignal;
use crate::error::{CashError, Result};
use crate::rng::Rng;

fn check(signal: &IqSignal, l: usize) -> Result<()> {
    if l == 0 {
        return Err(CashError::InvalidParameter("slice length must be positive".into()));
    }
    if signal.len() < l {
        return Err(CashError::SignalTooShort { length: signal.len(), window: l });
    }
    Ok(())
}

/// A contiguous window of `l` samples starting uniformly in `[0, len - l]`.
pub fn random_slice(signal: &IqSignal, l: usize, rng: &mut Rng) -> Result<IqSignal> {
    check(signal, l)?;
    let start = rng.random_range(0..=signal.len() - l);
    Ok(signal.window(start, l))
}

pub fn center_start(length: usize, l: usize) -> usize {
    (length - l) / 2
}

/// The window of `l` samples starting at `⌊(len − l) / 2⌋`.
pub fn center_slice(signal: &IqSignal, l: usize) -> Result<IqSignal> {
    check(signal, l)?;
    Ok(signal.window(center_start(signal.len(), l), l))
}
