use std::cell::Cell;

use crate::{Error, Result};

thread_local! {
    static MULT_ADDS: Cell<u64> = const { Cell::new(0) };
    static OVERFLOWED: Cell<bool> = const { Cell::new(false) };
}

/// Thread-local count of scalar multiply-accumulates performed by the
/// forward kernels (matmul, convolutions, Haar transforms).
///
/// Backward passes are not counted. Each thread has its own counter, so
/// concurrent tests do not observe each other.
pub struct OpCounter;

impl OpCounter {
    pub fn reset() {
        MULT_ADDS.with(|c| c.set(0));
        OVERFLOWED.with(|c| c.set(false));
    }

    /// Current count. Saturates at `u64::MAX`; see [`OpCounter::checked`].
    pub fn get() -> u64 {
        MULT_ADDS.with(|c| c.get())
    }

    pub fn checked() -> Result<u64> {
        if OVERFLOWED.with(|c| c.get()) {
            Err(Error::CounterOverflow)
        } else {
            Ok(Self::get())
        }
    }

    pub(crate) fn add(n: u128) {
        MULT_ADDS.with(|c| {
            let next = u64::try_from(n)
                .ok()
                .and_then(|n| c.get().checked_add(n));
            match next {
                Some(v) => c.set(v),
                None => {
                    c.set(u64::MAX);
                    OVERFLOWED.with(|o| o.set(true));
                }
            }
        });
    }

    /// Runs `f` and returns its result with the number of mult-adds it
    /// performed. The outer count keeps accumulating.
    pub fn measure<R>(f: impl FnOnce() -> R) -> Result<(R, u64)> {
        let before = Self::checked()?;
        let out = f();
        let after = Self::checked()?;
        Ok((out, after - before))
    }
}
