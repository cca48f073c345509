//! Multiply counters for instrumented kernels.
//!
//! Kernels that take a `MulCounter` call [`MulCounter::tick`] once per
//! scalar multiplication in their inner loops. [`NoCount`] compiles to
//! nothing, so the production path and the counted path share code.

pub trait MulCounter {
    fn tick(&mut self);
}

#[derive(Debug, Default, Clone, Copy)]
pub struct NoCount;

impl MulCounter for NoCount {
    #[inline(always)]
    fn tick(&mut self) {}
}

#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct Counting(pub u64);

impl MulCounter for Counting {
    #[inline(always)]
    fn tick(&mut self) {
        self.0 += 1;
    }
}
