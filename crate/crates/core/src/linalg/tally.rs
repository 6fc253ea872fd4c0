/// Receives one call per multiply-accumulate performed by a kernel.
pub trait MacTally {
    fn mac(&mut self);
}

/// Tally that does nothing; the default for every kernel.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoTally;

impl MacTally for NoTally {
    #[inline(always)]
    fn mac(&mut self) {}
}

/// Tally that literally counts multiply-accumulates.
#[derive(Debug, Default, Clone, Copy, PartialEq, Eq)]
pub struct MacCounter {
    pub count: u64,
}

impl MacTally for MacCounter {
    #[inline(always)]
    fn mac(&mut self) {
        self.count += 1;
    }
}
