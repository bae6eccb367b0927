use crate::error::{Error, Result};

/// Round-robin task order from integer mixing ratios: `ratios[0]` steps of
/// task 0, then `ratios[1]` of task 1, and so on, forever.
#[derive(Clone, Debug)]
pub struct MixingScheduler {
    cycle: Vec<usize>,
    pos: usize,
}

impl MixingScheduler {
    pub fn new(ratios: &[u32]) -> Result<Self> {
        let cycle: Vec<usize> = ratios
            .iter()
            .enumerate()
            .flat_map(|(task, &n)| std::iter::repeat_n(task, n as usize))
            .collect();
        if cycle.is_empty() {
            return Err(Error::contract("mixing ratios are all zero"));
        }
        Ok(MixingScheduler { cycle, pos: 0 })
    }

    pub fn pattern(&self) -> &[usize] {
        &self.cycle
    }

    /// Steps emitted so far.
    pub fn position(&self) -> usize {
        self.pos
    }

    /// Resume at an absolute step count.
    pub fn seek(&mut self, pos: usize) {
        self.pos = pos;
    }
}

impl Iterator for MixingScheduler {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        let t = self.cycle[self.pos % self.cycle.len()];
        self.pos += 1;
        Some(t)
    }
}
