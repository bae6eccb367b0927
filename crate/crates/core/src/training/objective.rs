use std::marker::PhantomData;

use crate::autodiff::{Objective, Scalar};
use crate::data::Batch;
use crate::error::Result;
use crate::model::{loss_and_grad_in, loss_value_in};
use crate::params::ParamArray;
use crate::sharing::ParamRegistry;

/// The full per-task loss: NLL, optional coverage, and the soft-sharing
/// penalty against the other tasks' current (fixed) parameters.
///
/// `T` is the precision of the model graph; the penalty is always f64.
pub struct TaskObjective<'a, T = f64> {
    pub registry: &'a ParamRegistry,
    pub task: usize,
    pub batch: &'a Batch,
    pub lambda: f64,
    pub coverage: bool,
    pub precision: PhantomData<T>,
}

impl<'a> TaskObjective<'a> {
    pub fn new(registry: &'a ParamRegistry, task: usize, batch: &'a Batch, lambda: f64, coverage: bool) -> Self {
        TaskObjective {
            registry,
            task,
            batch,
            lambda,
            coverage,
            precision: PhantomData,
        }
    }
}

impl<'a, T> TaskObjective<'a, T> {
    pub fn at<U: Scalar>(self) -> TaskObjective<'a, U> {
        TaskObjective {
            registry: self.registry,
            task: self.task,
            batch: self.batch,
            lambda: self.lambda,
            coverage: self.coverage,
            precision: PhantomData,
        }
    }
}

impl<T: Scalar> Objective for TaskObjective<'_, T> {
    fn value(&mut self, params: &[ParamArray]) -> Result<f64> {
        let refs: Vec<&ParamArray> = params.iter().collect();
        let cfg = self.registry.config(self.task);
        let l = loss_value_in::<T>(cfg, &refs, self.batch, self.lambda, self.coverage)?;
        let p = self.registry.soft_penalty_with(self.task, &refs);
        Ok(l.total + p.value)
    }

    fn value_and_grad(&mut self, params: &[ParamArray]) -> Result<(f64, Vec<Vec<f64>>)> {
        let refs: Vec<&ParamArray> = params.iter().collect();
        let cfg = self.registry.config(self.task);
        let (l, mut grads) = loss_and_grad_in::<T>(cfg, &refs, self.batch, self.lambda, self.coverage)?;
        let p = self.registry.soft_penalty_with(self.task, &refs);
        for (g, pg) in grads.iter_mut().zip(&p.grads) {
            if let Some(pg) = pg {
                g.iter_mut().zip(pg).for_each(|(a, b)| *a += b);
            }
        }
        Ok((l.total + p.value, grads))
    }
}
