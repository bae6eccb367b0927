//! Finite-difference gradient checking.

use serde::Serialize;

use super::{Graph, Scalar, Tensor};
use crate::error::{Error, Result};
use crate::params::ParamArray;

/// A scalar function of a parameter list with an analytic gradient.
pub trait Objective {
    fn value(&mut self, params: &[ParamArray]) -> Result<f64>;

    fn value_and_grad(&mut self, params: &[ParamArray]) -> Result<(f64, Vec<Vec<f64>>)>;
}

/// Adapts a graph-building closure into an [`Objective`].
pub struct GraphObjective<T, F> {
    build: F,
    _precision: std::marker::PhantomData<T>,
}

impl<T, F> GraphObjective<T, F>
where
    T: Scalar,
    F: FnMut(&mut Graph<T>, &[Tensor]) -> Result<Tensor>,
{
    pub fn new(build: F) -> Self {
        GraphObjective {
            build,
            _precision: std::marker::PhantomData,
        }
    }

    fn run(&mut self, params: &[ParamArray]) -> Result<(Graph<T>, Vec<Tensor>, Tensor)> {
        let mut g = Graph::new();
        let leaves = params
            .iter()
            .map(|p| g.param_f64(&p.data, &p.shape))
            .collect::<Result<Vec<_>>>()?;
        let root = (self.build)(&mut g, &leaves)?;
        Ok((g, leaves, root))
    }
}

impl<T, F> Objective for GraphObjective<T, F>
where
    T: Scalar,
    F: FnMut(&mut Graph<T>, &[Tensor]) -> Result<Tensor>,
{
    fn value(&mut self, params: &[ParamArray]) -> Result<f64> {
        let (g, _, root) = self.run(params)?;
        Ok(g.scalar(root).as_f64())
    }

    fn value_and_grad(&mut self, params: &[ParamArray]) -> Result<(f64, Vec<Vec<f64>>)> {
        let (g, leaves, root) = self.run(params)?;
        let grads = g.backward(root)?;
        let per_leaf = leaves.iter().map(|&l| grads.to_f64(&g, l)).collect();
        Ok((g.scalar(root).as_f64(), per_leaf))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub step: f64,
    pub tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            step: 1e-5,
            tolerance: 1e-4,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct GroupReport {
    pub name: String,
    pub size: usize,
    pub max_abs_error: f64,
    /// `max|a - n| / max(max|a|, max|n|, 1e-8)` over checked coordinates.
    pub max_rel_error: f64,
    /// Coordinates at a kink (e.g. a `min` tie), left out of the error.
    pub excluded: Vec<usize>,
}

#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    pub loss: f64,
    pub step: f64,
    pub tolerance: f64,
    pub groups: Vec<GroupReport>,
    pub worst_rel_error: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.worst_rel_error <= self.tolerance
    }

    pub fn excluded_count(&self) -> usize {
        self.groups.iter().map(|g| g.excluded.len()).sum()
    }

    pub fn worst_group(&self) -> Option<&GroupReport> {
        self.groups
            .iter()
            .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
    }
}

fn finite(loss: f64, name: &str, coord: usize) -> Result<f64> {
    if loss.is_finite() {
        Ok(loss)
    } else {
        Err(Error::Numeric {
            param: name.to_string(),
            detail: format!("loss is {loss} at coordinate {coord}"),
        })
    }
}

/// Compare analytic gradients against central differences, coordinate by
/// coordinate. A coordinate whose one-sided slopes disagree is treated as a
/// kink of a piecewise operator and excluded.
pub fn gradient_check<O: Objective>(
    objective: &mut O,
    names: &[String],
    params: &[ParamArray],
    config: GradCheckConfig,
) -> Result<GradCheckReport> {
    let h = config.step;
    if !(h > 0.0 && h <= 1e-2) {
        return Err(Error::contract(format!("finite-difference step {h} outside (0, 1e-2]")));
    }
    if names.len() != params.len() {
        return Err(Error::contract("one name per parameter array required"));
    }
    let (loss, analytic) = objective.value_and_grad(params)?;
    finite(loss, names.first().map_or("<none>", |s| s), 0)?;
    let kink_slack = (10.0 * h).max(1e-3);

    let mut work = params.to_vec();
    let mut groups = Vec::with_capacity(params.len());
    for (gi, name) in names.iter().enumerate() {
        let mut numeric = vec![0.0; work[gi].data.len()];
        let mut excluded = Vec::new();
        for k in 0..numeric.len() {
            let orig = work[gi].data[k];
            work[gi].data[k] = orig + h;
            let up = finite(objective.value(&work)?, name, k)?;
            work[gi].data[k] = orig - h;
            let down = finite(objective.value(&work)?, name, k)?;
            work[gi].data[k] = orig;
            let central = (up - down) / (2.0 * h);
            let right = (up - loss) / h;
            let left = (loss - down) / h;
            if (right - left).abs() > kink_slack * central.abs().max(1.0) {
                excluded.push(k);
            }
            numeric[k] = central;
        }
        let a = &analytic[gi];
        let mut max_abs = 0.0f64;
        let mut scale = 1e-8f64;
        for k in 0..numeric.len() {
            if excluded.binary_search(&k).is_ok() {
                continue;
            }
            max_abs = max_abs.max((a[k] - numeric[k]).abs());
            scale = scale.max(a[k].abs()).max(numeric[k].abs());
        }
        groups.push(GroupReport {
            name: name.clone(),
            size: numeric.len(),
            max_abs_error: max_abs,
            max_rel_error: max_abs / scale,
            excluded,
        });
    }
    let worst = groups.iter().map(|g| g.max_rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport {
        loss,
        step: h,
        tolerance: config.tolerance,
        groups,
        worst_rel_error: worst,
    })
}
