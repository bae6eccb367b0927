//! Hard and soft parameter sharing across tasks, keyed by layer tag.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{param_specs, ModelConfig, ModelParams, ParamSpec, Tag};
use crate::params::ParamArray;

/// Soft-penalty distances below this have their gradient defined as zero.
pub const PLAIN_NORM_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShareMode {
    Hard,
    Soft,
    Private,
}

impl ShareMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "hard" => Some(ShareMode::Hard),
            "soft" => Some(ShareMode::Soft),
            "private" => Some(ShareMode::Private),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PenaltyForm {
    /// `γ‖θ − ψ‖²`, smooth everywhere.
    #[default]
    Squared,
    /// `γ‖θ − ψ‖`, the unsquared norm.
    Plain,
}

/// Named topologies. Tags not listed are private.
pub const PRESETS: &[(&str, &[Tag], ShareMode)] = &[
    ("final", &[Tag::E2, Tag::Attn, Tag::D1], ShareMode::Soft),
    ("final-hard", &[Tag::E2, Tag::Attn, Tag::D1], ShareMode::Hard),
    ("d1-d2", &[Tag::D1, Tag::D2], ShareMode::Soft),
    ("e1-d2", &[Tag::E1, Tag::D2], ShareMode::Soft),
    ("e1-attn-d2", &[Tag::E1, Tag::Attn, Tag::D2], ShareMode::Soft),
    ("none", &[], ShareMode::Private),
];

/// Default soft-sharing coefficient for two tasks.
pub const DEFAULT_GAMMA: f64 = 5e-5;

/// Soft-sharing coefficient for three or more tasks.
pub const THREE_WAY_GAMMA: f64 = 1e-5;

/// The default coefficient for a run with `tasks` tasks.
pub fn default_gamma(tasks: usize) -> f64 {
    if tasks >= 3 {
        THREE_WAY_GAMMA
    } else {
        DEFAULT_GAMMA
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SharingPlan {
    pub modes: BTreeMap<Tag, ShareMode>,
    pub gamma: f64,
    #[serde(default)]
    pub form: PenaltyForm,
}

impl SharingPlan {
    pub fn all_private() -> Self {
        SharingPlan {
            modes: Tag::ALL.iter().map(|&t| (t, ShareMode::Private)).collect(),
            gamma: 0.0,
            form: PenaltyForm::Squared,
        }
    }

    pub fn preset(name: &str, gamma: f64) -> Result<Self> {
        let (_, tags, mode) = PRESETS
            .iter()
            .find(|(n, _, _)| n.eq_ignore_ascii_case(name))
            .ok_or_else(|| {
                let known: Vec<&str> = PRESETS.iter().map(|p| p.0).collect();
                Error::config("sharing.preset", format!("unknown preset {name:?}; known: {known:?}"))
            })?;
        let mut plan = SharingPlan::all_private();
        for t in *tags {
            plan.modes.insert(*t, *mode);
        }
        plan.gamma = gamma;
        plan.validate()?;
        Ok(plan)
    }

    pub fn with_form(mut self, form: PenaltyForm) -> Self {
        self.form = form;
        self
    }

    pub fn with_mode(mut self, tag: Tag, mode: ShareMode) -> Self {
        self.modes.insert(tag, mode);
        self
    }

    pub fn mode(&self, tag: Tag) -> ShareMode {
        self.modes.get(&tag).copied().unwrap_or(ShareMode::Private)
    }

    pub fn tags_with(&self, mode: ShareMode) -> Vec<Tag> {
        Tag::ALL.into_iter().filter(|&t| self.mode(t) == mode).collect()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma >= 0.0) || !self.gamma.is_finite() {
            return Err(Error::config("sharing.gamma", format!("must be finite and >= 0, got {}", self.gamma)));
        }
        for t in Tag::ALL {
            if !self.modes.contains_key(&t) {
                return Err(Error::config("sharing.modes", format!("tag {t} has no mode")));
            }
        }
        Ok(())
    }
}

impl fmt::Display for SharingPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let soft = self.tags_with(ShareMode::Soft);
        let hard = self.tags_with(ShareMode::Hard);
        write!(f, "soft={soft:?} hard={hard:?} gamma={} form={:?}", self.gamma, self.form)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct TaskEntry {
    name: String,
    config: ModelConfig,
    /// Slot id per parameter, in `param_specs` order.
    slots: Vec<usize>,
}

/// Soft penalty value and its gradient for each of the task's arrays
/// (`None` where the array is not soft-shared).
#[derive(Clone, Debug)]
pub struct Penalty {
    pub value: f64,
    pub grads: Vec<Option<Vec<f64>>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DistanceEntry {
    pub tag: Tag,
    pub task_a: String,
    pub task_b: String,
    pub distance: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct DistanceReport {
    pub entries: Vec<DistanceEntry>,
}

impl DistanceReport {
    pub fn total(&self) -> f64 {
        self.entries.iter().map(|e| e.distance).sum()
    }

    pub fn for_tag(&self, tag: Tag) -> impl Iterator<Item = &DistanceEntry> {
        self.entries.iter().filter(move |e| e.tag == tag)
    }
}

/// Owns every physical parameter array. Hard-shared parameters occupy a
/// single slot referenced by all tasks.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ParamRegistry {
    plan: SharingPlan,
    slots: Vec<ParamArray>,
    tasks: Vec<TaskEntry>,
}

impl ParamRegistry {
    pub fn new(plan: SharingPlan) -> Result<Self> {
        plan.validate()?;
        Ok(ParamRegistry {
            plan,
            slots: Vec::new(),
            tasks: Vec::new(),
        })
    }

    pub fn plan(&self) -> &SharingPlan {
        &self.plan
    }

    /// Change γ (e.g. to zero it for a baseline) without touching storage.
    pub fn set_gamma(&mut self, gamma: f64) -> Result<()> {
        let mut p = self.plan.clone();
        p.gamma = gamma;
        p.validate()?;
        self.plan = p;
        Ok(())
    }

    /// Add a task. Hard-shared arrays alias the first task's slot and keep
    /// its values; everything else is copied from `init`.
    pub fn register_task(&mut self, name: &str, init: ModelParams) -> Result<usize> {
        if self.task_index(name).is_some() {
            return Err(Error::contract(format!("task {name:?} registered twice")));
        }
        init.validate()?;
        let specs = init.specs();
        let first = self.tasks.first().map(|t| (param_specs(&t.config), t.slots.clone()));
        let mut slots = Vec::with_capacity(specs.len());
        for (i, (spec, array)) in specs.iter().zip(init.arrays).enumerate() {
            let mode = self.plan.mode(spec.tag);
            if let (Some((fspecs, fslots)), ShareMode::Hard | ShareMode::Soft) = (&first, mode) {
                let other = &fspecs[i];
                if other.shape != spec.shape {
                    return Err(Error::contract(format!(
                        "shape conflict on shared tag {} ({}): {:?} vs {:?}",
                        spec.tag, spec.name, other.shape, spec.shape
                    )));
                }
                if mode == ShareMode::Hard {
                    slots.push(fslots[i]);
                    continue;
                }
            }
            self.slots.push(array);
            slots.push(self.slots.len() - 1);
        }
        self.tasks.push(TaskEntry {
            name: name.to_string(),
            config: init.config,
            slots,
        });
        Ok(self.tasks.len() - 1)
    }

    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    pub fn task_index(&self, name: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t.name == name)
    }

    pub fn task_name(&self, task: usize) -> &str {
        &self.tasks[task].name
    }

    pub fn task_names(&self) -> Vec<String> {
        self.tasks.iter().map(|t| t.name.clone()).collect()
    }

    pub fn config(&self, task: usize) -> &ModelConfig {
        &self.tasks[task].config
    }

    pub fn specs(&self, task: usize) -> Vec<ParamSpec> {
        param_specs(&self.tasks[task].config)
    }

    pub fn slot_ids(&self, task: usize) -> &[usize] {
        &self.tasks[task].slots
    }

    pub fn slot(&self, id: usize) -> &ParamArray {
        &self.slots[id]
    }

    pub fn slot_mut(&mut self, id: usize) -> &mut ParamArray {
        &mut self.slots[id]
    }

    pub fn slot_count(&self) -> usize {
        self.slots.len()
    }

    /// The task's arrays in `param_specs` order.
    pub fn arrays(&self, task: usize) -> Vec<&ParamArray> {
        self.tasks[task].slots.iter().map(|&s| &self.slots[s]).collect()
    }

    pub fn snapshot(&self, task: usize) -> ModelParams {
        ModelParams {
            config: self.tasks[task].config.clone(),
            arrays: self.arrays(task).into_iter().cloned().collect(),
        }
    }

    /// Overwrite the task's arrays (aliased slots included).
    pub fn load_task(&mut self, task: usize, params: &ModelParams) -> Result<()> {
        if params.config != self.tasks[task].config {
            return Err(Error::contract(format!(
                "model config mismatch loading task {:?}",
                self.tasks[task].name
            )));
        }
        params.validate()?;
        for (&s, a) in self.tasks[task].slots.iter().zip(&params.arrays) {
            self.slots[s] = a.clone();
        }
        Ok(())
    }

    /// Number of distinct physical copies of a tag's parameters.
    pub fn copy_count(&self, tag: Tag) -> usize {
        let mut seen = std::collections::BTreeSet::new();
        for t in &self.tasks {
            let ids: Vec<usize> = param_specs(&t.config)
                .iter()
                .zip(&t.slots)
                .filter(|(s, _)| s.tag == tag)
                .map(|(_, &id)| id)
                .collect();
            seen.insert(ids);
        }
        seen.len()
    }

    fn tag_indices(&self, task: usize, tag: Tag) -> Vec<usize> {
        self.specs(task)
            .iter()
            .enumerate()
            .filter(|(_, s)| s.tag == tag)
            .map(|(i, _)| i)
            .collect()
    }

    /// Squared Euclidean distance between two tasks' copies of one tag.
    fn squared_distance(&self, a: usize, b: usize, tag: Tag) -> f64 {
        let mut d = 0.0;
        for i in self.tag_indices(a, tag) {
            let x = &self.slots[self.tasks[a].slots[i]].data;
            let y = &self.slots[self.tasks[b].slots[i]].data;
            d += x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
        }
        d
    }

    /// Penalty paid by `task` against every other task's soft-shared copies,
    /// which are held fixed.
    pub fn soft_penalty(&self, task: usize) -> Penalty {
        let own = self.arrays(task);
        self.soft_penalty_with(task, &own)
    }

    /// As [`soft_penalty`](Self::soft_penalty) but reading the updating
    /// task's arrays from `own` instead of the registry.
    pub fn soft_penalty_with(&self, task: usize, own: &[&ParamArray]) -> Penalty {
        let specs = self.specs(task);
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; specs.len()];
        let mut value = 0.0;
        let gamma = self.plan.gamma;
        for tag in self.plan.tags_with(ShareMode::Soft) {
            let idx = self.tag_indices(task, tag);
            for &i in &idx {
                grads[i] = Some(vec![0.0; specs[i].shape.iter().product()]);
            }
            for other in (0..self.tasks.len()).filter(|&o| o != task) {
                let mut sq = 0.0;
                for &i in &idx {
                    let y = &self.slots[self.tasks[other].slots[i]].data;
                    sq += own[i].data.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>();
                }
                let (term, coef) = match self.plan.form {
                    PenaltyForm::Squared => (gamma * sq, 2.0 * gamma),
                    PenaltyForm::Plain => {
                        let d = sq.sqrt();
                        let coef = if d < PLAIN_NORM_FLOOR { 0.0 } else { gamma / d };
                        (gamma * d, coef)
                    }
                };
                value += term;
                if coef == 0.0 {
                    continue;
                }
                for &i in &idx {
                    let y = &self.slots[self.tasks[other].slots[i]].data;
                    let gi = grads[i].as_mut().expect("allocated above");
                    for ((gk, p), q) in gi.iter_mut().zip(&own[i].data).zip(y) {
                        *gk += coef * (p - q);
                    }
                }
            }
        }
        Penalty { value, grads }
    }

    /// Euclidean distance per shared tag and task pair. Private tags are
    /// omitted; hard tags are always 0.
    pub fn distance_report(&self) -> DistanceReport {
        let mut entries = Vec::new();
        for tag in Tag::ALL {
            if self.plan.mode(tag) == ShareMode::Private {
                continue;
            }
            for a in 0..self.tasks.len() {
                for b in a + 1..self.tasks.len() {
                    entries.push(DistanceEntry {
                        tag,
                        task_a: self.tasks[a].name.clone(),
                        task_b: self.tasks[b].name.clone(),
                        distance: self.squared_distance(a, b, tag).sqrt(),
                    });
                }
            }
        }
        DistanceReport { entries }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(v: usize) -> ModelConfig {
        ModelConfig {
            hidden: 4,
            emb_dim: 3,
            ..ModelConfig::desk(v)
        }
    }

    fn registry(plan: SharingPlan, n: usize) -> ParamRegistry {
        let mut r = ParamRegistry::new(plan).unwrap();
        for i in 0..n {
            let name = format!("t{i}");
            r.register_task(&name, ModelParams::init(&cfg(10 + i), 1, &name)).unwrap();
        }
        r
    }

    fn e2_slot(r: &ParamRegistry, task: usize) -> usize {
        let i = r.specs(task).iter().position(|s| s.name == "enc2_fw_w").unwrap();
        r.slot_ids(task)[i]
    }

    #[test]
    fn soft_copies_are_distinct() {
        let r = registry(SharingPlan::preset("final", 1e-3).unwrap(), 2);
        assert_ne!(e2_slot(&r, 0), e2_slot(&r, 1));
        assert_eq!(r.slot(e2_slot(&r, 0)).shape, r.slot(e2_slot(&r, 1)).shape);
    }

    #[test]
    fn hard_tags_alias() {
        let plan = SharingPlan::preset("final", 1e-3).unwrap().with_mode(Tag::E2, ShareMode::Hard);
        let r = registry(plan, 2);
        assert_eq!(e2_slot(&r, 0), e2_slot(&r, 1));
        assert_eq!(r.copy_count(Tag::E2), 1);
        assert!(r.distance_report().for_tag(Tag::E2).all(|e| e.distance == 0.0));
    }

    #[test]
    fn three_tasks_three_copies() {
        let r = registry(SharingPlan::preset("final", 1e-3).unwrap(), 3);
        for t in [Tag::E2, Tag::Attn, Tag::D1] {
            assert_eq!(r.copy_count(t), 3);
        }
    }

    #[test]
    fn hard_shape_conflict() {
        let plan = SharingPlan::preset("final-hard", 0.0).unwrap();
        let mut r = ParamRegistry::new(plan).unwrap();
        r.register_task("a", ModelParams::init(&cfg(10), 1, "a")).unwrap();
        let other = ModelConfig { hidden: 5, ..cfg(10) };
        let err = r.register_task("b", ModelParams::init(&other, 1, "b")).unwrap_err();
        assert!(err.to_string().contains("E2"), "{err}");
    }

    #[test]
    fn penalty_example() {
        // two tasks whose soft arrays differ by exactly one unit coordinate
        let plan = SharingPlan::preset("final", 1.0).unwrap();
        let mut r = ParamRegistry::new(plan).unwrap();
        let mut a = ModelParams::zeros(&cfg(10));
        let b = ModelParams::zeros(&cfg(10));
        a.get_mut("attn_b").unwrap().data[0] = 1.0;
        r.register_task("a", a).unwrap();
        r.register_task("b", b).unwrap();
        let p = r.soft_penalty(0);
        assert_eq!(p.value, 1.0);
        let i = r.specs(0).iter().position(|s| s.name == "attn_b").unwrap();
        let g = p.grads[i].as_ref().unwrap();
        assert_eq!(g[0], 2.0);
        assert!(g[1..].iter().all(|&x| x == 0.0));
        // symmetric in aggregate
        assert_eq!(p.value + r.soft_penalty(1).value, 2.0);
    }

    #[test]
    fn equal_copies_give_zero() {
        let plan = SharingPlan::preset("final", 1.0).unwrap().with_form(PenaltyForm::Plain);
        let mut r = ParamRegistry::new(plan).unwrap();
        let a = ModelParams::init(&cfg(10), 1, "x");
        r.register_task("a", a.clone()).unwrap();
        r.register_task("b", a).unwrap();
        let p = r.soft_penalty(0);
        assert_eq!(p.value, 0.0);
        assert!(p.grads.iter().flatten().flatten().all(|&x| x == 0.0));
        assert_eq!(r.distance_report().total(), 0.0);
    }

    #[test]
    fn negative_gamma_rejected() {
        assert!(SharingPlan::preset("final", -1.0).is_err());
        assert!(SharingPlan::preset("nope", 0.0).is_err());
    }

    #[test]
    fn plan_round_trips_through_json() {
        let p = SharingPlan::preset("e1-attn-d2", 5e-5).unwrap();
        let s = serde_json::to_string(&p).unwrap();
        assert_eq!(serde_json::from_str::<SharingPlan>(&s).unwrap(), p);
    }
}
