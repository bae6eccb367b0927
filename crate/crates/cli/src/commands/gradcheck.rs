use mtlsum::autodiff::{gradient_check, GradCheckConfig, GradCheckReport, Objective};
use mtlsum::data::{Batch, Example, Limits, Vocab};
use mtlsum::model::{ModelConfig, ModelParams};
use mtlsum::params::ParamArray;
use mtlsum::sharing::{ParamRegistry, SharingPlan};
use mtlsum::training::TaskObjective;
use mtlsum::Result;

/// Tolerance for 32-bit graphs, where rounding swamps 1e-4.
pub const F32_TOLERANCE: f64 = 1e-2;

#[derive(Clone, Debug)]
pub struct GradcheckArgs {
    pub seed: u64,
    pub f32: bool,
    pub preset: String,
    pub gamma: f64,
    pub lambda: f64,
    pub hidden: usize,
    pub emb_dim: usize,
    pub init_range: f64,
    pub coverage: bool,
    /// Finite-difference step; a precision-dependent default when absent.
    pub step: Option<f64>,
}

impl Default for GradcheckArgs {
    fn default() -> Self {
        GradcheckArgs {
            seed: 0,
            f32: false,
            preset: "final".into(),
            gamma: 1e-3,
            lambda: 1.0,
            hidden: 8,
            emb_dim: 8,
            init_range: 0.1,
            coverage: true,
            step: None,
        }
    }
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

/// Two tasks on a 20-token vocabulary; checks the primary task's full loss
/// (NLL, coverage and soft penalty) on a batch with source OOVs.
pub fn gradcheck(args: &GradcheckArgs) -> Result<GradCheckReport> {
    let vocab = Vocab::from_words((0..16).map(|i| format!("t{i}")));
    let cfg = ModelConfig {
        vocab_size: vocab.len(),
        emb_dim: args.emb_dim,
        hidden: args.hidden,
        attn_dim: 0,
        pointer: true,
        init_range: args.init_range,
    };
    cfg.validate()?;
    let mut reg = ParamRegistry::new(SharingPlan::preset(&args.preset, args.gamma)?)?;
    reg.register_task("main", ModelParams::init(&cfg, args.seed, "main"))?;
    reg.register_task("aux", ModelParams::init(&cfg, args.seed, "aux"))?;
    let examples = [
        Example::encode(&words("t1 zz t3 t4 t5"), &words("zz t3 t9 t1"), &vocab, Limits::default()),
        Example::encode(&words("t2 t7 yy t7 t0"), &words("t7 yy t2 t2"), &vocab, Limits::default()),
    ];
    let refs: Vec<&Example> = examples.iter().collect();
    let batch = Batch::from_examples(&refs, vocab.len())?;
    let names: Vec<String> = reg.specs(0).iter().map(|s| s.name.to_string()).collect();
    let params = reg.snapshot(0).arrays;
    let obj = TaskObjective::new(&reg, 0, &batch, args.lambda, args.coverage);
    let mut check = GradCheckConfig::default();
    check.step = args.step.unwrap_or(check.step);
    if args.f32 {
        check.tolerance = F32_TOLERANCE;
        let analytic = TaskObjective::new(&reg, 0, &batch, args.lambda, args.coverage).at::<f32>();
        run(Mixed { analytic, numeric: obj }, &names, &params, check)
    } else {
        run(obj, &names, &params, check)
    }
}

/// 32-bit analytic gradients against 64-bit differences. Rounding in a
/// 32-bit loss (about 1e-7 relative) divided by any usable step is larger
/// than the smallest gradients here, so the differences stay in f64.
struct Mixed<'a> {
    analytic: TaskObjective<'a, f32>,
    numeric: TaskObjective<'a, f64>,
}

impl Objective for Mixed<'_> {
    fn value(&mut self, params: &[ParamArray]) -> Result<f64> {
        self.numeric.value(params)
    }

    fn value_and_grad(&mut self, params: &[ParamArray]) -> Result<(f64, Vec<Vec<f64>>)> {
        let (_, grads) = self.analytic.value_and_grad(params)?;
        Ok((self.numeric.value(params)?, grads))
    }
}

fn run<O: Objective>(
    mut obj: O,
    names: &[String],
    params: &[ParamArray],
    check: GradCheckConfig,
) -> Result<GradCheckReport> {
    gradient_check(&mut obj, names, params, check)
}
