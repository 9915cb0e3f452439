use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use tradeoff_core::activation::scale_constants;
use tradeoff_core::audit::{dirichlet_energy, generalization_mc, ConstantPredictor, NetworkPredictor, QuadraticPredictor};
use tradeoff_core::model::sample_ensemble;
use tradeoff_core::regimes::{eval_sgd_limit, FittedParams, LazyRf};
use tradeoff_core::theory::{predict, psi_estimate, InitInputs};
use tradeoff_core::{NtBasis, PsiPair, Regime, RegimeEvaluation, RfProblem, ScaleConstants, TheoryInputs};

use crate::config::{ExperimentConfig, Format, Setup};
use crate::error::Result;
use crate::plot;
use crate::results::{self, NormCheck, ResultRow, ResultSet};

/// One row to compute inside a unit.
#[derive(Clone, Copy, Debug)]
struct RowSpec {
    regime: Regime,
    lambda: Option<f64>,
    init_seed: Option<u64>,
}

/// Rows sharing one `(m, ensemble seed)`; the SGD limit has no ensemble.
struct Unit {
    m: usize,
    seed: Option<u64>,
    rows: Vec<RowSpec>,
}

fn plan(cfg: &ExperimentConfig) -> Vec<Unit> {
    let mut units = Vec::new();
    for m in cfg.widths() {
        if cfg.regimes.iter().any(|r| r.regime == Regime::SgdLimit) {
            units.push(Unit {
                m,
                seed: None,
                rows: vec![RowSpec { regime: Regime::SgdLimit, lambda: None, init_seed: None }],
            });
        }
        for &seed in &cfg.seeds {
            let mut rows = Vec::new();
            for spec in cfg.regimes.iter().filter(|r| r.regime != Regime::SgdLimit) {
                let lambdas: Vec<Option<f64>> = match spec.regime {
                    Regime::Rf => vec![Some(0.0)],
                    r if r.takes_lambda() => spec.lambdas.iter().map(|&l| Some(l)).collect(),
                    _ => vec![None],
                };
                let inits: Vec<Option<u64>> =
                    if spec.regime.takes_init_seed() { (0..spec.init_seeds as u64).map(Some).collect() } else { vec![None] };
                for &lambda in &lambdas {
                    for &init_seed in &inits {
                        rows.push(RowSpec { regime: spec.regime, lambda, init_seed });
                    }
                }
            }
            if !rows.is_empty() {
                units.push(Unit { m, seed: Some(seed), rows });
            }
        }
    }
    units
}

/// Number of rows a config produces.
pub fn row_count(cfg: &ExperimentConfig) -> usize {
    plan(cfg).iter().map(|u| u.rows.len()).sum()
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Monte Carlo seed of a row, a function of the row identity only.
fn row_seed(base: u64, r: &RowSpec, m: usize, seed: Option<u64>) -> u64 {
    let parts = [
        r.regime as u64,
        m as u64,
        r.lambda.map_or(u64::MAX, f64::to_bits),
        seed.unwrap_or(u64::MAX),
        r.init_seed.unwrap_or(u64::MAX),
    ];
    parts.iter().fold(splitmix(base), |h, &p| splitmix(h ^ p))
}

/// Shared, read-only experiment state.
struct Context<'a> {
    cfg: &'a ExperimentConfig,
    setup: &'a Setup,
    constants: Option<ScaleConstants>,
    init: InitInputs,
    beta: f64,
    psi: BTreeMap<(usize, u64), std::result::Result<PsiPair, String>>,
}

struct Fitted<'a> {
    rf: Option<RfProblem>,
    nt: Option<NtBasis>,
    w: Option<nalgebra::DMatrix<f64>>,
    ctx: &'a Context<'a>,
}

impl Context<'_> {
    fn theory(&self, spec: &RowSpec, m: usize, extra: Option<(f64, f64, f64, f64)>) -> Result<(Option<f64>, Option<f64>)> {
        let frob_sq = self.setup.truth.frob_sq();
        let rho = m as f64 / self.cfg.d as f64;
        let fit = self.cfg.nt_fit;
        let inputs = match spec.regime {
            Regime::SgdLimit => TheoryInputs::SgdLimit { frob_sq, frob_trunc_sq: self.setup.truth.frob_trunc_sq(m) },
            Regime::Rf | Regime::RfRidge => {
                let ridge = spec.lambda.unwrap_or(0.0);
                let Some(constants) = self.constants else { return Ok((None, None)) };
                let psi = match self.psi.get(&(m, ridge.to_bits())) {
                    Some(Ok(p)) => Some(*p),
                    _ => return Ok((None, None)),
                };
                TheoryInputs::Rf { constants, psi, frob_sq, ridge }
            }
            Regime::Rfl => {
                let (g, r, tu, tc) = extra.expect("lazy traces");
                TheoryInputs::Rfl { rf_egen: Some(g), rf_erob: Some(r), trace_u: tu, trace_c: tc, frob_sq }
            }
            Regime::Init => TheoryInputs::Init(self.init),
            Regime::Nt => TheoryInputs::Nt { rho, beta: self.beta, fit },
            Regime::Ntl => TheoryInputs::Ntl { rho, beta: self.beta, fit, init: self.init },
        };
        let p = predict(spec.regime, &inputs)?;
        Ok((p.egen, p.erob))
    }

    fn mc(&self, eval: &RegimeEvaluation, w: Option<&nalgebra::DMatrix<f64>>, seed: u64) -> Result<Option<(f64, f64, f64, f64)>> {
        let n = self.cfg.mc_samples;
        if n == 0 {
            return Ok(None);
        }
        let truth = &self.setup.truth;
        let frob_sq = truth.frob_sq();
        let offset_for = |m: &nalgebra::DMatrix<f64>| truth.mean() - m.trace();
        let (gen, rob) = match &eval.params {
            FittedParams::Quadratic { matrix } => {
                let f = QuadraticPredictor::new(matrix.clone(), offset_for(matrix))?;
                (generalization_mc(&f, truth, n, seed)?, dirichlet_energy(&f, n, seed, 2)?)
            }
            FittedParams::OutputWeights { z } => {
                let w = w.expect("ensemble weights for a network predictor");
                let f = NetworkPredictor {
                    w: w.clone(),
                    z: z.clone(),
                    activation: std::sync::Arc::clone(self.setup.profile.activation()),
                    c: 0.0,
                };
                (generalization_mc(&f, truth, n, seed)?, dirichlet_energy(&f, n, seed, 2)?)
            }
            FittedParams::Lazy { correction, init } => {
                let total = correction + init;
                let f = QuadraticPredictor::new(total.clone(), offset_for(&total))?;
                let corr = QuadraticPredictor::new(correction.clone(), 0.0)?;
                (generalization_mc(&f, truth, n, seed)?, dirichlet_energy(&corr, n, seed, 2)?)
            }
            FittedParams::None => return Ok(None),
        };
        let (g, gs) = results::scaled(&gen, 2.0 * frob_sq);
        let (r, rs) = results::scaled(&rob, 4.0 * frob_sq);
        Ok(Some((g, gs, r, rs)))
    }
}

impl Fitted<'_> {
    fn rf(&self) -> &RfProblem {
        self.rf.as_ref().expect("random-features problem")
    }

    /// Lazy fits and the same-ridge RF fit for each RFL ridge level.
    fn lazies(&self, rows: &[RowSpec]) -> Result<BTreeMap<u64, (LazyRf<'_>, RegimeEvaluation)>> {
        let mut out = BTreeMap::new();
        for r in rows.iter().filter(|r| r.regime == Regime::Rfl) {
            let lambda = r.lambda.unwrap_or(0.0);
            if let std::collections::btree_map::Entry::Vacant(v) = out.entry(lambda.to_bits()) {
                v.insert((self.rf().lazy(lambda)?, self.rf().fit_rf(lambda)?));
            }
        }
        Ok(out)
    }

    fn evaluate(
        &self,
        spec: &RowSpec,
        m: usize,
        lazies: &BTreeMap<u64, (LazyRf<'_>, RegimeEvaluation)>,
    ) -> Result<(RegimeEvaluation, Option<(f64, f64, f64, f64)>)> {
        let fit = self.ctx.cfg.nt_fit;
        Ok(match spec.regime {
            Regime::SgdLimit => (eval_sgd_limit(&self.ctx.setup.truth, m)?, None),
            Regime::Rf | Regime::RfRidge => (self.rf().fit_rf(spec.lambda.unwrap_or(0.0))?, None),
            Regime::Rfl => {
                let (lazy, base) = &lazies[&spec.lambda.unwrap_or(0.0).to_bits()];
                let e = lazy.eval(spec.init_seed.unwrap_or(0));
                (e, Some((base.egen, base.erob, lazy.trace_u, lazy.trace_c)))
            }
            Regime::Init => (self.rf().eval_init(spec.init_seed.unwrap_or(0)), None),
            Regime::Nt => (self.nt.as_ref().expect("tangent basis").fit_nt(fit), None),
            Regime::Ntl => (self.nt.as_ref().expect("tangent basis").fit_ntl(spec.init_seed.unwrap_or(0), fit), None),
        })
    }
}

fn run_unit(ctx: &Context<'_>, unit: &Unit) -> Vec<ResultRow> {
    let cfg = ctx.cfg;
    let t0 = Instant::now();
    let blank = |spec: &RowSpec| {
        let mut row = ResultRow::new(spec.regime, cfg.d, unit.m);
        row.lambda = spec.lambda;
        row.ensemble_seed = unit.seed;
        row.init_seed = spec.init_seed;
        row
    };
    let prepared: Result<Fitted<'_>> = (|| {
        let Some(seed) = unit.seed else { return Ok(Fitted { rf: None, nt: None, w: None, ctx }) };
        let ens = sample_ensemble(&ctx.setup.covariance, unit.m, seed)?;
        let needs_rf = unit.rows.iter().any(|r| matches!(r.regime, Regime::Rf | Regime::RfRidge | Regime::Rfl | Regime::Init));
        let needs_nt = unit.rows.iter().any(|r| r.regime.quadratic_only());
        let rf = if needs_rf {
            Some(RfProblem::new(&ens, &ctx.setup.profile, &ctx.setup.truth, &ctx.setup.quadrature)?)
        } else {
            None
        };
        let nt = if needs_nt { Some(NtBasis::new(&ens, &ctx.setup.truth)?) } else { None };
        Ok(Fitted { rf, nt, w: Some(ens.weights().clone()), ctx })
    })();
    let setup_ms = t0.elapsed().as_secs_f64() * 1e3 / unit.rows.len() as f64;
    let fitted = match prepared {
        Ok(f) => f,
        Err(e) => {
            return unit
                .rows
                .iter()
                .map(|s| {
                    let mut row = blank(s);
                    row.error = Some(e.to_string());
                    row.wall_time_ms = setup_ms;
                    row
                })
                .collect()
        }
    };
    let lazies = match fitted.lazies(&unit.rows) {
        Ok(l) => l,
        Err(e) => {
            let msg = e.to_string();
            return unit
                .rows
                .iter()
                .map(|s| {
                    let mut row = blank(s);
                    row.error = Some(msg.clone());
                    row
                })
                .collect();
        }
    };
    unit.rows
        .iter()
        .map(|spec| {
            let t = Instant::now();
            let mut row = blank(spec);
            let out: Result<()> = (|| {
                let (eval, extra) = fitted.evaluate(spec, unit.m, &lazies)?;
                row.egen_exact = Some(eval.egen);
                row.erob_exact = Some(eval.erob);
                let (g, r) = ctx.theory(spec, unit.m, extra)?;
                row.egen_theory = g;
                row.erob_theory = r;
                if let Some((g, gs, r, rs)) = ctx.mc(&eval, fitted.w.as_ref(), row_seed(cfg.mc_seed, spec, unit.m, unit.seed))? {
                    row.egen_mc = Some(g);
                    row.egen_mc_se = Some(gs);
                    row.erob_mc = Some(r);
                    row.erob_mc_se = Some(rs);
                }
                Ok(())
            })();
            if let Err(e) = out {
                row.error = Some(e.to_string());
            }
            row.wall_time_ms = setup_ms + t.elapsed().as_secs_f64() * 1e3;
            row
        })
        .collect()
}

/// `E f*(x)^2` by Monte Carlo against `2||B||^2 + mean^2`, within 5 SE.
pub fn norm_check(setup: &Setup, samples: usize, seed: u64) -> Result<NormCheck> {
    let zero = ConstantPredictor { dim: setup.truth.dim(), c: 0.0 };
    let mc = generalization_mc(&zero, &setup.truth, samples, seed)?;
    let exact = setup.truth.l2_norm_sq();
    Ok(NormCheck { exact, mc, passed: (mc.mean - exact).abs() <= 5.0 * mc.se })
}

/// Runs every row of a config. Rows are sorted by regime, width, ridge and seeds;
/// the result does not depend on the worker count.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultSet> {
    cfg.validate()?;
    let setup = cfg.setup()?;
    let check = norm_check(&setup, cfg.mc_samples.clamp(10_000, 50_000), cfg.mc_seed)?;
    if !check.passed {
        warn!("target norm check failed: exact {} vs MC {} +- {}", check.exact, check.mc.mean, check.mc.se);
    }
    // The scale constants need lambda_2 data only; a failure here drops RF theory, not the rows.
    let constants = scale_constants(&setup.profile, &setup.truth, &setup.covariance).ok();
    let mut psi_keys: Vec<(usize, f64)> = Vec::new();
    for spec in cfg.regimes.iter().filter(|r| matches!(r.regime, Regime::Rf | Regime::RfRidge)) {
        let lambdas = if spec.regime == Regime::Rf { vec![0.0] } else { spec.lambdas.clone() };
        for m in cfg.widths() {
            for &l in &lambdas {
                psi_keys.push((m, l));
            }
        }
    }
    let psi: BTreeMap<(usize, u64), std::result::Result<PsiPair, String>> = psi_keys
        .par_iter()
        .map(|&(m, l)| {
            let p = psi_estimate(&setup.covariance, &setup.profile, m, cfg.psi_reps, splitmix(cfg.mc_seed ^ 0x5151), l)
                .map_err(|e| e.to_string());
            ((m, l.to_bits()), p)
        })
        .collect();
    let ctx = Context {
        cfg,
        setup: &setup,
        constants,
        init: InitInputs::new(&setup.profile, &setup.covariance, setup.truth.frob_sq()),
        beta: setup.truth.spectral().beta,
        psi,
    };
    let units = plan(cfg);
    info!("{}: {} rows in {} units", cfg.name, units.iter().map(|u| u.rows.len()).sum::<usize>(), units.len());
    let mut rows: Vec<ResultRow> = units.par_iter().flat_map_iter(|u| run_unit(&ctx, u)).collect();
    rows.sort_by(|a, b| a.key().cmp(&b.key()));
    for r in rows.iter().filter(|r| r.failed()) {
        warn!("{} m={} seed={:?}: {}", r.regime, r.m, r.ensemble_seed, r.error.as_deref().unwrap_or(""));
    }
    Ok(ResultSet { config: cfg.clone(), rows, norm_check: Some(check) })
}

/// Writes the formats requested by the config into `dir`.
pub fn write_outputs(set: &ResultSet, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let name = &set.config.name;
    for f in &set.config.formats {
        let path = match f {
            Format::Csv => {
                let p = dir.join(format!("{name}.csv"));
                results::write_csv(&set.rows, std::fs::File::create(&p)?)?;
                p
            }
            Format::Json => {
                let p = dir.join(format!("{name}.json"));
                results::write_json(set, std::fs::File::create(&p)?)?;
                p
            }
            Format::Svg => {
                let panels: Vec<plot::Panel> = set
                    .config
                    .regimes
                    .iter()
                    .map(|r| plot::Panel { regime: r.regime, source: 0, title: r.regime.tag().to_string() })
                    .collect();
                let Some(svg) = plot::render(&[set.rows.clone()], &panels, name) else { continue };
                let p = dir.join(format!("{name}.svg"));
                std::fs::write(&p, svg)?;
                p
            }
        };
        written.push(path);
    }
    Ok(written)
}
