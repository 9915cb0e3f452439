//! Experiment configuration: flat `key = value` lines plus one `[regime]`
//! block per learning regime.
//!
//! ```text
//! name = fig1-isotropic
//! d = 300
//! m_grid = 30, 75, 150, 300, 600
//! seeds = 0, 1, 2
//! truth = rank_flat:150
//! gamma = isotropic
//!
//! [regime]
//! name = RF
//! ```

use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use serde::Serialize;
use tradeoff_core::{ActivationProfile, Builtin, CovarianceDescriptor, EigenProfile, GaussianIntegrator, GroundTruth, NtFit, Regime, ScalarActivation};

use crate::error::{HarnessError, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum TruthSpec {
    Flat,
    /// Rank `d/2`, equal eigenvalues.
    RankHalf,
    RankFlat(usize),
    PowerLaw(f64),
    Explicit(Vec<f64>),
}

/// Multiplier applied to the eigenvalues of `B`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Scale {
    Value(f64),
    InvSqrtD,
    InvD,
}

impl Scale {
    pub fn value(self, d: usize) -> f64 {
        match self {
            Scale::Value(v) => v,
            Scale::InvSqrtD => 1.0 / (d as f64).sqrt(),
            Scale::InvD => 1.0 / d as f64,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum GammaSpec {
    Proportional,
    Isotropic,
    Spectrum(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub enum WidthGrid {
    M(Vec<usize>),
    Rho(Vec<f64>),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Format {
    Csv,
    Json,
    Svg,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegimeSpec {
    pub regime: Regime,
    /// Ridge levels; RF_RIDGE and RFL only.
    pub lambdas: Vec<f64>,
    /// Number of output-weight initializations; RFL, INIT and NTL only.
    pub init_seeds: usize,
}

impl RegimeSpec {
    pub fn new(regime: Regime) -> Self {
        let lambdas = if regime.takes_lambda() { vec![1.0] } else { Vec::new() };
        let init_seeds = usize::from(regime.takes_init_seed());
        Self { regime, lambdas, init_seeds }
    }

    pub fn with_lambdas(mut self, l: &[f64]) -> Self {
        self.lambdas = l.to_vec();
        self
    }

    pub fn with_init_seeds(mut self, n: usize) -> Self {
        self.init_seeds = n;
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub name: String,
    pub d: usize,
    pub widths: WidthGrid,
    pub regimes: Vec<RegimeSpec>,
    pub truth: TruthSpec,
    pub truth_scale: Scale,
    /// Seed of the eigenbasis rotation of `B`; `None` keeps `B` diagonal.
    pub truth_seed: Option<u64>,
    pub gamma: GammaSpec,
    pub gamma_seed: Option<u64>,
    pub activation: String,
    pub nt_fit: NtFit,
    pub seeds: Vec<u64>,
    /// Monte Carlo points per row for the empirical columns; 0 disables them.
    pub mc_samples: usize,
    pub mc_seed: u64,
    /// Ensembles averaged in the finite-`d` trace estimate of `(psi1, psi2)`.
    pub psi_reps: usize,
    pub output_dir: PathBuf,
    pub formats: Vec<Format>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            d: 300,
            widths: WidthGrid::M(vec![150, 300, 600]),
            regimes: vec![RegimeSpec::new(Regime::Rf)],
            truth: TruthSpec::RankHalf,
            truth_scale: Scale::Value(1.0),
            truth_seed: Some(1),
            gamma: GammaSpec::Isotropic,
            gamma_seed: Some(2),
            activation: "quadratic".into(),
            nt_fit: NtFit::GeneralizationOptimal,
            seeds: vec![0],
            mc_samples: 200_000,
            mc_seed: 7,
            psi_reps: 1,
            output_dir: PathBuf::from("out"),
            formats: vec![Format::Csv, Format::Json, Format::Svg],
        }
    }
}

fn err<T>(line: usize, msg: impl Into<String>) -> Result<T> {
    Err(HarnessError::Config { line, msg: msg.into() })
}

fn parse_num<T: std::str::FromStr>(line: usize, s: &str) -> Result<T> {
    s.trim().parse::<T>().or_else(|_| err(line, format!("cannot parse {s:?}")))
}

fn parse_list<T: std::str::FromStr>(line: usize, s: &str) -> Result<Vec<T>> {
    s.split(',').filter(|p| !p.trim().is_empty()).map(|p| parse_num(line, p)).collect()
}

fn parse_seed_opt(line: usize, s: &str) -> Result<Option<u64>> {
    if s.trim() == "none" {
        Ok(None)
    } else {
        parse_num(line, s).map(Some)
    }
}

fn join<T: std::fmt::Debug>(v: &[T]) -> String {
    v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ")
}

impl TruthSpec {
    fn parse(line: usize, s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(k) = s.strip_prefix("rank_flat:") {
            return Ok(TruthSpec::RankFlat(parse_num(line, k)?));
        }
        if let Some(a) = s.strip_prefix("power_law:") {
            return Ok(TruthSpec::PowerLaw(parse_num(line, a)?));
        }
        if let Some(v) = s.strip_prefix("explicit:") {
            return Ok(TruthSpec::Explicit(parse_list(line, v)?));
        }
        match s {
            "flat" => Ok(TruthSpec::Flat),
            "rank_half" => Ok(TruthSpec::RankHalf),
            _ => err(line, format!("unknown truth profile {s:?}")),
        }
    }

    fn text(&self) -> String {
        match self {
            TruthSpec::Flat => "flat".into(),
            TruthSpec::RankHalf => "rank_half".into(),
            TruthSpec::RankFlat(k) => format!("rank_flat:{k}"),
            TruthSpec::PowerLaw(a) => format!("power_law:{a:?}"),
            TruthSpec::Explicit(v) => format!("explicit:{}", join(v)),
        }
    }

    pub fn profile(&self, d: usize) -> EigenProfile {
        match self {
            TruthSpec::Flat => EigenProfile::Flat,
            TruthSpec::RankHalf => EigenProfile::RankFlat { rank: d / 2 },
            TruthSpec::RankFlat(k) => EigenProfile::RankFlat { rank: *k },
            TruthSpec::PowerLaw(a) => EigenProfile::PowerLaw { exponent: *a },
            TruthSpec::Explicit(v) => EigenProfile::Explicit(v.clone()),
        }
    }
}

impl Scale {
    fn parse(line: usize, s: &str) -> Result<Self> {
        match s.trim() {
            "inv_sqrt_d" => Ok(Scale::InvSqrtD),
            "inv_d" => Ok(Scale::InvD),
            v => Ok(Scale::Value(parse_num(line, v)?)),
        }
    }

    fn text(self) -> String {
        match self {
            Scale::Value(v) => format!("{v:?}"),
            Scale::InvSqrtD => "inv_sqrt_d".into(),
            Scale::InvD => "inv_d".into(),
        }
    }
}

impl GammaSpec {
    fn parse(line: usize, s: &str) -> Result<Self> {
        let s = s.trim();
        if let Some(v) = s.strip_prefix("spectrum:") {
            return Ok(GammaSpec::Spectrum(parse_list(line, v)?));
        }
        match s {
            "proportional" => Ok(GammaSpec::Proportional),
            "isotropic" => Ok(GammaSpec::Isotropic),
            _ => err(line, format!("unknown gamma {s:?} (proportional | isotropic | spectrum:...)")),
        }
    }

    fn text(&self) -> String {
        match self {
            GammaSpec::Proportional => "proportional".into(),
            GammaSpec::Isotropic => "isotropic".into(),
            GammaSpec::Spectrum(v) => format!("spectrum:{}", join(v)),
        }
    }
}

impl Format {
    fn parse(line: usize, s: &str) -> Result<Self> {
        match s.trim() {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            "svg" => Ok(Format::Svg),
            o => err(line, format!("unknown format {o:?}")),
        }
    }
    fn text(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
            Format::Svg => "svg",
        }
    }
}

/// Everything an experiment needs, built once from a config.
pub struct Setup {
    pub truth: GroundTruth,
    pub covariance: Arc<CovarianceDescriptor>,
    pub profile: ActivationProfile,
    pub quadrature: GaussianIntegrator,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig { regimes: Vec::new(), ..Default::default() };
        let mut widths: Option<WidthGrid> = None;
        let mut current: Option<(usize, Option<Regime>, Option<Vec<f64>>, Option<usize>)> = None;
        let finish = |cfg: &mut ExperimentConfig, cur: Option<(usize, Option<Regime>, Option<Vec<f64>>, Option<usize>)>| -> Result<()> {
            if let Some((line, regime, lambdas, seeds)) = cur {
                let Some(r) = regime else { return err(line, "[regime] block without a name") };
                let mut spec = RegimeSpec::new(r);
                if let Some(l) = lambdas {
                    spec.lambdas = l;
                }
                if let Some(n) = seeds {
                    spec.init_seeds = n;
                }
                cfg.regimes.push(spec);
            }
            Ok(())
        };
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            if body == "[regime]" {
                finish(&mut cfg, current.take())?;
                current = Some((line, None, None, None));
                continue;
            }
            if body.starts_with('[') {
                return err(line, format!("unknown section {body}"));
            }
            let Some((key, value)) = body.split_once('=') else { return err(line, "expected key = value") };
            let (key, value) = (key.trim(), value.trim());
            if let Some(block) = current.as_mut() {
                match key {
                    "name" => block.1 = Some(Regime::parse(value).or_else(|e| err(line, e.to_string()))?),
                    "lambda" | "lambdas" => block.2 = Some(parse_list(line, value)?),
                    "init_seeds" => block.3 = Some(parse_num(line, value)?),
                    _ => return err(line, format!("unknown regime key {key:?}")),
                }
                continue;
            }
            match key {
                "name" => cfg.name = value.to_string(),
                "d" => cfg.d = parse_num(line, value)?,
                "m_grid" => widths = Some(WidthGrid::M(parse_list(line, value)?)),
                "rho_grid" => widths = Some(WidthGrid::Rho(parse_list(line, value)?)),
                "seeds" => cfg.seeds = parse_list(line, value)?,
                "truth" => cfg.truth = TruthSpec::parse(line, value)?,
                "truth_scale" => cfg.truth_scale = Scale::parse(line, value)?,
                "truth_seed" => cfg.truth_seed = parse_seed_opt(line, value)?,
                "gamma" => cfg.gamma = GammaSpec::parse(line, value)?,
                "gamma_seed" => cfg.gamma_seed = parse_seed_opt(line, value)?,
                "activation" => cfg.activation = value.to_string(),
                "nt_fit" => cfg.nt_fit = NtFit::parse(value).or_else(|e| err(line, e.to_string()))?,
                "mc_samples" => cfg.mc_samples = parse_num(line, value)?,
                "mc_seed" => cfg.mc_seed = parse_num(line, value)?,
                "psi_reps" => cfg.psi_reps = parse_num(line, value)?,
                "output_dir" => cfg.output_dir = PathBuf::from(value),
                "formats" => cfg.formats = value.split(',').map(|f| Format::parse(line, f)).collect::<Result<_>>()?,
                _ => return err(line, format!("unknown key {key:?}")),
            }
        }
        finish(&mut cfg, current.take())?;
        if let Some(w) = widths {
            cfg.widths = w;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "name = {}", self.name);
        let _ = writeln!(s, "d = {}", self.d);
        match &self.widths {
            WidthGrid::M(m) => {
                let _ = writeln!(s, "m_grid = {}", join(m));
            }
            WidthGrid::Rho(r) => {
                let _ = writeln!(s, "rho_grid = {}", join(r));
            }
        }
        let _ = writeln!(s, "seeds = {}", join(&self.seeds));
        let _ = writeln!(s, "truth = {}", self.truth.text());
        let _ = writeln!(s, "truth_scale = {}", self.truth_scale.text());
        let seed = |o: Option<u64>| o.map_or("none".to_string(), |v| v.to_string());
        let _ = writeln!(s, "truth_seed = {}", seed(self.truth_seed));
        let _ = writeln!(s, "gamma = {}", self.gamma.text());
        let _ = writeln!(s, "gamma_seed = {}", seed(self.gamma_seed));
        let _ = writeln!(s, "activation = {}", self.activation);
        let _ = writeln!(s, "nt_fit = {}", self.nt_fit.name());
        let _ = writeln!(s, "mc_samples = {}", self.mc_samples);
        let _ = writeln!(s, "mc_seed = {}", self.mc_seed);
        let _ = writeln!(s, "psi_reps = {}", self.psi_reps);
        let _ = writeln!(s, "output_dir = {}", self.output_dir.display());
        let _ = writeln!(s, "formats = {}", self.formats.iter().map(|f| f.text()).collect::<Vec<_>>().join(", "));
        for r in &self.regimes {
            let _ = writeln!(s, "\n[regime]\nname = {}", r.regime.tag());
            if r.regime.takes_lambda() {
                let _ = writeln!(s, "lambda = {}", join(&r.lambdas));
            }
            if r.regime.takes_init_seed() {
                let _ = writeln!(s, "init_seeds = {}", r.init_seeds);
            }
        }
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Invalid(m.to_string()));
        if self.d < 10 {
            return bad("d must be at least 10");
        }
        if self.seeds.is_empty() {
            return bad("seeds must be nonempty");
        }
        if self.regimes.is_empty() {
            return bad("at least one [regime] block is required");
        }
        match &self.widths {
            WidthGrid::M(m) if m.is_empty() || m.contains(&0) => return bad("m_grid must be nonempty and positive"),
            WidthGrid::Rho(r) if r.is_empty() || r.iter().any(|x| !(*x > 0.0)) => {
                return bad("rho_grid must be nonempty and positive")
            }
            _ => {}
        }
        if self.widths().iter().any(|&m| m == 0) {
            return bad("a width rounds to zero");
        }
        let quadratic = Builtin::parse(&self.activation).map(|b| b.quadratic_shift().is_some());
        for r in &self.regimes {
            if r.regime.takes_lambda() && (r.lambdas.is_empty() || r.lambdas.iter().any(|l| !(*l >= 0.0))) {
                return bad(&format!("{} needs nonnegative lambdas", r.regime));
            }
            if r.regime == Regime::RfRidge && r.lambdas.iter().any(|l| *l == 0.0) {
                return bad("RF_RIDGE needs lambda > 0 (use RF for lambda = 0)");
            }
            if r.regime.takes_init_seed() && r.init_seeds == 0 {
                return bad(&format!("{} needs init_seeds >= 1", r.regime));
            }
            if r.regime.quadratic_only() && !matches!(quadratic, Ok(true)) {
                return bad(&format!("{} is defined for the quadratic activation only, not {:?}", r.regime, self.activation));
            }
        }
        if self.mc_samples == 1 {
            return bad("mc_samples must be 0 or at least 2");
        }
        if self.psi_reps == 0 {
            return bad("psi_reps must be at least 1");
        }
        Builtin::parse(&self.activation)?;
        Ok(())
    }

    /// Width grid in neurons.
    pub fn widths(&self) -> Vec<usize> {
        match &self.widths {
            WidthGrid::M(m) => m.clone(),
            WidthGrid::Rho(r) => r.iter().map(|x| (x * self.d as f64).round() as usize).collect(),
        }
    }

    pub fn setup(&self) -> Result<Setup> {
        let d = self.d;
        let truth = GroundTruth::from_profile(d, &self.truth.profile(d), self.truth_scale.value(d), self.truth_seed)?;
        let covariance = Arc::new(match &self.gamma {
            GammaSpec::Proportional => CovarianceDescriptor::proportional_to(&truth)?,
            GammaSpec::Isotropic => CovarianceDescriptor::isotropic(d)?,
            GammaSpec::Spectrum(v) => {
                if v.len() != d {
                    return Err(HarnessError::Invalid(format!("gamma spectrum has {} entries, d = {d}", v.len())));
                }
                CovarianceDescriptor::from_spectrum(v, self.gamma_seed)?
            }
        });
        let quadrature = GaussianIntegrator::default();
        let profile = ActivationProfile::builtin(Builtin::parse(&self.activation)?, &quadrature)?;
        Ok(Setup { truth, covariance, profile, quadrature })
    }
}

/// Named preset configurations.
pub fn preset(name: &str) -> Option<Vec<ExperimentConfig>> {
    let fig1 = |gamma: GammaSpec, d: usize, tag: &str, prefix: &str| ExperimentConfig {
        name: format!("{prefix}-{tag}"),
        d,
        widths: WidthGrid::Rho(vec![0.1, 0.25, 0.5, 1.0, 1.5, 2.0, 3.0, 4.0]),
        regimes: vec![RegimeSpec::new(Regime::Rf), RegimeSpec::new(Regime::SgdLimit)],
        truth: TruthSpec::RankHalf,
        gamma,
        seeds: vec![0, 1, 2],
        mc_samples: 20_000,
        output_dir: PathBuf::from("out").join(prefix),
        ..Default::default()
    };
    let fig2 = |scale: Scale, tag: &str, d: usize, prefix: &str| ExperimentConfig {
        name: format!("{prefix}-{tag}"),
        d,
        widths: WidthGrid::Rho(vec![0.05, 0.1, 0.25, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0]),
        regimes: vec![
            RegimeSpec::new(Regime::Init).with_init_seeds(3),
            RegimeSpec::new(Regime::Nt),
            RegimeSpec::new(Regime::Ntl).with_init_seeds(3),
        ],
        truth: TruthSpec::Flat,
        truth_scale: scale,
        truth_seed: None,
        gamma: GammaSpec::Isotropic,
        seeds: vec![0, 1, 2],
        mc_samples: 20_000,
        output_dir: PathBuf::from("out").join(prefix),
        ..Default::default()
    };
    match name {
        "fig1" => Some(vec![
            fig1(GammaSpec::Proportional, 300, "proportional", "fig1"),
            fig1(GammaSpec::Isotropic, 300, "isotropic", "fig1"),
        ]),
        "fig2-small" => Some(vec![fig2(Scale::InvSqrtD, "small", 300, "fig2")]),
        "fig2-large" => Some(vec![fig2(Scale::InvD, "large", 300, "fig2")]),
        "fig2" => Some(vec![fig2(Scale::InvSqrtD, "small", 300, "fig2"), fig2(Scale::InvD, "large", 300, "fig2")]),
        "paper" => Some(vec![
            fig1(GammaSpec::Proportional, 450, "proportional", "paper"),
            fig1(GammaSpec::Isotropic, 450, "isotropic", "paper"),
            fig2(Scale::InvSqrtD, "small", 450, "paper"),
            fig2(Scale::InvD, "large", 450, "paper"),
        ]),
        "default" => Some(vec![default_suite_config()]),
        _ => None,
    }
}

pub const PRESETS: &[(&str, &str)] = &[
    ("fig1", "random features vs SGD limit, d=300, Gamma proportional to B and isotropic"),
    ("fig2-small", "INIT / NT / NTL with B = I/sqrt(d) (initialization negligible)"),
    ("fig2-large", "INIT / NT / NTL with B = I/d (initialization comparable to Gamma)"),
    ("fig2", "both fig2 presets"),
    ("paper", "fig1 and fig2 at d=450"),
    ("default", "every regime at d=300, used for the exact-vs-Monte-Carlo cross-check"),
];

/// Every regime at a few widths with Monte Carlo columns.
pub fn default_suite_config() -> ExperimentConfig {
    ExperimentConfig {
        name: "default".into(),
        d: 300,
        widths: WidthGrid::M(vec![100, 240]),
        regimes: vec![
            RegimeSpec::new(Regime::SgdLimit),
            RegimeSpec::new(Regime::Rf),
            RegimeSpec::new(Regime::RfRidge).with_lambdas(&[1.0]),
            RegimeSpec::new(Regime::Rfl).with_lambdas(&[1.0]).with_init_seeds(2),
            RegimeSpec::new(Regime::Init).with_init_seeds(2),
            RegimeSpec::new(Regime::Nt),
            RegimeSpec::new(Regime::Ntl).with_init_seeds(2),
        ],
        truth: TruthSpec::RankHalf,
        gamma: GammaSpec::Isotropic,
        seeds: vec![0, 1],
        mc_samples: 20_000,
        output_dir: PathBuf::from("out").join("default"),
        ..Default::default()
    }
}

/// A config file path or a single-experiment preset name.
pub fn load(arg: &str) -> Result<Vec<ExperimentConfig>> {
    if let Some(p) = preset(arg) {
        return Ok(p);
    }
    let text = std::fs::read_to_string(arg)?;
    Ok(vec![ExperimentConfig::parse(&text)?])
}
