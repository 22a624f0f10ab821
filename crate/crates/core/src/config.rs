//! Experiment configuration files.
//!
//! A config is a TOML document with an optional global `seed` and `out`,
//! plus the sections a command needs: `[mdp]`, `[policy]`, `[train]`
//! (with `[train.inner]`), `[compare]`/`[paired]`, `[sweep]`, `[attack]`
//! and `[basins]`. Unknown keys are rejected. Relative paths resolve
//! against the directory holding the config.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use toml::Spanned;

use crate::adversary::InnerSolverConfig;
use crate::analysis::{AttackKind, InitDistribution, Objective, CLUSTER_RADIUS};
use crate::error::{Error, Result};
use crate::mdp::TabularIsaMdp;
use crate::mdp_file;
use crate::policy::PolicySpec;
use crate::textio::{self, parse_error};
use crate::trainers::{GradientMode, Paradigm, Schedule, TrainerConfig};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    seed: Option<u64>,
    out: Option<String>,
    mdp: Option<Spanned<RawMdp>>,
    policy: Option<Spanned<toml::Table>>,
    train: Option<Spanned<RawTrain>>,
    compare: Option<Spanned<RawTrain>>,
    paired: Option<Spanned<RawPaired>>,
    sweep: Option<Spanned<RawSweep>>,
    attack: Option<Spanned<RawAttack>>,
    basins: Option<Spanned<RawBasins>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawMdp {
    file: Option<Spanned<String>>,
    gamma: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
enum RawSchedule {
    Constant,
    InverseSqrtK,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
enum RawGradient {
    Exact,
    MonteCarlo,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInner {
    eps: Option<f64>,
    steps: Option<usize>,
    step_size: Option<f64>,
    delta: Option<f64>,
    temperature: Option<f64>,
    exact_gradient: Option<bool>,
    n_traj: Option<usize>,
    horizon: Option<usize>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTrain {
    paradigm: Paradigm,
    outer_steps: Option<usize>,
    step_size: Option<f64>,
    schedule: Option<RawSchedule>,
    gradient: Option<RawGradient>,
    n_traj: Option<usize>,
    horizon: Option<usize>,
    kappa: Option<f64>,
    guidance: Option<bool>,
    clip_eta: Option<f64>,
    entropy_coeff: Option<f64>,
    inner: Option<RawInner>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPaired {
    n_inits: usize,
    init_scale: Option<f64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSweep {
    resolution: usize,
    objectives: Option<Vec<Objective>>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAttack {
    attacks: Vec<Spanned<String>>,
    budget: f64,
}

#[derive(Debug, Deserialize, PartialEq)]
#[serde(deny_unknown_fields, rename_all = "snake_case")]
enum RawInit {
    Uniform,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBasins {
    n_inits: usize,
    cluster_radius: Option<f64>,
    init: Option<RawInit>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairedSettings {
    pub compare: TrainerConfig,
    pub n_inits: usize,
    pub init_scale: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSettings {
    pub resolution: usize,
    pub objectives: Vec<Objective>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSettings {
    pub attacks: Vec<AttackKind>,
    pub budget: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasinSettings {
    pub n_inits: usize,
    pub cluster_radius: f64,
    pub init: InitDistribution,
}

/// A fully resolved and validated experiment.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub text: String,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub mdp: TabularIsaMdp,
    pub policy: Option<PolicySpec>,
    pub train: Option<TrainerConfig>,
    pub paired: Option<PairedSettings>,
    pub sweep: Option<SweepSettings>,
    pub attack: Option<AttackSettings>,
    pub basins: Option<BasinSettings>,
}

fn located(text: &str, span: std::ops::Range<usize>, err: Error) -> Error {
    match err {
        e @ Error::Parse { .. } => e,
        other => parse_error(text, span, other.to_string()),
    }
}

fn inner_config(raw: Option<&RawInner>) -> InnerSolverConfig {
    let Some(r) = raw else {
        return InnerSolverConfig::defaults(0.1);
    };
    let base = InnerSolverConfig::defaults(r.eps.unwrap_or(0.1));
    InnerSolverConfig {
        steps: r.steps.unwrap_or(base.steps),
        step_size: r.step_size.unwrap_or(base.step_size),
        delta: r.delta.unwrap_or(base.delta),
        temperature: r.temperature.unwrap_or(base.temperature),
        exact_gradient: r.exact_gradient.unwrap_or(base.exact_gradient),
        n_traj: r.n_traj.unwrap_or(base.n_traj),
        horizon: r.horizon.or(base.horizon),
        ..base
    }
}

fn trainer_config(raw: &RawTrain, seed: u64) -> TrainerConfig {
    let base = TrainerConfig::new(raw.paradigm);
    let gradient_mode = match raw.gradient {
        None | Some(RawGradient::Exact) => GradientMode::Exact,
        Some(RawGradient::MonteCarlo) => GradientMode::MonteCarlo {
            n_traj: raw.n_traj.unwrap_or(1000),
            horizon: raw.horizon,
        },
    };
    TrainerConfig {
        outer_steps: raw.outer_steps.unwrap_or(base.outer_steps),
        step_size: raw.step_size.unwrap_or(base.step_size),
        schedule: match raw.schedule {
            None | Some(RawSchedule::Constant) => Schedule::Constant,
            Some(RawSchedule::InverseSqrtK) => Schedule::OneOverSqrtK,
        },
        gradient_mode,
        inner: inner_config(raw.inner.as_ref()),
        kappa: raw.kappa.unwrap_or(base.kappa),
        guidance: raw.guidance.unwrap_or(base.guidance),
        clip_eta: raw.clip_eta.unwrap_or(base.clip_eta),
        entropy_coeff: raw.entropy_coeff.unwrap_or(base.entropy_coeff),
        seed,
        ..base
    }
}

fn read_relative(base: &Path, rel: &str) -> Result<(PathBuf, String)> {
    let path = base.join(rel);
    let text = std::fs::read_to_string(&path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    Ok((path, text))
}

impl ExperimentConfig {
    /// Parses `text`; `base_dir` anchors relative paths.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| textio::toml_error(text, e))?;
        let seed = raw.seed.unwrap_or(0);

        let mut mdp = TabularIsaMdp::toy();
        if let Some(section) = &raw.mdp {
            let m = section.get_ref();
            if let Some(file) = &m.file {
                let (path, body) = read_relative(base_dir, file.get_ref()).map_err(|e| located(text, file.span(), e))?;
                mdp = mdp_file::parse_mdp(&body).map_err(|e| match e {
                    Error::Parse { line, msg } => parse_error(
                        text,
                        file.span(),
                        format!("{}:{line}: {msg}", path.display()),
                    ),
                    other => located(text, file.span(), other),
                })?;
            }
            if let Some(g) = m.gamma {
                mdp = mdp.with_gamma(g).map_err(|e| located(text, section.span(), e))?;
            }
        }

        let policy = match &raw.policy {
            None => None,
            Some(section) => {
                let table = section.get_ref();
                let body = if let Some(file) = table.get("file") {
                    if table.len() != 1 {
                        return Err(parse_error(
                            text,
                            section.span(),
                            "[policy] takes either `file` or inline fields, not both",
                        ));
                    }
                    let rel = file
                        .as_str()
                        .ok_or_else(|| parse_error(text, section.span(), "policy file must be a string"))?;
                    read_relative(base_dir, rel).map_err(|e| located(text, section.span(), e))?.1
                } else {
                    toml::to_string(table).expect("table serialises")
                };
                let spec = PolicySpec::from_toml_str(&body).map_err(|e| {
                    let msg = match e {
                        Error::Parse { msg, .. } => msg,
                        other => other.to_string(),
                    };
                    parse_error(text, section.span(), format!("policy: {msg}"))
                })?;
                Some(spec)
            }
        };

        let train = match &raw.train {
            None => None,
            Some(section) => {
                let cfg = trainer_config(section.get_ref(), seed);
                cfg.validate().map_err(|e| located(text, section.span(), e))?;
                Some(cfg)
            }
        };

        let paired = match (&raw.paired, &raw.compare) {
            (None, None) => None,
            (Some(p), Some(c)) => {
                let compare = trainer_config(c.get_ref(), seed);
                compare.validate().map_err(|e| located(text, c.span(), e))?;
                let pr = p.get_ref();
                if pr.n_inits == 0 {
                    return Err(parse_error(text, p.span(), "n_inits must be >= 1"));
                }
                Some(PairedSettings {
                    compare,
                    n_inits: pr.n_inits,
                    init_scale: pr.init_scale.unwrap_or(1.0),
                })
            }
            (Some(p), None) => return Err(parse_error(text, p.span(), "[paired] needs a [compare] section")),
            (None, Some(c)) => return Err(parse_error(text, c.span(), "[compare] needs a [paired] section")),
        };

        let sweep = match &raw.sweep {
            None => None,
            Some(section) => {
                let s = section.get_ref();
                if s.resolution < 2 {
                    return Err(parse_error(text, section.span(), "resolution must be >= 2"));
                }
                Some(SweepSettings {
                    resolution: s.resolution,
                    objectives: s.objectives.clone().unwrap_or_else(|| vec![Objective::Spo, Objective::Arpo]),
                })
            }
        };

        let attack = match &raw.attack {
            None => None,
            Some(section) => {
                let a = section.get_ref();
                let attacks = a
                    .attacks
                    .iter()
                    .map(|name| AttackKind::parse(name.get_ref()).map_err(|e| located(text, name.span(), e)))
                    .collect::<Result<Vec<_>>>()?;
                if !(a.budget >= 0.0) {
                    return Err(parse_error(text, section.span(), "budget must be >= 0"));
                }
                Some(AttackSettings {
                    attacks,
                    budget: a.budget,
                })
            }
        };

        let basins = match &raw.basins {
            None => None,
            Some(section) => {
                let b = section.get_ref();
                if b.n_inits == 0 {
                    return Err(parse_error(text, section.span(), "n_inits must be >= 1"));
                }
                let radius = b.cluster_radius.unwrap_or(CLUSTER_RADIUS);
                if !(radius > 0.0) {
                    return Err(parse_error(text, section.span(), "cluster_radius must be > 0"));
                }
                Some(BasinSettings {
                    n_inits: b.n_inits,
                    cluster_radius: radius,
                    init: match b.init {
                        None | Some(RawInit::Uniform) => InitDistribution::UniformBox,
                    },
                })
            }
        };

        Ok(Self {
            text: text.to_string(),
            seed,
            out: raw.out.map(|o| base_dir.join(o)),
            mdp,
            policy,
            train,
            paired,
            sweep,
            attack,
            basins,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    /// Replaces the seed everywhere it was copied.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        if let Some(t) = &mut self.train {
            t.seed = seed;
        }
        if let Some(p) = &mut self.paired {
            p.compare.seed = seed;
        }
        self
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<ExperimentConfig> {
        ExperimentConfig::parse(text, Path::new(env!("CARGO_MANIFEST_DIR")))
    }

    fn error_line(text: &str) -> usize {
        match parse(text) {
            Err(Error::Parse { line, .. }) => line,
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn full_train_config() {
        let cfg = parse(
            "seed = 5\n[mdp]\nfile = \"data/toy.toml\"\n[policy]\nvariant = \"direct2\"\nalpha = 0.9\nbeta = 0.9\n\
             [train]\nparadigm = \"barpo\"\nouter_steps = 7\nschedule = \"inverse_sqrt_k\"\ngradient = \"monte_carlo\"\nn_traj = 50\n\
             [train.inner]\neps = 0.4\n",
        )
        .unwrap();
        assert_eq!(cfg.seed, 5);
        assert_eq!(cfg.mdp, TabularIsaMdp::toy());
        assert_eq!(cfg.policy, Some(PolicySpec::direct2(0.9, 0.9).unwrap()));
        let t = cfg.train.unwrap();
        assert_eq!(t.paradigm, Paradigm::Barpo);
        assert_eq!(t.outer_steps, 7);
        assert_eq!(t.schedule, Schedule::OneOverSqrtK);
        assert_eq!(t.gradient_mode, GradientMode::MonteCarlo { n_traj: 50, horizon: None });
        assert_eq!(t.inner.eps, 0.4);
        assert_eq!(t.seed, 5);
    }

    #[test]
    fn unknown_keys_are_rejected_with_lines() {
        assert_eq!(error_line("seed = 1\n[train]\nparadigm = \"spo\"\nstep_sise = 0.1\n"), 4);
        assert_eq!(error_line("seed = 1\nbogus = 2\n"), 2);
        assert_eq!(error_line("[attack]\nattacks = [\"random\",\n  \"fgsm\"]\nbudget = 0.1\n"), 3);
    }

    #[test]
    fn invalid_values_point_at_their_section() {
        assert_eq!(error_line("seed = 1\n\n[train]\nparadigm = \"spo\"\nclip_eta = 2.0\n"), 3);
        assert_eq!(error_line("[mdp]\ngamma = 1.5\n"), 1);
        assert_eq!(error_line("seed = 0\n[policy]\nvariant = \"direct2\"\nalpha = 2.0\nbeta = 0.0\n"), 2);
        assert_eq!(error_line("\n[mdp]\nfile = \"missing.toml\"\n"), 3);
    }

    #[test]
    fn gamma_override_and_seed_override() {
        let cfg = parse("[mdp]\ngamma = 0.5\n[train]\nparadigm = \"spo\"\n").unwrap();
        assert_eq!(cfg.mdp.gamma(), 0.5);
        let cfg = cfg.with_seed(9);
        assert_eq!(cfg.train.unwrap().seed, 9);
    }
}
