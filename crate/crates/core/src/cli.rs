//! Command-line front end: `reproduce-toy`, `train`, `sweep`, `attack`, `basins`.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::analysis::{self, Objective, BOUNDARY_BAND, FOSP_TOL_GRAD};
use crate::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::manifest::{OutputSet, RunManifest};
use crate::mdp::{self, TabularIsaMdp};
use crate::policy::PolicySpec;
use crate::textio::fmt_g;
use crate::trainers;

pub const EXIT_OK: i32 = 0;
pub const EXIT_CHECK_FAILED: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INTERNAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "robustpo", version, about = "Exact robust policy optimisation on tabular ISA-MDPs")]
struct Cli {
    /// Experiment config (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory; defaults to the config's `out`, then `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 1 gives byte-identical outputs.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Machine-readable stdout.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Verify the two-state toy analysis end to end.
    ReproduceToy,
    /// Run a trainer (or a paired comparison) and write its trace.
    Train,
    /// Natural/robust value landscape of the direct form.
    Sweep,
    /// Evaluate a policy under the attack suite.
    Attack,
    /// Terminal-point clusters of a trainer from random inits.
    Basins,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Self::ReproduceToy => "reproduce-toy",
            Self::Train => "train",
            Self::Sweep => "sweep",
            Self::Attack => "attack",
            Self::Basins => "basins",
        }
    }
}

/// Failure classes mapped onto exit codes.
enum Failure {
    Config(String),
    Internal(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Self::Internal(e.to_string())
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, outcome: Result<(bool, String)>) -> CheckResult {
    match outcome {
        Ok((passed, detail)) => CheckResult { name, passed, detail },
        Err(e) => CheckResult {
            name,
            passed: false,
            detail: format!("error: {e}"),
        },
    }
}

/// Every toy claim, evaluated on `mdp` (the built-in toy unless overridden).
pub fn toy_checks(mdp: &TabularIsaMdp) -> Vec<CheckResult> {
    let values = |a: f64, b: f64| -> Result<Vec<f64>> {
        let pm = PolicySpec::direct2(a, b)?.policy_matrix(mdp)?;
        Ok(mdp::solve_value(mdp, &pm)?.v)
    };
    let mut out = Vec::new();
    out.push(check("values", (|| {
        let targets = [
            ((1.0, 1.0), [0.16, 1.89]),
            ((0.0, 1.0), [-0.81, 1.26]),
            ((0.0, 0.0), [-0.95, -0.35]),
            ((1.0, 0.0), [-2.47, -1.71]),
        ];
        let mut ok = true;
        let mut parts = Vec::new();
        for ((a, b), want) in targets {
            let v = values(a, b)?;
            ok &= v.iter().zip(want).all(|(x, w)| (x - w).abs() <= 0.01);
            parts.push(format!("pi_{a},{b}=({:.3},{:.3})", v[0], v[1]));
        }
        Ok((ok, parts.join(" ")))
    })()));
    out.push(check("closed_form", (|| {
        let mut worst: f64 = 0.0;
        for (a, b) in [(0.5, 0.5), (0.2, 0.7), (0.9, 0.1), (1.0, 1.0), (0.0, 0.0)] {
            let c = analysis::toy_closed_form(a, b);
            let v = values(a, b)?;
            worst = worst.max((c.v1 - v[0]).abs()).max((c.v2 - v[1]).abs());
        }
        Ok((worst <= 1e-9, format!("max |closed form - solver| = {worst:.3e}")))
    })()));
    out.push(check("beta_tilde", (|| {
        let bt = analysis::find_beta_tilde_on(mdp)?;
        Ok(((0.776..=0.778).contains(&bt), format!("beta_tilde = {bt:.9}")))
    })()));
    out.push(check("robust_region", (|| {
        let grid = analysis::sweep_landscape_on(mdp, 101, &[])?;
        let (wrong, checked) = grid.closed_form_disagreements(BOUNDARY_BAND);
        Ok((wrong == 0, format!("{wrong} of {checked} cells disagree outside the band")))
    })()));
    out.push(check("kkt", (|| {
        let bt = analysis::find_beta_tilde_on(mdp)?;
        let arpo00 = analysis::detect_fosp_on(mdp, (0.0, 0.0), Objective::Arpo, FOSP_TOL_GRAD, bt)?.is_fosp;
        let spo00 = analysis::detect_fosp_on(mdp, (0.0, 0.0), Objective::Spo, FOSP_TOL_GRAD, bt)?.is_fosp;
        let spo11 = analysis::detect_fosp_on(mdp, (1.0, 1.0), Objective::Spo, FOSP_TOL_GRAD, bt)?.is_fosp;
        Ok((
            arpo00 && !spo00 && spo11,
            format!("arpo(0,0)={arpo00} spo(0,0)={spo00} spo(1,1)={spo11}"),
        ))
    })()));
    out.push(check("value_gap", (|| {
        let r = analysis::value_gap_check_on(mdp)?;
        let ok = (r.gap_spo - 3.12).abs() <= 0.02 && (r.gap_arpo - 1.44).abs() <= 0.02 && r.inequality_holds;
        Ok((ok, format!("gap_spo = {:.4}, gap_arpo = {:.4}", r.gap_spo, r.gap_arpo)))
    })()));
    out.push(check("cut_point", (|| {
        let removed = analysis::cut_point_check_on(mdp, 100, true)?;
        let restored = analysis::cut_point_check_on(mdp, 100, false)?;
        Ok((
            removed && !restored,
            format!("disconnected without disk: {removed}, with disk: {restored}"),
        ))
    })()));
    out.push(check("ordering", (|| {
        let ok = analysis::value_ordering_check_on(mdp)?;
        Ok((ok, "V(1,1) > V(0,1) > V(0,0) > V(1,0) at both states".into()))
    })()));
    out
}

struct Context {
    config: Option<ExperimentConfig>,
    seed: u64,
    out_dir: PathBuf,
    workers: Option<usize>,
    json: bool,
}

impl Context {
    fn config(&self) -> std::result::Result<&ExperimentConfig, Failure> {
        self.config
            .as_ref()
            .ok_or_else(|| Failure::Config("this command needs --config".into()))
    }

    fn manifest(&self, command: &str) -> RunManifest {
        RunManifest::new(command, self.seed, self.workers, self.config.as_ref().map(|c| c.text.clone()))
    }
}

fn missing(section: &str) -> Failure {
    Failure::Config(format!("config has no [{section}] section"))
}

fn cmd_reproduce_toy(ctx: &Context, out: &mut Vec<u8>, explicit_out: bool) -> std::result::Result<i32, Failure> {
    let mdp = ctx.config.as_ref().map_or_else(TabularIsaMdp::toy, |c| c.mdp.clone());
    let manifest = ctx.manifest("reproduce-toy");
    let checks = toy_checks(&mdp);
    let all = checks.iter().all(|c| c.passed);
    let doc = serde_json::json!({ "passed": all, "checks": checks });
    let json_text = serde_json::to_string_pretty(&doc).expect("plain document") + "\n";
    if ctx.json {
        write!(out, "{json_text}").map_err(Error::from)?;
    } else {
        writeln!(out, "{:<14} {:<6} detail", "check", "result").map_err(Error::from)?;
        for c in &checks {
            writeln!(out, "{:<14} {:<6} {}", c.name, if c.passed { "PASS" } else { "FAIL" }, c.detail)
                .map_err(Error::from)?;
        }
        let failed: Vec<&str> = checks.iter().filter(|c| !c.passed).map(|c| c.name).collect();
        if failed.is_empty() {
            writeln!(out, "all {} checks passed", checks.len()).map_err(Error::from)?;
        } else {
            writeln!(out, "failed: {}", failed.join(", ")).map_err(Error::from)?;
        }
    }
    if explicit_out {
        let mut files = OutputSet::create(&ctx.out_dir)?;
        files.write("reproduce_toy.json", &json_text)?;
        files.finish(manifest)?;
    }
    Ok(if all { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn cmd_train(ctx: &Context, out: &mut Vec<u8>) -> std::result::Result<i32, Failure> {
    let cfg = ctx.config()?;
    let train = cfg.train.as_ref().ok_or_else(|| missing("train"))?;
    if cfg.policy.is_none() && cfg.paired.is_none() {
        return Err(Failure::Config("train needs a [policy] or a [paired]/[compare] pair".into()));
    }
    let manifest = ctx.manifest("train");
    let mut files = OutputSet::create(&ctx.out_dir)?;
    if let Some(policy) = &cfg.policy {
        let trace = trainers::train(&cfg.mdp, policy, train)?;
        files.write("trace.csv", &trace.to_csv())?;
        files.write("trace.jsonl", &trace.to_jsonl())?;
        let last = trace.last();
        let final_policy = policy.with_params(&last.params)?;
        files.write("final_policy.toml", &final_policy.to_toml_string())?;
        writeln!(
            out,
            "final v_nat = {} v_adv = {} after {} iterations",
            fmt_g(last.v_nat),
            fmt_g(last.v_adv),
            last.iter
        )
        .map_err(Error::from)?;
    }
    if let Some(p) = &cfg.paired {
        let report = analysis::paired_comparison(&cfg.mdp, train, &p.compare, p.n_inits, p.init_scale, ctx.seed)?;
        files.write("comparison.csv", &report.to_csv())?;
        writeln!(
            out,
            "median final v_nat: {} = {}, {} = {} ({} of {} paired wins for {})",
            report.label_a,
            fmt_g(report.median_a),
            report.label_b,
            fmt_g(report.median_b),
            report.b_wins,
            report.rows.len(),
            report.label_b
        )
        .map_err(Error::from)?;
    }
    files.finish(manifest)?;
    Ok(EXIT_OK)
}

fn cmd_sweep(ctx: &Context, out: &mut Vec<u8>) -> std::result::Result<i32, Failure> {
    let cfg = ctx.config()?;
    let s = cfg.sweep.as_ref().ok_or_else(|| missing("sweep"))?;
    let manifest = ctx.manifest("sweep");
    let grid = analysis::sweep_landscape_on(&cfg.mdp, s.resolution, &s.objectives)?;
    let mut files = OutputSet::create(&ctx.out_dir)?;
    files.write("landscape.csv", &grid.to_csv())?;
    files.finish(manifest)?;
    let worst = grid.max_rob_minus_nat();
    writeln!(out, "{} cells, max(v_rob - v_nat) = {}", grid.cells.len(), fmt_g(worst)).map_err(Error::from)?;
    Ok(if worst <= 1e-9 { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn cmd_attack(ctx: &Context, out: &mut Vec<u8>) -> std::result::Result<i32, Failure> {
    let cfg = ctx.config()?;
    let a = cfg.attack.as_ref().ok_or_else(|| missing("attack"))?;
    let policy = cfg.policy.as_ref().ok_or_else(|| missing("policy"))?;
    let manifest = ctx.manifest("attack");
    let report = analysis::attack_eval(&cfg.mdp, policy, &a.attacks, a.budget, ctx.seed)?;
    let mut files = OutputSet::create(&ctx.out_dir)?;
    files.write("attacks.csv", &report.to_csv())?;
    files.finish(manifest)?;
    write!(out, "{}", report.to_csv()).map_err(Error::from)?;
    let ok = match report.get("exact_strongest") {
        Some(s) => report.records.iter().all(|r| s.value <= r.value),
        None => true,
    };
    Ok(if ok { EXIT_OK } else { EXIT_CHECK_FAILED })
}

fn cmd_basins(ctx: &Context, out: &mut Vec<u8>) -> std::result::Result<i32, Failure> {
    let cfg = ctx.config()?;
    let b = cfg.basins.as_ref().ok_or_else(|| missing("basins"))?;
    let train = cfg.train.as_ref().ok_or_else(|| missing("train"))?;
    let manifest = ctx.manifest("basins");
    let report = analysis::basin_statistics(&cfg.mdp, train, b.n_inits, &b.init, b.cluster_radius, ctx.seed)?;
    let mut terminals = String::from("init,alpha0,beta0,alpha,beta\n");
    for (i, (p0, p)) in report.inits.iter().zip(&report.terminals).enumerate() {
        terminals.push_str(&format!("{i},{},{},{},{}\n", fmt_g(p0.0), fmt_g(p0.1), fmt_g(p.0), fmt_g(p.1)));
    }
    let mut files = OutputSet::create(&ctx.out_dir)?;
    files.write("basins.csv", &report.to_csv())?;
    files.write("terminals.csv", &terminals)?;
    files.finish(manifest)?;
    write!(out, "{}", report.to_csv()).map_err(Error::from)?;
    Ok(EXIT_OK)
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = if e.use_stderr() {
                write!(err, "{e}")
            } else {
                write!(out, "{e}")
            };
            return code;
        }
    };
    if cli.workers == Some(0) {
        let _ = writeln!(err, "error: --workers must be >= 1");
        return EXIT_CONFIG;
    }
    let config = match &cli.config {
        None => None,
        Some(path) => match ExperimentConfig::load(path) {
            Ok(c) => Some(match cli.seed {
                Some(s) => c.with_seed(s),
                None => c,
            }),
            Err(e) => {
                let _ = writeln!(err, "config error in {}: {e}", path.display());
                return EXIT_CONFIG;
            }
        },
    };
    let seed = cli.seed.or(config.as_ref().map(|c| c.seed)).unwrap_or(0);
    let out_dir = cli
        .out
        .clone()
        .or_else(|| config.as_ref().and_then(|c| c.out.clone()))
        .unwrap_or_else(|| PathBuf::from("out"));
    let ctx = Context {
        config,
        seed,
        out_dir,
        workers: cli.workers,
        json: cli.json,
    };
    let explicit_out = cli.out.is_some();
    let command = &cli.command;
    let body = || {
        let mut buf = Vec::new();
        let r = match command {
            Command::ReproduceToy => cmd_reproduce_toy(&ctx, &mut buf, explicit_out),
            Command::Train => cmd_train(&ctx, &mut buf),
            Command::Sweep => cmd_sweep(&ctx, &mut buf),
            Command::Attack => cmd_attack(&ctx, &mut buf),
            Command::Basins => cmd_basins(&ctx, &mut buf),
        };
        (r, buf)
    };
    let (result, stdout) = match cli.workers {
        None => body(),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(body),
            Err(e) => (Err(Failure::Internal(format!("thread pool: {e}"))), Vec::new()),
        },
    };
    if out.write_all(&stdout).is_err() {
        return EXIT_INTERNAL;
    }
    match result {
        Ok(code) => code,
        Err(Failure::Config(msg)) => {
            let _ = writeln!(err, "config error: {msg}");
            EXIT_CONFIG
        }
        Err(Failure::Internal(msg)) => {
            let _ = writeln!(err, "{} failed: {msg}", cli.command.name());
            EXIT_INTERNAL
        }
    }
}
