use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use robust_pigou_core::applications::{
    robust_vaccine_policy, screening_policy, solve_abatement_floor, CostModel,
};
use robust_pigou_core::config::{Application, BuildError, RawConfig, RunConfig};
use robust_pigou_core::io::{
    fmt_sig12, read_schedule_csv, round_sig12, write_mechanism_csv, write_nature_csv,
};
use robust_pigou_core::oracle::{certify, OracleError, Quantization};
use robust_pigou_core::{
    make_schedule, nature_best_response, solve, transfers_from_allocation, worst_case_welfare,
    AllocationSchedule, Mechanism, Policy,
};

mod report;

use report::{policy_json, scenario_json};

const EXIT_USAGE: u8 = 2;
const EXIT_INVALID: u8 = 3;
const EXIT_SWEEP_INVALID: u8 = 4;
const EXIT_ORACLE_FAIL: u8 = 5;
const EXIT_TOO_LARGE: u8 = 6;

#[derive(Parser)]
#[command(
    name = "robust-pigou",
    version,
    about = "Worst-case-optimal externality regulation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Scenario config file.
    #[arg(long)]
    config: PathBuf,
    /// Output root; each run writes to <root>/<config-hash>/.
    #[arg(long, env = "ROBUST_PIGOU_OUT", default_value = "out")]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the configured scenario.
    Solve {
        #[command(flatten)]
        common: Common,
        /// Utility of the lowest type in the emitted transfers.
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        u0: f64,
    },
    /// Re-solve over a grid of one parameter.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        param: SweepParam,
        /// `lo,hi,steps` with steps >= 2.
        #[arg(long, value_parser = parse_range, allow_hyphen_values = true)]
        range: SweepRange,
    },
    /// Compare the solver with brute-force minimax on a small lattice.
    Oracle {
        #[command(flatten)]
        common: Common,
        /// Number of types; overrides `types.n` for uniform grids.
        #[arg(long, default_value_t = 6)]
        types: usize,
        /// Number of quantity levels in [0, cap].
        #[arg(long, default_value_t = 7)]
        levels: usize,
        /// Shift the solver's schedule by this amount before comparing.
        #[arg(long, hide = true, allow_negative_numbers = true)]
        perturb_solver: Option<f64>,
    },
    /// Worst-case welfare of a schedule read from CSV (needs a `q` column).
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        schedule: PathBuf,
        #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
        u0: f64,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum SweepParam {
    Mu,
    Cost,
    #[value(name = "xi_bar")]
    XiBar,
}

impl SweepParam {
    fn key(self) -> &'static str {
        match self {
            SweepParam::Mu => "mu",
            SweepParam::Cost => "cost",
            SweepParam::XiBar => "xi_bar",
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct SweepRange {
    lo: f64,
    hi: f64,
    steps: usize,
}

impl SweepRange {
    fn values(&self) -> Vec<f64> {
        (0..self.steps)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / (self.steps - 1) as f64)
            .collect()
    }
}

fn parse_range(s: &str) -> Result<SweepRange, String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let [lo, hi, steps] = parts[..] else {
        return Err("expected `lo,hi,steps`".into());
    };
    let lo: f64 = lo.parse().map_err(|_| format!("bad lower bound `{lo}`"))?;
    let hi: f64 = hi.parse().map_err(|_| format!("bad upper bound `{hi}`"))?;
    let steps: usize = steps
        .parse()
        .map_err(|_| format!("bad step count `{steps}`"))?;
    if !(lo.is_finite() && hi.is_finite()) {
        return Err("bounds must be finite".into());
    }
    if steps < 2 {
        return Err("steps must be at least 2".into());
    }
    Ok(SweepRange { lo, hi, steps })
}

/// A failed run: message for stderr and the process exit code.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::new(1, format!("i/o error: {e}"))
    }
}

impl From<robust_pigou_core::io::IoError> for Failure {
    fn from(e: robust_pigou_core::io::IoError) -> Self {
        Failure::new(1, format!("i/o error: {e}"))
    }
}

fn build_failure(e: BuildError) -> Failure {
    match e {
        BuildError::Parse(_) => Failure::new(EXIT_USAGE, e.to_string()),
        BuildError::Invalid(_) => Failure::new(EXIT_INVALID, e.to_string()),
    }
}

fn load(path: &Path) -> Result<RawConfig, Failure> {
    RawConfig::from_path(path).map_err(|e| Failure::new(EXIT_USAGE, e.to_string()))
}

fn config_hash(command: &str, raw: &RawConfig, flags: &[(&str, String)]) -> String {
    let mut h = Sha256::new();
    h.update(format!("command = {command}\n"));
    h.update(raw.canonical());
    for (k, v) in flags {
        h.update(format!("--{k} = {v}\n"));
    }
    hex::encode(h.finalize())
}

fn run_dir(root: &Path, hash: &str) -> Result<PathBuf, Failure> {
    let dir = root.join(&hash[..16]);
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

fn write_json(path: &Path, value: &Value) -> Result<(), Failure> {
    let mut text = serde_json::to_string_pretty(value).expect("json values serialize");
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// The application's optimal policy.
fn policy_for(rc: &RunConfig) -> Result<Policy, String> {
    let s = &rc.scenario;
    match rc.application {
        Application::Robust => solve(s).map_err(|e| e.to_string()),
        Application::Vaccines => robust_vaccine_policy(s).map_err(|e| e.to_string()),
        Application::Abatement => {
            let gamma = rc.gamma.expect("validated");
            Ok(solve_abatement_floor(
                &CostModel::QuadraticCost { gamma },
                &s.types,
                s.mu,
                s.cap,
            ))
        }
        Application::Screening => screening_policy(rc.capacity.expect("validated"), s.mu, &s.types)
            .map_err(|e| e.to_string()),
    }
}

/// Schedule, transfers (wait times, payments) and utilities to emit.
fn mechanism_for(rc: &RunConfig, schedule: &AllocationSchedule, u0: f64) -> Mechanism {
    let s = &rc.scenario;
    let grid = s.types.grid();
    let q = schedule.values();
    match rc.application {
        Application::Robust | Application::Vaccines => transfers_from_allocation(schedule, s, u0),
        Application::Screening => Mechanism {
            schedule: schedule.clone(),
            transfers: vec![0.0; q.len()],
            utilities: grid.iter().zip(q).map(|(t, q)| t * q).collect(),
            u0: grid[0] * q[0],
        },
        Application::Abatement => {
            let cost = CostModel::QuadraticCost {
                gamma: rc.gamma.expect("validated"),
            };
            let utilities: Vec<f64> = grid
                .iter()
                .zip(q)
                .map(|(&t, &q)| -cost.cost(q, t))
                .collect();
            Mechanism {
                schedule: schedule.clone(),
                transfers: vec![0.0; q.len()],
                u0: utilities[0],
                utilities,
            }
        }
    }
}

fn has_nature(app: Application) -> bool {
    matches!(app, Application::Robust | Application::Vaccines)
}

fn write_outputs(
    dir: &Path,
    rc: &RunConfig,
    schedule: &AllocationSchedule,
    u0: f64,
) -> Result<Value, Failure> {
    let mech = mechanism_for(rc, schedule, u0);
    write_mechanism_csv(
        fs::File::create(dir.join("schedule.csv"))?,
        &mech,
        &rc.scenario.types,
    )?;
    let mut files = json!({ "schedule": "schedule.csv" });
    if has_nature(rc.application) {
        let m = nature_best_response(schedule, &rc.scenario);
        write_nature_csv(
            fs::File::create(dir.join("nature.csv"))?,
            &m,
            &rc.scenario.types,
        )?;
        files["nature"] = json!("nature.csv");
    }
    Ok(files)
}

fn base_report(command: &str, hash: &str, raw: &RawConfig, rc: &RunConfig) -> Value {
    json!({
        "command": command,
        "toolkit_version": env!("CARGO_PKG_VERSION"),
        "config_hash": hash,
        "config": raw.canonical(),
        "application": rc.application.name(),
        "scenario": scenario_json(&rc.scenario, rc),
    })
}

fn summary(p: &Policy) -> String {
    let param = p
        .kind
        .parameter()
        .map(|x| format!(" parameter={}", fmt_sig12(x)))
        .unwrap_or_default();
    format!(
        "kind={}{param} guarantee={}",
        p.kind.name(),
        fmt_sig12(p.guarantee)
    )
}

fn cmd_solve(common: &Common, u0: f64) -> Result<String, Failure> {
    let raw = load(&common.config)?;
    let rc = raw.build().map_err(build_failure)?;
    let policy = policy_for(&rc).map_err(|e| Failure::new(EXIT_INVALID, e))?;
    let hash = config_hash("solve", &raw, &[("u0", fmt_sig12(u0))]);
    let dir = run_dir(&common.out, &hash)?;
    let mut report = base_report("solve", &hash, &raw, &rc);
    report["policy"] = policy_json(&policy);
    report["files"] = write_outputs(&dir, &rc, &policy.schedule, u0)?;
    write_json(&dir.join("report.json"), &report)?;
    Ok(format!("solve {} -> {}", summary(&policy), dir.display()))
}

struct SweepRow {
    value: f64,
    outcome: Result<Policy, String>,
}

fn cmd_sweep(common: &Common, param: SweepParam, range: SweepRange) -> Result<String, Failure> {
    let raw = load(&common.config)?;
    // parse errors in the base config are usage errors even if the sweep would override them
    if let Err(e @ BuildError::Parse(_)) = raw.build() {
        return Err(build_failure(e));
    }
    let key = param.key();
    let rows: Vec<SweepRow> = range
        .values()
        .into_par_iter()
        .map(|value| {
            let mut point = raw.clone();
            point.set(key, format!("{value:?}")).expect("known key");
            let outcome = point
                .build()
                .map_err(|e| e.to_string())
                .and_then(|rc| policy_for(&rc));
            SweepRow { value, outcome }
        })
        .collect();

    let check_monotone =
        param == SweepParam::Mu && raw.get("sign").unwrap_or("positive") == "positive";
    let hash = config_hash(
        "sweep",
        &raw,
        &[
            ("param", key.to_string()),
            (
                "range",
                format!("{:?},{:?},{}", range.lo, range.hi, range.steps),
            ),
        ],
    );
    let dir = run_dir(&common.out, &hash)?;
    let mut w = String::from(
        &format!("{key},kind,parameter,guarantee,valid,guarantee_nondecreasing,error\n")[..],
    );
    let mut previous: Option<f64> = None;
    let mut invalid = 0;
    let mut all_monotone = true;
    for row in &rows {
        match &row.outcome {
            Ok(p) => {
                let mono = if check_monotone {
                    let ok = previous.is_none_or(|g| p.guarantee >= g - 1e-9);
                    all_monotone &= ok;
                    previous = Some(p.guarantee);
                    ok.to_string()
                } else {
                    String::new()
                };
                w.push_str(&format!(
                    "{},{},{},{},true,{mono},\n",
                    fmt_sig12(row.value),
                    p.kind.name(),
                    p.kind.parameter().map(fmt_sig12).unwrap_or_default(),
                    fmt_sig12(p.guarantee),
                ));
            }
            Err(e) => {
                invalid += 1;
                let e = e
                    .replace(":\n  ", ": ")
                    .replace("\n  ", "; ")
                    .replace('"', "'");
                w.push_str(&format!(
                    "{},invalid,,,false,,\"{e}\"\n",
                    fmt_sig12(row.value)
                ));
            }
        }
    }
    fs::write(dir.join("sweep.csv"), w)?;
    let rc_echo = raw.build().ok();
    let mut report = json!({
        "command": "sweep",
        "toolkit_version": env!("CARGO_PKG_VERSION"),
        "config_hash": hash,
        "config": raw.canonical(),
        "sweep": {
            "param": key,
            "lo": round_sig12(range.lo),
            "hi": round_sig12(range.hi),
            "steps": range.steps,
            "invalid_points": invalid,
            "guarantee_nondecreasing": if check_monotone { json!(all_monotone) } else { Value::Null },
        },
        "files": { "sweep": "sweep.csv" },
    });
    if let Some(rc) = rc_echo {
        report["application"] = json!(rc.application.name());
        report["scenario"] = scenario_json(&rc.scenario, &rc);
    }
    write_json(&dir.join("report.json"), &report)?;
    let line = format!(
        "sweep {key} over {} points ({invalid} invalid) -> {}",
        range.steps,
        dir.display()
    );
    if invalid > 0 {
        return Err(Failure::new(EXIT_SWEEP_INVALID, line));
    }
    Ok(line)
}

fn perturbed(policy: &Policy, rc: &RunConfig, delta: f64) -> Result<f64, Failure> {
    let cap = rc.scenario.cap;
    let values: Vec<f64> = policy
        .schedule
        .values()
        .iter()
        .map(|q| (q + delta).clamp(0.0, cap))
        .collect();
    let schedule = make_schedule(values, &rc.scenario)
        .map_err(|e| Failure::new(1, format!("perturbed schedule: {e}")))?;
    worst_case_welfare(&schedule, &rc.scenario).map_err(|e| Failure::new(1, e.to_string()))
}

fn cmd_oracle(
    common: &Common,
    n_types: usize,
    n_levels: usize,
    perturb: Option<f64>,
) -> Result<String, Failure> {
    let quant = Quantization::new(n_types, n_levels).map_err(|e| match e {
        OracleError::TooLarge { .. } => Failure::new(EXIT_TOO_LARGE, e.to_string()),
        _ => Failure::new(EXIT_USAGE, e.to_string()),
    })?;
    let mut raw = load(&common.config)?;
    if raw.get("types.family").unwrap_or("uniform") == "uniform" {
        raw.set("types.n", n_types.to_string()).expect("known key");
    }
    let rc = raw.build().map_err(build_failure)?;
    if rc.application != Application::Robust {
        return Err(Failure::new(
            EXIT_USAGE,
            "the oracle checks the robust application only",
        ));
    }
    let policy = policy_for(&rc).map_err(|e| Failure::new(EXIT_INVALID, e))?;
    let solver_value = match perturb {
        Some(d) => perturbed(&policy, &rc, d)?,
        None => policy.guarantee,
    };
    let verdict = certify(&rc.scenario, &quant, solver_value).map_err(|e| match e {
        OracleError::TooLarge { .. } => Failure::new(EXIT_TOO_LARGE, e.to_string()),
        _ => Failure::new(EXIT_USAGE, e.to_string()),
    })?;
    let mut flags = vec![
        ("types", n_types.to_string()),
        ("levels", n_levels.to_string()),
    ];
    if let Some(d) = perturb {
        flags.push(("perturb-solver", fmt_sig12(d)));
    }
    let hash = config_hash("oracle", &raw, &flags);
    let dir = run_dir(&common.out, &hash)?;
    let mut report = base_report("oracle", &hash, &raw, &rc);
    report["policy"] = policy_json(&policy);
    report["files"] = write_outputs(&dir, &rc, &policy.schedule, 0.0)?;
    report["oracle"] = json!({
        "types": n_types,
        "levels": n_levels,
        "schedules_evaluated": quant.schedule_count(),
        "brute_force_value": round_sig12(verdict.best_value),
        "brute_force_schedule": verdict.best_schedule.values().iter().map(|&x| round_sig12(x)).collect::<Vec<_>>(),
        "solver_value": round_sig12(verdict.solver_value),
        "gap": round_sig12((verdict.solver_value - verdict.best_value).abs()),
        "gap_bound": round_sig12(verdict.gap_bound),
        "pass": verdict.pass,
    });
    write_json(&dir.join("report.json"), &report)?;
    let line = format!(
        "oracle {} solver={} brute_force={} gap_bound={} -> {}",
        if verdict.pass { "pass" } else { "FAIL" },
        fmt_sig12(verdict.solver_value),
        fmt_sig12(verdict.best_value),
        fmt_sig12(verdict.gap_bound),
        dir.display()
    );
    if !verdict.pass {
        return Err(Failure::new(EXIT_ORACLE_FAIL, line));
    }
    Ok(line)
}

fn cmd_eval(common: &Common, schedule_path: &Path, u0: f64) -> Result<String, Failure> {
    let raw = load(&common.config)?;
    let rc = raw.build().map_err(build_failure)?;
    if !has_nature(rc.application) {
        return Err(Failure::new(
            EXIT_USAGE,
            "eval supports the robust and vaccines applications",
        ));
    }
    let bytes = fs::read(schedule_path)?;
    let file =
        read_schedule_csv(&bytes[..]).map_err(|e| Failure::new(EXIT_USAGE, e.to_string()))?;
    file.check_grid(&rc.scenario.types)
        .map_err(|e| Failure::new(EXIT_INVALID, e.to_string()))?;
    let schedule = make_schedule(file.q, &rc.scenario)
        .map_err(|e| Failure::new(EXIT_INVALID, format!("invalid schedule: {e}")))?;
    let guarantee = worst_case_welfare(&schedule, &rc.scenario)
        .map_err(|e| Failure::new(EXIT_INVALID, e.to_string()))?;
    let digest = hex::encode(Sha256::digest(&bytes));
    let hash = config_hash("eval", &raw, &[("schedule", digest), ("u0", fmt_sig12(u0))]);
    let dir = run_dir(&common.out, &hash)?;
    let mut report = base_report("eval", &hash, &raw, &rc);
    report["evaluation"] = json!({ "guarantee": round_sig12(guarantee) });
    report["files"] = write_outputs(&dir, &rc, &schedule, u0)?;
    write_json(&dir.join("report.json"), &report)?;
    Ok(format!(
        "eval guarantee={} -> {}",
        fmt_sig12(guarantee),
        dir.display()
    ))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let start = Instant::now();
    let result = match &cli.command {
        Command::Solve { common, u0 } => cmd_solve(common, *u0),
        Command::Sweep {
            common,
            param,
            range,
        } => cmd_sweep(common, *param, *range),
        Command::Oracle {
            common,
            types,
            levels,
            perturb_solver,
        } => cmd_oracle(common, *types, *levels, *perturb_solver),
        Command::Eval {
            common,
            schedule,
            u0,
        } => cmd_eval(common, schedule, *u0),
    };
    let secs = start.elapsed().as_secs_f64();
    match result {
        Ok(line) => {
            println!("{line} ({secs:.3}s)");
            ExitCode::SUCCESS
        }
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_parsing() {
        let r = parse_range("0, 0.5, 11").unwrap();
        assert_eq!(r.values().len(), 11);
        assert_eq!(r.values()[10], 0.5);
        assert!(parse_range("0,1,1").is_err());
        assert!(parse_range("0,1").is_err());
        assert!(parse_range("a,1,3").is_err());
    }

    #[test]
    fn hash_depends_on_flags_not_order() {
        let a = RawConfig::parse("mu = 1\ncost = 2").unwrap();
        let b = RawConfig::parse("cost = 2\nmu = 1").unwrap();
        assert_eq!(config_hash("solve", &a, &[]), config_hash("solve", &b, &[]));
        assert_ne!(
            config_hash("solve", &a, &[]),
            config_hash("solve", &a, &[("u0", "1".into())])
        );
        assert_ne!(config_hash("solve", &a, &[]), config_hash("eval", &a, &[]));
    }
}
