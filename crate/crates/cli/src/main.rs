use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anonfd::detectors::AnyHistory;
use anonfd::harness::{
    self, parse_json, CampaignSpec, ConfigError, HarnessError, Inputs, Mode, Scenario, ScenarioRef,
};
use anonfd::model::{PatternDoc, PermutationSource};
use anonfd::simulator::Trace;
use anonfd::verify::{check_history_any, CheckReport};
use clap::{Args, Parser, Subcommand};

const PASS: u8 = 0;
const PROPERTY_FAILURE: u8 = 1;
const USAGE: u8 = 2;
const INTERNAL: u8 = 3;

#[derive(Parser)]
#[command(
    name = "anonfd",
    version,
    about = "Simulate and check anonymous failure detectors and consensus"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one scenario and check the trace.
    Run {
        /// Scenario file (a campaign file is accepted and its scenario used).
        scenario: PathBuf,
        #[command(flatten)]
        over: Overrides,
        /// Directory for trace.jsonl and report.json.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a seed sweep (or exploration) described by a campaign file.
    Campaign {
        campaign: PathBuf,
        #[command(flatten)]
        over: Overrides,
        /// Worker threads; all cores by default.
        #[arg(long)]
        jobs: Option<usize>,
        /// Directory for summary.json and reports.jsonl.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Enumerate every schedule and crash placement of a small scenario.
    Explore {
        scenario: PathBuf,
        /// Only this input vector, e.g. `011`.
        #[arg(long)]
        inputs: Option<String>,
        /// Monitor only this property; repeatable.
        #[arg(long = "check")]
        checks: Vec<String>,
        /// Directory for violating traces and schedules.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Re-run the checkers on a saved trace.
    Check {
        trace: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Validate a detector history file against a failure pattern.
    ValidateHistory {
        history: PathBuf,
        /// Pattern file: {"n": .., "f": .., "crash": {..}}.
        #[arg(long)]
        pattern: PathBuf,
        /// Also check closure under all relabellings of the processes.
        #[arg(long)]
        anonymity: bool,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone, Default)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    horizon: Option<u64>,
    /// fifo, random or crash-adjacent.
    #[arg(long)]
    policy: Option<String>,
}

impl Overrides {
    fn apply(&self, sc: &mut Scenario) {
        if let Some(s) = self.seed {
            sc.seed = s;
        }
        if self.horizon.is_some() {
            sc.horizon = self.horizon;
        }
        if let Some(p) = &self.policy {
            sc.policy = p.clone();
        }
    }

    fn flags(&self) -> String {
        let mut s = String::new();
        if let Some(h) = self.horizon {
            s += &format!(" --horizon {h}");
        }
        if let Some(p) = &self.policy {
            s += &format!(" --policy {p}");
        }
        s
    }
}

enum Failure {
    Usage(String),
    Internal(String),
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Usage(format!("invalid configuration: {e}"))
    }
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_config() {
            Failure::Usage(e.to_string())
        } else {
            Failure::Internal(e.to_string())
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), Failure> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)
            .map_err(|e| Failure::Internal(format!("cannot create {}: {e}", dir.display())))?;
    }
    fs::write(path, contents)
        .map_err(|e| Failure::Internal(format!("cannot write {}: {e}", path.display())))
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("reports serialize") + "\n"
}

/// Loads a scenario file, or the scenario of a campaign file.
fn load_scenario(path: &Path) -> Result<Scenario, Failure> {
    let text = read(path)?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| Failure::Usage(format!("{}: not JSON: {e}", path.display())))?;
    if value.get("seeds").is_some() {
        let spec: CampaignSpec = parse_json(&text)?;
        return campaign_scenario(&spec, path);
    }
    Ok(Scenario::from_json(&text)?)
}

fn campaign_scenario(spec: &CampaignSpec, path: &Path) -> Result<Scenario, Failure> {
    match &spec.scenario {
        ScenarioRef::Inline(sc) => {
            sc.validate()?;
            Ok((**sc).clone())
        }
        ScenarioRef::Path(p) => {
            let full = path.parent().unwrap_or(Path::new(".")).join(p);
            load_scenario(&full)
        }
    }
}

fn print_checks(checks: &[CheckReport]) {
    for c in checks {
        let verdict = serde_json::to_value(c.verdict)
            .ok()
            .and_then(|v| v.as_str().map(String::from))
            .unwrap_or_default();
        match &c.detail {
            Some(d) => println!("  {:<26} {verdict:<9} {d}", c.property),
            None => println!("  {:<26} {verdict}", c.property),
        }
    }
}

fn cmd_run(path: &Path, over: &Overrides, out: Option<&Path>) -> Result<u8, Failure> {
    let mut sc = load_scenario(path)?;
    over.apply(&mut sc);
    let seed = sc.seed;
    let outcome = harness::run_scenario(&sc, seed)?;
    let report = &outcome.report;
    println!(
        "{} n={} f={} seed={} steps={} truncated={}",
        sc.algorithm, report.n, report.f, seed, report.end_step, report.truncated
    );
    print_checks(&report.checks);
    if let Some(dir) = out {
        write(&dir.join("trace.jsonl"), &outcome.trace.to_jsonl())?;
        write(&dir.join("report.json"), &json(report))?;
    }
    if report.passed {
        println!("PASS");
        Ok(PASS)
    } else {
        println!(
            "FAIL {}: reproduce with `anonfd run {} --seed {seed}{}`",
            report.failed_properties().join(","),
            path.display(),
            over.flags()
        );
        Ok(PROPERTY_FAILURE)
    }
}

fn cmd_campaign(
    path: &Path,
    over: &Overrides,
    jobs: Option<usize>,
    out: Option<&Path>,
) -> Result<u8, Failure> {
    let text = read(path)?;
    let spec: CampaignSpec = parse_json(&text)?;
    spec.validate()?;
    let mut sc = campaign_scenario(&spec, path)?;
    over.apply(&mut sc);
    let out_dir = out.map(Path::to_path_buf).or_else(|| {
        spec.out
            .as_ref()
            .map(|o| path.parent().unwrap_or(Path::new(".")).join(o))
    });
    if spec.mode == Mode::Explore {
        return explore(&sc, path, spec.checks.as_deref(), out_dir.as_deref());
    }
    let flags = over.flags();
    let repro = |seed: u64| format!("anonfd run {} --seed {seed}{flags}", path.display());
    let (summary, reports) =
        harness::run_campaign(&sc, spec.seeds, spec.checks.as_deref(), jobs, &repro)?;
    println!(
        "{} n={} f={} seeds {}..{}: {} runs, {} failing, {} truncated",
        summary.algorithm,
        summary.n,
        summary.f,
        spec.seeds.start,
        spec.seeds.start + spec.seeds.count,
        summary.summary.runs,
        summary.failures.len(),
        summary.truncated
    );
    for (property, counts) in &summary.summary.counts {
        let parts: Vec<String> = counts.iter().map(|(v, c)| format!("{v}={c}")).collect();
        println!("  {property:<26} {}", parts.join(" "));
    }
    if let (Some(rate), Some(ok)) = (summary.success_rate, summary.successes) {
        let bound = 2.0 / 3.0;
        println!(
            "  success rate {ok}/{} = {rate:.4} ({} the 2/3 bound)",
            spec.seeds.count,
            if rate >= bound { "meets" } else { "misses" }
        );
    }
    for f in &summary.failures {
        println!(
            "FAIL seed {} {}: reproduce with `{}`",
            f.seed,
            f.properties.join(","),
            f.repro
        );
    }
    if let Some(dir) = out_dir {
        write(&dir.join("summary.json"), &json(&summary))?;
        let lines: String = reports
            .iter()
            .map(|r| serde_json::to_string(r).expect("reports serialize") + "\n")
            .collect();
        write(&dir.join("reports.jsonl"), &lines)?;
    }
    Ok(if summary.passed() {
        PASS
    } else {
        PROPERTY_FAILURE
    })
}

fn parse_inputs(s: &str, n: usize) -> Result<Vec<u8>, Failure> {
    let v: Option<Vec<u8>> = s.chars().map(|c| c.to_digit(2).map(|d| d as u8)).collect();
    match v {
        Some(v) if v.len() == n => Ok(v),
        _ => Err(Failure::Usage(format!(
            "--inputs: expected {n} binary digits, got `{s}`"
        ))),
    }
}

fn cmd_explore(
    path: &Path,
    inputs: Option<&str>,
    checks: &[String],
    out: Option<&Path>,
) -> Result<u8, Failure> {
    let mut sc = load_scenario(path)?;
    if let Some(s) = inputs {
        sc.inputs = Inputs::Fixed(parse_inputs(s, sc.n)?);
    }
    explore(&sc, path, (!checks.is_empty()).then_some(checks), out)
}

fn explore(
    sc: &Scenario,
    path: &Path,
    checks: Option<&[String]>,
    out: Option<&Path>,
) -> Result<u8, Failure> {
    let summary = harness::explore_scenario_with(sc, checks)?;
    let note = if summary.complete() {
        ""
    } else if summary.stopped_at_violation() {
        " (stopped at the first violation)"
    } else {
        " (partial: a budget was exhausted)"
    };
    println!(
        "{} n={} f={} explored: {} input vectors, {} states, {}{} schedules{note}",
        summary.algorithm,
        summary.n,
        summary.f,
        summary.runs.len(),
        summary.states(),
        if summary.traces_saturated() {
            ">= "
        } else {
            ""
        },
        summary.traces(),
    );
    println!("  properties: {}", summary.properties.join(", "));
    let mut k = 0;
    for run in &summary.runs {
        let bits: String = run.inputs.iter().map(|b| b.to_string()).collect();
        for v in &run.violations {
            let only: String = checks
                .unwrap_or_default()
                .iter()
                .map(|c| format!(" --check {c}"))
                .collect();
            let mut line = format!(
                "FAIL inputs {bits}: {}: reproduce with `anonfd explore {} --inputs {bits}{only}`",
                v.message,
                path.display()
            );
            if let Some(dir) = out {
                let trace = dir.join(format!("violation-{k}.jsonl"));
                write(&trace, &v.trace.to_jsonl())?;
                write(
                    &dir.join(format!("violation-{k}.schedule.json")),
                    &json(&v.schedule),
                )?;
                line += &format!("; trace {}", trace.display());
            }
            println!("{line}");
            k += 1;
        }
    }
    if let Some(dir) = out {
        write(&dir.join("explore.json"), &json(&summary))?;
    }
    Ok(if summary.passed() {
        PASS
    } else {
        PROPERTY_FAILURE
    })
}

fn cmd_check(path: &Path, out: Option<&Path>) -> Result<u8, Failure> {
    let file = fs::File::open(path)
        .map_err(|e| Failure::Usage(format!("cannot read {}: {e}", path.display())))?;
    let trace = Trace::read_jsonl(std::io::BufReader::new(file))
        .map_err(|e| Failure::Usage(format!("{}: not a trace: {e}", path.display())))?;
    let checks = harness::check_trace(&trace)?;
    println!(
        "{} n={} f={} seed={}",
        trace.header.algorithm, trace.header.n, trace.header.f, trace.header.seed
    );
    print_checks(&checks);
    if let Some(o) = out {
        write(o, &json(&checks))?;
    }
    Ok(if checks.iter().any(CheckReport::failed) {
        PROPERTY_FAILURE
    } else {
        PASS
    })
}

fn cmd_validate_history(
    history: &Path,
    pattern: &Path,
    anonymity: bool,
    out: Option<&Path>,
) -> Result<u8, Failure> {
    let doc: PatternDoc = parse_json(&read(pattern)?)?;
    let (cfg, f) = doc
        .into_parts()
        .map_err(|e| Failure::Usage(format!("{}: {e}", pattern.display())))?;
    let value: serde_json::Value = serde_json::from_str(&read(history)?)
        .map_err(|e| Failure::Usage(format!("{}: not JSON: {e}", history.display())))?;
    let h = AnyHistory::from_json(value)
        .map_err(|e| Failure::Usage(format!("{}: {e}", history.display())))?;
    if h.n() != cfg.n {
        return Err(Failure::Usage(format!(
            "history has {} processes, pattern has {}",
            h.n(),
            cfg.n
        )));
    }
    let mut reports = vec![check_history_any(&h, &f).map_err(|e| Failure::Usage(e.to_string()))?];
    if anonymity && !reports[0].failed() {
        let perms = PermutationSource::Auto { seed: 0 };
        reports.push(
            anonfd::verify::check_permutation_closure_any(&h, &f, &perms)
                .map_err(|e| Failure::Usage(e.to_string()))?,
        );
    }
    print_checks(&reports);
    if let Some(o) = out {
        write(o, &json(&reports))?;
    }
    Ok(if reports.iter().any(CheckReport::failed) {
        PROPERTY_FAILURE
    } else {
        PASS
    })
}

fn dispatch(cli: Cli) -> Result<u8, Failure> {
    match cli.command {
        Command::Run {
            scenario,
            over,
            out,
        } => cmd_run(&scenario, &over, out.as_deref()),
        Command::Campaign {
            campaign,
            over,
            jobs,
            out,
        } => cmd_campaign(&campaign, &over, jobs, out.as_deref()),
        Command::Explore {
            scenario,
            inputs,
            checks,
            out,
        } => cmd_explore(&scenario, inputs.as_deref(), &checks, out.as_deref()),
        Command::Check { trace, out } => cmd_check(&trace, out.as_deref()),
        Command::ValidateHistory {
            history,
            pattern,
            anonymity,
            out,
        } => cmd_validate_history(&history, &pattern, anonymity, out.as_deref()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { USAGE } else { PASS };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let code = match std::panic::catch_unwind(|| dispatch(cli)) {
        Ok(Ok(code)) => code,
        Ok(Err(Failure::Usage(msg))) => {
            eprintln!("error: {msg}");
            USAGE
        }
        Ok(Err(Failure::Internal(msg))) => {
            eprintln!("internal error: {msg}");
            INTERNAL
        }
        Err(_) => INTERNAL,
    };
    ExitCode::from(code)
}
