//! Shell frontend: evaluate chain rules over dag files, find fma-minimal
//! accumulation schedules, and drive the set-union ⇄ differentiation
//! reduction end to end. Decision subcommands exit 0 for yes, 1 for no;
//! any validation or I/O failure exits 2.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crdiff::{
    ec_solve_exact, ec_verify, hessian_chain, lift_solution, monomial_min_fma, optimal_bracketing,
    path_sum_jacobian, reduce_to_crd, reduction_chain_monomials, reduction_pth_derivative,
    CostedTensor, Dag, DagFile, EcCaps, EnsembleInstance, Monomial, ReductionArtifact, Scalar,
    ScalarKind, Schedule, SearchCaps, UnionSequence,
};

#[derive(Parser)]
#[command(
    name = "crdiff",
    version,
    about = "Chain rules over dags, fma-minimal accumulation schedules, and the set-union reduction"
)]
struct Cli {
    /// Require dag files to use this scalar field (they declare their own).
    #[arg(long, global = true, value_enum)]
    scalar: Option<ScalarArg>,

    /// Worker threads for the exact schedule search (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Omit wall-clock timing so output is byte-stable.
    #[arg(long, global = true)]
    no_timing: bool,

    /// Cap on distinct atoms accepted by the exact schedule search.
    #[arg(long, global = true, default_value_t = 24)]
    max_atoms: usize,

    /// Cap on schedule length / union count explored by exact searches.
    #[arg(long, global = true, default_value_t = 24)]
    max_k: usize,

    /// Emit reports as JSON instead of key: value text.
    #[arg(long, global = true)]
    json: bool,

    #[command(subcommand)]
    command: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScalarArg {
    Rational,
    Float,
}

#[derive(Subcommand)]
enum Cmd {
    /// Evaluate a derivative of a dag file.
    Eval {
        file: PathBuf,
        /// Derivative order: 1 (any dag), 2 (chains), or p (reduction-structured chains).
        #[arg(long, default_value = "1", value_parser = ["1", "2", "p"])]
        order: String,
        /// Concrete order for --order p.
        #[arg(long)]
        p: Option<u32>,
        /// Also report the fma-minimal schedule (rational reduction chains only).
        #[arg(long)]
        optimal_schedule: bool,
    },
    /// Cheapest association of a dense Jacobian chain, dims given as n0 n1 … nq.
    Bracket {
        #[arg(required = true)]
        dims: Vec<usize>,
    },
    /// Decide whether monomial targets fit a multiplication budget (exit 0 yes, 1 no).
    Schedule {
        file: PathBuf,
        /// Multiplication budget K.
        #[arg(short = 'k', long)]
        budget: u64,
    },
    /// Solve or verify a set-union construction instance.
    Ec {
        file: PathBuf,
        #[command(subcommand)]
        action: EcAction,
    },
    /// Translate an instance into a derivative-accumulation chain artifact.
    Reduce {
        file: PathBuf,
        /// Derivative order p ≥ 1 of the generated chain.
        #[arg(long)]
        p: u32,
        /// Write the artifact here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Turn a verified schedule on an artifact into a union sequence.
    Lift {
        schedule: PathBuf,
        artifact: PathBuf,
        /// Write the sequence here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render a dag file — or an artifact's per-component chains — as DOT.
    Dot { file: PathBuf },
}

#[derive(Subcommand)]
enum EcAction {
    /// Exact minimal union count, decided against the instance budget K.
    Solve,
    /// Check a union-sequence certificate (exit 0 valid, 1 invalid).
    Verify {
        #[arg(long)]
        sequence: PathBuf,
    },
}

/// Ordered key/value report, printable as text or JSON; wall time is
/// appended unless suppressed.
struct Report {
    fields: Vec<(&'static str, Value)>,
}

impl Report {
    fn new(command: &'static str, digest: String) -> Self {
        Report { fields: vec![("command", json!(command)), ("input", json!(digest))] }
    }

    fn push(&mut self, key: &'static str, value: Value) {
        self.fields.push((key, value));
    }

    fn print(mut self, as_json: bool, started: Option<Instant>) {
        if let Some(t0) = started {
            let ms = t0.elapsed().as_secs_f64() * 1e3;
            self.push("time_ms", json!((ms * 10.0).round() / 10.0));
        }
        if as_json {
            let map: serde_json::Map<String, Value> =
                self.fields.into_iter().map(|(k, v)| (k.to_string(), v)).collect();
            println!("{}", serde_json::to_string_pretty(&Value::Object(map)).unwrap());
        } else {
            for (key, value) in &self.fields {
                match value {
                    Value::String(s) => println!("{key}: {s}"),
                    other => println!("{key}: {other}"),
                }
            }
        }
    }
}

fn digest_bytes(bytes: &[u8]) -> String {
    format!("sha256:{:x}", Sha256::digest(bytes))
}

fn read_input(path: &Path) -> Result<(String, String)> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let digest = digest_bytes(text.as_bytes());
    Ok((text, digest))
}

fn check_scalar(expected: Option<ScalarArg>, found: ScalarKind) -> Result<()> {
    let expected = match expected {
        None => return Ok(()),
        Some(ScalarArg::Rational) => ScalarKind::Rational,
        Some(ScalarArg::Float) => ScalarKind::Float,
    };
    if expected != found {
        bail!(
            "dag file declares scalar `{}`, but --scalar demands `{}`",
            found.as_str(),
            expected.as_str()
        );
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> Result<u8> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot configure thread pool")?;
    }
    let started = (!cli.no_timing).then(Instant::now);
    let search_caps = SearchCaps { max_atoms: cli.max_atoms, max_k: cli.max_k };
    match &cli.command {
        Cmd::Eval { file, order, p, optimal_schedule } => {
            cmd_eval(&cli, started, &search_caps, file, order, *p, *optimal_schedule)
        }
        Cmd::Bracket { dims } => cmd_bracket(&cli, started, dims),
        Cmd::Schedule { file, budget } => cmd_schedule(&cli, started, &search_caps, file, *budget),
        Cmd::Ec { file, action } => cmd_ec(&cli, started, file, action),
        Cmd::Reduce { file, p, out } => cmd_reduce(&cli, started, file, *p, out.as_deref()),
        Cmd::Lift { schedule, artifact, out } => {
            cmd_lift(&cli, started, schedule, artifact, out.as_deref())
        }
        Cmd::Dot { file } => cmd_dot(&cli, file),
    }
}

fn eval_costed<S: Scalar>(
    dag: &Dag<S>,
    order: &str,
    p: Option<u32>,
) -> Result<(CostedTensor<S>, String)> {
    match order {
        "1" => {
            if p.is_some() {
                bail!("--p only applies to --order p");
            }
            Ok((path_sum_jacobian(dag)?, "1".into()))
        }
        "2" => {
            if p.is_some() {
                bail!("--p only applies to --order p");
            }
            Ok((hessian_chain(dag)?, "2".into()))
        }
        "p" => {
            let p = p.context("--order p requires --p N")?;
            Ok((reduction_pth_derivative(dag, p)?, format!("p={p}")))
        }
        other => bail!("unknown order `{other}`"),
    }
}

fn push_value<S: Scalar>(report: &mut Report, out: &CostedTensor<S>) {
    report.push("shape", json!(out.value.shape()));
    report.push(
        "value",
        Value::Array(out.value.data().iter().map(S::to_json).collect()),
    );
    report.push("mults", json!(out.mults));
    report.push("adds", json!(out.adds));
}

fn cmd_eval(
    cli: &Cli,
    started: Option<Instant>,
    caps: &SearchCaps,
    file: &Path,
    order: &str,
    p: Option<u32>,
    optimal_schedule: bool,
) -> Result<u8> {
    let (text, digest) = read_input(file)?;
    let parsed = DagFile::parse_str(&text)?;
    check_scalar(cli.scalar, parsed.kind())?;
    let mut report = Report::new("eval", digest);
    match parsed {
        DagFile::Rational(dag) => {
            let (out, label) = eval_costed(&dag, order, p)?;
            report.push("order", json!(label));
            push_value(&mut report, &out);
            if optimal_schedule {
                let p = p.context("--optimal-schedule requires --order p with --p N")?;
                let (_, targets) = reduction_chain_monomials(&dag, p)?;
                let decision = monomial_min_fma(&targets, caps.max_k as u64, caps)?;
                match (decision.min_mults, decision.schedule) {
                    (Some(min), Some(schedule)) => {
                        report.push("optimal_mults", json!(min));
                        report.push("schedule", schedule.to_json());
                    }
                    _ => report.push(
                        "optimal_mults",
                        json!(format!("none within {} steps", caps.max_k)),
                    ),
                }
            }
        }
        DagFile::Float(dag) => {
            if optimal_schedule {
                bail!("--optimal-schedule needs exact rational scalars");
            }
            let (out, label) = eval_costed(&dag, order, p)?;
            report.push("order", json!(label));
            push_value(&mut report, &out);
        }
    }
    report.print(cli.json, started);
    Ok(0)
}

fn cmd_bracket(cli: &Cli, started: Option<Instant>, dims: &[usize]) -> Result<u8> {
    let spelled = dims.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ");
    let (cost, tree) = optimal_bracketing(dims)?;
    let mut report = Report::new("bracket", digest_bytes(spelled.as_bytes()));
    report.push("dims", json!(dims));
    report.push("optimum", json!(cost));
    report.push("association", json!(tree.render()));
    report.print(cli.json, started);
    Ok(0)
}

fn parse_targets(text: &str) -> Result<Vec<Monomial>> {
    let v: Value = serde_json::from_str(text).context("targets file is not JSON")?;
    let arr = v
        .get("targets")
        .and_then(Value::as_array)
        .context("targets file needs a `targets` array of atom-name arrays")?;
    arr.iter()
        .map(|t| {
            t.as_array()
                .context("each target must be an array of atom names")?
                .iter()
                .map(|a| {
                    a.as_str()
                        .map(str::to_string)
                        .context("atom names must be strings")
                })
                .collect()
        })
        .collect()
}

fn cmd_schedule(
    cli: &Cli,
    started: Option<Instant>,
    caps: &SearchCaps,
    file: &Path,
    budget: u64,
) -> Result<u8> {
    let (text, digest) = read_input(file)?;
    let targets = parse_targets(&text)?;
    let decision = monomial_min_fma(&targets, budget, caps)?;
    let mut report = Report::new("schedule", digest);
    report.push("budget", json!(budget));
    report.push("decision", json!(decision.feasible));
    if let Some(min) = decision.min_mults {
        report.push("optimum", json!(min));
    }
    if let Some(schedule) = &decision.schedule {
        report.push("schedule", schedule.to_json());
    }
    report.print(cli.json, started);
    Ok(if decision.feasible { 0 } else { 1 })
}

fn cmd_ec(cli: &Cli, started: Option<Instant>, file: &Path, action: &EcAction) -> Result<u8> {
    let (text, digest) = read_input(file)?;
    let instance = EnsembleInstance::parse_str(&text)?;
    match action {
        EcAction::Solve => {
            let caps = EcCaps {
                max_labels: cli.max_atoms,
                max_subsets: EcCaps::default().max_subsets,
                max_k: cli.max_k,
            };
            let solution = ec_solve_exact(&instance, &caps)?;
            let mut report = Report::new("ec solve", digest);
            report.push("budget", json!(instance.k));
            report.push("decision", json!(solution.feasible));
            match solution.min_unions {
                Some(min) => report.push("optimum", json!(min)),
                None => report.push("optimum", json!(format!("> {}", cli.max_k))),
            }
            if let Some(seq) = &solution.sequence {
                report.push("sequence", seq.to_json());
            }
            report.print(cli.json, started);
            Ok(if solution.feasible { 0 } else { 1 })
        }
        EcAction::Verify { sequence } => {
            let (seq_text, _) = read_input(sequence)?;
            let seq = UnionSequence::parse_str(&seq_text)?;
            let check = ec_verify(&seq, &instance);
            let mut report = Report::new("ec verify", digest);
            report.push("unions", json!(seq.len()));
            report.push("decision", json!(check.ok));
            if let Some(reason) = &check.reason {
                report.push("reason", json!(reason));
            }
            report.print(cli.json, started);
            Ok(if check.ok { 0 } else { 1 })
        }
    }
}

fn cmd_reduce(
    cli: &Cli,
    started: Option<Instant>,
    file: &Path,
    p: u32,
    out: Option<&Path>,
) -> Result<u8> {
    let (text, digest) = read_input(file)?;
    let instance = EnsembleInstance::parse_str(&text)?;
    let artifact = reduce_to_crd(&instance, p)?;
    let payload = serde_json::to_string_pretty(&artifact.to_json()).unwrap();
    match out {
        None => println!("{payload}"),
        Some(path) => {
            fs::write(path, payload + "\n")
                .with_context(|| format!("cannot write {}", path.display()))?;
            let mut report = Report::new("reduce", digest);
            report.push("p", json!(p));
            report.push("q", json!(artifact.q));
            report.push("k_prime", json!(artifact.k_prime));
            report.push("padding_primes", json!(artifact.padding_primes));
            report.push("out", json!(path.display().to_string()));
            report.print(cli.json, started);
        }
    }
    Ok(0)
}

fn cmd_lift(
    cli: &Cli,
    started: Option<Instant>,
    schedule: &Path,
    artifact: &Path,
    out: Option<&Path>,
) -> Result<u8> {
    let (schedule_text, schedule_digest) = read_input(schedule)?;
    let (artifact_text, _) = read_input(artifact)?;
    let schedule = Schedule::parse_str(&schedule_text)?;
    let artifact = ReductionArtifact::parse_str(&artifact_text)?;
    let sequence = lift_solution(&schedule, &artifact)?;
    let payload = serde_json::to_string_pretty(&sequence.to_json()).unwrap();
    match out {
        None => println!("{payload}"),
        Some(path) => {
            fs::write(path, payload + "\n")
                .with_context(|| format!("cannot write {}", path.display()))?;
            let mut report = Report::new("lift", schedule_digest);
            report.push("unions", json!(sequence.len()));
            report.push("out", json!(path.display().to_string()));
            report.print(cli.json, started);
        }
    }
    Ok(0)
}

fn cmd_dot(cli: &Cli, file: &Path) -> Result<u8> {
    let (text, _) = read_input(file)?;
    let v: Value = serde_json::from_str(&text).context("input is not JSON")?;
    let dot = if v.get("vertices").is_some() {
        match DagFile::parse_str(&text)? {
            DagFile::Rational(dag) => {
                check_scalar(cli.scalar, ScalarKind::Rational)?;
                dag.to_dot()
            }
            DagFile::Float(dag) => {
                check_scalar(cli.scalar, ScalarKind::Float)?;
                dag.to_dot()
            }
        }
    } else if v.get("instance").is_some() && v.get("chain").is_some() {
        ReductionArtifact::from_json(&v)?.component_dot()
    } else {
        bail!("input is neither a dag file nor a reduction artifact");
    };
    print!("{dot}");
    Ok(0)
}
