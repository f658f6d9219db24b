//! Command-line driver for scenario files.
//!
//! Exit codes: 0 all requested verdicts pass, 1 some verdict failed,
//! 2 bad input (parse, type, or io error), 3 internal invariant
//! violation. Machine-readable reports are byte-deterministic for a
//! fixed input; timing appears only in the human summary.

use std::env;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use degree2::scenario::{
    self, parse_file, parse_str, CoisoBlock, ParseOptions, RunOptions, RunReport, Scenario,
    ScenarioError, TaskName,
};

#[derive(Parser)]
#[command(name = "degree2", version, about = "Exact engine for degree-2 graded symplectic scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate the hamiltonian and every declared data block.
    Validate {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the coisotropic reduction, with quadratic and Dirac
    /// companions when the file declares them.
    Reduce {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the moment-map reduction declared in the ham block.
    HamReduce {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Run the file's own task list and emit the machine report.
    Report {
        file: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// List or replay the bundled scenario corpus.
    Corpus {
        /// Print the available scenario names and labels.
        #[arg(long)]
        list: bool,
        /// Replay every scenario and compare against its golden report.
        #[arg(long)]
        run_all: bool,
        /// Replay a single scenario by name.
        #[arg(long)]
        run: Option<String>,
    },
}

#[derive(Args)]
struct Common {
    /// Override the seed recorded in the scenario file.
    #[arg(long)]
    seed: Option<u64>,
    /// Zero-level sample points for the rank checks.
    #[arg(long, default_value_t = 3)]
    samples: usize,
    /// Reject declared polynomials above this coordinate degree.
    #[arg(long)]
    max_degree: Option<usize>,
    /// Write the machine-readable report to this path.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match panic::catch_unwind(AssertUnwindSafe(|| dispatch(cli))) {
        Ok(Ok(code)) => ExitCode::from(code),
        Ok(Err(e)) => {
            eprintln!("error: {e}");
            match e {
                ScenarioError::Internal(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
        Err(_) => {
            eprintln!("error: internal panic");
            ExitCode::from(3)
        }
    }
}

fn dispatch(cli: Cli) -> Result<u8, ScenarioError> {
    match cli.command {
        Command::Validate { file, common } => {
            let sc = load(&file, &common)?;
            let tasks = validation_tasks(&sc);
            run_and_print(&sc, Some(&tasks), &common, false)
        }
        Command::Reduce { file, common } => {
            let sc = load(&file, &common)?;
            let tasks = reduction_tasks(&sc)?;
            run_and_print(&sc, Some(&tasks), &common, false)
        }
        Command::HamReduce { file, common } => {
            let sc = load(&file, &common)?;
            run_and_print(&sc, Some(&[TaskName::HamReduce]), &common, false)
        }
        Command::Report { file, common } => {
            let sc = load(&file, &common)?;
            run_and_print(&sc, None, &common, true)
        }
        Command::Corpus { list, run_all, run } => corpus_command(list, run_all, run),
    }
}

fn load(file: &Path, common: &Common) -> Result<Scenario, ScenarioError> {
    parse_file(file, &ParseOptions { max_degree: common.max_degree })
}

/// Every validation the declared blocks support.
fn validation_tasks(sc: &Scenario) -> Vec<TaskName> {
    let mut tasks = vec![TaskName::ValidateTheta, TaskName::Axioms];
    if sc.coiso.is_some() {
        tasks.push(TaskName::ValidateCoiso);
    }
    if sc.gcs.is_some() {
        tasks.push(TaskName::ValidateGcs);
    }
    if sc.ham.is_some() {
        tasks.push(TaskName::ValidateAlgebra);
        if sc.ham.as_ref().is_some_and(|h| h.route.is_some()) {
            tasks.push(TaskName::ValidateAction);
        }
    }
    if sc.extended.is_some() {
        tasks.push(TaskName::ExtendedAction);
    }
    tasks
}

/// The reduction plus whatever companion structures are declared.
fn reduction_tasks(sc: &Scenario) -> Result<Vec<TaskName>, ScenarioError> {
    scenario::task_available(sc, TaskName::Reduce)?;
    let mut tasks = vec![TaskName::Reduce];
    let geometric = matches!(sc.coiso, Some(CoisoBlock::Geometric(_)));
    if sc.gcs.is_some() && geometric {
        tasks.push(TaskName::ReduceGcs);
    }
    if sc.dirac.is_some() && geometric {
        tasks.push(TaskName::ReduceDirac);
    }
    Ok(tasks)
}

/// Runs either an explicit task list or the file's own (`None`), writes
/// the machine report if requested, prints the human summary (or, for
/// `report` without `--out`, the machine report itself).
fn run_and_print(
    sc: &Scenario,
    tasks: Option<&[TaskName]>,
    common: &Common,
    machine_to_stdout: bool,
) -> Result<u8, ScenarioError> {
    let opts = RunOptions { seed: common.seed, samples: common.samples };
    let start = Instant::now();
    let report = match tasks {
        Some(list) => scenario::run_tasks(sc, list, &opts)?,
        None => scenario::run(sc, &opts)?,
    };
    let elapsed = start.elapsed();
    if let Some(path) = &common.out {
        fs::write(path, report.render()).map_err(|e| ScenarioError::Io {
            origin: path.display().to_string(),
            msg: e.to_string(),
        })?;
        print_summary(&report, elapsed.as_secs_f64());
        println!("report written to {}", path.display());
    } else if machine_to_stdout {
        print!("{}", report.render());
    } else {
        print_summary(&report, elapsed.as_secs_f64());
    }
    Ok(if report.all_pass() { 0 } else { 1 })
}

fn print_summary(report: &RunReport, seconds: f64) {
    println!("scenario: {}", report.label);
    println!("kind: {}", report.kind);
    println!("seed: {}", report.seed);
    for o in &report.outcomes {
        let verdict = if o.pass { "pass" } else { "fail" };
        let expected = if o.expect_pass { "pass" } else { "fail" };
        if o.pass == o.expect_pass {
            println!("  {:<16} {verdict}", o.name.as_str());
        } else {
            println!("  {:<16} {verdict} (expected {expected})", o.name.as_str());
        }
    }
    let status = if report.all_pass() { "pass" } else { "fail" };
    println!(
        "result: {status}  tasks: {}  mismatches: {}  time: {:.1}ms",
        report.outcomes.len(),
        report.mismatches(),
        seconds * 1e3
    );
}

/// A corpus entry: scenario source plus the golden report, if any.
struct CorpusEntry {
    name: String,
    source: String,
    golden: Option<String>,
}

/// Bundled corpus, or the contents of `DEGREE2_CORPUS_DIR` when set
/// (scenarios as `<dir>/*.scn`, goldens as `<dir>/golden/<name>.report`).
fn corpus_entries() -> Result<Vec<CorpusEntry>, ScenarioError> {
    if let Ok(dir) = env::var("DEGREE2_CORPUS_DIR") {
        let dir = PathBuf::from(dir);
        let rd = fs::read_dir(&dir).map_err(|e| ScenarioError::Io {
            origin: dir.display().to_string(),
            msg: e.to_string(),
        })?;
        let mut entries = Vec::new();
        for item in rd {
            let item = item.map_err(|e| ScenarioError::Io {
                origin: dir.display().to_string(),
                msg: e.to_string(),
            })?;
            let path = item.path();
            if path.extension().and_then(|s| s.to_str()) != Some("scn") {
                continue;
            }
            let name = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            let source = fs::read_to_string(&path).map_err(|e| ScenarioError::Io {
                origin: path.display().to_string(),
                msg: e.to_string(),
            })?;
            let golden = fs::read_to_string(dir.join("golden").join(format!("{name}.report"))).ok();
            entries.push(CorpusEntry { name, source, golden });
        }
        entries.sort_by(|a, b| a.name.cmp(&b.name));
        Ok(entries)
    } else {
        let goldens = scenario::corpus_golden();
        Ok(scenario::corpus()
            .iter()
            .map(|&(name, source)| CorpusEntry {
                name: name.to_string(),
                source: source.to_string(),
                golden: goldens
                    .iter()
                    .find(|&&(g, _)| g == name)
                    .map(|&(_, text)| text.to_string()),
            })
            .collect())
    }
}

fn corpus_command(list: bool, run_all: bool, run: Option<String>) -> Result<u8, ScenarioError> {
    let entries = corpus_entries()?;
    if list {
        for e in &entries {
            let sc = parse_str(&e.name, &e.source, &ParseOptions::default())?;
            println!("{:<28} {}", e.name, sc.label);
        }
        return Ok(0);
    }
    let selected: Vec<&CorpusEntry> = if let Some(name) = &run {
        let found: Vec<&CorpusEntry> = entries.iter().filter(|e| &e.name == name).collect();
        if found.is_empty() {
            return Err(ScenarioError::Io {
                origin: name.clone(),
                msg: "no such corpus scenario".to_string(),
            });
        }
        found
    } else if run_all {
        entries.iter().collect()
    } else {
        return Err(ScenarioError::Io {
            origin: "corpus".to_string(),
            msg: "pass --list, --run-all, or --run <name>".to_string(),
        });
    };
    let mut all_ok = true;
    for e in selected {
        let sc = parse_str(&e.name, &e.source, &ParseOptions::default())?;
        let report = scenario::run(&sc, &RunOptions::default())?;
        let status = match &e.golden {
            Some(golden) if !golden.is_empty() => {
                if report.render() == *golden {
                    "ok"
                } else {
                    "DIFFERS from golden"
                }
            }
            _ => {
                if report.mismatches() == 0 {
                    "ok (no golden; expectations met)"
                } else {
                    "MISMATCHED expectations"
                }
            }
        };
        if status != "ok" && !status.starts_with("ok ") {
            all_ok = false;
        }
        println!("{:<28} {status}", e.name);
    }
    Ok(if all_ok { 0 } else { 1 })
}
