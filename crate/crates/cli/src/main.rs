use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{bail, Context, Result};
use clap::{ArgAction, Args, Parser, Subcommand, ValueEnum};
use sha2::{Digest, Sha256};

use cexplain_core::milp::{
    build_explanation_milp, build_minimal_state_milp, export_lp, parse_lp, EncodingOptions, DEFAULT_EPSILON,
};
use cexplain_core::explain::MEMBERSHIP_TOL;
use cexplain_core::model_file::{read_model, write_model};
use cexplain_core::pipeline::{
    check, render_series, render_text, run, scale_series, Encoding, ExplainOptions, Outcome, DEFAULT_TERMINAL_ACTION,
};
use cexplain_core::solver::{solve, SolverConfig};
use cexplain_core::templates::{enumerate_candidates, Vocabulary};
use cexplain_core::warehouse::{generate_grid, read_layout, write_layout, GridLayout, SlipRule};
use cexplain_core::{Mdp, ReachabilityRequirement, SolveStatus, TargetSpec};

const EXIT_HOLDS: u8 = 0;
const EXIT_INPUT: u8 = 1;
const EXIT_VIOLATED: u8 = 2;
const EXIT_LIMIT: u8 = 3;

#[derive(Parser)]
#[command(name = "cexplain", version, about = "Explainable counterexamples for MDP reachability requirements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Model-check the requirement: exit 0 if it holds, 2 if it is violated.
    Check(RequirementArgs),
    /// Compute a minimal sound and complete explanation of a violation.
    Explain {
        #[command(flatten)]
        req: RequirementArgs,
        #[command(flatten)]
        run: RunArgs,
        /// Largest number of propositions in one sentence.
        #[arg(long, default_value_t = 1)]
        max_conjunction: usize,
        /// Action used to describe target states.
        #[arg(long, default_value = DEFAULT_TERMINAL_ACTION)]
        terminal_action: String,
        /// Require a sentence describing the terminal action in every target
        /// the counterexample enters.
        #[arg(long, default_value_t = true, action = ArgAction::Set)]
        describe_targets: bool,
    },
    /// Compute a counterexample with the fewest states.
    Baseline {
        #[command(flatten)]
        req: RequirementArgs,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Write the MILP in LP format.
    ExportLp {
        #[command(flatten)]
        req: RequirementArgs,
        #[arg(long, value_enum, default_value_t = EncodingArg::Explain)]
        encoding: EncodingArg,
        #[arg(long, default_value_t = DEFAULT_EPSILON)]
        epsilon: f64,
        #[arg(long, default_value_t = 1)]
        max_conjunction: usize,
        #[arg(long, default_value = DEFAULT_TERMINAL_ACTION)]
        terminal_action: String,
        #[arg(long, default_value_t = true, action = ArgAction::Set)]
        describe_targets: bool,
        /// Output file (stdout when omitted).
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Solve an LP-format file with the built-in solver.
    SolveLp {
        file: PathBuf,
        #[command(flatten)]
        limits: LimitArgs,
    },
    /// Generate a grid warehouse model.
    Warehouse {
        #[command(flatten)]
        layout: LayoutArgs,
        /// Write `<prefix>.mdp` and `<prefix>.layout` instead of printing the model.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the explanation pipeline on warehouses of increasing size.
    Series {
        /// Comma-separated grid sides.
        #[arg(long, value_delimiter = ',', default_value = "10,20")]
        n_list: Vec<usize>,
        #[arg(long, default_value_t = 0.1)]
        lambda: f64,
        #[arg(long, default_value_t = 0.1)]
        slip: f64,
        #[arg(long, value_enum, default_value_t = SlipArg::Counterclockwise)]
        slip_rule: SlipArg,
        /// Also run the state-minimal encoding.
        #[arg(long)]
        baseline: bool,
        /// Add wall-clock columns.
        #[arg(long)]
        timings: bool,
        #[command(flatten)]
        limits: LimitArgs,
    },
}

#[derive(Args)]
struct RequirementArgs {
    /// Model file.
    model: PathBuf,
    /// Target: a proposition name or a comma-separated list of state names.
    #[arg(long)]
    target: String,
    /// Threshold λ of "the targets are reached with probability at most λ".
    #[arg(long)]
    lambda: f64,
}

#[derive(Args)]
struct LimitArgs {
    /// Solver time limit in seconds (default 3600).
    #[arg(long, env = "CEXPLAIN_TIME_LIMIT")]
    time_limit: Option<f64>,
    #[arg(long)]
    node_limit: Option<u64>,
    /// Distance from 0 or 1 below which a binary counts as integral.
    #[arg(long)]
    integrality_tol: Option<f64>,
}

impl LimitArgs {
    fn config(&self) -> Result<SolverConfig> {
        let mut cfg = SolverConfig::default();
        if let Some(t) = self.time_limit {
            if !(t > 0.0 && t.is_finite()) {
                bail!("time limit must be a positive number of seconds");
            }
            cfg.time_limit = Duration::from_secs_f64(t);
        }
        if let Some(n) = self.node_limit {
            cfg.node_limit = n;
        }
        if let Some(t) = self.integrality_tol {
            if !(t > 0.0 && t < 0.5) {
                bail!("integrality tolerance must lie in (0, 0.5)");
            }
            cfg.integrality_tol = t;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, default_value_t = DEFAULT_EPSILON)]
    epsilon: f64,
    /// Smallest reachability value that makes a state a subsystem member.
    #[arg(long, default_value_t = MEMBERSHIP_TOL)]
    membership_tol: f64,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
    /// Include wall-clock timings in the report.
    #[arg(long)]
    timings: bool,
    #[command(flatten)]
    limits: LimitArgs,
}

#[derive(Args)]
struct LayoutArgs {
    /// Grid side.
    #[arg(long, default_value_t = 10)]
    n: usize,
    /// Layout file; overrides --n and the other layout flags.
    #[arg(long)]
    layout: Option<PathBuf>,
    #[arg(long)]
    slip: Option<f64>,
    #[arg(long, value_enum)]
    slip_rule: Option<SlipArg>,
    /// Start cell as `row,col`.
    #[arg(long, value_delimiter = ',', num_args = 2)]
    start: Option<Vec<usize>>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Machine,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EncodingArg {
    Explain,
    Minstate,
}

#[derive(Clone, Copy, ValueEnum)]
enum SlipArg {
    Clockwise,
    Counterclockwise,
}

impl From<SlipArg> for SlipRule {
    fn from(s: SlipArg) -> Self {
        match s {
            SlipArg::Clockwise => SlipRule::Clockwise,
            SlipArg::Counterclockwise => SlipRule::Counterclockwise,
        }
    }
}

struct Loaded {
    mdp: Mdp,
    vocabulary: Vocabulary,
    req: ReachabilityRequirement,
    digest: (String, String),
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn load(args: &RequirementArgs) -> Result<Loaded> {
    let bytes = std::fs::read(&args.model).with_context(|| format!("cannot read {}", args.model.display()))?;
    let (mdp, vocabulary) = read_model(&args.model)?;
    let spec = match mdp.prop_by_name(&args.target) {
        Some(p) => TargetSpec::Proposition(p),
        None => {
            let mut states = Vec::new();
            for name in args.target.split(',').map(str::trim) {
                match mdp.state_by_name(name) {
                    Some(s) => states.push(s),
                    None => bail!("target `{name}` is neither a proposition nor a state of the model"),
                }
            }
            TargetSpec::States(states)
        }
    };
    // λ = 1 is outside the model's domain but can never be violated, so the
    // commands accept it and report that the requirement holds.
    let req = if args.lambda == 1.0 {
        ReachabilityRequirement { targets: spec, lambda: 1.0 }
    } else {
        ReachabilityRequirement::new(spec, args.lambda)?
    };
    let name = args.model.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    Ok(Loaded { mdp, vocabulary, req, digest: (name, sha256_hex(&bytes)) })
}

fn holds_report(l: &Loaded, max_probability: f64, format: Format) -> Result<String> {
    Ok(match format {
        Format::Text => format!(
            "input {} sha256 {}\nrequirement: {}\nmax probability from {}: {:.6}\nno counterexample exists: the requirement holds\n",
            l.digest.0,
            l.digest.1,
            l.req.describe(&l.mdp),
            l.mdp.state_name(l.mdp.initial()),
            max_probability
        ),
        Format::Machine => {
            let v = serde_json::json!({
                "inputs": [[l.digest.0, l.digest.1]],
                "requirement": l.req.describe(&l.mdp),
                "max_probability": max_probability,
                "holds": true,
            });
            serde_json::to_string_pretty(&v)? + "\n"
        }
    })
}

fn cmd_check(args: &RequirementArgs) -> Result<u8> {
    let l = load(args)?;
    let vmax = check(&l.mdp, &l.req, &Default::default())?;
    println!("requirement: {}", l.req.describe(&l.mdp));
    println!("max probability from {}: {:.6}", l.mdp.state_name(l.mdp.initial()), vmax);
    if vmax <= l.req.lambda {
        println!("holds");
        Ok(EXIT_HOLDS)
    } else {
        println!("violated");
        Ok(EXIT_VIOLATED)
    }
}

fn cmd_run(req: &RequirementArgs, args: &RunArgs, opts: ExplainOptions, encoding: Encoding) -> Result<u8> {
    let l = load(req)?;
    let outcome = run(&l.mdp, &l.vocabulary, &l.req, &opts, encoding)?;
    let run = match outcome {
        Outcome::Holds { max_probability } => {
            print!("{}", holds_report(&l, max_probability, args.format)?);
            return Ok(EXIT_HOLDS);
        }
        Outcome::Violated(run) => run,
    };
    let mut report = run.report;
    report.inputs.push(l.digest.clone());
    if !args.timings {
        report.timings = None;
    }
    match args.format {
        Format::Text => print!("{}", render_text(&report)),
        Format::Machine => println!("{}", serde_json::to_string_pretty(&report)?),
    }
    Ok(if report.status == SolveStatus::Optimal { EXIT_VIOLATED } else { EXIT_LIMIT })
}

fn explain_options(run: &RunArgs, max_conjunction: usize, terminal: &str, describe_targets: bool) -> Result<ExplainOptions> {
    if !(run.membership_tol > 0.0 && run.membership_tol < 1.0) {
        bail!("membership tolerance must lie in (0, 1)");
    }
    Ok(ExplainOptions {
        epsilon: run.epsilon,
        max_conjunction,
        terminal_action: describe_targets.then(|| terminal.to_string()),
        membership_tol: run.membership_tol,
        solver: run.limits.config()?,
        ..ExplainOptions::default()
    })
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn layout_from(args: &LayoutArgs) -> Result<GridLayout> {
    if let Some(path) = &args.layout {
        return Ok(read_layout(path)?);
    }
    let mut layout = GridLayout::default_for(args.n);
    if let Some(s) = args.slip {
        layout.slip = s;
    }
    if let Some(r) = args.slip_rule {
        layout.slip_rule = r.into();
    }
    if let Some(s) = &args.start {
        layout.start = (s[0], s[1]);
    }
    layout.validate()?;
    Ok(layout)
}

fn dispatch(cli: Cli) -> Result<u8> {
    match cli.command {
        Command::Check(args) => cmd_check(&args),
        Command::Explain { req, run, max_conjunction, terminal_action, describe_targets } => {
            let opts = explain_options(&run, max_conjunction, &terminal_action, describe_targets)?;
            cmd_run(&req, &run, opts, Encoding::Explanation)
        }
        Command::Baseline { req, run } => {
            let opts = explain_options(&run, 1, DEFAULT_TERMINAL_ACTION, true)?;
            cmd_run(&req, &run, opts, Encoding::MinimalStates)
        }
        Command::ExportLp { req, encoding, epsilon, max_conjunction, terminal_action, describe_targets, out } => {
            if max_conjunction == 0 {
                bail!("max conjunction must be at least 1");
            }
            let l = load(&req)?;
            let terminal = if describe_targets { l.mdp.action_by_name(&terminal_action) } else { None };
            let opts = EncodingOptions { epsilon, terminal_action: terminal };
            let problem = match encoding {
                EncodingArg::Explain => {
                    build_explanation_milp(&l.mdp, &l.req, &enumerate_candidates(&l.mdp, max_conjunction), &opts)?
                }
                EncodingArg::Minstate => build_minimal_state_milp(&l.mdp, &l.req, &opts)?,
            };
            write_output(out.as_deref(), &export_lp(&problem))?;
            Ok(EXIT_HOLDS)
        }
        Command::SolveLp { file, limits } => {
            let text = std::fs::read_to_string(&file).with_context(|| format!("cannot read {}", file.display()))?;
            let problem = parse_lp(&text).map_err(|e| anyhow::anyhow!("{}:{}", file.display(), e))?;
            let sol = solve(&problem, &limits.config()?);
            println!("status: {:?}", sol.status);
            match sol.objective {
                Some(o) => println!("objective: {o}"),
                None => println!("objective: none"),
            }
            if let Some(values) = &sol.values {
                for (c, v) in problem.columns().iter().zip(values) {
                    if v.abs() > 1e-9 {
                        println!("{} = {}", c.name, v);
                    }
                }
            }
            Ok(if sol.is_optimal() { EXIT_HOLDS } else { EXIT_LIMIT })
        }
        Command::Warehouse { layout, out } => {
            let layout = layout_from(&layout)?;
            let w = generate_grid(&layout)?;
            let model = write_model(&w.mdp, &w.vocabulary);
            match out {
                Some(prefix) => {
                    let with_ext = |ext: &str| {
                        let mut p = prefix.clone().into_os_string();
                        p.push(ext);
                        PathBuf::from(p)
                    };
                    write_output(Some(&with_ext(".mdp")), &model)?;
                    write_output(Some(&with_ext(".layout")), &write_layout(&layout))?;
                    println!(
                        "{} states, {} transitions, target proposition {}",
                        w.mdp.num_states(),
                        w.mdp.num_transitions(),
                        w.target_prop
                    );
                }
                None => print!("{model}"),
            }
            Ok(EXIT_HOLDS)
        }
        Command::Series { n_list, lambda, slip, slip_rule, baseline, timings, limits } => {
            if let Some(&n) = n_list.iter().find(|&&n| n < 3) {
                bail!("grid side must be at least 3 (got {n})");
            }
            let opts = ExplainOptions { solver: limits.config()?, ..ExplainOptions::default() };
            let layout = |n| GridLayout { slip, slip_rule: slip_rule.into(), ..GridLayout::default_for(n) };
            let rows = scale_series(&n_list, layout, lambda, &opts, baseline)?;
            print!("{}", render_series(&rows, timings));
            let limited = rows.iter().any(|r| {
                r.status.is_some_and(|s| s != SolveStatus::Optimal)
                    || r.baseline_status.is_some_and(|s| s != SolveStatus::Optimal)
            });
            Ok(if limited { EXIT_LIMIT } else { EXIT_HOLDS })
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_INPUT } else { EXIT_HOLDS });
        }
    };
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INPUT)
        }
    }
}
