//! Command-line front end. Exit codes: 0 ok, 2 bad input, 3 numerical
//! failure, 4 refusal inside a bottleneck region.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::discrete_laplace::{apriori_bounds, u_discrete, u_profile};
use crate::environment::{
    assumption_diagnostics, check_b1, check_first_moment, check_no_bottleneck, cumulative_triplet, gen_characteristics,
    EnvironmentModel,
};
use crate::error::Error;
use crate::feller_csbp::{extinction_prob, u_feller, Horizon};
use crate::limit_solver::{fdd_laplace, solve_u_from, solve_u_ode, LaplaceSolution, SolverConfig};
use crate::measures::LimitTriplet;
use crate::montecarlo::{empirical_laplace, simulate_with, Record, SimConfig};
use crate::scenarios::{build, builtin, builtins, ScenarioSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Parser)]
#[command(name = "gwbranch", version, about = "Laplace exponents of Galton-Watson processes in varying environment and their limits")]
pub struct Cli {
    #[command(flatten)]
    pub global: Global,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Global {
    /// Solver tolerance on the Picard sup-norm change
    #[arg(long, global = true, default_value_t = 1e-10)]
    pub tol: f64,
    /// Panels on [s, t] for the limit solver
    #[arg(long, global = true, default_value_t = 2048)]
    pub mesh: usize,
    /// Master seed for Monte Carlo
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    /// Monte Carlo path count
    #[arg(long, global = true, default_value_t = 10_000)]
    pub paths: usize,
    /// Worker threads for Monte Carlo (0 = all cores)
    #[arg(long, global = true, default_value_t = 0)]
    pub threads: usize,
    /// Write results into this directory instead of stdout
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CheckKind {
    B1,
    A1a2,
    Bottleneck,
    Moment,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Cumulative discrete triplet of an environment up to time t
    Triplet {
        env: PathBuf,
        #[arg(long)]
        t: f64,
    },
    /// Exact u_n(s, t, lambda) by backwards recursion
    Un {
        env: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        s: f64,
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
    },
    /// y -> u_n(y, t, lambda) over a window and its minimum
    Profile {
        env: PathBuf,
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        #[arg(long, default_value_t = 0.0)]
        from: f64,
        #[arg(long)]
        to: Option<f64>,
    },
    /// Solve the backwards equation for u(., t, lambda)
    Solve {
        triplet: PathBuf,
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Left end of the requested range
        #[arg(long, default_value_t = 0.0)]
        s: f64,
        #[arg(long, conflicts_with_all = ["picard", "both"])]
        ode: bool,
        #[arg(long, conflicts_with = "both")]
        picard: bool,
        #[arg(long)]
        both: bool,
    },
    /// exp(-x u(s, t1, lambda1 + u(t1, t2, ...)))
    Fdd {
        triplet: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        s: f64,
        #[arg(long, default_value_t = 1.0)]
        x: f64,
        /// Comma separated t:lambda pairs
        #[arg(long)]
        pairs: String,
    },
    /// Closed form for nu = 0
    Feller {
        triplet: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        s: f64,
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
    },
    /// Extinction probability for nu = 0
    Extinction {
        triplet: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        s: f64,
        #[arg(long, default_value_t = 1.0)]
        x: f64,
        /// Finite horizon; omit for t -> infinity
        #[arg(long)]
        horizon: Option<f64>,
    },
    /// Monte Carlo estimate of E exp(-lambda Z/n) against the exact value
    Mc {
        env: PathBuf,
        #[arg(long)]
        t: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Initial population (default n)
        #[arg(long)]
        z0: Option<u64>,
        /// Also write every path
        #[arg(long)]
        dump_paths: bool,
    },
    /// Convergence table u_n -> u over a scenario's n grid
    Compare {
        /// Scenario file or built-in name
        scenario: String,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Comma separated n values overriding the scenario grid
        #[arg(long)]
        n_grid: Option<String>,
        /// Add a Monte Carlo column with this many paths
        #[arg(long)]
        mc: Option<usize>,
    },
    /// Built-in scenarios
    Scenario {
        #[command(subcommand)]
        action: ScenarioAction,
    },
    /// Hypothesis diagnostics
    Check {
        #[arg(value_enum)]
        kind: CheckKind,
        /// Environment file (bottleneck, moment) or scenario (b1, a1a2)
        target: String,
        #[arg(long, default_value_t = 1.0)]
        t: f64,
        /// Comma separated truncation levels C or probe points x
        #[arg(long)]
        values: Option<String>,
    },
}

#[derive(Debug, Subcommand)]
pub enum ScenarioAction {
    List,
    /// Build a scenario at scale n and write its environment and triplet
    Run {
        scenario: String,
        #[arg(long)]
        n: u64,
    },
}

/// Failure with an exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::PossibleBottleneck { .. } | Error::Annihilation(_) => 4,
            Error::NoConvergence { .. }
            | Error::Explosion { .. }
            | Error::AllPathsOverflowed
            | Error::TruncationLoss { .. }
            | Error::HypothesisViolated { .. } => 3,
            _ => 2,
        };
        Failure { code, message: e.to_string() }
    }
}

fn input_error(msg: impl Into<String>) -> Failure {
    Failure { code: 2, message: msg.into() }
}

type CliResult<T> = std::result::Result<T, Failure>;

fn read_file(path: &Path) -> CliResult<String> {
    std::fs::read_to_string(path).map_err(|e| input_error(format!("{}: {e}", path.display())))
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = read_file(path)?;
    serde_json::from_str(&text)
        .map_err(|e| input_error(format!("{}: line {}, column {}: {e}", path.display(), e.line(), e.column())))
}

fn load_env(path: &Path) -> CliResult<EnvironmentModel> {
    parse_json(path)
}

fn load_triplet(path: &Path) -> CliResult<LimitTriplet> {
    parse_json(path)
}

fn load_scenario(name: &str) -> CliResult<ScenarioSpec> {
    let p = Path::new(name);
    if p.exists() {
        let text = read_file(p)?;
        ScenarioSpec::from_json(&text).map_err(|e| input_error(format!("{}: {e}", p.display())))
    } else {
        Ok(builtin(name)?)
    }
}

fn parse_list<T: std::str::FromStr>(s: &str) -> CliResult<Vec<T>> {
    s.split(',')
        .filter(|x| !x.trim().is_empty())
        .map(|x| x.trim().parse::<T>().map_err(|_| input_error(format!("cannot parse '{x}' in list '{s}'"))))
        .collect()
}

fn parse_pairs(s: &str) -> CliResult<Vec<(f64, f64)>> {
    s.split(',')
        .map(|p| {
            let (a, b) = p.split_once(':').ok_or_else(|| input_error(format!("pair '{p}' must look like t:lambda")))?;
            let t = a.trim().parse().map_err(|_| input_error(format!("bad time in '{p}'")))?;
            let l = b.trim().parse().map_err(|_| input_error(format!("bad lambda in '{p}'")))?;
            Ok((t, l))
        })
        .collect()
}

/// Named outputs of one command.
struct Output {
    files: Vec<(String, String)>,
    report: Vec<String>,
}

impl Output {
    fn new() -> Self {
        Output { files: Vec::new(), report: Vec::new() }
    }

    fn file(&mut self, name: &str, body: String) {
        self.files.push((name.to_string(), body));
    }

    fn note(&mut self, line: String) {
        self.report.push(line);
    }
}

fn json_string(v: &impl serde::Serialize) -> String {
    serde_json::to_string_pretty(v).unwrap_or_else(|_| "null".into()) + "\n"
}

fn solver_config(g: &Global) -> CliResult<SolverConfig> {
    if !(g.tol > 0.0) || g.mesh == 0 {
        return Err(input_error("--tol and --mesh must be positive"));
    }
    Ok(SolverConfig { tol: g.tol, panels: g.mesh, ..SolverConfig::default() })
}

fn solution_output(out: &mut Output, sol: &LaplaceSolution, fmt: Format, stem: &str) {
    match fmt {
        Format::Csv => out.file(&format!("{stem}.csv"), sol.to_csv()),
        Format::Json => {
            let mut meta = sol.metadata_json();
            meta["rows"] = serde_json::json!(sol.rows());
            out.file(&format!("{stem}.json"), json_string(&meta));
        }
    }
    out.note(format!(
        "residual {:e}, iterations {}, error bound {:e}{}",
        sol.residual,
        sol.iterations,
        sol.error_bound,
        sol.ode_discrepancy.map(|d| format!(", ode discrepancy {d:e}")).unwrap_or_default()
    ));
    for w in &sol.warnings {
        out.note(format!("warning: {w}"));
    }
}

fn execute(cli: &Cli) -> CliResult<Output> {
    let g = &cli.global;
    let mut out = Output::new();
    match &cli.command {
        Command::Triplet { env, t } => {
            let env = load_env(env)?;
            let c = cumulative_triplet(&env, *t)?;
            let mut runs = String::from("i_lo,i_hi,alpha_i,beta_i\n");
            for (j, lo, hi) in env.runs(0, env.gamma(*t))? {
                let ch = gen_characteristics(&env.blocks()[j].law, env.n())?;
                let _ = writeln!(runs, "{lo},{hi},{},{}", ch.alpha_i, ch.beta_i);
            }
            match g.format {
                Format::Csv => {
                    out.file("triplet.csv", format!("t,alpha_n,tv_alpha_n,beta_n\n{t},{},{},{}\n", c.alpha, c.tv_alpha, c.beta));
                    out.file("generations.csv", runs);
                }
                Format::Json => out.file(
                    "triplet.json",
                    json_string(&serde_json::json!({"t": t, "alpha_n": c.alpha, "tv_alpha_n": c.tv_alpha, "beta_n": c.beta})),
                ),
            }
        }
        Command::Un { env, s, t, lambda } => {
            let env = load_env(env)?;
            let (u, table) = u_discrete(&env, *s, *t, *lambda)?;
            match g.format {
                Format::Csv => out.file("un.csv", table.to_csv(&env)),
                Format::Json => out.file("un.json", json_string(&serde_json::json!({"s": s, "t": t, "lambda": lambda, "u": u, "overflow": table.overflow}))),
            }
            out.note(format!("u_n({s}, {t}, {lambda}) = {u}"));
        }
        Command::Profile { env, t, lambda, from, to } => {
            let env = load_env(env)?;
            let p = u_profile(&env, *t, *lambda, *from, to.unwrap_or(*t))?;
            match g.format {
                Format::Csv => {
                    let mut s = String::from("i,y,u\n");
                    for (i, y, u) in &p.points {
                        let _ = writeln!(s, "{i},{y},{u}");
                    }
                    out.file("profile.csv", s);
                }
                Format::Json => out.file("profile.json", json_string(&p)),
            }
            out.note(format!("minimum {} at y = {}", p.min_u, p.min_y));
        }
        Command::Solve { triplet, t, lambda, s, ode, picard, both } => {
            let trip = load_triplet(triplet)?;
            let mut cfg = solver_config(g)?;
            if !(*lambda > 0.0) {
                return Err(input_error("--lambda must be > 0"));
            }
            let sol = if *ode {
                if *s != 0.0 {
                    return Err(input_error("--ode solves on [0, t]; drop --s"));
                }
                solve_u_ode(&trip, *t, *lambda, &cfg)?
            } else {
                cfg.ode_check = *both || !*picard;
                solve_u_from(&trip, *s, *t, *lambda, &cfg)?
            };
            if let Some(b) = sol.bottleneck {
                return Err(Error::PossibleBottleneck { domain_start: b }.into());
            }
            if *both {
                if let Some(d) = sol.ode_discrepancy {
                    if d > 10.0 * cfg.tol {
                        return Err(Failure { code: 3, message: format!("Picard and ODE sweeps disagree by {d:e}") });
                    }
                }
            }
            solution_output(&mut out, &sol, g.format, "solution");
        }
        Command::Fdd { triplet, s, x, pairs } => {
            let trip = load_triplet(triplet)?;
            let pairs = parse_pairs(pairs)?;
            let v = fdd_laplace(&trip, *s, &pairs, *x, &solver_config(g)?)?;
            out.file("fdd.json", json_string(&serde_json::json!({"s": s, "x": x, "pairs": pairs, "value": v})));
        }
        Command::Feller { triplet, s, t, lambda } => {
            let trip = load_triplet(triplet)?;
            if !trip.nu.is_zero() {
                return Err(input_error("the closed form needs nu = 0"));
            }
            let u = u_feller(&trip.alpha, &trip.beta, *s, *t, *lambda)?;
            out.file("feller.json", json_string(&serde_json::json!({"s": s, "t": t, "lambda": lambda, "u": u})));
        }
        Command::Extinction { triplet, s, x, horizon } => {
            let trip = load_triplet(triplet)?;
            if !trip.nu.is_zero() {
                return Err(input_error("the closed form needs nu = 0"));
            }
            let h = match horizon {
                Some(t) => Horizon::Finite { t: *t },
                None => Horizon::Infinite,
            };
            let p = extinction_prob(&trip.alpha, &trip.beta, *s, *x, h)?;
            out.file("extinction.json", json_string(&serde_json::json!({"s": s, "x": x, "horizon": horizon, "probability": p})));
        }
        Command::Mc { env, t, lambda, z0, dump_paths } => {
            let env = load_env(env)?;
            let z0 = z0.unwrap_or(env.n());
            let gen = env.gamma(*t);
            let mut cfg = SimConfig::new(z0, gen, g.seed, g.paths);
            if !dump_paths {
                cfg.record = Record::Generations(vec![0, gen]);
            }
            let batch = simulate_with(&env, &cfg)?;
            let est = empirical_laplace(&batch, *t, *lambda)?;
            let exact = (-(z0 as f64 / env.n() as f64) * u_discrete(&env, 0.0, *t, *lambda)?.0).exp();
            let mut summary = batch.summary_json();
            summary["laplace"] = serde_json::json!({"t": t, "lambda": lambda, "mean": est.mean, "se": est.se, "exact": exact});
            out.file("mc.json", json_string(&summary));
            if *dump_paths {
                out.file("paths.csv", batch.paths_csv());
            }
            out.note(format!("empirical {} +- {} vs exact {exact}", est.mean, est.se));
        }
        Command::Compare { scenario, t, lambda, n_grid, mc } => {
            let spec = load_scenario(scenario)?;
            let grid = match n_grid {
                Some(s) => parse_list::<u64>(s)?,
                None => spec.n_grid.clone(),
            };
            let cfg = solver_config(g)?;
            let mut csv = String::from("n,u_n,u,abs_err,mc_mean,mc_se\n");
            let mut errs = Vec::new();
            for &n in &grid {
                let built = build(&spec, n)?;
                let un = u_discrete(&built.env, 0.0, *t, *lambda)?.0;
                let sol = solve_u_from(&built.triplet, 0.0, *t, *lambda, &SolverConfig { ode_check: false, ..cfg })?;
                if let Some(b) = sol.bottleneck {
                    return Err(Error::PossibleBottleneck { domain_start: b }.into());
                }
                let u = sol.value_at(0.0)?;
                let err = (un - u).abs();
                errs.push(err);
                let (mm, ms) = match mc {
                    Some(paths) => {
                        let gen = built.env.gamma(*t);
                        let mut sc = SimConfig::new(n, gen, g.seed, *paths);
                        sc.record = Record::Generations(vec![gen]);
                        let batch = simulate_with(&built.env, &sc)?;
                        let e = empirical_laplace(&batch, *t, *lambda)?;
                        (e.mean.to_string(), e.se.to_string())
                    }
                    None => (String::new(), String::new()),
                };
                let _ = writeln!(csv, "{n},{un},{u},{err},{mm},{ms}");
            }
            out.file("compare.csv", csv);
            if errs.len() > 1 {
                let decreasing = errs.windows(2).all(|w| w[1] < w[0]);
                out.note(format!("error strictly decreasing along the grid: {decreasing}"));
            }
        }
        Command::Scenario { action } => match action {
            ScenarioAction::List => {
                let mut s = String::from("name,description\n");
                for b in builtins() {
                    let _ = writeln!(s, "{},\"{}\"", b.name, b.description);
                }
                match g.format {
                    Format::Csv => out.file("scenarios.csv", s),
                    Format::Json => out.file("scenarios.json", json_string(&builtins())),
                }
            }
            ScenarioAction::Run { scenario, n } => {
                let spec = load_scenario(scenario)?;
                let built = build(&spec, *n)?;
                out.file("env.json", json_string(&built.env));
                out.file("triplet.json", json_string(&built.triplet));
                out.file("expectations.json", json_string(&built.expectations));
            }
        },
        Command::Check { kind, target, t, values } => match kind {
            CheckKind::Bottleneck => {
                let env = load_env(Path::new(target))?;
                let cs = match values {
                    Some(v) => parse_list::<f64>(v)?,
                    None => vec![1.0, 10.0, 100.0],
                };
                let rows = check_no_bottleneck(&env, *t, &cs)?;
                out.file("bottleneck.json", json_string(&rows));
            }
            CheckKind::Moment => {
                let env = load_env(Path::new(target))?;
                let m = check_first_moment(&env, *t)?;
                let ap = apriori_bounds(&env, *t, 1.0)?;
                out.file("moment.json", json_string(&serde_json::json!({"t": t, "first_moment_sum": m, "apriori": ap})));
            }
            CheckKind::B1 => {
                let spec = load_scenario(target)?;
                let family = spec.n_grid.iter().map(|&n| Ok(build(&spec, n)?.env)).collect::<CliResult<Vec<_>>>()?;
                let xs = match values {
                    Some(v) => parse_list::<f64>(v)?,
                    None => vec![0.5, 1.5, 3.5],
                };
                out.file("b1.json", json_string(&check_b1(&family, &xs)?));
            }
            CheckKind::A1a2 => {
                let spec = load_scenario(target)?;
                let built: Vec<_> = spec.n_grid.iter().map(|&n| build(&spec, n)).collect::<Result<_, _>>()?;
                let family: Vec<EnvironmentModel> = built.iter().map(|b| b.env.clone()).collect();
                let xs = match values {
                    Some(v) => parse_list::<f64>(v)?,
                    None => vec![0.5, 1.5, 3.5],
                };
                let times = [0.5 * t, *t];
                let rep = assumption_diagnostics(&family, &built[0].triplet, &times, &xs)?;
                out.file("a1a2.json", json_string(&rep));
            }
        },
    }
    Ok(out)
}

/// Parse arguments, run, print, and return the exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = if code == 0 { write!(stdout, "{e}") } else { write!(stderr, "{e}") };
            return code;
        }
    };
    if cli.global.threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(cli.global.threads).build_global();
    }
    match execute(&cli) {
        Ok(out) => {
            if let Some(dir) = &cli.global.out {
                if let Err(e) = std::fs::create_dir_all(dir) {
                    let _ = writeln!(stderr, "error: {}: {e}", dir.display());
                    return 2;
                }
                for (name, body) in &out.files {
                    let path = dir.join(name);
                    if let Err(e) = std::fs::write(&path, body) {
                        let _ = writeln!(stderr, "error: {}: {e}", path.display());
                        return 2;
                    }
                }
            } else {
                for (k, (_, body)) in out.files.iter().enumerate() {
                    if k > 0 {
                        let _ = writeln!(stdout);
                    }
                    let _ = write!(stdout, "{body}");
                }
            }
            for line in &out.report {
                let _ = writeln!(stderr, "{line}");
            }
            0
        }
        Err(f) => {
            let _ = writeln!(stderr, "error: {}", f.message);
            f.code
        }
    }
}
