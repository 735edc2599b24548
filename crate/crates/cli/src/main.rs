use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

use roundlab::baselines::parse_protocol;
use roundlab::bounds::{compute_bounds, BoundsError};
use roundlab::experiment::{self, BoundsFile, DistributionSpec, ExperimentConfig, ExperimentError};
use roundlab::info::{self, ProtocolFirstRound};
use roundlab::mu::TabulationError;
use roundlab::params::BlockCounts;

/// Simulation lab for round-limited blackboard matching protocols.
#[derive(Parser)]
#[command(name = "roundlab", version)]
struct Cli {
    /// Master seed; overrides the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output path; stdout when omitted (except for `gen`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for trial-level parallelism.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// JSON experiment config.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Sample one instance and write it with its hidden-structure sidecar.
    Gen {
        #[command(flatten)]
        dist: DistArgs,
        /// Refuse instances whose estimated footprint exceeds this many bytes.
        #[arg(long)]
        budget: Option<u64>,
    },
    /// Evaluate protocols over many sampled instances; writes CSV (or JSON for `.json`).
    Run {
        #[command(flatten)]
        dist: DistArgs,
        /// Protocol id, e.g. `iterated:r=3`; repeatable.
        #[arg(long = "protocol", short = 'p')]
        protocols: Vec<String>,
        #[arg(long)]
        trials: Option<usize>,
        /// Sweep each protocol's round parameter over these values.
        #[arg(long, value_delimiter = ',')]
        rounds: Vec<usize>,
        /// Per-player, per-round bit cap (`none` for uncapped); repeatable.
        #[arg(long = "cap")]
        caps: Vec<String>,
        #[arg(long)]
        budget: Option<u64>,
    },
    /// Exact round-dependent bounds for the canonical family.
    Bounds {
        #[arg(long)]
        l: u64,
        #[arg(long)]
        r: usize,
        /// Report every depth from 0 to `r`.
        #[arg(long)]
        up_to: bool,
    },
    /// Randomized checks of information-theoretic facts, plus optional leakage estimates.
    InfoCheck {
        /// Random instances per fact.
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        /// Also estimate first-round index leakage of this protocol.
        #[arg(long)]
        leakage: Option<String>,
        /// Also estimate the hidden-graph distance ψ for the leakage protocol.
        #[arg(long, requires = "leakage")]
        psi: bool,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[command(flatten)]
        dist: DistArgs,
    },
    /// Summarize a results file as a text table and an SVG chart.
    Report {
        #[arg(long)]
        results: PathBuf,
        /// Output of `bounds`, for the reference line.
        #[arg(long)]
        bounds: Option<PathBuf>,
        /// Chart path; defaults to `--out` with an `.svg` extension.
        #[arg(long)]
        svg: Option<PathBuf>,
    },
}

#[derive(Args)]
#[group(multiple = false)]
struct DistArgs {
    /// `l=<base> r=<depth>`
    #[arg(long, num_args = 1.., value_name = "KEY=VALUE")]
    canonical: Option<Vec<String>>,
    /// `base=<m0> levels=<B>x<F>,<B>x<F>,...` (innermost level first)
    #[arg(long, num_args = 1.., value_name = "KEY=VALUE")]
    generalized: Option<Vec<String>>,
    /// `n=<bidders> m=<items> p=<edge probability>`
    #[arg(long, num_args = 1.., value_name = "KEY=VALUE")]
    random: Option<Vec<String>>,
}

struct Failure {
    code: u8,
    message: String,
}

type Outcome = Result<(), Failure>;

fn fail(code: u8, message: impl Into<String>) -> Failure {
    Failure {
        code,
        message: message.into(),
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        fail(e.exit_code() as u8, e.to_string())
    }
}

impl From<TabulationError> for Failure {
    fn from(e: TabulationError) -> Self {
        match e {
            TabulationError::Intractable(_) => fail(3, e.to_string()),
            _ => fail(2, e.to_string()),
        }
    }
}

fn io_fail(path: &Path, e: std::io::Error) -> Failure {
    fail(1, format!("{}: {e}", path.display()))
}

fn kv(args: &[String]) -> Result<Vec<(&str, &str)>, Failure> {
    args.iter()
        .flat_map(|a| a.split_whitespace())
        .map(|a| {
            a.split_once('=')
                .ok_or_else(|| fail(2, format!("expected KEY=VALUE, got `{a}`")))
        })
        .collect()
}

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, Failure> {
    v.parse().map_err(|_| fail(2, format!("bad value for {key}: `{v}`")))
}

impl DistArgs {
    fn spec(&self) -> Result<Option<DistributionSpec>, Failure> {
        if let Some(a) = &self.canonical {
            let (mut l, mut r) = (None, None);
            for (k, v) in kv(a)? {
                match k {
                    "l" => l = Some(num(k, v)?),
                    "r" => r = Some(num(k, v)?),
                    _ => return Err(fail(2, format!("unknown canonical key `{k}`"))),
                }
            }
            let (Some(l), Some(r)) = (l, r) else {
                return Err(fail(2, "canonical needs l= and r="));
            };
            return Ok(Some(DistributionSpec::Canonical { l, r }));
        }
        if let Some(a) = &self.generalized {
            let (mut base, mut levels) = (None, Vec::new());
            for (k, v) in kv(a)? {
                match k {
                    "base" => base = Some(num(k, v)?),
                    "levels" => {
                        for lv in v.split([',', '/']).filter(|s| !s.is_empty()) {
                            let (b, f) = lv
                                .split_once('x')
                                .ok_or_else(|| fail(2, format!("level `{lv}` is not <B>x<F>")))?;
                            levels.push(BlockCounts::new(num("levels", b)?, num("levels", f)?));
                        }
                    }
                    _ => return Err(fail(2, format!("unknown generalized key `{k}`"))),
                }
            }
            let base = base.ok_or_else(|| fail(2, "generalized needs base="))?;
            return Ok(Some(DistributionSpec::Generalized { base, levels }));
        }
        if let Some(a) = &self.random {
            let (mut n, mut m, mut p) = (None, None, None);
            for (k, v) in kv(a)? {
                match k {
                    "n" => n = Some(num(k, v)?),
                    "m" => m = Some(num(k, v)?),
                    "p" => p = Some(num(k, v)?),
                    _ => return Err(fail(2, format!("unknown random key `{k}`"))),
                }
            }
            let (Some(bidders), Some(items), Some(edge_prob)) = (n, m, p) else {
                return Err(fail(2, "random needs n=, m= and p="));
            };
            return Ok(Some(DistributionSpec::RandomGraph {
                bidders,
                items,
                edge_prob,
            }));
        }
        Ok(None)
    }
}

fn load_config(cli: &Cli, dist: Option<&DistArgs>) -> Result<ExperimentConfig, Failure> {
    let from_flags = match dist {
        Some(d) => d.spec()?,
        None => None,
    };
    let mut cfg = match (&cli.config, from_flags) {
        (Some(path), flags) => {
            let bytes = fs::read(path).map_err(|e| fail(2, format!("{}: {e}", path.display())))?;
            let mut cfg = ExperimentConfig::from_json(&bytes)?;
            if let Some(spec) = flags {
                cfg.distribution = spec;
            }
            cfg
        }
        (None, Some(spec)) => ExperimentConfig::new(spec),
        (None, None) => {
            return Err(fail(
                2,
                "no distribution: pass --canonical, --generalized, --random or --config",
            ));
        }
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output = Some(o.display().to_string());
    }
    Ok(cfg)
}

fn write(path: Option<&Path>, bytes: &[u8]) -> Outcome {
    match path {
        Some(p) => fs::write(p, bytes).map_err(|e| io_fail(p, e)),
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(bytes)
                .map_err(|e| io_fail(Path::new("<stdout>"), e))
        }
    }
}

fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

fn sidecar_path(path: &Path) -> PathBuf {
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    path.with_file_name(format!("{stem}.sidecar.json"))
}

fn cmd_gen(cli: &Cli, dist: &DistArgs, budget: Option<u64>) -> Outcome {
    let mut cfg = load_config(cli, Some(dist))?;
    if let Some(b) = budget {
        cfg.memory_budget_bytes = b;
    }
    let out = cfg
        .output
        .clone()
        .map(PathBuf::from)
        .ok_or_else(|| fail(2, "gen needs --out (or `output` in the config)"))?;
    let g = experiment::generate_instance(&cfg)?;
    let (instance, sidecar) = experiment::generated_files(&cfg, &g, !out.extension().is_some_and(|e| e == "bin"));
    write(Some(&out), &instance)?;
    if let Some(sc) = sidecar {
        write(Some(&sidecar_path(&out)), &sc)?;
    }
    eprintln!(
        "{}: {} bidders, {} items, {} edges",
        out.display(),
        g.graph.num_bidders(),
        g.graph.num_items(),
        g.graph.num_edges()
    );
    Ok(())
}

fn cmd_run(
    cli: &Cli,
    dist: &DistArgs,
    protocols: &[String],
    trials: Option<usize>,
    rounds: &[usize],
    caps: &[String],
    budget: Option<u64>,
) -> Outcome {
    let mut cfg = load_config(cli, Some(dist))?;
    if !protocols.is_empty() {
        cfg.protocols = protocols.to_vec();
    }
    if let Some(t) = trials {
        cfg.trials = t;
    }
    if !rounds.is_empty() {
        cfg.rounds = rounds.to_vec();
    }
    if !caps.is_empty() {
        cfg.bandwidth_caps = caps
            .iter()
            .map(|c| if c == "none" { Ok(None) } else { num("cap", c).map(Some) })
            .collect::<Result<_, _>>()?;
    }
    if let Some(b) = budget {
        cfg.memory_budget_bytes = b;
    }
    let rows = experiment::run_experiment(&cfg)?;
    let out = cfg.output.as_deref().map(Path::new);
    let bytes = match out {
        Some(p) if is_json(p) => experiment::results_to_json(&cfg, &rows),
        _ => experiment::results_to_csv(&cfg, &rows),
    };
    write(out, &bytes)
}

fn cmd_bounds(cli: &Cli, l: u64, r: usize, up_to: bool) -> Outcome {
    let depths = if up_to { 0..=r } else { r..=r };
    let mut reports = Vec::new();
    for k in depths {
        reports.push(compute_bounds(l, k).map_err(|e| match e {
            BoundsError::TooDeep(_) => fail(3, e.to_string()),
            _ => fail(2, e.to_string()),
        })?);
    }
    let file = BoundsFile {
        config: json!({ "command": "bounds", "l": l, "r": r, "up_to": up_to, "seed": cli.seed.unwrap_or(0) }),
        reports,
    };
    let mut bytes = serde_json::to_vec_pretty(&file).expect("bounds serialize");
    bytes.push(b'\n');
    write(cli.out.as_deref(), &bytes)?;
    let bad: Vec<String> = file
        .reports
        .iter()
        .filter(|b| !b.t_within_envelope || b.n_root != l)
        .map(|b| format!("r={}", b.r))
        .collect();
    if !bad.is_empty() {
        return Err(fail(4, format!("envelope identities fail at {}", bad.join(", "))));
    }
    Ok(())
}

fn cmd_info_check(
    cli: &Cli,
    trials: usize,
    leakage: Option<&str>,
    psi: bool,
    samples: usize,
    dist: &DistArgs,
) -> Outcome {
    let seed = cli.seed.unwrap_or(0);
    let mut config = json!({ "command": "info-check", "trials": trials, "seed": seed });
    let ineq = info::check_inequalities(trials, seed);
    let mut report = json!({ "inequalities": ineq });
    let mut leak_pass = true;
    if let Some(id) = leakage {
        let cfg = load_config(cli, Some(dist))?;
        let params = cfg
            .distribution
            .params()?
            .ok_or_else(|| fail(2, "leakage needs a canonical or generalized distribution"))?;
        let p = parse_protocol(id).map_err(|e| fail(2, e.to_string()))?;
        let f = ProtocolFirstRound(p.as_ref());
        let est = info::estimate_index_leakage(&params, &f, samples, seed)?;
        leak_pass = est.pass;
        report["leakage"] = serde_json::to_value(&est).expect("serializes");
        if psi {
            let est = info::estimate_psi_distance(&params, &f, samples, seed)?;
            report["psi"] = serde_json::to_value(&est).expect("serializes");
        }
        config["protocol"] = json!(p.id());
        config["samples"] = json!(samples);
        config["distribution"] = serde_json::to_value(&cfg.distribution).expect("serializes");
    }
    report["config"] = config;
    let mut bytes = serde_json::to_vec_pretty(&report).expect("report serializes");
    bytes.push(b'\n');
    write(cli.out.as_deref(), &bytes)?;
    if !ineq.pass {
        let names: Vec<&str> = ineq.violations().map(|f| f.name.as_str()).collect();
        return Err(fail(4, format!("violated: {}", names.join(", "))));
    }
    if !leak_pass {
        return Err(fail(4, "first-round index leakage above the bias threshold"));
    }
    Ok(())
}

fn cmd_report(cli: &Cli, results: &Path, bounds: Option<&Path>, svg: Option<&Path>) -> Outcome {
    let input = fs::read(results).map_err(|e| io_fail(results, e))?;
    let (source, rows) = experiment::read_results(&input)?;
    let bounds = match bounds {
        Some(p) => experiment::read_bounds(&fs::read(p).map_err(|e| io_fail(p, e))?)?,
        None => Vec::new(),
    };
    let prov = json!({
        "command": "report",
        "results": results.display().to_string(),
        "source_config": source,
        "seed": source.as_ref().and_then(|c| c.get("seed")).cloned().unwrap_or(json!(cli.seed.unwrap_or(0))),
    });
    write(
        cli.out.as_deref(),
        experiment::render_table(&rows, &bounds, Some(&prov)).as_bytes(),
    )?;
    let svg_path = svg
        .map(Path::to_path_buf)
        .or_else(|| cli.out.as_ref().map(|o| o.with_extension("svg")));
    match (experiment::render_svg(&rows, &bounds, Some(&prov)), svg_path) {
        (Some(chart), Some(p)) => write(Some(&p), chart.as_bytes()),
        (Some(_), None) => {
            eprintln!("no --svg or --out given; chart skipped");
            Ok(())
        }
        (None, _) => Ok(()),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    let outcome = match &cli.cmd {
        Cmd::Gen { dist, budget } => cmd_gen(&cli, dist, *budget),
        Cmd::Run {
            dist,
            protocols,
            trials,
            rounds,
            caps,
            budget,
        } => cmd_run(&cli, dist, protocols, *trials, rounds, caps, *budget),
        Cmd::Bounds { l, r, up_to } => cmd_bounds(&cli, *l, *r, *up_to),
        Cmd::InfoCheck {
            trials,
            leakage,
            psi,
            samples,
            dist,
        } => cmd_info_check(&cli, *trials, leakage.as_deref(), *psi, *samples, dist),
        Cmd::Report { results, bounds, svg } => cmd_report(&cli, results, bounds.as_deref(), svg.as_deref()),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
