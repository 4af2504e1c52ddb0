use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use toml::{Table, Value};

use mgcbo::benchmarks::{catalog, lookup, multistart_max, MultistartConfig};
use mgcbo::harness::{
    cumulative_table, default_windows, load_dir, render_table, run_experiment, write_plotdata,
    write_results, write_summary, ExperimentConfig, Summary,
};

#[derive(Parser)]
#[command(name = "mgcbo", version, about = "Bayesian optimization with an MGC acquisition")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one policy on one objective over several seeds.
    Run(Box<RunArgs>),
    /// Print the cumulative-regret table of a results directory.
    Table {
        #[arg(long = "in")]
        dir: PathBuf,
        /// Inclusive step windows such as `1-20,21-40`; defaults to the two halves.
        #[arg(long)]
        windows: Option<String>,
        /// Also write summary.json into the directory.
        #[arg(long)]
        write_summary: bool,
    },
    /// Write per-step mean regret and standard error.
    Plotdata {
        #[arg(long = "in")]
        dir: PathBuf,
        /// Output file; defaults to `<in>/plotdata.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate a benchmark maximum by multistart local search.
    OracleMax {
        #[arg(long)]
        objective: String,
        #[arg(long, default_value_t = 1000)]
        starts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// List the built-in benchmark functions.
    List,
}

#[derive(Args)]
struct RunArgs {
    /// TOML file mirroring the experiment configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Benchmark name, or `cmd:<shell command>` for an external objective.
    #[arg(long)]
    objective: Option<String>,
    /// Box of an external objective, e.g. `-2:3,-4:-1`.
    #[arg(long)]
    bounds: Option<String>,
    /// Reference maximum of an external objective, used for regret.
    #[arg(long)]
    fmax: Option<f64>,
    /// Name used for an external objective's result files.
    #[arg(long)]
    name: Option<String>,
    #[arg(long)]
    timeout_ms: Option<u64>,
    /// random, ei, ucb, mes, gp-dc or gp-mgc.
    #[arg(long)]
    policy: Option<String>,
    #[arg(long)]
    init: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    /// Number of seeds.
    #[arg(long)]
    seeds: Option<u64>,
    /// First seed when `--seeds` is given.
    #[arg(long, default_value_t = 0)]
    first_seed: u64,
    /// Posterior function samples per step.
    #[arg(long)]
    samples: Option<usize>,
    /// Random features per sample.
    #[arg(long)]
    features: Option<usize>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_bounds(text: &str) -> Result<Value> {
    let pairs = text
        .split(',')
        .map(|p| {
            let (lo, hi) = p
                .split_once(':')
                .with_context(|| format!("bound {p:?} is not of the form lo:hi"))?;
            Ok(Value::Array(vec![
                Value::Float(lo.trim().parse()?),
                Value::Float(hi.trim().parse()?),
            ]))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Value::Array(pairs))
}

fn parse_windows(text: &str) -> Result<Vec<(usize, usize)>> {
    text.split(',')
        .map(|w| {
            let (a, b) = w
                .split_once('-')
                .with_context(|| format!("window {w:?} is not of the form start-end"))?;
            Ok((a.trim().parse()?, b.trim().parse()?))
        })
        .collect()
}

/// Merges the config file and flag overrides into one configuration.
fn build_config(args: &RunArgs) -> Result<ExperimentConfig> {
    let mut table = match &args.config {
        Some(path) => fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))?
            .parse::<Table>()
            .with_context(|| format!("parsing {}", path.display()))?,
        None => Table::new(),
    };

    if let Some(obj) = &args.objective {
        let value = match obj.strip_prefix("cmd:") {
            Some(command) => {
                let mut t = Table::new();
                t.insert("command".into(), Value::String(command.into()));
                Value::Table(t)
            }
            None => Value::String(obj.clone()),
        };
        table.insert("objective".into(), value);
    }
    let external_flags = args.bounds.is_some()
        || args.fmax.is_some()
        || args.name.is_some()
        || args.timeout_ms.is_some();
    if external_flags {
        let Some(Value::Table(obj)) = table.get_mut("objective") else {
            bail!("--bounds, --fmax, --name and --timeout-ms need an external `cmd:` objective");
        };
        if let Some(b) = &args.bounds {
            obj.insert("bounds".into(), parse_bounds(b)?);
        }
        if let Some(f) = args.fmax {
            obj.insert("f_max".into(), Value::Float(f));
        }
        if let Some(n) = &args.name {
            obj.insert("name".into(), Value::String(n.clone()));
        }
        if let Some(t) = args.timeout_ms {
            obj.insert("timeout_ms".into(), Value::Integer(t as i64));
        }
    }
    if let Some(Value::Table(obj)) = table.get("objective") {
        for key in ["bounds", "f_max"] {
            if !obj.contains_key(key) {
                bail!("an external objective needs `{key}` (flag --{})", key.replace("f_max", "fmax"));
            }
        }
    }

    let mut set = |key: &str, v: Option<Value>| {
        if let Some(v) = v {
            table.insert(key.into(), v);
        }
    };
    set("policy", args.policy.clone().map(Value::String));
    set("initial_points", args.init.map(|n| Value::Integer(n as i64)));
    set("steps", args.steps.map(|n| Value::Integer(n as i64)));
    set(
        "seeds",
        args.seeds.map(|n| {
            Value::Array(
                (args.first_seed..args.first_seed + n)
                    .map(|s| Value::Integer(s as i64))
                    .collect(),
            )
        }),
    );
    set("noise", args.noise.map(Value::Float));
    set(
        "output",
        args.out.as_ref().map(|p| Value::String(p.display().to_string())),
    );
    if args.samples.is_some() || args.features.is_some() {
        let acq = table
            .entry("acquisition")
            .or_insert_with(|| Value::Table(Table::new()));
        let Value::Table(acq) = acq else {
            bail!("`acquisition` must be a table");
        };
        if let Some(m) = args.samples {
            acq.insert("samples".into(), Value::Integer(m as i64));
        }
        if let Some(b) = args.features {
            acq.insert("features".into(), Value::Integer(b as i64));
        }
    }

    // policy names are matched leniently on the command line
    if let Some(Value::String(p)) = table.get("policy") {
        let kind: mgcbo::acquisition::PolicyKind = p.parse()?;
        table.insert("policy".into(), Value::String(kind.as_str().into()));
    }
    if !table.contains_key("objective") {
        bail!("no objective given (use --objective or the config file)");
    }
    if !table.contains_key("policy") {
        bail!("no policy given (use --policy or the config file)");
    }
    let cfg: ExperimentConfig = table.try_into().context("invalid experiment configuration")?;
    cfg.validate()?;
    Ok(cfg)
}

fn run(args: RunArgs) -> Result<()> {
    let cfg = build_config(&args)?;
    let out = cfg
        .output
        .clone()
        .context("no output directory given (use --out or `output` in the config file)")?;
    let traces = run_experiment(&cfg)?;
    let files = write_results(&out, &traces)?;
    for f in &files {
        log::info!("wrote {}", f.display());
    }
    let failed = traces.iter().filter(|t| t.error.is_some()).count();
    if failed == traces.len() {
        bail!("every seed failed; see the .errors.json file in {}", out.display());
    }
    let all = load_dir(&out)?;
    let table = cumulative_table(&all, &default_windows(cfg.steps))?;
    write_summary(&out, &Summary::new(table.clone(), &all))?;
    write_plotdata(&out.join("plotdata.csv"), &all)?;
    print!("{}", render_table(&table));
    if failed > 0 {
        eprintln!("{failed} of {} seeds failed and were left out", traces.len());
    }
    Ok(())
}

fn table(dir: &Path, windows: Option<String>, summary: bool) -> Result<()> {
    let traces = load_dir(dir)?;
    let windows = match windows {
        Some(w) => parse_windows(&w)?,
        None => {
            let steps = traces
                .iter()
                .filter(|t| t.error.is_none())
                .map(|t| t.steps())
                .min()
                .context("no complete runs")?;
            default_windows(steps)
        }
    };
    let table = cumulative_table(&traces, &windows)?;
    if summary {
        write_summary(dir, &Summary::new(table.clone(), &traces))?;
    }
    print!("{}", render_table(&table));
    Ok(())
}

fn oracle(name: &str, starts: usize, seed: u64) -> Result<()> {
    let f = lookup(name)?;
    let cfg = MultistartConfig {
        starts,
        seed,
        ..MultistartConfig::default()
    };
    let best = multistart_max(|x| f.evaluate_unchecked(x), &f.bounds, &cfg)?;
    println!("function   {}", f.name);
    println!("oracle max {:.10}", best.value);
    println!("argmax     {:?}", best.x);
    println!("reference  {:.10}", f.f_max);
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Run(args) => run(*args),
        Command::Table {
            dir,
            windows,
            write_summary,
        } => table(&dir, windows, write_summary),
        Command::Plotdata { dir, out } => {
            let traces = load_dir(&dir)?;
            let path = out.unwrap_or_else(|| dir.join("plotdata.csv"));
            write_plotdata(&path, &traces)?;
            println!("{}", path.display());
            Ok(())
        }
        Command::OracleMax {
            objective,
            starts,
            seed,
        } => oracle(&objective, starts, seed),
        Command::List => {
            for f in catalog() {
                println!("{:<14} D={} f_max={}", f.name, f.dim, f.f_max);
            }
            Ok(())
        }
    }
}
