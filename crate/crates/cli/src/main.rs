//! `dpigu` command-line front end.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{value_parser, Arg, ArgAction, ArgMatches, Command};
use dpigu_core::data::{read_idx_file, IdxFile};
use dpigu_core::harness::{
    check_adaptive_bound, check_clipped_bound, check_masked_bound, median_by_value, run_experiment, sweep,
    to_csv_string, write_csv, AdaptiveBoundConfig, BoundReport, ClippedBoundConfig, MaskedBoundConfig, RunConfig,
    SeedPolicy, SweepAxis, KEYS,
};
use dpigu_core::privacy::{
    accountant_gap, amplify_by_subsampling, dpsgd_epsilon, dpsgd_sigma, grid_epsilon, grid_sigma_for,
};
use dpigu_core::Error;

const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;
const EXIT_BOUND: u8 = 3;

enum Failure {
    Usage(String),
    Runs(usize),
    Core(Error),
    Bound,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

type CliResult = Result<(), Failure>;

fn flag_name(key: &str) -> String {
    key.replace('_', "-")
}

fn config_args(cmd: Command) -> Command {
    let cmd = cmd
        .arg(Arg::new("config").long("config").value_name("PATH").value_parser(value_parser!(PathBuf)).help("key = value configuration file"))
        .arg(
            Arg::new("set")
                .long("set")
                .value_name("KEY=VALUE")
                .action(ArgAction::Append)
                .help("override one configuration key; may repeat"),
        )
        .arg(Arg::new("print-config").long("print-config").action(ArgAction::SetTrue).help("print the resolved configuration and exit"));
    KEYS.iter().fold(cmd, |cmd, &key| {
        cmd.arg(Arg::new(key).long(flag_name(key)).value_name("VALUE").allow_negative_numbers(true).help(format!("sets `{key}`")))
    })
}

fn resolve_config(m: &ArgMatches) -> Result<RunConfig, Failure> {
    let mut cfg = match m.get_one::<PathBuf>("config") {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    let mut pairs: Vec<(String, String)> = Vec::new();
    for &key in KEYS {
        if let Some(v) = m.get_one::<String>(key) {
            pairs.push((key.to_string(), v.clone()));
        }
    }
    for s in m.get_many::<String>("set").into_iter().flatten() {
        match s.split_once('=') {
            Some((k, v)) => pairs.push((k.trim().to_string(), v.trim().to_string())),
            None => return Err(Failure::Usage(format!("--set expects KEY=VALUE, got '{s}'"))),
        }
    }
    cfg.apply_overrides(pairs.iter().map(|(k, v)| (k.as_str(), v.as_str())))?;
    Ok(cfg)
}

fn cmd_train(m: &ArgMatches) -> CliResult {
    let cfg = resolve_config(m)?;
    if m.get_flag("print-config") {
        print!("{}", cfg.to_text());
        return Ok(());
    }
    cfg.validate()?;
    let out = run_experiment(&cfg)?;
    if cfg.output.is_none() {
        print!("{}", out.to_jsonl()?);
    }
    let s = &out.summary;
    eprintln!(
        "final test accuracy {:.4}, train accuracy {:.4}, sigma {:.4}, epsilon {}",
        s.final_test_acc,
        s.final_train_acc,
        s.sigma,
        s.eps_spent.map_or("n/a".into(), |e| format!("{e:.4}"))
    );
    Ok(())
}

fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>, Failure> {
    raw.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| Failure::Usage(format!("cannot parse {what} '{s}'"))))
        .collect()
}

fn cmd_sweep(m: &ArgMatches) -> CliResult {
    let cfg = resolve_config(m)?;
    let axis: SweepAxis = m.get_one::<String>("axis").expect("required").parse()?;
    let values: Vec<f64> = parse_list(m.get_one::<String>("values").expect("required"), "value")?;
    let seeds: Vec<u64> = match m.get_one::<String>("seeds") {
        Some(s) => parse_list(s, "seed")?,
        None => Vec::new(),
    };
    let policy: SeedPolicy = m.get_one::<String>("seed-policy").map_or(Ok(SeedPolicy::Shared), |s| s.parse())?;
    let rows = sweep(&cfg, axis, &values, &seeds, policy)?;
    match m.get_one::<PathBuf>("csv") {
        Some(path) => write_csv(&rows, path)?,
        None => print!("{}", to_csv_string(&rows)?),
    }
    for (v, med) in median_by_value(&rows) {
        eprintln!("{axis} = {v}: median test accuracy {}", med.map_or("n/a".into(), |a| format!("{a:.4}")));
    }
    let failed = rows.iter().filter(|r| !r.ok()).count();
    if failed > 0 {
        return Err(Failure::Runs(failed));
    }
    Ok(())
}

fn cmd_accountant(m: &ArgMatches) -> CliResult {
    let delta = *m.get_one::<f64>("delta").expect("defaulted");
    let q = *m.get_one::<f64>("q").expect("defaulted");
    let steps = *m.get_one::<u64>("steps").expect("defaulted");
    let (sigma, eps) = match (m.get_one::<f64>("eps"), m.get_one::<f64>("sigma")) {
        (Some(&eps), None) => {
            let sigma = dpsgd_sigma(eps, delta, q, steps)?;
            println!("sigma (closed form) = {sigma:.6}");
            println!("sigma (grid)        = {:.6}", grid_sigma_for(eps, delta, q, steps)?);
            (sigma, eps)
        }
        (None, Some(&sigma)) => {
            let eps = dpsgd_epsilon(sigma, delta, q, steps)?;
            println!("epsilon (closed form) = {eps:.6}");
            (sigma, eps)
        }
        _ => return Err(Failure::Usage("give exactly one of --eps or --sigma".into())),
    };
    let closed = dpsgd_epsilon(sigma, delta, q, steps)?;
    let grid = grid_epsilon(sigma, delta, q, steps)?;
    println!("q = {q}, steps = {steps}, delta = {delta:e}");
    println!("epsilon at sigma {sigma:.6}: closed form {closed:.6}, grid {grid:.6}, gap {:.2}%", 100.0 * accountant_gap(closed, grid));
    let (amp_eps, amp_delta) = amplify_by_subsampling(eps, delta, q)?;
    println!("amplification of ({eps:.6}, {delta:e}) at rate {q}: ({amp_eps:.6}, {amp_delta:e})");
    Ok(())
}

fn cmd_check_bounds(m: &ArgMatches) -> CliResult {
    let which = m.get_one::<String>("bound").expect("defaulted").as_str();
    let seed = *m.get_one::<u64>("seed").expect("defaulted");
    let mut reports: Vec<BoundReport> = Vec::new();
    let opt = |name: &str| m.get_one::<f64>(name).copied();
    let steps = m.get_one::<usize>("steps").copied();
    if matches!(which, "clipped" | "all") {
        let mut c = ClippedBoundConfig { seed, ..ClippedBoundConfig::default() };
        c.clip = opt("clip").unwrap_or(c.clip);
        c.sigma = opt("sigma").unwrap_or(c.sigma);
        c.eta = opt("eta").unwrap_or(c.eta);
        c.steps = steps.unwrap_or(c.steps);
        reports.push(check_clipped_bound(&c)?);
    }
    if matches!(which, "masked" | "all") {
        let mut c = MaskedBoundConfig { seed, ..MaskedBoundConfig::default() };
        c.retention = opt("retention").unwrap_or(c.retention);
        c.sigma = opt("sigma").unwrap_or(c.sigma);
        c.steps = steps.unwrap_or(c.steps);
        reports.push(check_masked_bound(&c)?);
    }
    if matches!(which, "adaptive" | "all") {
        let mut c = AdaptiveBoundConfig { seed, ..AdaptiveBoundConfig::default() };
        c.retention = opt("retention").unwrap_or(c.retention);
        c.clip = opt("clip").unwrap_or(c.clip);
        c.sigma = opt("sigma").unwrap_or(c.sigma);
        c.eta = opt("eta").unwrap_or(c.eta);
        c.steps = steps.unwrap_or(c.steps);
        reports.push(check_adaptive_bound(&c)?);
    }
    for r in &reports {
        println!("{r}");
    }
    if reports.iter().all(|r| r.holds) {
        Ok(())
    } else {
        Err(Failure::Bound)
    }
}

fn describe_idx(path: &PathBuf, file: &IdxFile) -> Result<(), Error> {
    let h = &file.header;
    println!("{}: magic 0x{:08x}, dims {:?}", path.display(), h.magic, h.dims);
    if file.is_labels() {
        let labels = file.to_labels()?;
        let classes = labels.iter().max().map_or(0, |m| m + 1);
        let mut counts = vec![0usize; classes];
        for &l in &labels {
            counts[l] += 1;
        }
        println!("  {} labels, class counts {:?}", labels.len(), counts);
    } else if file.is_images() {
        let px = file.to_images()?;
        let mean = px.iter().sum::<f64>() / px.len().max(1) as f64;
        println!("  {} images of {} pixels, mean intensity {:.4}", h.item_count(), h.item_len(), mean);
    }
    Ok(())
}

fn cmd_parse_idx(m: &ArgMatches) -> CliResult {
    for path in m.get_many::<PathBuf>("files").expect("required") {
        let file = read_idx_file(path)?;
        describe_idx(path, &file)?;
    }
    Ok(())
}

fn cli() -> Command {
    Command::new("dpigu")
        .about("Differentially private training with importance-based gradient masking")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true)
        .subcommand(config_args(Command::new("train").about("run one training job and emit line-delimited metrics")))
        .subcommand(
            config_args(Command::new("sweep").about("run one job per axis value and summarise as CSV"))
                .arg(Arg::new("axis").long("axis").required(true).help("retention, epsilon, batch or seed"))
                .arg(Arg::new("values").long("values").required(true).help("comma-separated axis values"))
                .arg(Arg::new("seeds").long("seeds").help("comma-separated seeds run at every value"))
                .arg(Arg::new("seed-policy").long("seed-policy").help("shared or per-value"))
                .arg(Arg::new("csv").long("csv").value_parser(value_parser!(PathBuf)).help("write the summary here instead of stdout")),
        )
        .subcommand(
            Command::new("accountant")
                .about("convert between noise multiplier and privacy budget")
                .arg(Arg::new("eps").long("eps").value_parser(value_parser!(f64)).conflicts_with("sigma"))
                .arg(Arg::new("sigma").long("sigma").value_parser(value_parser!(f64)))
                .arg(Arg::new("delta").long("delta").value_parser(value_parser!(f64)).default_value("1e-5"))
                .arg(Arg::new("q").long("q").value_parser(value_parser!(f64)).default_value("0.01"))
                .arg(Arg::new("steps").long("steps").value_parser(value_parser!(u64)).default_value("1000")),
        )
        .subcommand(
            Command::new("check-bounds")
                .about("simulate the convergence bounds on quadratic objectives")
                .arg(
                    Arg::new("bound")
                        .long("bound")
                        .value_parser(["clipped", "masked", "adaptive", "all"])
                        .default_value("all"),
                )
                .arg(Arg::new("clip").long("clip").value_parser(value_parser!(f64)))
                .arg(Arg::new("sigma").long("sigma").value_parser(value_parser!(f64)))
                .arg(Arg::new("retention").long("retention").value_parser(value_parser!(f64)))
                .arg(Arg::new("eta").long("eta").value_parser(value_parser!(f64)))
                .arg(Arg::new("steps").long("steps").value_parser(value_parser!(usize)))
                .arg(Arg::new("seed").long("seed").value_parser(value_parser!(u64)).default_value("0")),
        )
        .subcommand(
            Command::new("parse-idx")
                .about("inspect IDX image or label files")
                .arg(Arg::new("files").required(true).num_args(1..).value_parser(value_parser!(PathBuf))),
        )
}

fn report(e: &Error) {
    match e {
        Error::Config(problems) => {
            eprintln!("error: invalid configuration");
            for p in problems {
                eprintln!("  - {p}");
            }
        }
        other => eprintln!("error: {other}"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match matches.subcommand() {
        Some(("train", m)) => cmd_train(m),
        Some(("sweep", m)) => cmd_sweep(m),
        Some(("accountant", m)) => cmd_accountant(m),
        Some(("check-bounds", m)) => cmd_check_bounds(m),
        Some(("parse-idx", m)) => cmd_parse_idx(m),
        _ => unreachable!("subcommand is required"),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Runs(n)) => {
            eprintln!("error: {n} sweep runs failed");
            ExitCode::from(EXIT_RUNTIME)
        }
        Err(Failure::Bound) => {
            eprintln!("error: bound check failed");
            ExitCode::from(EXIT_BOUND)
        }
        Err(Failure::Core(e)) => {
            report(&e);
            match e {
                Error::Config(_) | Error::InvalidArgument(_) => ExitCode::from(EXIT_VALIDATION),
                _ => ExitCode::from(EXIT_RUNTIME),
            }
        }
    }
}
