//! Command-line front end: benchmark generation, training, orientation
//! mining, 64-rotation evaluation, the ablation matrix, and the theory
//! verification trials. Logs go to standard error; data goes to files.
//! Exit codes: 0 success, 1 validation error, 2 runtime failure.

use rotadapt_core::checkpoint::{read_checkpoint, write_checkpoint};
use rotadapt_core::config::{apply_config_text, RunConfig};
use rotadapt_core::data::{build_benchmark, load_dataset, save_dataset, Dataset, Split};
use rotadapt_core::eval::{evaluate, write_metrics_json, write_series_csv};
use rotadapt_core::mining::{build_intricate_set, save_intricate};
use rotadapt_core::net::PointNet;
use rotadapt_core::theory::{run_theory_trials, write_theory_json};
use rotadapt_core::trainer::{run_ablation_matrix, train_with_hook, write_ablation_csv, TrainOutput};
use rotadapt_core::{Error, Result};
use std::path::{Path, PathBuf};

const USAGE: &str = "\
rotadapt — rotation-adaptive point cloud training and evaluation

USAGE:
    rotadapt <command> [--config FILE] [--<key> VALUE ...] [flags]

COMMANDS:
    gen           generate the two-domain benchmark      (needs --out)
    train         train on the source domain             (needs --data, --out)
    mine          mine an orientation set for a model    (needs --ckpt, --data, --out)
    eval          64-rotation evaluation of a model      (needs --ckpt, --data, --out)
    ablate        run the six-variant ablation matrix    (needs --data, --out)
    theory-check  verify the entropy-gain bounds         (--trials N, default 1000)

FLAGS:
    --config FILE   flat 'key = value' configuration file
    --out DIR       output directory
    --data DIR      benchmark directory produced by gen
    --ckpt PATH     checkpoint path ('.ckpt' appended when missing)
    --domain NAME   dataset to evaluate: source | target (default: target)
    --seeds LIST    comma-separated seeds for ablate (default: 0,1,2)
    --trials N      trial count for theory-check
    --version       print the version and exit
    --help          print this text and exit

Any configuration key can also be overridden as '--key value', for example
'--epochs 30 --seed 7'. Unknown keys and invalid values are rejected with
every violation listed. Logs go to standard error; data goes to --out.
";

struct Cli {
    command: String,
    config_path: Option<PathBuf>,
    out: Option<PathBuf>,
    data: Option<PathBuf>,
    ckpt: Option<PathBuf>,
    domain: String,
    seeds: Vec<u64>,
    trials: usize,
    overrides: Vec<(String, String)>,
}

fn parse_args(args: &[String]) -> std::result::Result<Cli, String> {
    let command = match args.first() {
        None => return Err("missing command".to_string()),
        Some(c) => c.clone(),
    };
    const COMMANDS: [&str; 6] = ["gen", "train", "mine", "eval", "ablate", "theory-check"];
    if !COMMANDS.contains(&command.as_str()) {
        return Err(format!("unknown command '{command}'"));
    }
    let mut cli = Cli {
        command,
        config_path: None,
        out: None,
        data: None,
        ckpt: None,
        domain: "target".to_string(),
        seeds: vec![0, 1, 2],
        trials: 1000,
        overrides: Vec::new(),
    };
    let mut it = args[1..].iter();
    while let Some(flag) = it.next() {
        let Some(key) = flag.strip_prefix("--") else {
            return Err(format!("expected a --flag, got '{flag}'"));
        };
        let Some(value) = it.next() else {
            return Err(format!("flag --{key} needs a value"));
        };
        match key {
            "config" => cli.config_path = Some(PathBuf::from(value)),
            "out" => cli.out = Some(PathBuf::from(value)),
            "data" => cli.data = Some(PathBuf::from(value)),
            "ckpt" => cli.ckpt = Some(PathBuf::from(value)),
            "domain" => cli.domain = value.clone(),
            "seeds" => {
                cli.seeds = value
                    .split(',')
                    .map(|s| s.trim().parse::<u64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|_| format!("--seeds expects comma-separated integers, got '{value}'"))?;
                if cli.seeds.is_empty() {
                    return Err("--seeds needs at least one seed".to_string());
                }
            }
            "trials" => {
                cli.trials = value
                    .parse()
                    .map_err(|_| format!("--trials expects an unsigned integer, got '{value}'"))?
            }
            _ => cli.overrides.push((key.to_string(), value.clone())),
        }
    }
    Ok(cli)
}

fn build_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    let mut problems = Vec::new();
    if let Some(path) = &cli.config_path {
        if !path.exists() {
            return Err(Error::not_found(format!(
                "configuration file {} not found",
                path.display()
            )));
        }
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        problems.extend(apply_config_text(&mut cfg, &text));
    }
    for (key, value) in &cli.overrides {
        if let Err(msg) = cfg.set_key(key, value) {
            problems.push(format!("flag --{key}: {msg}"));
        }
    }
    problems.extend(cfg.problems());
    if problems.is_empty() {
        Ok(cfg)
    } else {
        Err(Error::Config(problems))
    }
}

fn require<'a>(value: &'a Option<PathBuf>, flag: &str, command: &str) -> Result<&'a Path> {
    value
        .as_deref()
        .ok_or_else(|| Error::invalid_argument(format!("{command} requires {flag}")))
}

/// Resolves a checkpoint argument, appending `.ckpt` when the bare path does
/// not exist, and reports a missing checkpoint as a validation error naming
/// the requested path.
fn load_net(path: &Path) -> Result<PointNet<f64>> {
    let mut actual = path.to_path_buf();
    if !actual.exists() {
        let mut with_ext = path.as_os_str().to_owned();
        with_ext.push(".ckpt");
        let with_ext = PathBuf::from(with_ext);
        if with_ext.exists() {
            actual = with_ext;
        } else {
            return Err(Error::not_found(format!(
                "checkpoint {} not found",
                path.display()
            )));
        }
    }
    read_checkpoint(&actual)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))
}

fn cmd_gen(cfg: &RunConfig, out: &Path) -> Result<()> {
    let spec = cfg.benchmark_spec();
    let (source, target) = build_benchmark(&spec, cfg.seed)?;
    save_dataset(&source, &out.join("source"))?;
    save_dataset(&target, &out.join("target"))?;
    log::info!(
        "wrote {} source and {} target clouds to {}",
        source.entries.len(),
        target.entries.len(),
        out.display()
    );
    Ok(())
}

fn cmd_train(cfg: &RunConfig, data: &Path, out: &Path) -> Result<()> {
    let dataset: Dataset<f64> = load_dataset(&data.join("source"))?;
    ensure_dir(out)?;
    let tc = cfg.train_config();
    let every = cfg.checkpoint_every;
    let TrainOutput {
        student,
        teacher,
        log,
    } = train_with_hook(&tc, &dataset, |ep, student, _| {
        if every > 0 && (ep + 1) % every == 0 {
            write_checkpoint(student, &out.join(format!("epoch_{ep:04}.ckpt")))
        } else {
            Ok(())
        }
    })?;
    write_checkpoint(&student, &out.join("final.ckpt"))?;
    write_checkpoint(&teacher, &out.join("teacher.ckpt"))?;
    log.write_csv(&out.join("train_log.csv"))?;
    let last = log.epochs.last().expect("at least one epoch");
    log::info!(
        "trained {} epochs; final losses cls={:.4} oc={:.4} ms={:.4}; wrote {}",
        log.epochs.len(),
        last.l_cls,
        last.l_oc,
        last.l_ms,
        out.join("final.ckpt").display()
    );
    Ok(())
}

fn cmd_mine(cfg: &RunConfig, ckpt: &Path, data: &Path, out: &Path) -> Result<()> {
    let net = load_net(ckpt)?;
    let dataset: Dataset<f64> = load_dataset(&data.join("source"))?;
    let clouds = dataset.clouds(None, Split::Train);
    let set = build_intricate_set(&net, &clouds, &cfg.mining_config(), cfg.seed, 0, 0)?;
    ensure_dir(out)?;
    let path = out.join("intricate.csv");
    save_intricate(&set, &path.display().to_string())?;
    log::info!(
        "mined {} orientations each for {} clouds into {}",
        cfg.at,
        set.entries.len(),
        path.display()
    );
    Ok(())
}

fn cmd_eval(cfg: &RunConfig, ckpt: &Path, data: &Path, out: &Path, domain: &str) -> Result<()> {
    let net = load_net(ckpt)?;
    let dataset: Dataset<f64> = load_dataset(&data.join(domain))?;
    let clouds = dataset.clouds(None, Split::Test);
    let report = evaluate(&net, &clouds, cfg.classes)?;
    ensure_dir(out)?;
    write_metrics_json(&report, &out.join("metrics.json"))?;
    write_series_csv(&report, &out.join("series.csv"))?;
    log::info!(
        "{domain} test over 64 series: acc {:.4} ± {:.4}, avg {:.4} ± {:.4}, cst {:.4}",
        report.acc_mean,
        report.acc_std,
        report.avg_mean,
        report.avg_std,
        report.cst
    );
    Ok(())
}

fn cmd_ablate(cfg: &RunConfig, data: &Path, out: &Path, seeds: &[u64]) -> Result<()> {
    let source: Dataset<f64> = load_dataset(&data.join("source"))?;
    let target: Dataset<f64> = load_dataset(&data.join("target"))?;
    let rows = run_ablation_matrix(&cfg.train_config(), &source, &target, seeds)?;
    ensure_dir(out)?;
    let path = out.join("ablation.csv");
    write_ablation_csv(&rows, &path)?;
    for r in &rows {
        log::info!(
            "{:<8} seed {}: acc {:.4} avg {:.4} cst {:.4}",
            r.variant,
            r.seed,
            r.acc_mean,
            r.avg_mean,
            r.cst
        );
    }
    log::info!("wrote {}", path.display());
    Ok(())
}

fn cmd_theory(cfg: &RunConfig, trials: usize, out: Option<&Path>) -> Result<()> {
    let checks = run_theory_trials(trials, cfg.seed)?;
    println!(
        "{:<42} {:>7} {:>9} {:>14}  result",
        "check", "trials", "failures", "worst"
    );
    for c in &checks {
        println!(
            "{:<42} {:>7} {:>9} {:>14.6e}  {}",
            c.name,
            c.trials,
            c.failures,
            c.worst,
            if c.pass { "pass" } else { "FAIL" }
        );
    }
    let dir = out.unwrap_or(Path::new("."));
    ensure_dir(dir)?;
    let path = dir.join("theory.json");
    write_theory_json(&checks, &path)?;
    log::info!("wrote {}", path.display());
    if checks.iter().any(|c| !c.pass) {
        return Err(Error::invalid_state("theory checks failed"));
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = build_config(cli)?;
    match cli.command.as_str() {
        "gen" => cmd_gen(&cfg, require(&cli.out, "--out", "gen")?),
        "train" => cmd_train(
            &cfg,
            require(&cli.data, "--data", "train")?,
            require(&cli.out, "--out", "train")?,
        ),
        "mine" => cmd_mine(
            &cfg,
            require(&cli.ckpt, "--ckpt", "mine")?,
            require(&cli.data, "--data", "mine")?,
            require(&cli.out, "--out", "mine")?,
        ),
        "eval" => cmd_eval(
            &cfg,
            require(&cli.ckpt, "--ckpt", "eval")?,
            require(&cli.data, "--data", "eval")?,
            require(&cli.out, "--out", "eval")?,
            &cli.domain,
        ),
        "ablate" => cmd_ablate(
            &cfg,
            require(&cli.data, "--data", "ablate")?,
            require(&cli.out, "--out", "ablate")?,
            &cli.seeds,
        ),
        "theory-check" => cmd_theory(&cfg, cli.trials, cli.out.as_deref()),
        _ => unreachable!("commands are validated during parsing"),
    }
}

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.iter().any(|a| a == "--help" || a == "-h") {
        print!("{USAGE}");
        return;
    }
    if args.iter().any(|a| a == "--version" || a == "-V") {
        println!("rotadapt {}", env!("CARGO_PKG_VERSION"));
        return;
    }
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();

    let cli = match parse_args(&args) {
        Ok(cli) => cli,
        Err(msg) => {
            eprintln!("error: {msg}\n");
            eprint!("{USAGE}");
            std::process::exit(1);
        }
    };
    if let Err(e) = run(&cli) {
        eprintln!("error: {e}");
        std::process::exit(if e.is_validation() { 1 } else { 2 });
    }
}
