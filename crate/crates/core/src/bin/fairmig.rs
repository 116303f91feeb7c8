use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use fairmig::graph::{generate_synthetic, save_dataset, SyntheticSpec};
use fairmig::harness::{
    ablate, compare_dirs, evaluate_run, run_in, sweep, write_compare, Aggregate, DataSource, Execution,
    ExperimentConfig, GridAxis, Variant,
};

#[derive(Parser)]
#[command(name = "fairmig", version, about = "Fairness-aware GNN experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunOpts {
    /// Experiment config file (flat `key = value`).
    #[arg(long, short)]
    config: PathBuf,
    /// Output root; overrides `output_dir` and FAIRMIG_OUTPUT_ROOT.
    #[arg(long, short)]
    output: Option<PathBuf>,
    /// Comma-separated seeds, overriding the config.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Run seeds one after another.
    #[arg(long)]
    sequential: bool,
}

impl RunOpts {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg =
            ExperimentConfig::read(&self.config).with_context(|| format!("reading {}", self.config.display()))?;
        if let Some(o) = &self.output {
            cfg.output_dir = Some(o.clone());
        }
        if !self.seeds.is_empty() {
            cfg.seeds = self.seeds.clone();
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn mode(&self) -> Execution {
        if self.sequential {
            Execution::Sequential
        } else {
            Execution::default()
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run both stages for every seed and write a run directory.
    Train {
        #[command(flatten)]
        run: RunOpts,
        /// Variant overriding the config.
        #[arg(long)]
        variant: Option<Variant>,
    },
    /// Recompute test reports from a run directory's checkpoints.
    Evaluate { run_dir: PathBuf },
    /// Run the config once per variant.
    Ablate {
        #[command(flatten)]
        run: RunOpts,
        /// Variants to run; all by default.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<Variant>,
    },
    /// Run every cell of a hyperparameter grid.
    Sweep {
        #[command(flatten)]
        run: RunOpts,
        /// Axis such as `lambda=5,10,15,20`; repeat for more axes.
        #[arg(long, required = true)]
        grid: Vec<GridAxis>,
    },
    /// Rank finished runs on the same dataset and backbone.
    Compare {
        #[arg(required = true, num_args = 2..)]
        run_dirs: Vec<PathBuf>,
        /// Also write the table as CSV.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write the config's synthetic graph as a dataset directory.
    Synth {
        #[arg(long, short)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Generator seed; defaults to the first configured seed.
        #[arg(long)]
        seed: Option<u64>,
    },
}

fn print_aggregate(a: &Aggregate) {
    let fmt =
        |s: Option<fairmig::harness::Summary>| s.map_or("n/a".into(), |s| format!("{:.4} ± {:.4}", s.mean, s.std));
    println!(
        "{:<10} auc {}  ΔSP {}  ΔEO {}{}",
        a.variant,
        fmt(a.auc),
        fmt(a.delta_sp),
        fmt(a.delta_eo),
        if a.partial { format!("  ({} seed(s) failed)", a.failed.len()) } else { String::new() }
    );
    for f in &a.failed {
        println!("  seed {}: {}", f.seed, f.error);
    }
}

fn main() -> ExitCode {
    match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train { run, variant } => {
            let mut cfg = run.load()?;
            // A variant given on the command line gets its own run directory.
            if let Some(v) = variant {
                cfg.variant = v;
                cfg.name = format!("{}_{v}", cfg.name);
            }
            let dir = cfg.run_dir();
            let a = run_in(&cfg, &dir, run.mode())?;
            println!("{}", dir.display());
            print_aggregate(&a);
            Ok(if a.auc.is_none() { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
        Command::Evaluate { run_dir } => {
            let checks = evaluate_run(&run_dir)?;
            let mut ok = true;
            for c in &checks {
                let r = &c.recomputed;
                println!(
                    "seed {}: auc {:.6} ΔSP {:.6} ΔEO {:.6} {}",
                    c.seed,
                    r.auc,
                    r.delta_sp,
                    r.delta_eo,
                    if c.matches() { "matches stored report" } else { "DIFFERS from stored report" }
                );
                ok &= c.matches();
            }
            Ok(if ok { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Command::Ablate { run, variants } => {
            let cfg = run.load()?;
            let variants = if variants.is_empty() { Variant::ALL.to_vec() } else { variants };
            let dir = cfg.run_dir();
            println!("{}", dir.display());
            for (v, r) in ablate(&cfg, &variants, &dir, run.mode())? {
                match r {
                    Ok(a) => print_aggregate(&a),
                    Err(e) => println!("{v:<10} failed: {e}"),
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep { run, grid } => {
            let cfg = run.load()?;
            let dir = cfg.run_dir();
            println!("{}", dir.display());
            for cell in sweep(&cfg, &grid, &dir, run.mode())? {
                let label: Vec<String> = cell.values.iter().map(|(p, v)| format!("{}={v}", p.name())).collect();
                match &cell.outcome {
                    Ok(a) => {
                        print!("{}: ", label.join(" "));
                        print_aggregate(a);
                    }
                    Err(e) => println!("{}: failed: {e}", label.join(" ")),
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Compare { run_dirs, out } => {
            let rows = compare_dirs(&run_dirs)?;
            println!("{:<40} {:>8} {:>8} {:>8} {:>9}", "run", "auc", "ΔSP", "ΔEO", "avg rank");
            for r in &rows {
                println!("{:<40} {:>8.4} {:>8.4} {:>8.4} {:>9.3}", r.run, r.auc, r.delta_sp, r.delta_eo, r.avg_rank);
            }
            if let Some(p) = out {
                write_compare(&p, &rows)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Synth { config, out, seed } => {
            let cfg = ExperimentConfig::read(&config)?;
            let DataSource::Synthetic(spec) = &cfg.data else {
                bail!("config does not describe a synthetic dataset");
            };
            let seed = seed.unwrap_or(cfg.seeds[0]);
            let g = generate_synthetic(&SyntheticSpec { seed, ..spec.clone() })?;
            save_dataset(&out, &g, &format!("synthetic_{seed}"))?;
            println!("wrote {} nodes, {} edges to {}", g.n_nodes(), g.adjacency.nnz() / 2, out.display());
            Ok(ExitCode::SUCCESS)
        }
    }
}
