use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use spinml_core::tree::{parse_tree, validate};
use spinml_harness::presets::{preset, PRESETS};
use spinml_harness::run::{run_ed, run_relaxation, RunOptions, RunResults};
use spinml_harness::{emit_figure_data, Figure, HarnessError, Result, RunConfig};

#[derive(Parser)]
#[command(name = "spinml", version, about = "Tree-tensor ground states of spin-1/2 models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Source {
    /// A `.run.json` file.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// A built-in configuration (see `spinml presets`).
    #[arg(long)]
    preset: Option<String>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for independent realizations (0 = all cores).
    #[arg(long, default_value_t = 0)]
    jobs: usize,
}

#[derive(Subcommand)]
enum Command {
    /// Relax every realization of a configuration.
    Relax {
        #[command(flatten)]
        src: Source,
        /// Also diagonalize exactly and report deviations.
        #[arg(long)]
        compare_ed: bool,
    },
    /// Exact diagonalization only.
    Ed {
        #[command(flatten)]
        src: Source,
        /// Number of lowest levels to keep.
        #[arg(long, default_value_t = 2)]
        states: usize,
    },
    /// Relax and compare with exact diagonalization.
    Compare {
        #[command(flatten)]
        src: Source,
    },
    /// Disorder-ensemble run.
    Sweep {
        #[command(flatten)]
        src: Source,
        #[arg(long)]
        realizations: Option<usize>,
        #[arg(long)]
        base_seed: Option<u64>,
        #[arg(long)]
        compare_ed: bool,
    },
    /// Figure tables from finished runs.
    Figures {
        /// Result directories (several for energy_vs_L).
        #[arg(long = "from", required = true)]
        from: Vec<PathBuf>,
        #[arg(long, value_enum)]
        figure: Vec<Figure>,
        #[arg(long, default_value = "figures")]
        out: PathBuf,
    },
    /// Check a `.tree.json` document or the tree of a configuration.
    ValidateTree {
        #[arg(long, conflicts_with = "config")]
        tree: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// List the built-in configurations, or print one as JSON.
    Presets { name: Option<String> },
}

fn load(src: &Source) -> Result<RunConfig> {
    let mut cfg = match (&src.config, &src.preset) {
        (Some(path), _) => RunConfig::load(path)?,
        (None, Some(name)) => preset(name).ok_or_else(|| HarnessError::Config(format!("unknown preset `{name}`")))?,
        (None, None) => return Err(HarnessError::Config("pass --config FILE or --preset NAME".into())),
    };
    cfg.apply_env()?;
    if let Some(out) = &src.out {
        cfg.output = out.clone();
    }
    Ok(cfg)
}

fn report(results: &RunResults) {
    for r in &results.realizations {
        let mut line = format!("seed {}: E = {:.12} ({} steps", r.seed, r.energy, r.trace.rows.len());
        line.push_str(if r.converged { ")" } else { ", not converged)" });
        if let Some(c) = &r.comparison {
            line.push_str(&format!("  E_ed = {:.12}  dE = {:.3e}", c.e_ed, c.delta_e_rel));
            if let Some(dc) = c.max_dc {
                line.push_str(&format!("  max|dC| = {dc:.3e}"));
            }
            if let Some(ds) = c.max_ds {
                let flag = if c.degenerate { " (degenerate, flagged)" } else { "" };
                line.push_str(&format!("  max|dS| = {ds:.3e}{flag}"));
            }
        }
        println!("{line}");
    }
}

fn relax(cfg: &RunConfig, compare_ed: bool, jobs: usize) -> Result<()> {
    let opts = RunOptions { compare_ed, jobs };
    match run_relaxation(cfg, opts) {
        Ok(res) => {
            report(&res);
            println!("wrote {}", cfg.output.display());
            Ok(())
        }
        Err(e) => {
            if let HarnessError::NonConverged(_) = e {
                if let Ok(res) = RunResults::load(&cfg.output) {
                    report(&res);
                }
            }
            Err(e)
        }
    }
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Relax { src, compare_ed } => relax(&load(&src)?, compare_ed, src.jobs),
        Command::Compare { src } => relax(&load(&src)?, true, src.jobs),
        Command::Sweep { src, realizations, base_seed, compare_ed } => {
            let mut cfg = load(&src)?;
            if let Some(n) = realizations {
                cfg.ensemble.num_realizations = n;
            }
            if let Some(s) = base_seed {
                cfg.ensemble.base_seed = s;
            }
            relax(&cfg, compare_ed, src.jobs)
        }
        Command::Ed { src, states } => {
            let cfg = load(&src)?;
            for rec in run_ed(&cfg, states, src.jobs)? {
                let seed = rec.seed.map_or("-".to_string(), |s| s.to_string());
                let flag = if rec.degenerate { "  (degenerate)" } else { "" };
                println!("seed {seed}: {:?}{flag}", rec.energies);
            }
            Ok(())
        }
        Command::Figures { from, figure, out } => {
            let results = from.iter().map(|d| RunResults::load(d)).collect::<Result<Vec<_>>>()?;
            let figs = if figure.is_empty() {
                vec![Figure::EnergyVsL, Figure::Convergence, Figure::Correlations, Figure::Entropy]
            } else {
                figure
            };
            for f in figs {
                println!("{}", emit_figure_data(&results, f, &out)?.display());
            }
            Ok(())
        }
        Command::ValidateTree { tree, config } => {
            let spec = match (tree, config) {
                (Some(path), _) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
                    parse_tree(&text)?
                }
                (None, Some(path)) => {
                    let text = std::fs::read_to_string(&path)
                        .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
                    RunConfig::parse(&text)?.build_tree()?
                }
                (None, None) => return Err(HarnessError::Config("pass --tree FILE or --config FILE".into())),
            };
            let problems = validate(&spec);
            if problems.is_empty() {
                println!(
                    "ok: {} sites, {} nodes, {} parameters",
                    spec.num_sites(),
                    spec.len(),
                    spec.num_parameters()
                );
                Ok(())
            } else {
                for p in &problems {
                    println!("{p}");
                }
                Err(HarnessError::Config(format!("{} problem(s)", problems.len())))
            }
        }
        Command::Presets { name: None } => {
            for p in PRESETS {
                println!("{p}");
            }
            Ok(())
        }
        Command::Presets { name: Some(name) } => {
            let cfg = preset(&name).ok_or_else(|| HarnessError::Config(format!("unknown preset `{name}`")))?;
            println!("{}", cfg.to_json());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
