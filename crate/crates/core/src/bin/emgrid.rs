use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use emgrid::engine::{run_screening, run_simulation, OutputOptions, SimInputs};
use emgrid::montecarlo::run_mc;
use emgrid::synth::{self, Design, MeshSpec, RandomTreeSpec};
use emgrid::{Error, Result};

#[derive(Parser)]
#[command(name = "emgrid", version, about = "Electromigration-aware power grid aging analysis")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct InputArgs {
    /// SPICE-subset power grid netlist.
    #[arg(long)]
    netlist: PathBuf,
    /// Parameter file (key: value, with sections).
    #[arg(long)]
    params: Option<PathBuf>,
    /// Die temperature map.
    #[arg(long)]
    tmap: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Parameter override, `section.key=value`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl InputArgs {
    fn load(&self) -> Result<SimInputs> {
        let mut inputs = SimInputs::load(&self.netlist, self.params.as_deref(), self.tmap.as_deref())?;
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .ok_or_else(|| Error::Input(format!("override `{kv}` is not KEY=VALUE")))?;
            inputs.params.set(k.trim(), v.trim())?;
        }
        inputs.params.validate()?;
        std::fs::create_dir_all(&self.out)?;
        Ok(inputs)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Coupled aging simulation.
    Run {
        #[command(flatten)]
        input: InputArgs,
        /// Force every tree through backward Euler.
        #[arg(long)]
        no_krylov: bool,
        /// Stop after steady-state screening.
        #[arg(long)]
        screen_only: bool,
        #[arg(long)]
        seed: Option<u64>,
        /// Skip per-step stress, voltage and netlist snapshots.
        #[arg(long)]
        no_maps: bool,
    },
    /// Steady-state immortality screening only.
    Screen {
        #[command(flatten)]
        input: InputArgs,
    },
    /// Monte Carlo lifetime statistics.
    Mc {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        cov: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a synthetic netlist and matching parameter file.
    Synth {
        #[arg(value_enum)]
        kind: SynthKind,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Stripes per layer for `mesh`.
        #[arg(long, default_value_t = 100)]
        stripes: usize,
        /// Mean load per crossing for `mesh`, amperes.
        #[arg(long)]
        load: Option<f64>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Mesh,
    Tree,
    Wire,
    Marginal,
    DeepMortal,
}

fn write_screen(inputs: &SimInputs, out: &Path) -> Result<()> {
    let report = run_screening(inputs)?;
    std::fs::write(out.join("screen.json"), serde_json::to_string_pretty(&report)?)?;
    println!(
        "screened {} trees: {} immortal, {} need transient",
        report.trees.len(),
        report.immortal,
        report.needs_transient
    );
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            input,
            no_krylov,
            screen_only,
            seed,
            no_maps,
        } => {
            let mut inputs = input.load()?;
            if no_krylov {
                inputs.params.krylov.enable = false;
            }
            if let Some(s) = seed {
                inputs.params.sim.seed = s;
            }
            if screen_only {
                return write_screen(&inputs, &input.out);
            }
            let opts = if no_maps {
                OutputOptions {
                    dir: Some(&input.out),
                    ..Default::default()
                }
            } else {
                OutputOptions::all(&input.out)
            };
            let r = run_simulation(&inputs, &opts)?;
            match r.ttf {
                Some(t) => println!("TTF {t:.6e} s"),
                None => println!("censored: final max drop {:.4}%", 100.0 * r.final_max_drop),
            }
            println!(
                "{} trees, {} mortal, {} screened immortal; krylov {} / BE {} segments, cache hit rate {:.2}",
                r.tree_count,
                r.mortal_trees,
                r.screened_immortal,
                r.solver.krylov,
                r.solver.backward_euler,
                r.cache.hit_rate()
            );
            for w in &r.warnings {
                eprintln!("warning: {w}");
            }
        }
        Command::Screen { input } => {
            let inputs = input.load()?;
            write_screen(&inputs, &input.out)?;
        }
        Command::Mc {
            input,
            samples,
            cov,
            seed,
        } => {
            let inputs = input.load()?;
            let mut cfg = inputs.params.mc;
            cfg.samples = samples.unwrap_or(cfg.samples);
            cfg.cov = cov.unwrap_or(cfg.cov);
            cfg.seed = seed.unwrap_or(cfg.seed);
            let r = run_mc(&inputs, &cfg)?;
            r.write_json(&input.out.join("mc_report.json"))?;
            r.write_samples_csv(&input.out.join("ttf_samples.csv"))?;
            println!(
                "{} samples: {} failed, {} censored, {} errored",
                cfg.samples, r.failed, r.censored, r.errored
            );
            if let Some(s) = &r.stats {
                println!(
                    "TTF mean {:.6e} s, std {:.6e} s, CoV {:.4}%",
                    s.mean,
                    s.std,
                    100.0 * s.cov
                );
            }
        }
        Command::Synth {
            kind,
            out,
            seed,
            stripes,
            load,
        } => {
            let design = match kind {
                SynthKind::Mesh => {
                    let base = MeshSpec::default();
                    let spec = MeshSpec {
                        rows: stripes,
                        cols: stripes,
                        seed,
                        load: load.unwrap_or(base.load),
                        ..base
                    };
                    Design {
                        netlist: synth::stripe_mesh(&spec),
                        params: synth::mesh_params(&spec),
                    }
                }
                SynthKind::Tree => Design {
                    netlist: synth::random_tree(seed, &RandomTreeSpec::default()),
                    params: synth::accelerated_params(),
                },
                SynthKind::Wire => Design {
                    netlist: synth::single_wire(100, 1e-4, 1.0),
                    params: synth::accelerated_params(),
                },
                SynthKind::Marginal => synth::marginal_design(),
                SynthKind::DeepMortal => synth::deep_mortal_design(),
            };
            std::fs::create_dir_all(&out)?;
            std::fs::write(out.join("grid.sp"), &design.netlist)?;
            std::fs::write(out.join("params.yaml"), design.params.to_text())?;
            println!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
