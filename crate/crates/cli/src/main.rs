use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cane_cli::commands::{self, DiagnoseArgs, Inputs};
use cane_cli::config::RunConfig;
use cane_cli::render::{render_diagnostic, render_runs, render_sweep, Report};
use cane_cli::sweep::{run_sweep, Axis};
use cane_cli::{CliError, CliResult};
use cane_core::Mode;
use clap::{Args, Parser, Subcommand};

/// Cluster-conditional noise estimation and label refinement for graphs
/// annotated by an LLM.
#[derive(Parser)]
#[command(name = "cane", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration; relative paths inside it resolve against its
    /// directory.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override a config entry, e.g. `gnn.lr=0.01` or `gate.alpha=0.1`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Master seed; every stage derives its own stream from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Graph directory (meta.json, edges.tsv, features.bin, labels.tsv).
    #[arg(long)]
    graph: Option<PathBuf>,
    /// External node embeddings (`.f32` with a `.meta.json` beside it).
    #[arg(long)]
    embeddings: Option<PathBuf>,
}

impl Common {
    fn load(&self) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::load(self.config.as_deref(), &self.set)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(g) = &self.graph {
            cfg.paths.graph = Some(g.clone());
        }
        if let Some(e) = &self.embeddings {
            cfg.paths.embeddings = Some(e.clone());
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a planted synthetic graph.
    Gen {
        /// TOML synthetic spec; defaults apply to missing keys.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Cluster, select seeds and annotate them.
    Annotate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate the cluster-conditional transition tensor from probe annotations.
    Estimate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        clusters: PathBuf,
        /// Output file for the tensor.
        #[arg(long, default_value = "tc.json")]
        out: PathBuf,
    },
    /// Train the GCN on an annotation file.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        annotations: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        dropout: Option<f64>,
        #[arg(long = "elr-lambda")]
        elr_lambda: Option<f64>,
        #[arg(long = "edge-dropout")]
        edge_dropout: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline and write report.json.
    Run {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        mode: Option<Mode>,
        /// Number of consecutive seeds starting at the master seed.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Per-cluster annotation accuracy, ANOVA and Fisher combination.
    Diagnose {
        /// Annotations file; not needed with --null-control.
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Ground-truth `node<TAB>class` file.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        clusters: PathBuf,
        /// Defaults to the largest class id in the labels file plus one.
        #[arg(long = "num-classes")]
        num_classes: Option<usize>,
        #[arg(long = "min-cell", default_value_t = 20)]
        min_cell: usize,
        /// Replace the annotations with a class-conditional annotator of
        /// this diagonal over every labeled node.
        #[arg(long = "null-control", value_name = "DIAG")]
        null_control: Option<f64>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep one axis over several seeds.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        axis: Axis,
        /// Comma-separated axis values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
        /// Parallel cells.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print a report file as a text table.
    Render { report: PathBuf },
}

fn seed_range(start: u64, count: u64) -> CliResult<Vec<u64>> {
    if count == 0 {
        return Err(CliError::Config("--seeds must be at least 1".into()));
    }
    Ok((start..start + count).collect())
}

fn execute(cmd: Command) -> CliResult<String> {
    match cmd {
        Command::Gen { spec, set, seed, out } => {
            let spec = commands::load_spec(spec.as_deref(), &set, seed)?;
            let s = commands::gen(&spec, &out)?;
            Ok(format!(
                "wrote {}: {} nodes, {} edges, edge homophily {:.3}\n",
                out.display(),
                s.nodes,
                s.edges,
                s.homophily
            ))
        }
        Command::Annotate { common, out } => {
            let cfg = common.load()?;
            let (n, failed) = commands::annotate(&cfg, &out)?;
            Ok(format!(
                "annotated {n} seeds, {} failed; wrote {}\n",
                failed.len(),
                out.display()
            ))
        }
        Command::Estimate {
            common,
            annotations,
            clusters,
            out,
        } => {
            let cfg = common.load()?;
            let tc = commands::estimate(&cfg, &annotations, &clusters)?;
            commands::write_json(&out, &tc)?;
            Ok(format!(
                "wrote {} ({} clusters x {} classes)\n",
                out.display(),
                tc.k,
                tc.c
            ))
        }
        Command::Train {
            common,
            annotations,
            epochs,
            lr,
            dropout,
            elr_lambda,
            edge_dropout,
            out,
        } => {
            let cfg = common.load()?;
            let mut gnn = cfg.gnn.clone();
            gnn.epochs = epochs.unwrap_or(gnn.epochs);
            gnn.lr = lr.unwrap_or(gnn.lr);
            gnn.dropout = dropout.unwrap_or(gnn.dropout);
            gnn.elr_lambda = elr_lambda.unwrap_or(gnn.elr_lambda);
            gnn.edge_dropout = edge_dropout.unwrap_or(gnn.edge_dropout);
            let s = commands::train_cmd(&cfg, &gnn, &annotations, &out)?;
            let acc = s
                .accuracy
                .map_or_else(String::new, |a| format!(", accuracy {:.2}%", 100.0 * a));
            Ok(format!(
                "trained on {} labels, final loss {:.4}{acc}\n",
                s.labeled, s.final_loss
            ))
        }
        Command::Run {
            common,
            mode,
            seeds,
            out,
        } => {
            let mut cfg = common.load()?;
            if let Some(m) = mode {
                cfg.mode = m;
            }
            let reports = commands::run(&cfg, &seed_range(cfg.seed, seeds)?, &out)?;
            Ok(render_runs(&reports))
        }
        Command::Diagnose {
            annotations,
            labels,
            clusters,
            num_classes,
            min_cell,
            null_control,
            seed,
            out,
        } => {
            let report = commands::diagnose_cmd(&DiagnoseArgs {
                annotations: annotations.as_deref(),
                labels: &labels,
                clusters: &clusters,
                num_classes,
                min_cell,
                null_control,
                seed,
            })?;
            if let Some(out) = out {
                commands::write_json(&out, &report)?;
            }
            Ok(render_diagnostic(&report))
        }
        Command::Sweep {
            common,
            axis,
            values,
            seeds,
            jobs,
            out,
        } => {
            let cfg = common.load()?;
            let inputs = commands::load_inputs(&cfg)?;
            let annotator = commands::build_annotator(&cfg, &inputs)?;
            let report = run_sweep(
                &cfg,
                axis,
                &values,
                &seed_range(cfg.seed, seeds)?,
                jobs,
                Some(&out),
                |cell_cfg, seed, dir| sweep_cell(cell_cfg, &inputs, annotator.as_ref(), seed, dir),
            )?;
            commands::write_json(&out.join("sweep.json"), &report)?;
            Ok(render_sweep(&report))
        }
        Command::Render { report } => {
            let text = std::fs::read_to_string(&report)
                .map_err(|e| CliError::Data(format!("cannot read {}: {e}", report.display())))?;
            Ok(Report::parse(&text)?.render())
        }
    }
}

fn sweep_cell(
    cfg: &RunConfig,
    inputs: &Inputs,
    annotator: &(dyn cane_core::Annotator + Sync),
    seed: u64,
    dir: Option<&Path>,
) -> CliResult<cane_core::RunReport> {
    let outcome = commands::run_once(cfg, inputs, annotator, seed)?;
    if let Some(dir) = dir {
        commands::write_run(dir, &outcome)?;
    }
    Ok(outcome.report)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(text) => {
            print!("{text}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("cane: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
