use clap::{Args, Parser, Subcommand};
use std::fmt::Display;
use std::path::PathBuf;
use std::process::ExitCode;
use survem_cli::config::{self, MeshFamily, PartialConfig, StabChoice};
use survem_cli::run;

#[derive(Parser)]
#[command(
    name = "survem",
    version,
    about = "Virtual element convergence studies for elliptic problems on parametrized surfaces"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one convergence study and write its tables and plots.
    RunExperiment(RunArgs),
}

#[derive(Args)]
struct RunArgs {
    /// TOML config file; individual flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Test case to run (1..=4); presets fill the remaining fields.
    #[arg(long)]
    test_case: Option<u8>,

    /// Polynomial orders, comma-separated (from 1..=4).
    #[arg(long, value_delimiter = ',')]
    orders: Option<Vec<usize>>,

    /// Mesh family: `tri` or `poly`.
    #[arg(long)]
    mesh_family: Option<MeshFamily>,

    /// Number of refinement levels.
    #[arg(long)]
    levels: Option<usize>,

    /// Surface parameter r.
    #[arg(long, allow_negative_numbers = true)]
    r: Option<f64>,

    /// Surface oscillation amplitude a.
    #[arg(long, allow_negative_numbers = true)]
    a: Option<f64>,

    /// Surface oscillation frequency.
    #[arg(long)]
    freq: Option<u32>,

    /// Stabilization: `default`, `dofi_dofi`, or `d_recipe`.
    #[arg(long)]
    stab_kind: Option<StabChoice>,

    /// Advection components in the orthonormal frame, as `w1,w2`.
    #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
    w_hat: Option<Vec<f64>>,

    /// Reaction coefficient.
    #[arg(long, allow_negative_numbers = true)]
    gamma: Option<f64>,

    /// Seed for the polygonal mesh generator.
    #[arg(long)]
    seed: Option<u64>,

    /// Boundary-polyline nodes on the coarsest level.
    #[arg(long)]
    boundary_nodes: Option<usize>,

    /// Finest levels used for the plotted least-squares fits (0 = all).
    #[arg(long)]
    fit_window: Option<usize>,

    /// Output directory (the SURVEM_OUTPUT_DIR environment variable wins).
    #[arg(long)]
    output: Option<PathBuf>,

    /// Solve the (order, level) grid in parallel.
    #[arg(long)]
    parallel: bool,
}

impl RunArgs {
    fn to_partial(&self) -> Result<PartialConfig, String> {
        let w_hat = match &self.w_hat {
            None => None,
            Some(v) if v.len() == 2 => Some([v[0], v[1]]),
            Some(v) => {
                return Err(format!("--w-hat expects exactly two components, got {}", v.len()))
            }
        };
        Ok(PartialConfig {
            test_case: self.test_case,
            orders: self.orders.clone(),
            mesh_family: self.mesh_family,
            levels: self.levels,
            r: self.r,
            a: self.a,
            freq: self.freq,
            stab_kind: self.stab_kind,
            w_hat,
            gamma: self.gamma,
            seed: self.seed,
            boundary_nodes: self.boundary_nodes,
            fit_window: self.fit_window,
            output: self.output.clone(),
            parallel: if self.parallel { Some(true) } else { None },
        })
    }
}

fn config_failure(msg: impl Display) -> ExitCode {
    let line = serde_json::json!({
        "error": { "stage": "configuration", "message": msg.to_string() }
    });
    eprintln!("{line}");
    eprintln!("error: {msg}");
    ExitCode::from(2)
}

fn run_experiment_cmd(args: RunArgs) -> ExitCode {
    let file_cfg = match &args.config {
        Some(path) => {
            let text = match std::fs::read_to_string(path) {
                Ok(text) => text,
                Err(e) => return config_failure(format!("cannot read {}: {e}", path.display())),
            };
            match toml::from_str::<PartialConfig>(&text) {
                Ok(cfg) => Some(cfg),
                Err(e) => return config_failure(format!("cannot parse {}: {e}", path.display())),
            }
        }
        None => None,
    };
    let flag_cfg = match args.to_partial() {
        Ok(cfg) => cfg,
        Err(e) => return config_failure(e),
    };
    let mut cfg = match config::resolve(file_cfg, flag_cfg) {
        Ok(cfg) => cfg,
        Err(e) => return config_failure(e),
    };
    if let Ok(dir) = std::env::var("SURVEM_OUTPUT_DIR") {
        if !dir.is_empty() {
            cfg.output = PathBuf::from(dir);
        }
    }

    println!(
        "test case {} | orders {:?} | {} meshes | {} levels | seed {} | hash {}",
        cfg.test_case,
        cfg.orders,
        cfg.mesh_family,
        cfg.levels,
        cfg.seed,
        cfg.config_hash()
    );
    match run::run_experiment(&cfg) {
        Ok(out) => {
            for w in &out.warnings {
                eprintln!("warning: {w}");
            }
            print_summary(&out.rows);
            for f in &out.files {
                println!("wrote {}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.structured());
            eprintln!("error: {e}");
            ExitCode::from(3)
        }
    }
}

/// Final-level line per (order, mesh-set) group.
fn print_summary(rows: &[run::Row]) {
    let mut groups: Vec<(usize, usize)> = rows.iter().map(|r| (r.k, r.set)).collect();
    groups.dedup();
    for (k, set) in groups {
        let last = rows
            .iter()
            .filter(|r| r.k == k && r.set == set)
            .max_by_key(|r| r.level)
            .expect("group is non-empty");
        let rates = match (last.eoc_l2, last.eoc_h1) {
            (Some(l2), Some(h1)) => format!(" | eoc L2 {l2:.3}, H1 {h1:.3}"),
            _ => String::new(),
        };
        println!(
            "k={k} ({} cells): final h {:.4e}, L2 {:.4e}, H1 {:.4e}{rates}",
            last.n_cells, last.h, last.err_l2, last.err_h1
        );
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Command::RunExperiment(args) => run_experiment_cmd(args),
    }
}
