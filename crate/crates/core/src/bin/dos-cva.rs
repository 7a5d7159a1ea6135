//! Command-line driver for the risk-free and risky pipelines.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use dos_cva::cva::CvaReport;
use dos_cva::experiment::{
    credit_cells, evaluate_cell, exposure_profiles, report_metadata, run_risk_free, train_risky_cell, ArtifactDir,
    ExperimentConfig, RunManifest, Setup, ValueTable, OUTPUT_ROOT_ENV,
};
use dos_cva::Result;

#[derive(Parser)]
#[command(name = "dos-cva", version, about = "Neural exercise policies, exposures and CVA for Bermudan portfolios")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    verb: Verb,
}

#[derive(Args)]
struct Common {
    /// TOML configuration; the built-in desk-scale setup when omitted.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Override any configuration field, e.g. `--set paths.train=65536`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Master seed (shortcut for `--set seed=N`).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Training and valuation path counts (shortcut for both `paths.*` fields).
    #[arg(long, global = true)]
    paths: Option<usize>,
    /// Root directory for outputs; relative `output_dir` values resolve against it.
    #[arg(long, env = OUTPUT_ROOT_ENV, global = true)]
    output_root: Option<PathBuf>,
    /// More log output (repeatable).
    #[arg(long, short, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
}

#[derive(Subcommand)]
enum Verb {
    /// Simulate and store the training and valuation paths.
    Simulate,
    /// Train the risk-free policy, value the portfolio and fit value surfaces.
    TrainRiskfree,
    /// Train the risky policies (with and without netting) for credit cells.
    TrainRisky(CellArgs),
    /// Export EE/PFE profiles of the risk-free run.
    Exposure,
    /// Value every credit cell and write the CVA report.
    CvaGrid,
    /// Print the stored value and CVA tables.
    Report(ReportArgs),
}

#[derive(Args)]
struct CellArgs {
    /// Only the cell with this WWR parameter (requires --hbar).
    #[arg(long, requires = "hbar", allow_hyphen_values = true)]
    b: Option<f64>,
    /// Only the cell with this mean intensity, per year (requires --b).
    #[arg(long, requires = "b")]
    hbar: Option<f64>,
}

#[derive(Args)]
struct ReportArgs {
    /// Also print the stored configuration as TOML.
    #[arg(long)]
    print_config: bool,
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let text = match &c.config {
        Some(path) => fs::read_to_string(path)?,
        None => ExperimentConfig::paper().to_toml()?,
    };
    let mut overrides = c.overrides.clone();
    if let Some(s) = c.seed {
        overrides.push(format!("seed={s}"));
    }
    if let Some(n) = c.paths {
        overrides.push(format!("paths.train={n}"));
        overrides.push(format!("paths.valuation={n}"));
    }
    ExperimentConfig::from_toml_with_overrides(&text, &overrides)
}

fn run(cli: Cli) -> Result<()> {
    let setup = Setup::new(load_config(&cli.common)?)?;
    let dir = ArtifactDir::new(setup.config.resolved_output(cli.common.output_root.as_deref()));
    let mut manifest = RunManifest::load_or_new(&dir.root, &setup)?;
    let clock = Instant::now();
    match cli.verb {
        Verb::Simulate => {
            dir.load_or_simulate(&setup, &mut manifest)?;
            manifest.timings.insert("simulate".into(), clock.elapsed().as_secs_f64());
        }
        Verb::TrainRiskfree => {
            let (train, val) = dir.load_or_simulate(&setup, &mut manifest)?;
            let rf = run_risk_free(&setup, &train, &val, true)?;
            dir.save_risk_free(&setup, &rf, &mut manifest)?;
            let mut out = Vec::new();
            ValueTable::new(&setup.portfolio, &rf).write_csv(&mut out)?;
            print!("{}", String::from_utf8_lossy(&out));
        }
        Verb::TrainRisky(cell) => {
            let (train, val) = dir.load_or_simulate(&setup, &mut manifest)?;
            let rf = dir.load_risk_free(&setup, &val)?;
            let cells = match (cell.b, cell.hbar) {
                (Some(b), Some(h)) => vec![(b, h)],
                _ => credit_cells(&setup.config),
            };
            for (b, h) in cells {
                let t = Instant::now();
                let pol = train_risky_cell(&setup, &train, &rf, b, h)?;
                dir.save_risky(&setup, &pol, &mut manifest)?;
                manifest.timings.insert(format!("train_risky_b{b}_hbar{h}"), t.elapsed().as_secs_f64());
            }
        }
        Verb::Exposure => {
            let (_, val) = dir.load_or_simulate(&setup, &mut manifest)?;
            let rf = dir.load_risk_free(&setup, &val)?;
            for (name, profile) in exposure_profiles(&setup, &val, &rf)? {
                let mut buf = Vec::new();
                profile.write_csv(&mut buf)?;
                dir.write(&mut manifest, dir.exposure(&format!("ee_{name}.csv")), buf)?;
            }
        }
        Verb::CvaGrid => {
            let (train, val) = dir.load_or_simulate(&setup, &mut manifest)?;
            let rf = dir.load_risk_free(&setup, &val)?;
            let mut cells = Vec::new();
            for (b, h) in credit_cells(&setup.config) {
                let pol = match dir.load_risky(&setup, b, h)? {
                    Some(p) => p,
                    None => {
                        let p = train_risky_cell(&setup, &train, &rf, b, h)?;
                        dir.save_risky(&setup, &p, &mut manifest)?;
                        p
                    }
                };
                let curves = setup.config.credit.curve_cells.iter().any(|c| c[0] == b && c[1] == h);
                cells.push(evaluate_cell(&setup, &val, &rf, &pol, curves)?.0);
            }
            let report = CvaReport {
                cells,
                metadata: report_metadata(&setup),
            };
            dir.save_report(&report, &mut manifest)?;
            print_cva(&report);
        }
        Verb::Report(args) => {
            if args.print_config {
                println!("{}", setup.config.to_toml()?);
            }
            match fs::read_to_string(dir.risk_free("values.json")) {
                Ok(s) => print_values(&serde_json::from_str(&s)?),
                Err(_) => println!("no risk-free values in {}", dir.root.display()),
            }
            match fs::read_to_string(dir.cva("report.json")) {
                Ok(s) => print_cva(&CvaReport::from_json(&s)?),
                Err(_) => println!("no CVA report in {}", dir.root.display()),
            }
            return Ok(());
        }
    }
    manifest.timings.insert("last_command".into(), clock.elapsed().as_secs_f64());
    manifest.save(&dir.root)
}

fn print_values(t: &ValueTable) {
    println!("{:<12} {:>10} {:>8}", "contract", "value", "s.e.");
    for (name, e) in t.contracts.iter().zip(&t.values) {
        println!("{name:<12} {:>10.3} {:>8.3}", e.mean, e.se);
    }
    println!("{:<12} {:>10.3} {:>8.3}", "total", t.total.mean, t.total.se);
}

fn print_cva(r: &CvaReport) {
    println!(
        "{:>6} {:>6} {:>8} {:>8} {:>8} {:>8} {:>8} | {:>7} {:>7} {:>6} | {:>7} {:>7} {:>6}",
        "b", "hbar", "V[fV]", "U[fU]", "U[fV]", "A[fA]", "A[fV]", "CVA", "CVAbar", "rel%", "CVAnet", "barnet", "rel%"
    );
    for c in &r.cells {
        println!(
            "{:>6} {:>6} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2} | {:>7.2} {:>7.2} {:>6.1} | {:>7.2} {:>7.2} {:>6.1}",
            c.b,
            c.hbar,
            c.v_free.mean,
            c.u_risky.mean,
            c.u_free.mean,
            c.a_risky.mean,
            c.a_free.mean,
            c.cva.mean,
            c.cva_bar.mean,
            100.0 * c.rel_overestimation,
            c.cva_net.mean,
            c.cva_bar_net.mean,
            100.0 * c.rel_overestimation_net
        );
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.common.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new().filter_level(level).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
