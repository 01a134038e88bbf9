use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fcn_core::complementary::ComplementaryKernels;
use fcn_core::harness::{
    run_audit_suite, run_consistency_suite, run_table, solve_manufactured, ExperimentConfig,
};
use fcn_core::kernels::{Evaluation, KernelTable};

#[derive(Parser, Debug)]
#[command(name = "fcn", version, about = "Offset-point Caputo kernels, audits and a fractional Crank–Nicolson solver")]
struct Cli {
    /// Plain-text `key=value` config; command-line flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Worker threads (defaults to all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output CSV path (defaults to stdout).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by every subcommand; each maps onto a config key.
#[derive(Args, Debug, Default)]
struct Common {
    #[arg(long)]
    alpha: Option<String>,
    /// Mesh family: uniform, graded, twopart, random or file.
    #[arg(long)]
    mesh: Option<String>,
    /// Mesh file for `--mesh file`.
    #[arg(long = "mesh-file")]
    mesh_file: Option<String>,
    /// Step count, or a comma-separated list.
    #[arg(long = "N")]
    n: Option<String>,
    /// Grading exponent, or a comma-separated list.
    #[arg(long)]
    gamma: Option<String>,
    #[arg(long = "T")]
    t_final: Option<String>,
    /// Comma-separated seeds for random meshes and audit draws.
    #[arg(long)]
    seeds: Option<String>,
    /// Largest step ratio drawn for random meshes.
    #[arg(long = "rho-max")]
    rho_max: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve the manufactured problem and write the error trajectory.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        kappa: Option<String>,
        #[arg(long)]
        sigma: Option<String>,
        #[arg(long = "M")]
        m: Option<String>,
        /// Also write every nodal vector as `n,i,x,U`.
        #[arg(long)]
        nodal: Option<PathBuf>,
    },
    /// Write the kernel table `n,k,a,b,A`.
    Kernels {
        #[command(flatten)]
        common: Common,
        /// Only this row.
        #[arg(long)]
        row: Option<usize>,
        /// Evaluate by adaptive quadrature instead of closed forms.
        #[arg(long)]
        quadrature: bool,
        /// Write the complementary kernels `n,j,P` instead.
        #[arg(long)]
        complementary: bool,
    },
    /// Run every kernel inequality on each mesh.
    Audit {
        #[command(flatten)]
        common: Common,
    },
    /// Truncation error against its majorants for `1 + ω_{1+σ}(t)`.
    Consistency {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        sigma: Option<String>,
    },
    /// Error table `N,eN,order` for the manufactured problem.
    Convergence {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        kappa: Option<String>,
        #[arg(long)]
        sigma: Option<String>,
        #[arg(long = "M")]
        m: Option<String>,
    },
}

fn apply(config: &mut ExperimentConfig, pairs: &[(&str, &Option<String>)]) -> Result<()> {
    for (key, value) in pairs {
        if let Some(v) = value {
            config.set(key, v).with_context(|| format!("--{key}"))?;
        }
    }
    Ok(())
}

fn apply_common(config: &mut ExperimentConfig, c: &Common) -> Result<()> {
    apply(
        config,
        &[
            ("alpha", &c.alpha),
            ("mesh", &c.mesh),
            ("mesh_file", &c.mesh_file),
            ("N", &c.n),
            ("gamma", &c.gamma),
            ("T", &c.t_final),
            ("seeds", &c.seeds),
            ("rho_max", &c.rho_max),
        ],
    )
}

fn output(config: &ExperimentConfig) -> Result<Box<dyn Write>> {
    Ok(match &config.out {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).with_context(|| format!("creating {}", path.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn first<T: Copy>(xs: &[T], what: &str) -> Result<T> {
    match xs.first() {
        Some(&x) => Ok(x),
        None => bail!("no {what} given"),
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("configuring the thread pool")?;
    }
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path).with_context(|| format!("reading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(out) = &cli.out {
        config.out = Some(out.clone());
    }

    match &cli.command {
        Command::Solve {
            common,
            kappa,
            sigma,
            m,
            nodal,
        } => {
            apply_common(&mut config, common)?;
            apply(&mut config, &[("kappa", kappa), ("sigma", sigma), ("M", m)])?;
            config.validate()?;
            let n = first(&config.ns, "N")?;
            let gamma = first(&config.gammas, "gamma")?;
            let run = solve_manufactured(&config, n, gamma)?;
            if run.solution.step_cap_exceeded {
                eprintln!("warning: the largest step exceeds the stability step cap");
            }
            if !run.stability_violations.is_empty() {
                eprintln!("warning: stability bound exceeded at levels {:?}", run.stability_violations);
            }
            let mut w = output(&config)?;
            writeln!(w, "n,t_n,error_L2")?;
            for (k, e) in run.errors.per_step.iter().enumerate() {
                writeln!(w, "{},{:e},{:e}", k, run.solution.mesh.t(k), e)?;
            }
            w.flush()?;
            if let Some(path) = nodal {
                let mut w = BufWriter::new(File::create(path)?);
                writeln!(w, "n,i,x,U")?;
                for (k, u) in run.solution.u.iter().enumerate() {
                    for (i, v) in u.iter().enumerate() {
                        writeln!(w, "{},{},{:e},{:e}", k, i + 1, run.solution.grid.x(i), v)?;
                    }
                }
                w.flush()?;
            }
            eprintln!("e(N) = {:e}", run.errors.max);
            Ok(ExitCode::SUCCESS)
        }
        Command::Kernels {
            common,
            row,
            quadrature,
            complementary,
        } => {
            apply_common(&mut config, common)?;
            config.validate()?;
            let mesh = config.build_mesh(
                first(&config.ns, "N")?,
                first(&config.gammas, "gamma")?,
                config.seeds.first().copied().unwrap_or(0),
            )?;
            let eval = if *quadrature {
                Evaluation::Quadrature
            } else {
                Evaluation::ClosedForm
            };
            let table = KernelTable::build_with(&mesh, config.alpha, eval)?;
            let mut w = output(&config)?;
            if *complementary {
                ComplementaryKernels::new(&table)?.write_csv(&mut w)?;
            } else if let Some(n) = row {
                table.write_row_csv(*n, &mut w)?;
            } else {
                table.write_csv(&mut w)?;
            }
            w.flush()?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Audit { common } => {
            apply_common(&mut config, common)?;
            let report = run_audit_suite(&config.suite_cases()?);
            let mut w = output(&config)?;
            report.write_csv(&mut w)?;
            w.flush()?;
            eprint!("{}", report.summary());
            Ok(ExitCode::from(report.exit_code() as u8))
        }
        Command::Consistency { common, sigma } => {
            apply_common(&mut config, common)?;
            apply(&mut config, &[("sigma", sigma)])?;
            let report = run_consistency_suite(&config.suite_cases()?, config.sigma)?;
            let mut w = output(&config)?;
            report.write_csv(&mut w)?;
            w.flush()?;
            eprint!("{}", report.summary());
            Ok(ExitCode::from(report.exit_code() as u8))
        }
        Command::Convergence {
            common,
            kappa,
            sigma,
            m,
        } => {
            apply_common(&mut config, common)?;
            apply(&mut config, &[("kappa", kappa), ("sigma", sigma), ("M", m)])?;
            let reports = run_table(&config)?;
            let mut w = output(&config)?;
            for r in &reports {
                r.write_csv(&mut w)?;
            }
            w.flush()?;
            let failed = reports.iter().flat_map(|r| &r.rows).any(|row| row.failure.is_some());
            Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(2)
        }
    }
}
