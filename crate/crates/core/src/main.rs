use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use torus_renorm::elimination::eliminate;
use torus_renorm::experiment::{
    generate_field, parse_json, read, run_experiment, to_pretty, trajectory_csv, BasisRef,
    ConfigSpec, ExperimentSpec, FieldGen, Sigma,
};
use torus_renorm::flow::{conjugacy_residual, integrate, winding_ratio};
use torus_renorm::fourier::FourierField;
use torus_renorm::renorm::{
    renorm_iterate, renorm_step, IterStatus, OverflowPolicy, RenormConfig, RescaleMode,
};
use torus_renorm::spectral::{build_dr_matrix, eigen_spectrum, fd_validation};
use torus_renorm::Error;

#[derive(Parser)]
#[command(
    name = "torus-renorm",
    version,
    about = "Renormalisation experiments for flows on the torus"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Build a field from a generator description.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Generator JSON (same schema as an experiment seed).
        #[arg(long)]
        gen: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Remove the far-from-resonance modes of a field.
    Eliminate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Iterate the renormalisation and write the trajectory CSV.
    Iterate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Write the last iterate here.
        #[arg(long)]
        final_field: Option<PathBuf>,
    },
    /// Spectrum of the linearisation at the linear flow.
    Spectrum {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        fd_dirs: usize,
        #[arg(long, default_value_t = 1e-7)]
        fd_step: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Rotation direction of the flow of a field.
    Winding {
        #[arg(long)]
        input: PathBuf,
        /// Comma-separated start point.
        #[arg(long, value_delimiter = ',')]
        theta0: Option<Vec<f64>>,
        #[arg(long, default_value_t = 1000.0)]
        t: f64,
        #[arg(long, default_value_t = 0.01)]
        dt: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Pointwise residual of the conjugacy behind one step.
    Conjugacy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value_t = 32)]
        grid: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run an experiment file.
    Run {
        experiment: PathBuf,
        /// Directory the experiment's output dir is resolved against.
        #[arg(long, default_value = ".")]
        root: PathBuf,
    },
}

/// Flags override keys from `--config`.
#[derive(Args)]
struct Common {
    /// golden, plastic or file:PATH, with an optional ^POWER suffix.
    #[arg(long, default_value = "golden")]
    basis: BasisRef,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long = "K")]
    k: Option<u32>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    rho_prime: Option<f64>,
    /// A number or "auto".
    #[arg(long)]
    sigma: Option<Sigma>,
    #[arg(long)]
    kappa: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long, value_parser = parse_overflow)]
    overflow: Option<OverflowPolicy>,
    #[arg(long, value_parser = parse_rescale)]
    rescale_mode: Option<RescaleMode>,
}

fn parse_overflow(s: &str) -> Result<OverflowPolicy, String> {
    serde_json::from_value(json!(s)).map_err(|_| format!("expected error or drop, got {s:?}"))
}

fn parse_rescale(s: &str) -> Result<RescaleMode, String> {
    serde_json::from_value(json!(s))
        .map_err(|_| format!("expected mean_dual or lambda1, got {s:?}"))
}

impl Common {
    fn spec(&self, field_k: Option<u32>) -> Result<ConfigSpec, Error> {
        let mut c = match &self.config {
            Some(p) => parse_json(&read(p)?, p)?,
            None => ConfigSpec::default(),
        };
        if let Some(k) = field_k {
            c.k = k;
        }
        if let Some(k) = self.k {
            c.k = k;
        }
        macro_rules! set {
            ($($f:ident),*) => { $( if let Some(v) = self.$f { c.$f = v; } )* };
        }
        set!(rho, rho_prime, sigma, max_iters, overflow, rescale_mode);
        if self.kappa.is_some() {
            c.kappa = self.kappa;
        }
        Ok(c)
    }

    fn build(&self, field_k: Option<u32>) -> Result<RenormConfig, Error> {
        let spec = self.spec(field_k)?;
        spec.build(self.basis.load()?)
    }
}

fn load_field(path: &Path) -> Result<FourierField, Error> {
    Ok(FourierField::from_json(&read(path)?)?)
}

fn emit(out: &Option<PathBuf>, text: &str) -> Result<(), Error> {
    match out {
        Some(p) => std::fs::write(p, text).map_err(|source| Error::Io {
            path: p.clone(),
            source,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn emit_json<T: Serialize>(out: &Option<PathBuf>, v: &T) -> Result<(), Error> {
    emit(out, &to_pretty(v))
}

fn check_omega(cfg: &RenormConfig, f: &FourierField) -> Result<(), Error> {
    if f.dim() != cfg.basis.d {
        return Err(Error::Config {
            message: format!("field has d = {}, basis has d = {}", f.dim(), cfg.basis.d),
            path: None,
        });
    }
    Ok(())
}

fn run(cmd: Cmd) -> Result<(), Error> {
    match cmd {
        Cmd::Generate { common, gen, out } => {
            let g: FieldGen = parse_json(&read(&gen)?, &gen)?;
            let spec = common.spec(None)?;
            let basis = common.basis.load()?;
            let f = generate_field(&g, &basis, spec.k, spec.rho)?;
            emit(&out, &f.to_json()?)
        }
        Cmd::Eliminate { common, input, out } => {
            let x = load_field(&input)?;
            let cfg = common.build(Some(x.trunc_radius()))?;
            check_omega(&cfg, &x)?;
            let res = eliminate(&x, &cfg.params, &cfg.elim)?;
            emit_json(&out, &res)
        }
        Cmd::Iterate {
            common,
            input,
            out,
            final_field,
        } => {
            let x = load_field(&input)?;
            let cfg = common.build(Some(x.trunc_radius()))?;
            check_omega(&cfg, &x)?;
            let traj = renorm_iterate(&x, &cfg);
            emit(&out, &trajectory_csv(&traj))?;
            if let (Some(p), Some(f)) = (&final_field, traj.final_field()) {
                emit(&Some(p.clone()), &f.to_json()?)?;
            }
            if traj.status == IterStatus::Failed {
                return Err(Error::Numerical(traj.error.unwrap_or_default()));
            }
            Ok(())
        }
        Cmd::Spectrum {
            common,
            fd_dirs,
            fd_step,
            out,
        } => {
            let cfg = common.build(None)?;
            let op = build_dr_matrix(&cfg.basis, &cfg.params, cfg.k, cfg.overflow)?;
            let spec = eigen_spectrum(&op, cfg.rho());
            let fd = if fd_dirs > 0 {
                Some(fd_validation(&op, &cfg, fd_dirs, fd_step, 0x5eed)?)
            } else {
                None
            };
            emit_json(
                &out,
                &json!({
                    "basis": String::from(common.basis.clone()),
                    "K": cfg.k,
                    "sigma": cfg.params.sigma,
                    "kappa": cfg.params.kappa,
                    "overflow_columns": op.overflow_columns,
                    "unstable": spec.unstable(),
                    "spectrum": spec,
                    "fd": fd,
                }),
            )
        }
        Cmd::Winding {
            input,
            theta0,
            t,
            dt,
            out,
        } => {
            let x = load_field(&input)?;
            let theta0 = theta0.unwrap_or_else(|| vec![0.0; x.dim()]);
            let traj = integrate(&x, &theta0, t, dt)?;
            let wind = winding_ratio(&traj);
            let (w, confident) = wind.summary(x.dim());
            emit_json(
                &out,
                &json!({ "w": w, "confident": confident, "winding": wind }),
            )
        }
        Cmd::Conjugacy {
            common,
            input,
            grid,
            out,
        } => {
            let x = load_field(&input)?;
            let cfg = common.build(Some(x.trunc_radius()))?;
            check_omega(&cfg, &x)?;
            let step = renorm_step(&x, &cfg)?;
            let residual = conjugacy_residual(&x, &step, &cfg.basis, grid);
            emit_json(&out, &json!({ "residual": residual, "grid": grid }))
        }
        Cmd::Run { experiment, root } => {
            let spec = ExperimentSpec::load(&experiment)?;
            let summary = run_experiment(&spec, &root)?;
            if let Some(bad) = summary.seeds.iter().find(|s| s.error.is_some()) {
                return Err(Error::Numerical(format!(
                    "seed {}: {}",
                    bad.name,
                    bad.error.as_deref().unwrap_or_default()
                )));
            }
            Ok(())
        }
    }
}

fn configure_threads() -> Result<(), Error> {
    let Ok(v) = std::env::var("TORUS_RENORM_THREADS") else {
        return Ok(());
    };
    let n: usize = v.trim().parse().map_err(|_| Error::Config {
        message: format!("TORUS_RENORM_THREADS must be a positive integer, got {v:?}"),
        path: None,
    })?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config {
            message: e.to_string(),
            path: None,
        })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match configure_threads().and_then(|_| run(cli.cmd)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let report = json!({ "error": e.kind(), "message": e.to_string(), "path": e.path() });
            eprintln!("{report}");
            ExitCode::from(e.exit_code())
        }
    }
}
