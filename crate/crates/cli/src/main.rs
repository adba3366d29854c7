use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use floerlab::conley_zehnder::{constant_generator_path, cz_index};
use floerlab::config::RunConfig;
use floerlab::floer_solver::{fredholm_diag_tol, predicted_index};
use floerlab::hamiltonian::SymplecticPath;
use floerlab::nalgebra::DMatrix;
use floerlab::pipeline::{self, Run, Stage, fredholm_csv, model_gap};
use floerlab::{Error, GalerkinSpace, Result};

#[derive(Parser)]
#[command(name = "floerlab", version, about = "Morse and Floer complexes of trigonometric Hamiltonians on the torus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    #[command(flatten)]
    global: Global,
}

#[derive(Args)]
struct Global {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed in the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Artifact directory; defaults to `output` from the config, then `out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Also write full cylinder dumps.
    #[arg(long, global = true)]
    full: bool,
    /// Worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Contractible 1-periodic orbits with actions and Conley-Zehnder indices.
    Orbits,
    /// Conley-Zehnder index of a symplectic path.
    Cz(CzArgs),
    /// Morse complex of the truncated action functional.
    Morse,
    /// Floer complex from cylinders between critical loops.
    Floer,
    /// Hybrid chain map from the Morse to the Floer complex.
    Hybrid,
    /// Homology ranks of both complexes.
    Homology,
    /// Kernel and cokernel of the diagonal model operator.
    FredholmDiag(FredholmArgs),
    /// Every stage followed by all verification checks.
    VerifyAll,
}

#[derive(Args)]
struct CzArgs {
    /// Diagonal path `exp(J0 lambda t)`.
    #[arg(long, conflicts_with = "path", allow_hyphen_values = true)]
    lambda: Option<f64>,
    /// Half dimension for `--lambda`.
    #[arg(long, default_value_t = 1)]
    dim: usize,
    /// JSON file with either `{"generator": [[..]], "steps": k}` for a
    /// constant generator or `{"samples": [[t, [[..]]], ..]}`.
    #[arg(long)]
    path: Option<PathBuf>,
    #[arg(long, default_value_t = 1e-6)]
    tol_deg: f64,
}

#[derive(Args)]
struct FredholmArgs {
    #[arg(long, requires = "b")]
    a: Option<f64>,
    #[arg(long, requires = "a")]
    b: Option<f64>,
    /// Half dimension.
    #[arg(long, default_value_t = 1)]
    dim: usize,
    /// Fourier cutoff.
    #[arg(long, default_value_t = 4)]
    modes: usize,
    /// Half-length of the interval; defaults to `12 / gap`.
    #[arg(long)]
    length: Option<f64>,
    #[arg(long, default_value_t = 128)]
    m_s: usize,
    /// Relative singular value threshold.
    #[arg(long, default_value_t = 1e-6)]
    sigma_tol: f64,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Some(k) = cli.global.threads
        && let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(k).build_global()
    {
        eprintln!("error: cannot start {k} threads: {e}");
        return ExitCode::from(4);
    }
    match dispatch(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn load_config(g: &Global) -> Result<RunConfig> {
    let path = g.config.as_ref().ok_or_else(|| Error::Config("--config is required for this subcommand".into()))?;
    let mut c = RunConfig::load(path)?;
    if let Some(s) = g.seed {
        c.seed = s;
    }
    Ok(c)
}

fn out_dir(g: &Global, c: Option<&RunConfig>) -> PathBuf {
    g.out.clone().or_else(|| c.and_then(|c| c.output.clone())).unwrap_or_else(|| PathBuf::from("out"))
}

fn dispatch(cli: &Cli) -> Result<u8> {
    let g = &cli.global;
    let stage = match &cli.command {
        Command::Cz(a) => return cz(a),
        Command::FredholmDiag(a) => return fredholm(a, &out_dir(g, None)),
        Command::Orbits => Stage::Orbits,
        Command::Morse => Stage::Morse,
        Command::Floer => Stage::Floer,
        Command::Hybrid => Stage::Hybrid,
        Command::Homology => Stage::Homology,
        Command::VerifyAll => Stage::VerifyAll,
    };
    let config = load_config(g)?;
    let dir = out_dir(g, Some(&config));
    let mut run = pipeline::run_pipeline(&config, stage).inspect_err(|_| {
        eprintln!("while running {stage:?} with config {}", g.config.as_ref().expect("loaded").display());
    })?;
    finish(&mut run, &dir, g.full)
}

fn finish(run: &mut Run, dir: &Path, full: bool) -> Result<u8> {
    let written = run.write(dir, full)?;
    let mut checks = run.checks.clone();
    checks.sort_by_key(|c| c.criterion);
    for c in &checks {
        println!("{}", c.line());
    }
    for p in written {
        log::info!("wrote {}", p.display());
    }
    Ok(if run.all_pass() { 0 } else { 2 })
}

fn parse_matrix(v: &serde_json::Value) -> Result<DMatrix<f64>> {
    let rows: Vec<Vec<f64>> = serde_json::from_value(v.clone()).map_err(|e| Error::Config(format!("matrix: {e}")))?;
    let d = rows.len();
    if d == 0 || d % 2 == 1 || rows.iter().any(|r| r.len() != d) {
        return Err(Error::Config("matrix must be square of even size".into()));
    }
    Ok(DMatrix::from_fn(d, d, |i, j| rows[i][j]))
}

fn cz(a: &CzArgs) -> Result<u8> {
    let path = if let Some(l) = a.lambda {
        if a.dim == 0 {
            return Err(Error::Config("--dim must be at least 1".into()));
        }
        constant_generator_path(&(DMatrix::identity(2 * a.dim, 2 * a.dim) * l), 256)
    } else if let Some(p) = &a.path {
        let text = std::fs::read_to_string(p).map_err(|e| Error::Config(format!("cannot read {}: {e}", p.display())))?;
        let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(s) = v.get("generator") {
            let s = parse_matrix(s)?;
            let steps = v.get("steps").and_then(|x| x.as_u64()).unwrap_or(256) as usize;
            constant_generator_path(&s, steps)
        } else if let Some(arr) = v.get("samples").and_then(|x| x.as_array()) {
            let mut samples = Vec::with_capacity(arr.len());
            for item in arr {
                let t = item.get(0).and_then(|x| x.as_f64()).ok_or_else(|| Error::Config("sample needs [t, matrix]".into()))?;
                let m = parse_matrix(item.get(1).ok_or_else(|| Error::Config("sample needs [t, matrix]".into()))?)?;
                samples.push((t, m));
            }
            let n = samples.first().map(|s| s.1.nrows() / 2).ok_or_else(|| Error::Config("no samples".into()))?;
            SymplecticPath { n, samples }
        } else {
            return Err(Error::Config("path file needs `generator` or `samples`".into()));
        }
    } else {
        return Err(Error::Config("give --lambda or --path".into()));
    };
    println!("{}", cz_index(&path, a.tol_deg)?);
    Ok(0)
}

fn fredholm(a: &FredholmArgs, dir: &Path) -> Result<u8> {
    let rows = match (a.a, a.b) {
        (Some(x), Some(y)) => {
            if a.dim == 0 || a.modes < 1 || a.m_s < 16 || a.sigma_tol.is_nan() || a.sigma_tol <= 0.0 {
                return Err(Error::Config("need --dim >= 1, --modes >= 1, --m-s >= 16, --sigma-tol > 0".into()));
            }
            let space = GalerkinSpace::new(a.dim, a.modes);
            let l = a.length.unwrap_or_else(|| 12.0 / model_gap(space, x, y));
            vec![(x, y, fredholm_diag_tol(x, y, space, l, a.m_s, a.sigma_tol)?, predicted_index(a.dim, x, y))]
        }
        _ => pipeline::fredholm_sweep(a.dim, a.sigma_tol)?.1,
    };
    let csv = fredholm_csv(&rows);
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("fredholm.csv"), &csv)?;
    print!("{csv}");
    Ok(if rows.iter().all(|(_, _, r, p)| r.index == *p) { 0 } else { 2 })
}
