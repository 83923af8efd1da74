use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use holoeit_core::algebra::{admissible_basis, criterion_residual, SearchMode, SearchTolerances, TraceAlgebra};
use holoeit_core::boundary::BoundaryTrace;
use holoeit_core::detector::{classify, FALLBACK_TOL_KERNEL};
use holoeit_core::dn::{assemble_dn, DNOperator};
use holoeit_core::harmonic::Flavor;
use holoeit_core::pipeline::{
    estimate_tol_kernel, exit_code, generators_from_basis, run_pipeline, traces_csv, ExperimentConfig, RunMode, Stage,
};
use holoeit_core::surface::{read_surf2, validate_mesh, write_surf2, SurfaceMesh};
use holoeit_core::synthetic::{build_synthetic, DomainDescriptor};
use holoeit_core::{Error, Result};

#[derive(Parser, Debug)]
#[command(name = "holoeit", version, about = "Hole detection and reconstruction from boundary DN data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Mesh operations.
    Mesh {
        #[command(subcommand)]
        action: MeshAction,
    },
    /// DN map operations.
    Dn {
        #[command(subcommand)]
        action: DnAction,
    },
    /// Classify boundary data; `--tol` sets the near-kernel threshold.
    Detect {
        #[arg(long)]
        dn: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Criterion residuals of Fourier modes or of a trace file; `--tol` sets the criterion tolerance.
    Criteria {
        #[arg(long)]
        dn: Option<PathBuf>,
        /// One boundary value per line, in DN node order.
        #[arg(long)]
        trace: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Admissible traces and their algebra elements; `--tol` sets the criterion tolerance.
    Traces {
        #[arg(long)]
        dn: Option<PathBuf>,
        /// Mesh behind `--dn`, required in validation mode.
        #[arg(long)]
        mesh: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Double, embed and reconstruct; prints the reconstruction quantities.
    Reconstruct {
        #[command(flatten)]
        common: Common,
    },
    /// Full run with a JSON report.
    Pipeline {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand, Debug)]
enum MeshAction {
    /// Generate and validate a synthetic mesh.
    Gen {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Subcommand, Debug)]
enum DnAction {
    /// Assemble the DN matrix from a mesh file or a synthetic domain.
    Assemble {
        #[arg(long)]
        mesh: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum DomainArg {
    Disk,
    Annulus,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum FlavorArg {
    Grounded,
    Isolated,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModeArg {
    Validation,
    Blind,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Experiment config in TOML; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    domain: Option<DomainArg>,
    #[arg(long, default_value_t = 0.5)]
    inner_radius: f64,
    /// Target edge length.
    #[arg(long)]
    h: Option<f64>,
    #[arg(long, value_enum)]
    flavor: Option<FlavorArg>,
    /// Number of Fourier mode pairs.
    #[arg(long)]
    modes: Option<usize>,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<ModeArg>,
    #[arg(long)]
    seed: Option<u64>,
    /// Artifact directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Which tolerance `--tol` sets.
#[derive(Clone, Copy)]
enum TolTarget {
    Kernel,
    Criterion,
}

impl Common {
    fn config(&self, target: TolTarget) -> Result<ExperimentConfig> {
        let mut cfg = match (&self.config, self.domain) {
            (Some(path), _) => ExperimentConfig::load(path)?,
            (None, Some(d)) => {
                let h = self.h.unwrap_or(0.05);
                let domain = match d {
                    DomainArg::Disk => DomainDescriptor::disk(h),
                    DomainArg::Annulus => DomainDescriptor::annulus(self.inner_radius, h),
                };
                ExperimentConfig::new(domain, Flavor::Grounded)
            }
            (None, None) => return Err(Error::Config("either --config or --domain is required".into())),
        };
        if let Some(h) = self.h {
            cfg.domain.h = h;
        }
        if let Some(f) = self.flavor {
            cfg.flavor = match f {
                FlavorArg::Grounded => Flavor::Grounded,
                FlavorArg::Isolated => Flavor::Isolated,
            };
        }
        if let Some(m) = self.modes {
            cfg.n_modes = m;
        }
        if let Some(m) = self.mode {
            cfg.mode = match m {
                ModeArg::Validation => RunMode::Validation,
                ModeArg::Blind => RunMode::Blind,
            };
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(t) = self.tol {
            match target {
                TolTarget::Kernel => cfg.tolerances.tol_kernel = Some(t),
                TolTarget::Criterion => cfg.tolerances.tol_criterion = t,
            }
        }
        cfg.output = self.out.clone();
        cfg.validate()?;
        Ok(cfg)
    }

    fn has_domain(&self) -> bool {
        self.config.is_some() || self.domain.is_some()
    }
}

fn read_mesh(path: &Path) -> Result<SurfaceMesh> {
    read_surf2(BufReader::new(File::open(path)?))
}

fn read_dn(path: &Path) -> Result<DNOperator> {
    DNOperator::from_csv(BufReader::new(File::open(path)?))
}

fn write_artifact(out: Option<&Path>, name: &str, contents: &str) -> Result<()> {
    match out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(name), contents)?;
            println!("wrote {}", dir.join(name).display());
        }
        None => print!("{contents}"),
    }
    Ok(())
}

/// Operator from `--dn` or assembled from the configured domain, with the mesh when known.
fn load_operator(dn: Option<&Path>, common: &Common, target: TolTarget) -> Result<(DNOperator, Option<SurfaceMesh>, Option<ExperimentConfig>)> {
    match dn {
        Some(path) => {
            let cfg = if common.has_domain() { Some(common.config(target)?) } else { None };
            Ok((read_dn(path)?, None, cfg))
        }
        None => {
            let cfg = common.config(target)?;
            let mesh = build_synthetic(&cfg.domain)?;
            let op = assemble_dn(&mesh, cfg.flavor)?;
            Ok((op, Some(mesh), Some(cfg)))
        }
    }
}

fn mesh_gen(common: &Common) -> Result<()> {
    let cfg = common.config(TolTarget::Criterion)?;
    let mesh = build_synthetic(&cfg.domain)?;
    let report = validate_mesh(&mesh).into_result()?;
    eprintln!(
        "vertices {} triangles {} loops {} euler {} min_quality {:.3}",
        mesh.vertex_count(),
        mesh.triangle_count(),
        report.loop_count,
        report.euler_characteristic,
        report.min_quality
    );
    write_artifact(common.out.as_deref(), "mesh.surf2", &write_surf2(&mesh)?)
}

fn dn_assemble(mesh_path: Option<&Path>, common: &Common) -> Result<()> {
    let (mesh, flavor) = match mesh_path {
        Some(p) => {
            let flavor = match common.flavor {
                Some(FlavorArg::Isolated) => Flavor::Isolated,
                _ => Flavor::Grounded,
            };
            (read_mesh(p)?, flavor)
        }
        None => {
            let cfg = common.config(TolTarget::Criterion)?;
            (build_synthetic(&cfg.domain)?, cfg.flavor)
        }
    };
    validate_mesh(&mesh).into_result()?;
    let op = assemble_dn(&mesh, flavor)?;
    let eigs = op.spectrum(11).values;
    eprintln!("flavor {} nodes {} eigenvalues {:?}", flavor.name(), op.len(), eigs);
    write_artifact(common.out.as_deref(), "dn.csv", &op.to_csv())
}

fn detect(dn: Option<&Path>, common: &Common) -> Result<()> {
    let (op, mesh, cfg) = load_operator(dn, common, TolTarget::Kernel)?;
    let n_modes = cfg.as_ref().map_or(common.modes.unwrap_or(16), |c| c.n_modes);
    let tol_const = cfg.as_ref().map_or(holoeit_core::detector::DEFAULT_TOL_CONST, |c| c.tolerances.tol_const);
    let tol_kernel = match (common.tol, &cfg, &mesh) {
        (Some(t), _, _) => t,
        (None, Some(c), _) if c.tolerances.tol_kernel.is_some() => c.tolerances.tol_kernel.unwrap_or(FALLBACK_TOL_KERNEL),
        (None, Some(c), Some(_)) => estimate_tol_kernel(&c.domain, &op, n_modes),
        _ => FALLBACK_TOL_KERNEL,
    };
    let class = classify(&op, n_modes, tol_kernel, tol_const)?;
    let verdict = serde_json::json!({
        "verdict": class.verdict,
        "kernel_dim": class.kernel_dim,
        "low_mode_kernel": class.low_mode_kernel,
        "lambda1_norm": class.lambda1_norm,
        "thresholds": class.thresholds,
    });
    println!("{}", serde_json::to_string_pretty(&verdict)?);
    Ok(())
}

fn read_trace(path: &Path, op: &DNOperator) -> Result<BoundaryTrace> {
    let mut values = Vec::new();
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        values.push(t.parse::<f64>().map_err(|_| Error::Parse {
            line: i + 1,
            message: format!("malformed value '{t}'"),
        })?);
    }
    BoundaryTrace::new(op.grid().clone(), values)
}

fn criteria(dn: Option<&Path>, trace: Option<&Path>, common: &Common) -> Result<()> {
    let (op, _, cfg) = load_operator(dn, common, TolTarget::Criterion)?;
    let tol_mean = cfg.as_ref().map_or(holoeit_core::boundary::DEFAULT_TOL_MEAN, |c| c.tolerances.tol_mean);
    let tol = common
        .tol
        .or(cfg.as_ref().map(|c| c.tolerances.tol_criterion))
        .unwrap_or(holoeit_core::algebra::DEFAULT_TOL_CRITERION);
    println!("trace,residual,admissible");
    if let Some(path) = trace {
        let r = criterion_residual(&op, &read_trace(path, &op)?, tol_mean)?;
        println!("{},{r:e},{}", path.display(), r <= tol);
        return Ok(());
    }
    let grid = op.grid().clone();
    let pairs = cfg.as_ref().map_or(common.modes.unwrap_or(4), |c| c.n_modes).min(grid.max_mode());
    for k in 1..=pairs {
        for (name, sine) in [("cos", false), ("sin", true)] {
            let f = BoundaryTrace::new(grid.clone(), grid.fourier_mode(k, sine))?;
            let r = criterion_residual(&op, &f, tol_mean)?;
            println!("{name}{k},{r:e},{}", r <= tol);
        }
    }
    Ok(())
}

fn traces(dn: Option<&Path>, mesh_path: Option<&Path>, common: &Common) -> Result<()> {
    let (op, built, cfg) = load_operator(dn, common, TolTarget::Criterion)?;
    let mesh = match (mesh_path, built) {
        (Some(p), _) => Some(read_mesh(p)?),
        (None, m) => m,
    };
    let cfg = cfg.unwrap_or_else(|| {
        let mut c = ExperimentConfig::new(DomainDescriptor::disk(0.05), op.flavor());
        if let Some(t) = common.tol {
            c.tolerances.tol_criterion = t;
        }
        if let Some(m) = common.mode {
            c.mode = match m {
                ModeArg::Validation => RunMode::Validation,
                ModeArg::Blind => RunMode::Blind,
            };
        }
        if let Some(s) = common.seed {
            c.seed = s;
        }
        c
    });
    let search = SearchTolerances {
        tol_mean: cfg.tolerances.tol_mean,
        tol_criterion: cfg.tolerances.tol_criterion,
        ..SearchTolerances::default()
    };
    let mode = match (cfg.mode, &mesh) {
        (RunMode::Validation, Some(m)) => SearchMode::Validation(m),
        (RunMode::Validation, None) => {
            return Err(Error::Config("validation mode needs --mesh or a synthetic domain".into()));
        }
        (RunMode::Blind, _) => SearchMode::Blind {
            seed: cfg.seed,
            restarts: cfg.restarts,
        },
    };
    let op = Arc::new(op);
    let basis = admissible_basis(&op, cfg.generators, mode, search)?;
    for (j, r) in basis.residuals.iter().enumerate() {
        eprintln!("trace {j} residual {r:e}");
    }
    if basis.partial {
        eprintln!("only {} of {} traces passed", basis.traces.len(), cfg.generators);
    }
    let alg = TraceAlgebra::new(op.clone(), cfg.tolerances.tol_mean, cfg.tolerances.tol_criterion)?;
    let gens = generators_from_basis(&alg, &basis.traces)?;
    write_artifact(common.out.as_deref(), "traces.csv", &traces_csv(&gens))
}

fn pipeline(common: &Common, reconstruct_only: bool) -> Result<()> {
    let mut cfg = common.config(TolTarget::Criterion)?;
    if reconstruct_only {
        cfg.mode = RunMode::Validation;
    }
    let run = run_pipeline(&cfg);
    if reconstruct_only {
        for q in run.report.quantities.iter().filter(|q| matches!(q.stage, Stage::Double | Stage::Embed | Stage::Reconstruct)) {
            println!("{} {} {}", q.stage.name(), q.name, q.value);
        }
    } else if cfg.output.is_none() {
        print!("{}", run.report.to_json()?);
    }
    if let Some(reason) = &run.report.skipped {
        eprintln!("skipped: {reason}");
    }
    match run.error {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Mesh {
            action: MeshAction::Gen { common },
        } => mesh_gen(common),
        Command::Dn {
            action: DnAction::Assemble { mesh, common },
        } => dn_assemble(mesh.as_deref(), common),
        Command::Detect { dn, common } => detect(dn.as_deref(), common),
        Command::Criteria { dn, trace, common } => criteria(dn.as_deref(), trace.as_deref(), common),
        Command::Traces { dn, mesh, common } => traces(dn.as_deref(), mesh.as_deref(), common),
        Command::Reconstruct { common } => pipeline(common, true),
        Command::Pipeline { common } => pipeline(common, false),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
