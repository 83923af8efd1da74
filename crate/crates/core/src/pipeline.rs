//! Experiment configuration, the end-to-end pipeline and its JSON report.
//!
//! Stages run in order: mesh, DN assembly, detection, admissible traces,
//! doubling, embedding and reconstruction. Every number in the report records
//! the stage that produced it and the tolerance it was judged against.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::algebra::{admissible_basis, SearchMode, SearchTolerances, TraceAlgebra, TraceAlgebraElement, DEFAULT_TOL_CRITERION};
use crate::boundary::DEFAULT_TOL_MEAN;
use crate::detector::{classify, recover_boundary_length, two_grid_tolerance, Verdict, DEFAULT_MODES, DEFAULT_TOL_CONST, FALLBACK_TOL_KERNEL};
use crate::dn::{assemble_dn, DNOperator};
use crate::doubled::double_cover;
use crate::error::{Error, Result};
use crate::harmonic::Flavor;
use crate::reconstruct::{
    attach_boundary, cloud_patch, dn_discrepancy, find_seam, gelfand_embed, joint_boundary_values, reconstruct_sheet,
    recover_annulus_modulus, seam_agreement, sheet_dn, shilov_check, split_components, Connectivity, DEFAULT_SHILOV_SLACK,
    DEFAULT_TOL_HERMITIAN,
};
use crate::surface::{validate_mesh, write_surf2, SurfaceMesh};
use crate::synthetic::{build_synthetic, DomainDescriptor};

pub const REPORT_SCHEMA_VERSION: u32 = 1;
pub const DEFAULT_GENERATORS: usize = 4;
pub const DEFAULT_RESTARTS: usize = 8;
/// Modes compared in the DN round trip.
pub const ROUND_TRIP_MODES: usize = 8;
/// Allowed relative DN discrepancy on those modes.
pub const ROUND_TRIP_TOL: f64 = 0.05;
/// Allowed relative error of the fitted unit-determinant metric.
pub const METRIC_FIT_TOL: f64 = 0.05;
/// Eigenvalues used by the modulus fit.
pub const MODULUS_EIGENVALUES: usize = 11;
/// Eigenvalues used by the boundary-length fit.
pub const LENGTH_EIGENVALUES: usize = 41;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RunMode {
    /// The mesh behind the DN map is available for exact constraints and checks.
    #[default]
    Validation,
    /// Only the DN map is used downstream of assembly.
    Blind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub tol_mean: f64,
    /// Near-kernel threshold; a two-grid estimate is used when absent.
    pub tol_kernel: Option<f64>,
    pub tol_const: f64,
    pub tol_criterion: f64,
    pub tol_hermitian: f64,
    pub shilov_slack: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            tol_mean: DEFAULT_TOL_MEAN,
            tol_kernel: None,
            tol_const: DEFAULT_TOL_CONST,
            tol_criterion: DEFAULT_TOL_CRITERION,
            tol_hermitian: DEFAULT_TOL_HERMITIAN,
            shilov_slack: DEFAULT_SHILOV_SLACK,
        }
    }
}

fn default_modes() -> usize {
    DEFAULT_MODES
}

fn default_generators() -> usize {
    DEFAULT_GENERATORS
}

fn default_restarts() -> usize {
    DEFAULT_RESTARTS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub domain: DomainDescriptor,
    pub flavor: Flavor,
    #[serde(default)]
    pub mode: RunMode,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default = "default_modes")]
    pub n_modes: usize,
    #[serde(default = "default_generators")]
    pub generators: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    /// Artifact directory; not part of the report.
    #[serde(default, skip_serializing)]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn new(domain: DomainDescriptor, flavor: Flavor) -> Self {
        Self {
            domain,
            flavor,
            mode: RunMode::Validation,
            tolerances: Tolerances::default(),
            n_modes: DEFAULT_MODES,
            generators: DEFAULT_GENERATORS,
            seed: 0,
            restarts: DEFAULT_RESTARTS,
            output: None,
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Positive tolerances except `tol_kernel`, where zero is accepted and
    /// yields an indeterminate classification.
    pub fn validate(&self) -> Result<()> {
        let t = &self.tolerances;
        for (name, v) in [
            ("tol_mean", t.tol_mean),
            ("tol_const", t.tol_const),
            ("tol_criterion", t.tol_criterion),
            ("tol_hermitian", t.tol_hermitian),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(t.shilov_slack >= 0.0) {
            return Err(Error::Config("shilov_slack must be non-negative".into()));
        }
        if let Some(k) = t.tol_kernel {
            if !(k >= 0.0 && k.is_finite()) {
                return Err(Error::Config(format!("tol_kernel must be non-negative, got {k}")));
            }
        }
        if self.n_modes < 4 {
            return Err(Error::Config(format!("n_modes must be at least 4, got {}", self.n_modes)));
        }
        if self.generators < 2 {
            return Err(Error::Config(format!("at least 2 generators are needed, got {}", self.generators)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Mesh,
    Dn,
    Detect,
    Traces,
    Double,
    Embed,
    Reconstruct,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Mesh => "mesh",
            Stage::Dn => "dn",
            Stage::Detect => "detect",
            Stage::Traces => "traces",
            Stage::Double => "double",
            Stage::Embed => "embed",
            Stage::Reconstruct => "reconstruct",
        }
    }
}

/// One reported number. `tolerance` is `None` for exact quantities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Quantity {
    pub stage: Stage,
    pub name: String,
    pub value: f64,
    pub tolerance: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportVerdict {
    NoHoles,
    HolesGrounded,
    HolesIsolated,
    Indeterminate,
}

impl From<Verdict> for ReportVerdict {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::NoHoles => Self::NoHoles,
            Verdict::HolesGrounded => Self::HolesGrounded,
            Verdict::HolesIsolated => Self::HolesIsolated,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub schema_version: u32,
    pub config: ExperimentConfig,
    pub verdict: Option<ReportVerdict>,
    pub quantities: Vec<Quantity>,
    /// Why later stages were not run, when the pipeline stopped early by design.
    pub skipped: Option<String>,
    pub failure: Option<Failure>,
    pub artifacts: Vec<String>,
}

impl PipelineReport {
    fn new(config: &ExperimentConfig) -> Self {
        Self {
            schema_version: REPORT_SCHEMA_VERSION,
            config: config.clone(),
            verdict: None,
            quantities: Vec::new(),
            skipped: None,
            failure: None,
            artifacts: Vec::new(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Quantity> {
        self.quantities.iter().find(|q| q.name == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.get(name).map(|q| q.value)
    }

    fn push(&mut self, stage: Stage, name: impl Into<String>, value: f64, tolerance: Option<f64>) {
        self.quantities.push(Quantity {
            stage,
            name: name.into(),
            value,
            tolerance,
        });
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// Parses a report, rejecting other schema versions.
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Value = serde_json::from_str(text)?;
        let found = raw.get("schema_version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
        if found != REPORT_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                expected: REPORT_SCHEMA_VERSION,
                found,
            });
        }
        Ok(serde_json::from_value(raw)?)
    }
}

/// Report plus the error that stopped the run, if any.
#[derive(Debug)]
pub struct PipelineRun {
    pub report: PipelineReport,
    pub error: Option<Error>,
}

impl PipelineRun {
    pub fn exit_code(&self) -> i32 {
        self.error.as_ref().map_or(0, exit_code)
    }
}

/// `3` for an indeterminate classification, `4` for I/O and format errors,
/// `2` for every other violated invariant.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Indeterminate { .. } => 3,
        Error::Io(_) | Error::Json(_) | Error::Parse { .. } | Error::SchemaVersion { .. } => 4,
        _ => 2,
    }
}

struct Artifacts<'a> {
    dir: Option<&'a Path>,
}

impl Artifacts<'_> {
    fn write(&self, report: &mut PipelineReport, name: &str, contents: &str) -> Result<()> {
        if let Some(dir) = self.dir {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(name), contents)?;
            report.artifacts.push(name.to_string());
        }
        Ok(())
    }
}

/// Near-kernel threshold from the difference between the operator at `h` and
/// at `2h`, capped at [`FALLBACK_TOL_KERNEL`], which is also used when the
/// coarse level is unavailable.
pub fn estimate_tol_kernel(domain: &DomainDescriptor, fine: &DNOperator, n_modes: usize) -> f64 {
    let mut coarse = domain.clone();
    coarse.h = domain.h * 2.0;
    build_synthetic(&coarse)
        .and_then(|m| assemble_dn(&m, fine.flavor()))
        .and_then(|c| two_grid_tolerance(&c, fine, n_modes))
        .ok()
        .filter(|t| t.is_finite() && *t > 0.0)
        .map_or(FALLBACK_TOL_KERNEL, |t| t.min(FALLBACK_TOL_KERNEL))
}

/// Trace-algebra elements from the first admissible traces.
pub fn generators_from_basis(alg: &TraceAlgebra, traces: &[crate::boundary::BoundaryTrace]) -> Result<Vec<TraceAlgebraElement>> {
    traces.iter().map(|t| alg.make_element(t, 0.0)).collect()
}

/// CSV of element boundary values: `s,w,re_0,im_0,...`.
pub fn traces_csv(gens: &[TraceAlgebraElement]) -> String {
    let mut out = String::from("s,w");
    for j in 0..gens.len() {
        let _ = write!(out, ",re_{j},im_{j}");
    }
    out.push('\n');
    let Some(first) = gens.first() else {
        return out;
    };
    let grid = first.grid();
    let values: Vec<_> = gens.iter().map(|g| g.values()).collect();
    for i in 0..grid.len() {
        let _ = write!(out, "{:.17e},{:.17e}", grid.s()[i], grid.weights()[i]);
        for v in &values {
            let z = v.values()[i];
            let _ = write!(out, ",{:.17e},{:.17e}", z.re, z.im);
        }
        out.push('\n');
    }
    out
}

/// Interior vertex farthest from the boundary, with that distance.
fn deepest_vertex(mesh: &SurfaceMesh) -> (usize, f64) {
    let boundary: Vec<[f64; 3]> = mesh.boundary_loops().iter().flatten().map(|&v| mesh.vertices()[v]).collect();
    (0..mesh.vertex_count())
        .map(|v| {
            let p = mesh.vertices()[v];
            let d = boundary.iter().map(|b| (p[0] - b[0]).hypot(p[1] - b[1])).fold(f64::INFINITY, f64::min);
            (v, d)
        })
        .fold((0, 0.0), |best, cur| if cur.1 > best.1 { cur } else { best })
}

/// Runs every stage; artifacts go to `config.output` when set.
pub fn run_pipeline(config: &ExperimentConfig) -> PipelineRun {
    let mut report = PipelineReport::new(config);
    let artifacts = Artifacts {
        dir: config.output.as_deref(),
    };
    let mut stage = Stage::Mesh;
    let result = run_stages(config, &mut report, &artifacts, &mut stage);
    let error = match result {
        Ok(()) => None,
        Err(e) => {
            if matches!(e, Error::Indeterminate { .. }) {
                report.verdict = Some(ReportVerdict::Indeterminate);
            }
            report.failure = Some(Failure {
                stage,
                message: e.to_string(),
            });
            Some(e)
        }
    };
    if let Some(dir) = artifacts.dir {
        report.artifacts.push("report.json".into());
        let written = report
            .to_json()
            .and_then(|json| std::fs::create_dir_all(dir).and_then(|_| std::fs::write(dir.join("report.json"), json)).map_err(Error::from));
        if let Err(e) = written {
            return PipelineRun {
                report,
                error: Some(e),
            };
        }
    }
    PipelineRun { report, error }
}

fn run_stages(cfg: &ExperimentConfig, report: &mut PipelineReport, out: &Artifacts<'_>, stage: &mut Stage) -> Result<()> {
    cfg.validate()?;
    let tol = &cfg.tolerances;

    *stage = Stage::Mesh;
    let mesh = build_synthetic(&cfg.domain)?;
    let mesh_report = validate_mesh(&mesh).into_result()?;
    report.push(Stage::Mesh, "vertex_count", mesh.vertex_count() as f64, None);
    report.push(Stage::Mesh, "triangle_count", mesh.triangle_count() as f64, None);
    report.push(Stage::Mesh, "euler_characteristic", mesh_report.euler_characteristic as f64, None);
    report.push(Stage::Mesh, "hole_count", mesh.hole_count() as f64, None);
    out.write(report, "mesh.surf2", &write_surf2(&mesh)?)?;

    *stage = Stage::Dn;
    let op = Arc::new(assemble_dn(&mesh, cfg.flavor)?);
    let spectrum = op.spectrum(MODULUS_EIGENVALUES);
    for (i, v) in spectrum.values.iter().enumerate() {
        report.push(Stage::Dn, format!("eigenvalue_{i}"), *v, None);
    }
    report.push(Stage::Dn, "boundary_nodes", op.len() as f64, None);
    out.write(report, "dn.csv", &op.to_csv())?;

    *stage = Stage::Detect;
    let tol_kernel = tol.tol_kernel.unwrap_or_else(|| estimate_tol_kernel(&cfg.domain, &op, cfg.n_modes));
    report.push(Stage::Detect, "tol_kernel", tol_kernel, None);
    if op.len() > 2 * LENGTH_EIGENVALUES {
        if let Ok(l) = recover_boundary_length(&op, LENGTH_EIGENVALUES) {
            report.push(Stage::Detect, "boundary_length", l, Some(0.01 * op.grid().length()));
        }
    }
    let class = classify(&op, cfg.n_modes, tol_kernel, tol.tol_const)?;
    report.verdict = Some(class.verdict.into());
    report.push(Stage::Detect, "kernel_dim", class.kernel_dim as f64, Some(tol_kernel));
    report.push(Stage::Detect, "low_mode_kernel", class.low_mode_kernel as f64, Some(tol_kernel));
    report.push(Stage::Detect, "lambda1_norm", class.lambda1_norm, Some(tol.tol_const));
    if class.verdict == Verdict::NoHoles {
        report.skipped = Some(
            "no holes detected: the boundary has a single component, so there is no inner boundary to double along".into(),
        );
        return Ok(());
    }
    let detected = match class.verdict {
        Verdict::HolesIsolated => Flavor::Isolated,
        _ => Flavor::Grounded,
    };
    if detected != cfg.flavor {
        return Err(Error::Config(format!(
            "detector found {} holes but the data were assembled as {}",
            detected.name(),
            cfg.flavor.name()
        )));
    }

    if mesh.hole_count() == 1 || cfg.mode == RunMode::Blind {
        match recover_annulus_modulus(&spectrum.values, cfg.flavor) {
            Ok(fit) => {
                report.push(Stage::Detect, "modulus", fit.modulus, Some(0.02 * fit.modulus));
                report.push(Stage::Detect, "modulus_fit_residual", fit.residual, Some(crate::reconstruct::MODULUS_FIT_LIMIT));
            }
            Err(Error::NotAnnulus { residual }) => {
                report.push(Stage::Detect, "modulus_fit_residual", residual, Some(crate::reconstruct::MODULUS_FIT_LIMIT));
            }
            Err(e) => return Err(e),
        }
    }

    *stage = Stage::Traces;
    let search = SearchTolerances {
        tol_mean: tol.tol_mean,
        tol_criterion: tol.tol_criterion,
        ..SearchTolerances::default()
    };
    let mode = match cfg.mode {
        RunMode::Validation => SearchMode::Validation(&mesh),
        RunMode::Blind => SearchMode::Blind {
            seed: cfg.seed,
            restarts: cfg.restarts,
        },
    };
    let basis = admissible_basis(&op, cfg.generators, mode, search)?;
    if let Some(c) = basis.codimension {
        report.push(Stage::Traces, "constraint_rank", c as f64, None);
    }
    report.push(Stage::Traces, "admissible_traces", basis.traces.len() as f64, None);
    for (j, r) in basis.residuals.iter().enumerate() {
        report.push(Stage::Traces, format!("trace_residual_{j}"), *r, Some(tol.tol_criterion));
    }
    let alg = TraceAlgebra::new(op.clone(), tol.tol_mean, tol.tol_criterion)?;
    let gens = generators_from_basis(&alg, &basis.traces)?;
    out.write(report, "traces.csv", &traces_csv(&gens))?;
    if cfg.mode == RunMode::Blind {
        report.skipped = Some("blind mode stops after classification, modulus and trace export".into());
        return Ok(());
    }
    if gens.len() < 2 {
        return Err(Error::Config(format!("only {} admissible traces found, need 2", gens.len())));
    }

    *stage = Stage::Double;
    let doubled = double_cover(&mesh)?;
    report.push(Stage::Double, "euler_characteristic_doubled", doubled.mesh().euler_characteristic() as f64, None);
    report.push(Stage::Double, "seam_vertices", doubled.seam().len() as f64, None);

    *stage = Stage::Embed;
    let cloud = gelfand_embed(&doubled, &gens, tol.tol_hermitian)?;
    for (j, r) in cloud.cr_residuals().iter().enumerate() {
        report.push(Stage::Embed, format!("cr_residual_{j}"), *r, None);
    }
    let shilov = shilov_check(&cloud, tol.shilov_slack);
    report.push(Stage::Embed, "shilov_checked", shilov.checked as f64, None);
    report.push(Stage::Embed, "shilov_violations", shilov.violations.len() as f64, None);
    report.push(Stage::Embed, "shilov_worst_ratio", shilov.worst_ratio, Some(tol.shilov_slack));

    *stage = Stage::Reconstruct;
    let seam = find_seam(&cloud, tol.tol_hermitian)?;
    let (recall, precision) = seam_agreement(&seam, doubled.seam());
    report.push(Stage::Reconstruct, "seam_size", seam.len() as f64, Some(tol.tol_hermitian));
    report.push(Stage::Reconstruct, "seam_recall", recall, None);
    report.push(Stage::Reconstruct, "seam_precision", precision, None);
    let split = split_components(&cloud, &seam, Connectivity::Mesh(doubled.mesh()))?;
    out.write(report, "cloud.csv", &split.to_csv())?;
    report.push(Stage::Reconstruct, "components", 2.0, None);
    let (attached, mismatch) = attach_boundary(&split, &joint_boundary_values(&gens));
    report.push(Stage::Reconstruct, "boundary_attachment_mismatch", mismatch, None);
    let sheet = reconstruct_sheet(&split, doubled.mesh(), &attached)?;
    let rec = sheet_dn(&sheet, cfg.flavor, op.grid())?;
    let discrepancy = dn_discrepancy(&op, &rec, ROUND_TRIP_MODES)?;
    report.push(Stage::Reconstruct, "round_trip_dn_discrepancy", discrepancy, Some(ROUND_TRIP_TOL));

    let (center, depth) = deepest_vertex(&mesh);
    let (coords, c, fields) = cloud_patch(&split, doubled.mesh(), center, (0.9 * depth).min(0.3))?;
    let fit = crate::reconstruct::fit_conformal_metric(&coords, c, &fields)?;
    let truth = cfg.domain.metric.at(c).matrix();
    let truth = truth / truth.determinant().sqrt();
    let deviation = (fit.metric.matrix() - truth).norm() / truth.norm();
    report.push(Stage::Reconstruct, "metric_fit_residual", fit.residual, None);
    report.push(Stage::Reconstruct, "metric_fit_deviation", deviation, Some(METRIC_FIT_TOL));
    Ok(())
}
