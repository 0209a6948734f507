//! Declarative scenario files.
//!
//! A scenario is a TOML document naming one metric, one volume form, and
//! a list of tasks. Closed-form coefficient fields are named built-ins
//! with numeric parameters, never parsed expressions, so every spec the
//! driver can load is also differentiable by the library.

use std::path::PathBuf;

use nalgebra::DMatrix;
use serde::Deserialize;

use finsler::berwald::AveragedMetric;
use finsler::calculus::VolumeForm;
use finsler::linalg;
use finsler::metric::{
    default_samples, lattice_samples, CovectorField, DiffeoSpec, MatrixField, MetricKind,
    MetricSpec, MinkowskiNorm,
};

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub seed: u64,
    /// Default output directory; overridden by `--out`, then `FINSLER_OUT`.
    pub output: Option<PathBuf>,
    pub metric: MetricDto,
    #[serde(default)]
    pub volume: VolumeDto,
    pub tasks: Vec<TaskDto>,
}

#[derive(Debug, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MetricDto {
    Euclidean { dim: usize },
    Riemannian { a: MatrixDto },
    Randers { a: MatrixDto, b: CovectorDto },
    LocallyMinkowski { norm: NormDto },
    Pullback { inner: Box<MetricDto>, diffeo: DiffeoDto },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum MatrixDto {
    Constant { rows: Vec<Vec<f64>> },
    SpaceForm { dim: usize, curvature: f64 },
    /// Diagonal entries `(a_i + b_i x^{j_i})^2` from `terms[i] = [a, b, j]`.
    DiagonalAffineSq { terms: Vec<(f64, f64, usize)> },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum CovectorDto {
    Constant { components: Vec<f64> },
    Affine { constant: Vec<f64>, linear: Vec<Vec<f64>> },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum NormDto {
    Quadratic { a: Vec<Vec<f64>> },
    Randers { a: Vec<Vec<f64>>, b: Vec<f64> },
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DiffeoDto {
    Identity { dim: usize },
    Linear { rows: Vec<Vec<f64>> },
    QuadraticShear { dim: usize, i: usize, j: usize, c: f64 },
}

#[derive(Debug, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum VolumeDto {
    #[default]
    Lebesgue,
    /// `sigma = sqrt(det A(x))` of the spec's quadratic part.
    SqrtDetRiemannian,
    /// `sigma = sqrt(det h(x))` of the indicatrix-averaged metric.
    SqrtDetAveraged {
        #[serde(default = "default_averaging_nodes")]
        nodes: usize,
    },
}

fn default_averaging_nodes() -> usize {
    48
}

#[derive(Debug, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TaskDto {
    VerifyCore {
        #[serde(default = "default_core_samples")]
        samples: usize,
    },
    StructureConditions {
        #[serde(default = "default_structure_samples")]
        samples: usize,
    },
    HarmonicChart {
        #[serde(default = "one")]
        eps: f64,
        #[serde(default = "default_h")]
        h: f64,
    },
    Rescaling {
        eps_list: Vec<f64>,
        #[serde(default = "default_h")]
        h: f64,
    },
    Curvature { samples: usize },
    Berwald {
        #[serde(default = "default_berwald_points")]
        n: usize,
        #[serde(default = "default_berwald_tol")]
        tol: f64,
    },
    Szabo,
    RicciIdentity,
}

impl TaskDto {
    pub fn slug(&self) -> &'static str {
        match self {
            TaskDto::VerifyCore { .. } => "verify-core",
            TaskDto::StructureConditions { .. } => "structure-conditions",
            TaskDto::HarmonicChart { .. } => "harmonic-chart",
            TaskDto::Rescaling { .. } => "rescaling",
            TaskDto::Curvature { .. } => "curvature",
            TaskDto::Berwald { .. } => "berwald",
            TaskDto::Szabo => "szabo",
            TaskDto::RicciIdentity => "ricci-identity",
        }
    }
}

fn one() -> f64 {
    1.0
}

fn default_core_samples() -> usize {
    200
}

fn default_structure_samples() -> usize {
    10_000
}

fn default_h() -> f64 {
    1.0 / 32.0
}

fn default_berwald_points() -> usize {
    25
}

fn default_berwald_tol() -> f64 {
    1e-6
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, String> {
    let n = rows.len();
    if n == 0 {
        return Err(format!("{what}: matrix has no rows"));
    }
    if rows.iter().any(|r| r.len() != n) {
        return Err(format!("{what}: matrix must be square"));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(DMatrix::from_row_slice(n, n, &flat))
}

impl MatrixDto {
    fn build(&self) -> Result<MatrixField, String> {
        Ok(match self {
            MatrixDto::Constant { rows } => MatrixField::Constant(matrix(rows, "metric.a")?),
            MatrixDto::SpaceForm { dim, curvature } => {
                MatrixField::SpaceForm { dim: *dim, curvature: *curvature }
            }
            MatrixDto::DiagonalAffineSq { terms } => {
                MatrixField::DiagonalAffineSq { terms: terms.clone() }
            }
        })
    }
}

impl CovectorDto {
    fn build(&self) -> Result<CovectorField, String> {
        Ok(match self {
            CovectorDto::Constant { components } => CovectorField::Constant(components.clone()),
            CovectorDto::Affine { constant, linear } => CovectorField::Affine {
                constant: constant.clone(),
                linear: matrix(linear, "metric.b.linear")?,
            },
        })
    }
}

impl NormDto {
    fn build(&self) -> Result<MinkowskiNorm, String> {
        Ok(match self {
            NormDto::Quadratic { a } => MinkowskiNorm::Quadratic(matrix(a, "metric.norm.a")?),
            NormDto::Randers { a, b } => {
                MinkowskiNorm::Randers { a: matrix(a, "metric.norm.a")?, b: b.clone() }
            }
        })
    }
}

impl DiffeoDto {
    fn build(&self) -> Result<DiffeoSpec, String> {
        Ok(match self {
            DiffeoDto::Identity { dim } => DiffeoSpec::Identity(*dim),
            DiffeoDto::Linear { rows } => DiffeoSpec::Linear(matrix(rows, "metric.diffeo")?),
            DiffeoDto::QuadraticShear { dim, i, j, c } => {
                DiffeoSpec::QuadraticShear { dim: *dim, i: *i, j: *j, c: *c }
            }
        })
    }
}

impl MetricDto {
    pub fn build(&self) -> Result<MetricSpec, String> {
        match self {
            MetricDto::Euclidean { dim } => Ok(MetricSpec::euclidean(*dim)),
            MetricDto::Riemannian { a } => {
                let a = a.build()?;
                let samples = default_samples(a.dim());
                MetricSpec::riemannian(a, &samples).map_err(|e| e.to_string())
            }
            MetricDto::Randers { a, b } => {
                let a = a.build()?;
                let b = b.build()?;
                let samples = default_samples(a.dim());
                MetricSpec::randers(a, b, &samples).map_err(|e| e.to_string())
            }
            MetricDto::LocallyMinkowski { norm } => {
                MetricSpec::locally_minkowski(norm.build()?).map_err(|e| e.to_string())
            }
            MetricDto::Pullback { inner, diffeo } => {
                let inner = inner.build()?;
                let diffeo = diffeo.build()?;
                let samples = default_samples(inner.dim());
                MetricSpec::pullback(inner, diffeo, &samples).map_err(|e| e.to_string())
            }
        }
    }
}

impl VolumeDto {
    pub fn build(&self, spec: &MetricSpec) -> Result<VolumeForm, String> {
        match self {
            VolumeDto::Lebesgue => Ok(VolumeForm::Lebesgue),
            VolumeDto::SqrtDetRiemannian => {
                VolumeForm::sqrt_det_metric(spec.clone()).map_err(|e| e.to_string())
            }
            VolumeDto::SqrtDetAveraged { nodes } => {
                let avg = AveragedMetric::new(spec.clone(), *nodes).map_err(|e| e.to_string())?;
                Ok(VolumeForm::sqrt_det_averaged(avg))
            }
        }
    }
}

/// Well-formedness diagnostics without running any task: parse errors,
/// strong-convexity and SPD sampling audits, pullback round-trip audit,
/// and volume-form compatibility. An empty list means the scenario is
/// sound as far as static checks go.
pub fn diagnostics(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let file: ScenarioFile = match toml::from_str(text) {
        Ok(f) => f,
        Err(e) => {
            out.push(format!("parse: {e}"));
            return out;
        }
    };
    if file.tasks.is_empty() {
        out.push("tasks: list is empty".into());
    }
    for (k, task) in file.tasks.iter().enumerate() {
        match task {
            TaskDto::HarmonicChart { eps, h } => {
                if *eps <= 0.0 || *h <= 0.0 {
                    out.push(format!("task {k}: harmonic-chart eps and h must be positive"));
                }
            }
            TaskDto::Rescaling { eps_list, h } => {
                if eps_list.iter().any(|&e| e <= 0.0) || *h <= 0.0 {
                    out.push(format!("task {k}: rescaling eps values and h must be positive"));
                }
                if eps_list.windows(2).any(|w| w[1] >= w[0]) {
                    out.push(format!("task {k}: rescaling eps_list must be strictly decreasing"));
                }
            }
            _ => {}
        }
    }
    let spec = match file.metric.build() {
        Ok(s) => s,
        Err(e) => {
            out.push(format!("metric: {e}"));
            return out;
        }
    };

    // Convexity and SPD audit: dense base lattice, axis and diagonal
    // fibre probes.
    let m = spec.dim();
    let lattice = lattice_samples(&vec![-0.9; m], &vec![0.9; m], 4);
    let mut probes: Vec<Vec<f64>> = Vec::new();
    for i in 0..m {
        let mut e = vec![0.0; m];
        e[i] = 1.0;
        probes.push(e.clone());
        e[i] = -1.0;
        probes.push(e);
    }
    probes.push(vec![1.0; m]);
    'audit: for x in &lattice {
        if let Err(e) = spec.check_valid_at(x) {
            out.push(format!("convexity: {e} (x = {x:?})"));
            break 'audit;
        }
        for y in &probes {
            let g = spec.g_matrix(x.as_slice(), y.as_slice());
            let eig = linalg::min_eigenvalue(&linalg::to_dmatrix(&g, m));
            if eig <= 0.0 {
                out.push(format!(
                    "spd: fundamental tensor loses definiteness (min eigenvalue {eig:.3e} at x = {x:?}, y = {y:?})"
                ));
                break 'audit;
            }
        }
    }

    if let MetricKind::Pullback { diffeo, .. } = spec.kind() {
        let mut max_err = 0.0f64;
        for x in &lattice {
            match diffeo.inverse(&diffeo.forward(x.as_slice())) {
                Ok(back) => {
                    let err = x
                        .iter()
                        .zip(&back)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max);
                    max_err = max_err.max(err);
                }
                Err(e) => {
                    out.push(format!("pullback: inverse failed: {e}"));
                    max_err = f64::NAN;
                    break;
                }
            }
        }
        if max_err > 1e-8 {
            out.push(format!("pullback: inverse round-trip error {max_err:.3e} exceeds 1e-8"));
        }
    }

    if let Err(e) = file.volume.build(&spec) {
        out.push(format!("volume: {e}"));
    }
    out
}

/// Parses the scenario document; the returned error carries the toml
/// line/column diagnostics verbatim.
pub fn parse(text: &str) -> Result<ScenarioFile, String> {
    let file: ScenarioFile = toml::from_str(text).map_err(|e| e.to_string())?;
    if file.tasks.is_empty() {
        return Err("scenario has no tasks".into());
    }
    for task in &file.tasks {
        match task {
            TaskDto::HarmonicChart { eps, h } => {
                if *eps <= 0.0 || *h <= 0.0 {
                    return Err("harmonic-chart: eps and h must be positive".into());
                }
            }
            TaskDto::Rescaling { eps_list, h } => {
                if eps_list.iter().any(|&e| e <= 0.0) || *h <= 0.0 {
                    return Err("rescaling: eps values and h must be positive".into());
                }
            }
            _ => {}
        }
    }
    Ok(file)
}
