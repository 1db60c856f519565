//! Run configuration read from JSON. Every section has defaults, so `{}` is
//! a valid file describing the full-size bending experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calibration::{ObjectiveKind, Regularization};
use crate::error::{Error, Result};
use crate::fem::{LoadKind, LoadSpec, MaterialParams, ViscousModel};
use crate::io::read_json;
use crate::kernel::SoeKernel;
use crate::modal::ModalLoad;
use crate::optim::OptimizerSettings;
use crate::rational::{soe_from_fractional, DEFAULT_S_RANGE, DEFAULT_S_SAMPLES};
use crate::solver::{KernelPair, SolverConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Geometry {
    pub lx: f64,
    pub ly: f64,
    pub lz: f64,
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Geometry {
    /// 60×10×5 cells on the 1 × 0.1 × 0.04 beam.
    pub fn full() -> Self {
        Geometry {
            lx: 1.0,
            ly: 0.1,
            lz: 0.04,
            nx: 60,
            ny: 10,
            nz: 5,
        }
    }

    /// 12×2×1 cells on the same beam.
    pub fn desk() -> Self {
        Geometry {
            nx: 12,
            ny: 2,
            nz: 1,
            ..Self::full()
        }
    }
}

impl Default for Geometry {
    fn default() -> Self {
        Self::full()
    }
}

/// How a kernel is given.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    /// AAA surrogate of `t^{α−1}/Γ(α)`
    Fractional { alpha: f64, modes: usize },
    Soe { weights: Vec<f64>, rates: Vec<f64> },
    /// JSON file holding `{"weights": [...], "rates": [...]}`
    File { path: PathBuf },
    Zero,
}

/// AAA tolerance used for fractional kernel specs.
pub const AAA_TOLERANCE: f64 = 1e-13;

impl KernelSpec {
    pub fn fractional(alpha: f64, modes: usize) -> Self {
        KernelSpec::Fractional { alpha, modes }
    }

    /// Relative file paths are resolved against `base`.
    pub fn resolve(&self, base: &Path) -> Result<SoeKernel> {
        match self {
            KernelSpec::Fractional { alpha, modes } => {
                soe_from_fractional(*alpha, DEFAULT_S_RANGE, DEFAULT_S_SAMPLES, AAA_TOLERANCE, *modes)
            }
            KernelSpec::Soe { weights, rates } => SoeKernel::new(weights.clone(), rates.clone()),
            KernelSpec::File { path } => read_json(&base.join(path)),
            KernelSpec::Zero => Ok(SoeKernel::zero()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelPairSpec {
    pub dev: KernelSpec,
    pub trace: KernelSpec,
}

impl KernelPairSpec {
    pub fn shared(spec: KernelSpec) -> Self {
        KernelPairSpec {
            dev: spec.clone(),
            trace: spec,
        }
    }

    pub fn resolve(&self, base: &Path) -> Result<KernelPair> {
        if self.dev == self.trace {
            return Ok(KernelPair::shared(self.dev.resolve(base)?));
        }
        Ok(KernelPair::new(self.dev.resolve(base)?, self.trace.resolve(base)?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelsSection {
    /// data-generating kernels; also the kernels of `forward`
    pub truth: KernelPairSpec,
    pub initial: KernelPairSpec,
}

impl Default for KernelsSection {
    fn default() -> Self {
        KernelsSection {
            truth: KernelPairSpec::shared(KernelSpec::fractional(0.7, 22)),
            initial: KernelPairSpec::shared(KernelSpec::fractional(0.5, 8)),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InverseSection {
    pub objective: ObjectiveKind,
    pub t_meas: f64,
    /// weight of the extension misfit in the two-kernel objective
    pub omega: f64,
    pub bending: LoadSpec,
    pub extension: LoadSpec,
    /// noise standard deviation as a fraction of `max |signal|`
    pub noise_level: f64,
    /// measured tip series, one CSV per excitation (bending first); when
    /// empty, measurements are synthesized from `kernels.truth`
    pub measurements: Vec<PathBuf>,
    pub optimizer: OptimizerSettings,
    pub regularization: Regularization,
}

impl Default for InverseSection {
    fn default() -> Self {
        InverseSection {
            objective: ObjectiveKind::SingleKernel,
            t_meas: 2.0,
            omega: 10.0,
            bending: LoadSpec::bending(1.0, 0.8),
            extension: LoadSpec::extension(100.0, 0.8),
            noise_level: 0.02,
            measurements: Vec::new(),
            optimizer: OptimizerSettings {
                max_iters: 100,
                ..OptimizerSettings::default()
            },
            regularization: Regularization::default(),
        }
    }
}

impl InverseSection {
    /// `(load, weight)` per excitation.
    pub fn excitations(&self) -> Vec<(LoadSpec, f64)> {
        match self.objective {
            ObjectiveKind::SingleKernel => vec![(self.bending, 1.0)],
            ObjectiveKind::TwoKernel => vec![(self.bending, 1.0), (self.extension, self.omega)],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AaaSection {
    pub alpha: f64,
    pub modes: usize,
    pub s_min: f64,
    pub s_max: f64,
    pub samples: usize,
    pub tolerance: f64,
    /// time window `[t_min, t_max]` of the time-domain comparison
    pub t_min: f64,
    pub t_max: f64,
    pub laplace_threshold: f64,
    pub time_threshold: f64,
}

impl Default for AaaSection {
    fn default() -> Self {
        AaaSection {
            alpha: 0.7,
            modes: 22,
            s_min: DEFAULT_S_RANGE.0,
            s_max: DEFAULT_S_RANGE.1,
            samples: DEFAULT_S_SAMPLES,
            tolerance: AAA_TOLERANCE,
            t_min: 0.04,
            t_max: 4.0,
            laplace_threshold: 1e-9,
            time_threshold: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReduceSection {
    pub k_sigma: KernelSpec,
    pub k_eps: KernelSpec,
    pub k_treps: KernelSpec,
    /// real sample points in `[1e−2, 1e2]` for the identity check
    pub check_points: usize,
    pub threshold: f64,
}

impl Default for ReduceSection {
    fn default() -> Self {
        ReduceSection {
            k_sigma: KernelSpec::Zero,
            k_eps: KernelSpec::Soe {
                weights: vec![0.5, 0.2],
                rates: vec![1.0, 10.0],
            },
            k_treps: KernelSpec::Soe {
                weights: vec![0.3],
                rates: vec![2.0],
            },
            check_points: 100,
            threshold: 1e-8,
        }
    }
}

/// Gradient check on a short two-kernel problem with random parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSection {
    pub solver: SolverConfig,
    pub t_meas: f64,
    pub load: LoadSpec,
    pub dev_modes: usize,
    pub trace_modes: usize,
    pub draws: usize,
    pub step: f64,
    pub threshold: f64,
}

impl Default for GradcheckSection {
    fn default() -> Self {
        GradcheckSection {
            solver: SolverConfig {
                t_final: 0.8,
                n_steps: 20,
                ..SolverConfig::default()
            },
            t_meas: 0.8,
            load: LoadSpec::bending(1.0, 0.5),
            dev_modes: 8,
            trace_modes: 8,
            draws: 1,
            step: 1e-3,
            threshold: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModalSection {
    pub eigenvalue: f64,
    pub amplitude: f64,
    pub gain: f64,
    pub load: ModalLoad,
    pub kernel: KernelSpec,
    pub dt: f64,
    pub t_final: f64,
    pub s_points: Vec<f64>,
    pub threshold: f64,
}

impl Default for ModalSection {
    fn default() -> Self {
        ModalSection {
            eigenvalue: 1.0,
            amplitude: 1.0,
            gain: 1.0,
            load: ModalLoad::Pulse { width: 1.0 },
            kernel: KernelSpec::Soe {
                weights: vec![1.0],
                rates: vec![1.0],
            },
            dt: 1e-3,
            t_final: 200.0,
            s_points: vec![0.5, 1.0, 2.0, 5.0],
            threshold: 1e-3,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub directory: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            directory: PathBuf::from("out"),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// seeds every random draw (noise, random parameters)
    pub seed: u64,
    pub geometry: Geometry,
    pub material: MaterialParams,
    pub viscous: ViscousModel,
    pub solver: SolverConfig,
    /// load of `forward`
    pub load: LoadSpec,
    pub kernels: KernelsSection,
    pub inverse: InverseSection,
    pub aaa: AaaSection,
    pub reduce: ReduceSection,
    pub gradcheck: GradcheckSection,
    pub modal: ModalSection,
    pub output: OutputSection,
    /// directory relative paths are resolved against; set on load
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let mut cfg: RunConfig = read_json(path)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks values serde cannot; errors name the offending field.
    pub fn validate(&self) -> Result<()> {
        let g = &self.geometry;
        if !(g.lx > 0.0 && g.ly > 0.0 && g.lz > 0.0) {
            return Err(Error::config("geometry", "beam dimensions must be positive"));
        }
        if g.nx == 0 || g.ny == 0 || g.nz == 0 {
            return Err(Error::config("geometry", "cell counts must be at least 1"));
        }
        self.material.validate().map_err(|e| Error::config("material", e.to_string()))?;
        self.solver.validate().map_err(|e| Error::config("solver", e.to_string()))?;
        check_load("load", &self.load)?;
        let inv = &self.inverse;
        check_load("inverse.bending", &inv.bending)?;
        check_load("inverse.extension", &inv.extension)?;
        if inv.bending.kind != LoadKind::Bending {
            return Err(Error::config("inverse.bending.kind", "must be `bending`"));
        }
        if inv.extension.kind != LoadKind::Extension {
            return Err(Error::config("inverse.extension.kind", "must be `extension`"));
        }
        if !(inv.t_meas >= 0.0 && inv.t_meas <= self.solver.t_final) {
            return Err(Error::config(
                "inverse.t_meas",
                format!("{} must lie in [0, solver.t_final = {}]", inv.t_meas, self.solver.t_final),
            ));
        }
        if !(inv.omega > 0.0 && inv.omega.is_finite()) {
            return Err(Error::config("inverse.omega", "must be positive"));
        }
        if !(inv.noise_level >= 0.0 && inv.noise_level.is_finite()) {
            return Err(Error::config("inverse.noise_level", "must be non-negative"));
        }
        inv.optimizer.validate().map_err(|e| Error::config("inverse.optimizer", e.to_string()))?;
        let r = inv.regularization;
        if !(r.gamma_dev >= 0.0 && r.gamma_trace >= 0.0) {
            return Err(Error::config("inverse.regularization", "weights must be non-negative"));
        }
        if !inv.measurements.is_empty() && inv.measurements.len() != inv.excitations().len() {
            return Err(Error::config(
                "inverse.measurements",
                format!("expected one file per excitation ({})", inv.excitations().len()),
            ));
        }
        for (i, p) in inv.measurements.iter().enumerate() {
            if !self.base_dir.join(p).is_file() {
                return Err(Error::config(format!("inverse.measurements[{i}]"), format!("{} does not exist", p.display())));
            }
        }
        for (name, spec) in [
            ("kernels.truth.dev", &self.kernels.truth.dev),
            ("kernels.truth.trace", &self.kernels.truth.trace),
            ("kernels.initial.dev", &self.kernels.initial.dev),
            ("kernels.initial.trace", &self.kernels.initial.trace),
            ("reduce.k_sigma", &self.reduce.k_sigma),
            ("reduce.k_eps", &self.reduce.k_eps),
            ("reduce.k_treps", &self.reduce.k_treps),
            ("modal.kernel", &self.modal.kernel),
        ] {
            check_kernel_spec(name, spec, &self.base_dir)?;
        }
        let a = &self.aaa;
        if !(a.s_min > 0.0 && a.s_max > a.s_min && a.samples >= 2 && a.modes >= 1) {
            return Err(Error::config("aaa", "need 0 < s_min < s_max, samples ≥ 2, modes ≥ 1"));
        }
        if !(a.t_min > 0.0 && a.t_max > a.t_min) {
            return Err(Error::config("aaa", "need 0 < t_min < t_max"));
        }
        let gc = &self.gradcheck;
        gc.solver.validate().map_err(|e| Error::config("gradcheck.solver", e.to_string()))?;
        if !(gc.t_meas > 0.0 && gc.t_meas <= gc.solver.t_final) || gc.draws == 0 || gc.dev_modes == 0 || gc.trace_modes == 0 {
            return Err(Error::config("gradcheck", "need 0 < t_meas ≤ solver.t_final and at least one draw and mode"));
        }
        let m = &self.modal;
        if !(m.dt > 0.0 && m.t_final > m.dt) || m.s_points.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::config("modal", "need 0 < dt < t_final and positive s_points"));
        }
        Ok(())
    }

    pub fn output_dir(&self) -> PathBuf {
        self.base_dir.join(&self.output.directory)
    }
}

fn check_load(path: &str, l: &LoadSpec) -> Result<()> {
    if !(l.magnitude.is_finite() && l.t_load > 0.0) {
        return Err(Error::config(path, "need a finite magnitude and t_load > 0"));
    }
    Ok(())
}

fn check_kernel_spec(path: &str, spec: &KernelSpec, base: &Path) -> Result<()> {
    match spec {
        KernelSpec::Fractional { alpha, modes } => {
            if !(*alpha > 0.0 && *alpha <= 1.0) || *modes == 0 {
                return Err(Error::config(path, "need 0 < alpha ≤ 1 and modes ≥ 1"));
            }
        }
        KernelSpec::Soe { weights, rates } => {
            SoeKernel::new(weights.clone(), rates.clone()).map_err(|e| Error::config(path, e.to_string()))?;
        }
        KernelSpec::File { path: p } => {
            if !base.join(p).is_file() {
                return Err(Error::config(path, format!("{} does not exist", p.display())));
            }
        }
        KernelSpec::Zero => {}
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_object_is_the_default_config() {
        let cfg: RunConfig = serde_json::from_str("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        cfg.validate().unwrap();
        assert_eq!(cfg.geometry, Geometry::full());
        assert_eq!(cfg.inverse.extension.magnitude, 100.0);
    }

    #[test]
    fn config_round_trips_through_json() {
        let mut cfg = RunConfig::default();
        cfg.kernels.truth = KernelPairSpec {
            dev: KernelSpec::fractional(0.7, 22),
            trace: KernelSpec::Soe {
                weights: vec![0.1],
                rates: vec![2.0],
            },
        };
        cfg.inverse.objective = ObjectiveKind::TwoKernel;
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(serde_json::from_str::<RunConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn errors_name_the_field() {
        let mut cfg = RunConfig::default();
        cfg.inverse.t_meas = 9.0;
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("inverse.t_meas"), "{msg}");
        let mut cfg = RunConfig::default();
        cfg.kernels.initial.dev = KernelSpec::File {
            path: "missing.json".into(),
        };
        assert!(cfg.validate().unwrap_err().to_string().contains("kernels.initial.dev"));
        assert!(serde_json::from_str::<RunConfig>(r#"{"geometry": {"lx": 1}}"#).is_err());
        assert!(serde_json::from_str::<RunConfig>(r#"{"typo": 1}"#).is_err());
    }
}
