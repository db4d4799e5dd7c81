//! Reconstruction job files (TOML). Every field has a default; CLI flags
//! override what the file says.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::forward::Bounds;
use crate::geometry::{build_grid, DetectorSpec, GridSpec};
use crate::phantom::AssemblySpec;
use crate::safeguard::SafeguardConfig;
use crate::solver::ConstraintConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Plain Levenberg–Marquardt.
    Lm,
    /// Safeguarded learned acceleration.
    Dgn,
}

impl Method {
    pub fn parse(s: &str) -> Result<Method> {
        match s {
            "lm" => Ok(Method::Lm),
            "dgn" => Ok(Method::Dgn),
            _ => invalid(format!("unknown method '{s}' (expected lm or dgn)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridJob {
    pub n_px: usize,
    pub pixel_size: f64,
}

impl Default for GridJob {
    fn default() -> Self {
        GridJob { n_px: 33, pixel_size: 5.0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DetectorJob {
    pub n_angles: Option<usize>,
    pub collimator_width: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JobConfig {
    pub method: Method,
    pub iters: usize,
    pub nets: Vec<PathBuf>,
    pub sino: Option<PathBuf>,
    pub truth: Option<PathBuf>,
    /// Alternative to `sino`/`truth`: a dataset manifest and sample id.
    pub manifest: Option<PathBuf>,
    pub sample: Option<usize>,
    pub out: PathBuf,
    pub grid: GridJob,
    pub detector: DetectorJob,
    pub bounds: Bounds,
    pub assembly: AssemblySpec,
    pub constraints: ConstraintConfig,
    pub solver: SafeguardConfig,
}

impl Default for JobConfig {
    fn default() -> Self {
        JobConfig {
            method: Method::Lm,
            iters: 15,
            nets: Vec::new(),
            sino: None,
            truth: None,
            manifest: None,
            sample: None,
            out: PathBuf::from("recon"),
            grid: GridJob::default(),
            detector: DetectorJob::default(),
            bounds: Bounds::default(),
            assembly: AssemblySpec::default(),
            constraints: ConstraintConfig::default(),
            solver: SafeguardConfig::default(),
        }
    }
}

impl JobConfig {
    pub fn parse(text: &str) -> Result<JobConfig> {
        toml::from_str(text).map_err(|e| Error::Invalid(format!("job file: {e}")))
    }

    /// Relative paths in the file are resolved against its directory.
    pub fn load(path: &Path) -> Result<JobConfig> {
        let mut job = Self::parse(&std::fs::read_to_string(path)?)?;
        let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        job.nets.iter_mut().for_each(fix);
        for p in [&mut job.sino, &mut job.truth, &mut job.manifest].into_iter().flatten() {
            fix(p);
        }
        Ok(job)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("job serializes")
    }

    pub fn grid_spec(&self) -> Result<GridSpec> {
        build_grid(self.grid.n_px, self.grid.pixel_size)
    }

    pub fn detector_spec(&self, grid: &GridSpec) -> Result<DetectorSpec> {
        let mut d = DetectorSpec::default_for(grid);
        if let Some(a) = self.detector.n_angles {
            d.n_angles = a;
        }
        if let Some(w) = self.detector.collimator_width {
            d.collimator_width = w;
        }
        d.validate(grid)?;
        Ok(d)
    }

    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if self.method == Method::Dgn && self.nets.is_empty() {
            return invalid("method dgn needs at least one network file (nets)");
        }
        if self.sino.is_none() && (self.manifest.is_none() || self.sample.is_none()) {
            return invalid("job needs either sino or manifest + sample");
        }
        Ok(())
    }
}
