//! JSON run configuration and problem loading.

use std::path::{Path, PathBuf};

use calpath_core::diagnostics::ExportOptions;
use calpath_core::io::{read_bounds_csv, read_mtx, read_targets_csv, read_vector_csv};
use calpath_core::path::power_grid;
use calpath_core::{
    CalibrationProblem, DevianceKind, DiagScale, Method, PathConfig, PenaltyKind, SolveOptions, SparseMatrix,
};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// One-column CSV of base weights.
    pub base: PathBuf,
    /// Matrix Market file for the penalized rows.
    pub penalized_matrix: PathBuf,
    pub targets: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_matrix: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exact_targets: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounds: Option<PathBuf>,
    /// Diagonal of the weight scale `Q1`; replaces the method default.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_scale: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_scale: Option<PathBuf>,
    #[serde(default = "default_method")]
    pub method: Method,
    /// Only with `"method": "Custom"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_deviance: Option<DevianceKind>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub penalty: Option<PenaltyKind>,
    #[serde(default)]
    pub alpha_grid: GridSpec,
    #[serde(default)]
    pub solver: SolverSettings,
    #[serde(default)]
    pub report: ReportSettings,
    #[serde(default = "default_rank_tol")]
    pub rank_tol: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: u64,
}

fn default_method() -> Method {
    Method::LL1
}

fn default_rank_tol() -> f64 {
    1e-9
}

/// Either `values` or a geometric grid `base^k` for `k_min..=k_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub values: Option<Vec<f64>>,
    #[serde(default = "default_grid_base")]
    pub base: f64,
    #[serde(default = "default_k_min")]
    pub k_min: i32,
    #[serde(default = "default_k_max")]
    pub k_max: i32,
}

fn default_grid_base() -> f64 {
    2.0
}
fn default_k_min() -> i32 {
    -14
}
fn default_k_max() -> i32 {
    15
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            values: None,
            base: default_grid_base(),
            k_min: default_k_min(),
            k_max: default_k_max(),
        }
    }
}

impl GridSpec {
    pub fn alphas(&self) -> Result<Vec<f64>, CliError> {
        let grid = match &self.values {
            Some(v) => v.clone(),
            None => {
                if !(self.base > 1.0) || !self.base.is_finite() {
                    return Err(CliError::config("alpha_grid.base", "must be a finite number above 1"));
                }
                power_grid(self.base, self.k_min, self.k_max)
            }
        };
        if grid.is_empty() {
            return Err(CliError::config("alpha_grid", "grid is empty"));
        }
        if grid.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(CliError::config("alpha_grid", "values must be positive and finite"));
        }
        if grid.windows(2).any(|w| w[1] <= w[0]) {
            return Err(CliError::config("alpha_grid", "values must be strictly increasing"));
        }
        Ok(grid)
    }
}

/// Overrides for the path and Newton settings; absent fields keep defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_iter: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_resid: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tol_step: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub irls_max: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub irls_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kappa_floor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub freeze_snap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub refine_support: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub support_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warm_start: Option<bool>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportSettings {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rounding_unit: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rel_tol: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub near_tol: Option<f64>,
}

/// A parsed configuration with its file paths resolved.
#[derive(Debug, Clone)]
pub struct LoadedConfig {
    pub config: RunConfig,
    /// Directory of the config file; relative paths are taken from here.
    pub root: PathBuf,
}

impl LoadedConfig {
    pub fn read(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", path.display())))?;
        let config: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let loaded = Self { config, root };
        loaded.check_files()?;
        Ok(loaded)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    fn files(&self) -> Vec<(&'static str, &PathBuf)> {
        let c = &self.config;
        let mut out = vec![("base", &c.base), ("penalized_matrix", &c.penalized_matrix), ("targets", &c.targets)];
        let optional = [
            ("exact_matrix", &c.exact_matrix),
            ("exact_targets", &c.exact_targets),
            ("bounds", &c.bounds),
            ("weight_scale", &c.weight_scale),
            ("target_scale", &c.target_scale),
        ];
        out.extend(optional.into_iter().filter_map(|(k, v)| v.as_ref().map(|p| (k, p))));
        out
    }

    fn check_files(&self) -> Result<(), CliError> {
        for (field, p) in self.files() {
            let full = self.resolve(p);
            if !full.is_file() {
                return Err(CliError::config(field, format!("file not found: {}", full.display())));
            }
        }
        let c = &self.config;
        if c.exact_matrix.is_some() != c.exact_targets.is_some() {
            return Err(CliError::config("exact_matrix", "exact_matrix and exact_targets go together"));
        }
        if c.method != Method::Custom && (c.weight_deviance.is_some() || c.penalty.is_some()) {
            return Err(CliError::config(
                "method",
                format!("{} is a preset; weight_deviance and penalty need \"Custom\"", c.method.name()),
            ));
        }
        if !(c.rank_tol > 0.0) {
            return Err(CliError::config("rank_tol", "must be positive"));
        }
        Ok(())
    }

    /// Output directory: the command-line value, else `output_dir`, else `out`
    /// next to the config.
    pub fn output_dir(&self, cli: Option<&Path>) -> PathBuf {
        match (cli, &self.config.output_dir) {
            (Some(d), _) => d.to_path_buf(),
            (None, Some(d)) => self.resolve(d),
            (None, None) => self.root.join("out"),
        }
    }

    fn read_with<T>(&self, field: &'static str, p: &Path, f: fn(&Path) -> calpath_core::Result<T>) -> Result<T, CliError> {
        f(&self.resolve(p)).map_err(|e| CliError::config(field, e.to_string()))
    }

    /// Reads the inputs and sets up the problem for the configured method.
    pub fn problem(&self) -> Result<CalibrationProblem, CliError> {
        let c = &self.config;
        let base = self.read_with("base", &c.base, read_vector_csv)?;
        let a2: SparseMatrix = self.read_with("penalized_matrix", &c.penalized_matrix, read_mtx)?;
        let (targets, meta) = self.read_with("targets", &c.targets, read_targets_csv)?;
        let mut p = CalibrationProblem::new(base, a2, targets)
            .map_err(|e| CliError::config("targets", e.to_string()))?
            .with_meta(meta);
        if let (Some(am), Some(at)) = (&c.exact_matrix, &c.exact_targets) {
            let a1 = self.read_with("exact_matrix", am, read_mtx)?;
            let t1 = self.read_with("exact_targets", at, read_vector_csv)?;
            p = p.with_exact(a1, t1);
        }
        if let Some(b) = &c.bounds {
            p = p.with_bounds(self.read_with("bounds", b, read_bounds_csv)?);
        }
        p = match c.method {
            Method::Custom => {
                let dev = c.weight_deviance.unwrap_or(DevianceKind::Quadratic);
                p.with_weight_deviance(dev).with_penalty(c.penalty.unwrap_or(PenaltyKind::Quadratic))
            }
            m => m.configure(p),
        };
        if let Some(q) = &c.weight_scale {
            let v = self.read_with("weight_scale", q, read_vector_csv)?;
            p = p.with_weight_scale(DiagScale::new(v).map_err(|e| CliError::config("weight_scale", e.to_string()))?);
        }
        if let Some(q) = &c.target_scale {
            let v = self.read_with("target_scale", q, read_vector_csv)?;
            p = p.with_target_scale(DiagScale::new(v).map_err(|e| CliError::config("target_scale", e.to_string()))?);
        }
        c.method.check(&p).map_err(|e| CliError::config("method", e.to_string()))?;
        Ok(p)
    }

    pub fn path_config(&self) -> Result<PathConfig, CliError> {
        let c = &self.config;
        let s = &c.solver;
        let d = PathConfig::new(c.method);
        let solve = SolveOptions {
            max_iter: s.max_iter.unwrap_or(d.solve.max_iter),
            tol_resid: s.tol_resid.unwrap_or(d.solve.tol_resid),
            tol_step: s.tol_step.unwrap_or(d.solve.tol_step),
            ..d.solve
        };
        let cfg = PathConfig {
            alpha_grid: c.alpha_grid.alphas()?,
            irls_max: s.irls_max.unwrap_or(d.irls_max),
            irls_tol: s.irls_tol.unwrap_or(d.irls_tol),
            kappa_floor: s.kappa_floor.unwrap_or(d.kappa_floor),
            freeze_snap: s.freeze_snap.or(d.freeze_snap),
            refine_support: s.refine_support.unwrap_or(d.refine_support),
            support_tol: s.support_tol.unwrap_or(d.support_tol),
            warm_start: s.warm_start.unwrap_or(d.warm_start),
            solve,
            ..d
        };
        cfg.validate().map_err(|e| CliError::config("solver", e.to_string()))?;
        Ok(cfg)
    }

    pub fn export_options(&self, final_only: bool) -> Result<ExportOptions, CliError> {
        let r = &self.config.report;
        let d = ExportOptions::default();
        let opts = ExportOptions {
            rounding_unit: r.rounding_unit.unwrap_or(d.rounding_unit),
            rel_tol: r.rel_tol.unwrap_or(d.rel_tol),
            near_tol: r.near_tol.unwrap_or(d.near_tol),
            final_only,
        };
        if !(opts.rounding_unit > 0.0) || !(opts.rel_tol >= 0.0) || !(opts.near_tol >= 0.0) {
            return Err(CliError::config("report", "rounding_unit must be positive and tolerances non-negative"));
        }
        Ok(opts)
    }
}
