//! TOML run configuration and its resolution into validated model objects.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagnostics::DEFAULT_SEED;
use crate::error::{Error, Result};
use crate::expr::ScalarFn;
use crate::ivp::{ProblemParams, SolverOptions};
use crate::nonlinearity::FSpec;
use crate::phi::PhiSpec;
use crate::shooting::ShootingOptions;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "NODAL_OUTPUT_DIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<PresetConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<PhiConfig>,
    pub f: FConfig,
    pub problem: ProblemConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

/// Radial forms of classical operators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, tag = "kind", rename_all = "kebab-case")]
pub enum PresetConfig {
    /// `alpha = gamma = N - 1`, `phi = power(p)`.
    PLaplacian {
        #[serde(rename = "N")]
        n: f64,
        p: f64,
    },
    /// `alpha = N - k`, `gamma = N - 1`, `phi = power(k + 1)`.
    KHessian {
        #[serde(rename = "N")]
        n: f64,
        k: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhiConfig {
    /// `power`, `sum_of_powers` or `custom`.
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    /// Expression in `t` for a custom family.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phi: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dphi: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FConfig {
    /// `power`, `arctan` or `custom`.
    pub family: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expr: Option<String>,
    pub d_infinity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    pub lambda: f64,
    #[serde(rename = "R")]
    pub radius: f64,
    /// Initial height for `solve-ivp` and `zeros`; defaults to `d_infinity`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub d: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eps0: Option<f64>,
    pub abs_tol: f64,
    pub rel_tol: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub boundary_tol: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_tol: Option<f64>,
    pub max_ell: usize,
    pub dead_core_tol: f64,
    pub seed: u64,
    /// End of the `solve-ivp` and `zeros` runs; defaults to `R` and `10 R`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub r_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub zero_count: Option<usize>,
    pub picard_nodes: usize,
    pub max_steps: usize,
    pub bound_samples: usize,
    pub simon_trials: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        let s = SolverOptions::default();
        SolverConfig {
            eps0: s.eps0,
            abs_tol: s.abs_tol,
            rel_tol: s.rel_tol,
            boundary_tol: None,
            r_tol: None,
            max_ell: 3,
            dead_core_tol: s.dead_core_tol,
            seed: DEFAULT_SEED,
            r_max: None,
            zero_count: None,
            picard_nodes: s.picard_nodes,
            max_steps: s.max_steps,
            bound_samples: 10_000,
            simon_trials: 100_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Toml,
}

impl Format {
    pub fn extension(self) -> &'static str {
        match self {
            Format::Json => "json",
            Format::Toml => "toml",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub directory: Option<PathBuf>,
    pub format: Format,
}

/// Validated objects built from a [`RunConfig`].
#[derive(Debug, Clone)]
pub struct Resolved {
    pub phi: PhiSpec,
    pub f: FSpec,
    /// `d` is the configured initial height, or `d_infinity`.
    pub params: ProblemParams,
    pub solver: SolverOptions,
    pub shooting: ShootingOptions,
}

fn need<T: Copy>(value: Option<T>, path: &str, family: &str) -> Result<T> {
    value.ok_or_else(|| Error::config(path, format!("required for family `{family}`")))
}

fn reject<T>(value: &Option<T>, path: &str, family: &str) -> Result<()> {
    match value {
        Some(_) => Err(Error::config(path, format!("not used by family `{family}`"))),
        None => Ok(()),
    }
}

fn at(path: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Config { .. } => e,
        other => Error::config(path, other.to_string()),
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| {
            let path = e
                .span()
                .map(|s| {
                    let line = text[..s.start.min(text.len())].matches('\n').count() + 1;
                    format!("line {line}")
                })
                .unwrap_or_else(|| "<root>".into());
            Error::config(path, e.message().to_string())
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Expands the preset into explicit `phi`, `alpha` and `gamma`.
    pub fn expanded(&self) -> Result<RunConfig> {
        let mut out = self.clone();
        let Some(preset) = out.preset.take() else {
            return Ok(out);
        };
        let (alpha, gamma, p) = match preset {
            PresetConfig::PLaplacian { n, p } => (n - 1.0, n - 1.0, p),
            PresetConfig::KHessian { n, k } => (n - k, n - 1.0, k + 1.0),
        };
        if out.phi.is_some() {
            return Err(Error::config("phi", "cannot be combined with a preset"));
        }
        if out.problem.alpha.is_some_and(|a| a != alpha) {
            return Err(Error::config("problem.alpha", format!("preset fixes alpha = {alpha}")));
        }
        out.phi = Some(PhiConfig {
            family: "power".into(),
            p: Some(p),
            q: None,
            phi: None,
            dphi: None,
            gamma1: None,
            gamma2: None,
        });
        out.problem.alpha = Some(alpha);
        out.problem.gamma = Some(out.problem.gamma.unwrap_or(gamma));
        Ok(out)
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let cfg = self.expanded()?;
        let phi = cfg.phi.as_ref().ok_or_else(|| Error::config("phi", "missing (or give a preset)"))?;
        let phi = resolve_phi(phi)?;
        let f = resolve_f(&cfg.f)?;
        let pr = &cfg.problem;
        let alpha = pr.alpha.ok_or_else(|| Error::config("problem.alpha", "missing"))?;
        let gamma = pr.gamma.ok_or_else(|| Error::config("problem.gamma", "missing"))?;
        let params = ProblemParams::new(alpha, gamma, pr.lambda, pr.radius, pr.d.unwrap_or(f.d_infinity()));
        params.validate_equation(&phi).map_err(at("problem"))?;
        params.validate(&phi, &f).map_err(at("problem.d"))?;

        let s = &cfg.solver;
        for (name, x) in [("solver.abs_tol", s.abs_tol), ("solver.rel_tol", s.rel_tol)] {
            if !(x > 0.0 && x.is_finite()) {
                return Err(Error::config(name, format!("must be positive, got {x}")));
            }
        }
        if let Some(e) = s.eps0.filter(|e| !(*e > 0.0 && e.is_finite())) {
            return Err(Error::config("solver.eps0", format!("must be positive, got {e}")));
        }
        let solver = SolverOptions {
            eps0: s.eps0,
            abs_tol: s.abs_tol,
            rel_tol: s.rel_tol,
            dead_core_tol: s.dead_core_tol,
            picard_nodes: s.picard_nodes,
            max_steps: s.max_steps,
        };
        let shooting = ShootingOptions {
            solver: solver.clone(),
            r_tol: s.r_tol,
            boundary_tol: s.boundary_tol,
            ..ShootingOptions::default()
        };
        Ok(Resolved {
            phi,
            f,
            params,
            solver,
            shooting,
        })
    }
}

fn resolve_phi(c: &PhiConfig) -> Result<PhiSpec> {
    let fam = c.family.as_str();
    let spec = match fam {
        "power" => {
            reject(&c.q, "phi.q", fam)?;
            reject(&c.phi, "phi.phi", fam)?;
            PhiSpec::power(need(c.p, "phi.p", fam)?)
        }
        "sum_of_powers" => {
            reject(&c.phi, "phi.phi", fam)?;
            PhiSpec::sum_of_powers(need(c.p, "phi.p", fam)?, need(c.q, "phi.q", fam)?)
        }
        "custom" => {
            reject(&c.p, "phi.p", fam)?;
            reject(&c.q, "phi.q", fam)?;
            let src = c
                .phi
                .as_deref()
                .ok_or_else(|| Error::config("phi.phi", "required for family `custom`"))?;
            let phi = ScalarFn::parse(src).map_err(at("phi.phi"))?;
            let dphi = c.dphi.as_deref().map(ScalarFn::parse).transpose().map_err(at("phi.dphi"))?;
            PhiSpec::custom(phi, dphi, need(c.gamma1, "phi.gamma1", fam)?, need(c.gamma2, "phi.gamma2", fam)?)
        }
        other => {
            return Err(Error::config(
                "phi.family",
                format!("unknown family `{other}`, expected power, sum_of_powers or custom"),
            ))
        }
    };
    spec.map_err(at("phi"))
}

fn resolve_f(c: &FConfig) -> Result<FSpec> {
    let fam = c.family.as_str();
    let spec = match fam {
        "power" => {
            reject(&c.expr, "f.expr", fam)?;
            FSpec::power(need(c.delta, "f.delta", fam)?, c.d_infinity)
        }
        "arctan" => {
            reject(&c.delta, "f.delta", fam)?;
            reject(&c.expr, "f.expr", fam)?;
            FSpec::arctan(c.d_infinity)
        }
        "custom" => {
            reject(&c.delta, "f.delta", fam)?;
            let src = c
                .expr
                .as_deref()
                .ok_or_else(|| Error::config("f.expr", "required for family `custom`"))?;
            FSpec::custom(ScalarFn::parse(src).map_err(at("f.expr"))?, c.d_infinity)
        }
        other => {
            return Err(Error::config(
                "f.family",
                format!("unknown family `{other}`, expected power, arctan or custom"),
            ))
        }
    };
    spec.map_err(at("f"))
}

#[cfg(test)]
mod tests {
    use super::*;

    const AUTO: &str = r#"
[phi]
family = "power"
p = 2.0

[f]
family = "power"
delta = 0.3333333333333333
d_infinity = 1.0

[problem]
alpha = 0.0
gamma = 0.0
lambda = 1.0
R = 1.0
"#;

    #[test]
    fn parses_and_resolves() {
        let cfg = RunConfig::from_toml(AUTO).unwrap();
        let r = cfg.resolve().unwrap();
        assert_eq!(r.params.d, 1.0);
        assert_eq!(r.solver, SolverOptions::default());
        assert_eq!(cfg.output.format, Format::Json);
    }

    #[test]
    fn unknown_key_names_its_line() {
        let text = AUTO.replace("lambda = 1.0", "lambda = 1.0\nlamda = 2.0");
        let err = RunConfig::from_toml(&text).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("lamda") && msg.contains("line 15"), "{msg}");
        assert!(err.is_domain());
    }

    #[test]
    fn missing_parameter_names_its_field() {
        let text = AUTO.replace("p = 2.0", "");
        let err = RunConfig::from_toml(&text).unwrap().resolve().unwrap_err();
        assert!(err.to_string().contains("phi.p"), "{err}");
    }

    #[test]
    fn presets_expand() {
        let text = AUTO
            .replace("[phi]\nfamily = \"power\"\np = 2.0", "[preset]\nkind = \"k-hessian\"\nN = 3\nk = 2")
            .replace("alpha = 0.0\ngamma = 0.0\n", "");
        let cfg = RunConfig::from_toml(&text).unwrap();
        let e = cfg.expanded().unwrap();
        assert_eq!(e.problem.alpha, Some(1.0));
        assert_eq!(e.problem.gamma, Some(2.0));
        assert_eq!(e.phi.as_ref().unwrap().p, Some(3.0));
        let r = cfg.resolve().unwrap();
        assert_eq!(r.phi.gamma1(), 3.0);
    }

    #[test]
    fn round_trips_through_toml() {
        let mut cfg = RunConfig::from_toml(AUTO).unwrap();
        cfg.solver.boundary_tol = Some(1e-9);
        cfg.output.format = Format::Toml;
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
    }
}
