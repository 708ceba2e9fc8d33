//! Sectioned TOML run configuration.
//!
//! ```toml
//! [domain]
//! theta = 1.5707963267948966
//! radius = 1.0
//!
//! [mesh]
//! nr = 64
//! nphi = 64
//! grading = 1.15
//!
//! [initial]
//! kind = "restricted_radial"     # constant | gaussian | restricted_radial
//! mass = 9.42477796076938
//! concentration = 0.1
//! signal = "quasi_stationary"    # zero | constant | quasi_stationary
//!
//! [scheme]
//! t_end = 50.0
//!
//! [output]
//! dir = "out"
//! ```
//!
//! `theta`, `radius`, `nr`, `nphi`, `kind`, `mass` and `t_end` are required;
//! everything else has a default. Parsing reports every problem at once.

use std::f64::consts::TAU;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use thiserror::Error;
use toml::{Table, Value};

use crate::fields::Field;
use crate::geometry::{DomainSpec, GeometryError, SectorMesh};
use crate::initial::{initial_fields, InitError, InitialData, SignalInit};
use crate::scheme::SchemeConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// Field snapshots every this many time units; 0 keeps only the final one.
    pub snapshot_interval: f64,
    /// Write every n-th accepted step to the diagnostics CSV.
    pub csv_every: usize,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("out"), snapshot_interval: 0.0, csv_every: 1 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub domain: DomainSpec,
    pub nr: usize,
    pub nphi: usize,
    pub grading: f64,
    pub init: InitialData,
    pub signal: SignalInit,
    pub mass: f64,
    pub scheme: SchemeConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Error, Clone, PartialEq)]
#[error("invalid configuration:\n  {}", .problems.join("\n  "))]
pub struct ConfigError {
    pub problems: Vec<String>,
}

const SECTIONS: &[(&str, &[&str])] = &[
    ("domain", &["theta", "radius"]),
    ("mesh", &["nr", "nphi", "grading"]),
    (
        "initial",
        &["kind", "mass", "center_r", "center_phi", "width", "concentration", "signal", "signal_value"],
    ),
    (
        "scheme",
        &[
            "t_end",
            "dt0",
            "dt_min",
            "dt_max",
            "cfl_safety",
            "linf_blowup",
            "linear_tol",
            "theta_scheme",
            "blowup_window",
        ],
    ),
    ("output", &["dir", "snapshot_interval", "csv_every"]),
];

struct Reader<'a> {
    root: &'a Table,
    problems: Vec<String>,
}

impl<'a> Reader<'a> {
    fn raw(&self, section: &str, key: &str) -> Option<&'a Value> {
        self.root.get(section).and_then(Value::as_table).and_then(|t| t.get(key))
    }

    fn float(&mut self, section: &str, key: &str, required: bool) -> Option<f64> {
        match self.raw(section, key) {
            None => {
                if required {
                    self.problems.push(format!("missing required key `{section}.{key}`"));
                }
                None
            }
            Some(Value::Float(x)) => Some(*x),
            Some(Value::Integer(i)) => Some(*i as f64),
            Some(other) => {
                self.problems.push(format!("`{section}.{key}` must be a number, got {}", other.type_str()));
                None
            }
        }
    }

    fn count(&mut self, section: &str, key: &str, required: bool) -> Option<usize> {
        match self.raw(section, key) {
            None => {
                if required {
                    self.problems.push(format!("missing required key `{section}.{key}`"));
                }
                None
            }
            Some(Value::Integer(i)) if *i >= 0 => Some(*i as usize),
            Some(other) => {
                self.problems.push(format!("`{section}.{key}` must be a nonnegative integer, got {other}"));
                None
            }
        }
    }

    fn string(&mut self, section: &str, key: &str, required: bool) -> Option<&'a str> {
        match self.raw(section, key) {
            None => {
                if required {
                    self.problems.push(format!("missing required key `{section}.{key}`"));
                }
                None
            }
            Some(Value::String(s)) => Some(s.as_str()),
            Some(other) => {
                self.problems.push(format!("`{section}.{key}` must be a string, got {}", other.type_str()));
                None
            }
        }
    }

    fn check(&mut self, ok: bool, msg: impl FnOnce() -> String) {
        if !ok {
            self.problems.push(msg());
        }
    }
}

fn unknown_keys(root: &Table) -> Vec<String> {
    let mut problems = Vec::new();
    for (name, value) in root {
        let Some((_, keys)) = SECTIONS.iter().find(|(s, _)| s == name) else {
            problems.push(format!("unknown section `[{name}]`"));
            continue;
        };
        match value.as_table() {
            Some(t) => {
                for k in t.keys() {
                    if !keys.contains(&k.as_str()) {
                        problems.push(format!("unknown key `{name}.{k}`"));
                    }
                }
            }
            None => problems.push(format!("`{name}` must be a section")),
        }
    }
    problems
}

pub fn parse_config(text: &str) -> Result<SimConfig, ConfigError> {
    let root: Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError { problems: vec![format!("malformed document: {}", e.message())] })?;
    let mut r = Reader { root: &root, problems: unknown_keys(&root) };

    let theta = r.float("domain", "theta", true);
    let radius = r.float("domain", "radius", true);
    if let Some(t) = theta {
        r.check(t > 0.0 && t <= TAU * (1.0 + 4.0 * f64::EPSILON), || {
            format!("domain.theta must lie in (0, 2π], got {t}")
        });
    }
    if let Some(x) = radius {
        r.check(x > 0.0 && x.is_finite(), || format!("domain.radius must be positive, got {x}"));
    }

    let nr = r.count("mesh", "nr", true);
    let nphi = r.count("mesh", "nphi", true);
    let grading = r.float("mesh", "grading", false).unwrap_or(1.0);
    for (name, n) in [("nr", nr), ("nphi", nphi)] {
        if let Some(n) = n {
            r.check(n >= 2, || format!("mesh.{name} must be at least 2, got {n}"));
        }
    }
    r.check(grading >= 1.0 && grading.is_finite(), || format!("mesh.grading must be >= 1, got {grading}"));

    let mass = r.float("initial", "mass", true);
    if let Some(m) = mass {
        r.check(m > 0.0 && m.is_finite(), || format!("mass must be positive, got {m}"));
    }
    let kind = r.string("initial", "kind", true);
    let init = match kind {
        Some("constant") => Some(InitialData::Constant),
        Some("gaussian") => {
            let center_r = r.float("initial", "center_r", false).unwrap_or(0.0);
            let center_phi = r.float("initial", "center_phi", false).unwrap_or(0.0);
            let width = r.float("initial", "width", false).unwrap_or(0.1);
            r.check(center_r >= 0.0 && radius.is_none_or(|x| center_r <= x), || {
                format!("initial.center_r must lie in [0, radius], got {center_r}")
            });
            r.check(center_phi >= 0.0 && theta.is_none_or(|t| center_phi <= t), || {
                format!("initial.center_phi must lie in [0, theta], got {center_phi}")
            });
            r.check(width > 0.0 && width.is_finite(), || format!("initial.width must be positive, got {width}"));
            Some(InitialData::Gaussian { center_r, center_phi, width })
        }
        Some("restricted_radial") => {
            let concentration = r.float("initial", "concentration", false).unwrap_or(0.1);
            r.check(concentration > 0.0 && concentration.is_finite(), || {
                format!("initial.concentration must be positive, got {concentration}")
            });
            Some(InitialData::RestrictedRadial { concentration })
        }
        Some(other) => {
            r.problems.push(format!(
                "initial.kind must be one of constant, gaussian, restricted_radial; got `{other}`"
            ));
            None
        }
        None => None,
    };
    let signal = match r.string("initial", "signal", false).unwrap_or("zero") {
        "zero" => Some(SignalInit::Zero),
        "quasi_stationary" => Some(SignalInit::QuasiStationary),
        "constant" => match r.float("initial", "signal_value", false) {
            Some(c) if c >= 0.0 && c.is_finite() => Some(SignalInit::Constant(c)),
            Some(c) => {
                r.problems.push(format!("initial.signal_value must be nonnegative, got {c}"));
                None
            }
            None => {
                r.problems.push("initial.signal = \"constant\" needs initial.signal_value".into());
                None
            }
        },
        other => {
            r.problems.push(format!(
                "initial.signal must be one of zero, constant, quasi_stationary; got `{other}`"
            ));
            None
        }
    };

    let d = SchemeConfig::default();
    let t_end = r.float("scheme", "t_end", true);
    let scheme = SchemeConfig {
        t_end: t_end.unwrap_or(d.t_end),
        dt0: r.float("scheme", "dt0", false).unwrap_or(d.dt0),
        dt_min: r.float("scheme", "dt_min", false).unwrap_or(d.dt_min),
        dt_max: r.float("scheme", "dt_max", false).unwrap_or(d.dt_max),
        cfl_safety: r.float("scheme", "cfl_safety", false).unwrap_or(d.cfl_safety),
        linf_blowup: r.float("scheme", "linf_blowup", false).unwrap_or(d.linf_blowup),
        linear_tol: r.float("scheme", "linear_tol", false).unwrap_or(d.linear_tol),
        theta_scheme: r.float("scheme", "theta_scheme", false).unwrap_or(d.theta_scheme),
        blowup_window: r.count("scheme", "blowup_window", false).unwrap_or(d.blowup_window),
    };
    for p in scheme.problems() {
        if t_end.is_none() && matches!(p, crate::scheme::SchemeConfigError::Horizon(_)) {
            continue;
        }
        r.problems.push(format!("scheme: {p}"));
    }

    let od = OutputConfig::default();
    let output = OutputConfig {
        dir: r.string("output", "dir", false).map(PathBuf::from).unwrap_or(od.dir),
        snapshot_interval: r.float("output", "snapshot_interval", false).unwrap_or(od.snapshot_interval),
        csv_every: r.count("output", "csv_every", false).unwrap_or(od.csv_every),
    };
    let si = output.snapshot_interval;
    r.check(si >= 0.0 && si.is_finite(), || format!("output.snapshot_interval must be >= 0, got {si}"));
    let ce = output.csv_every;
    r.check(ce >= 1, || format!("output.csv_every must be at least 1, got {ce}"));

    let domain = match (theta, radius) {
        (Some(t), Some(x)) => DomainSpec::new(t, x).ok(),
        _ => None,
    };
    if !r.problems.is_empty() {
        return Err(ConfigError { problems: r.problems });
    }
    match (domain, nr, nphi, init, signal, mass) {
        (Some(domain), Some(nr), Some(nphi), Some(init), Some(signal), Some(mass)) => {
            Ok(SimConfig { domain, nr, nphi, grading, init, signal, mass, scheme, output })
        }
        _ => Err(ConfigError { problems: vec!["incomplete configuration".into()] }),
    }
}

impl SimConfig {
    pub fn mesh(&self) -> Result<Arc<SectorMesh>, GeometryError> {
        Ok(Arc::new(SectorMesh::new(self.domain, self.nr, self.nphi, self.grading)?))
    }

    pub fn initial_fields(&self, mesh: Arc<SectorMesh>) -> Result<(Field, Field), InitError> {
        initial_fields(mesh, &self.init, &self.signal, self.mass)
    }

    /// Serializes to a document that [`parse_config`] maps back to `self`.
    pub fn to_toml(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "[domain]");
        let _ = writeln!(out, "theta = {:?}", self.domain.theta());
        let _ = writeln!(out, "radius = {:?}", self.domain.radius());
        let _ = writeln!(out, "\n[mesh]");
        let _ = writeln!(out, "nr = {}", self.nr);
        let _ = writeln!(out, "nphi = {}", self.nphi);
        let _ = writeln!(out, "grading = {:?}", self.grading);
        let _ = writeln!(out, "\n[initial]");
        let _ = writeln!(out, "kind = \"{}\"", self.init.kind());
        let _ = writeln!(out, "mass = {:?}", self.mass);
        match self.init {
            InitialData::Constant => {}
            InitialData::Gaussian { center_r, center_phi, width } => {
                let _ = writeln!(out, "center_r = {center_r:?}");
                let _ = writeln!(out, "center_phi = {center_phi:?}");
                let _ = writeln!(out, "width = {width:?}");
            }
            InitialData::RestrictedRadial { concentration } => {
                let _ = writeln!(out, "concentration = {concentration:?}");
            }
        }
        match self.signal {
            SignalInit::Zero => {
                let _ = writeln!(out, "signal = \"zero\"");
            }
            SignalInit::QuasiStationary => {
                let _ = writeln!(out, "signal = \"quasi_stationary\"");
            }
            SignalInit::Constant(c) => {
                let _ = writeln!(out, "signal = \"constant\"\nsignal_value = {c:?}");
            }
        }
        let s = &self.scheme;
        let _ = writeln!(out, "\n[scheme]");
        let _ = writeln!(out, "t_end = {:?}", s.t_end);
        let _ = writeln!(out, "dt0 = {:?}", s.dt0);
        let _ = writeln!(out, "dt_min = {:?}", s.dt_min);
        let _ = writeln!(out, "dt_max = {:?}", s.dt_max);
        let _ = writeln!(out, "cfl_safety = {:?}", s.cfl_safety);
        let _ = writeln!(out, "linf_blowup = {:?}", s.linf_blowup);
        let _ = writeln!(out, "linear_tol = {:?}", s.linear_tol);
        let _ = writeln!(out, "theta_scheme = {:?}", s.theta_scheme);
        let _ = writeln!(out, "blowup_window = {}", s.blowup_window);
        let _ = writeln!(out, "\n[output]");
        let _ = writeln!(out, "dir = {}", Value::String(self.output.dir.to_string_lossy().into_owned()));
        let _ = writeln!(out, "snapshot_interval = {:?}", self.output.snapshot_interval);
        let _ = writeln!(out, "csv_every = {}", self.output.csv_every);
        out
    }
}

/// Bundled example configurations.
pub const PRESETS: &[(&str, &str)] = &[
    ("quarter_subcritical", include_str!("../../../configs/quarter_subcritical.toml")),
    ("quarter_supercritical", include_str!("../../../configs/quarter_supercritical.toml")),
];

pub fn preset(name: &str) -> Option<&'static str> {
    PRESETS.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}
