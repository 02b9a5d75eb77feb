use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use gevrey_core::error::{Error, Result};
use gevrey_core::symbols::MODEL_IDS;
use serde::de::{self, Deserializer, Visitor};
use serde::Deserialize;

/// A number or the word "auto".
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum Setting {
    #[default]
    Auto,
    Value(f64),
}

impl Setting {
    pub fn value(self) -> Option<f64> {
        match self {
            Setting::Auto => None,
            Setting::Value(v) => Some(v),
        }
    }
}

impl fmt::Display for Setting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Setting::Auto => write!(f, "\"auto\""),
            Setting::Value(v) => write!(f, "{}", num(*v)),
        }
    }
}

impl<'de> Deserialize<'de> for Setting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = Setting;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a number or \"auto\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Setting, E> {
                Ok(Setting::Value(v))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Setting, E> {
                Ok(Setting::Value(v as f64))
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Setting, E> {
                Ok(Setting::Value(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Setting, E> {
                if v == "auto" {
                    Ok(Setting::Auto)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }
        d.deserialize_any(V)
    }
}

/// Shortest round-trip form, always with a decimal point or exponent so the
/// value re-parses as a float.
fn num(v: f64) -> String {
    let s = format!("{v:?}");
    if s.contains(['.', 'e', 'E', 'n', 'N']) {
        s
    } else {
        format!("{s}.0")
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ProblemConfig {
    pub id: String,
    pub sigma: f64,
    pub c2: f64,
    pub c1: f64,
    pub c0: f64,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig { id: "kdv-baseline".into(), sigma: 0.75, c2: 0.05, c1: 0.05, c0: 0.05 }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    #[serde(rename = "L")]
    pub l: f64,
    #[serde(rename = "N")]
    pub n: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig { l: 40.0, n: 256 }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum DataKind {
    /// Spectrum e^{−ρ⟨ξ⟩^{1/θ}} with a phase shift.
    Gevrey,
    /// Gevrey envelope with seeded random phases.
    Noise,
    /// e^{−(x−shift)²}, band-limited to roundoff.
    Gaussian,
}

impl DataKind {
    fn name(self) -> &'static str {
        match self {
            DataKind::Gevrey => "gevrey",
            DataKind::Noise => "noise",
            DataKind::Gaussian => "gaussian",
        }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub kind: DataKind,
    pub m: f64,
    pub rho: f64,
    pub theta: f64,
    pub amplitude: f64,
    pub shift: f64,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig { kind: DataKind::Gevrey, m: 0.0, rho: 0.1, theta: 1.8, amplitude: 1.0, shift: 0.0 }
    }
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct WeightsConfig {
    #[serde(rename = "M2")]
    pub m2: Setting,
    #[serde(rename = "M1")]
    pub m1: Setting,
    pub h: Setting,
    pub k0: Setting,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct TimeConfig {
    #[serde(rename = "T")]
    pub horizon: f64,
    pub dt: Setting,
    pub logs: usize,
}

impl Default for TimeConfig {
    fn default() -> Self {
        TimeConfig { horizon: 1.0, dt: Setting::Auto, logs: 50 }
    }
}

#[derive(Clone, Copy, Debug, Deserialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum ForcingKind {
    None,
    /// amplitude·e^{−x²/width²}·cos(omega·t).
    GaussianCos,
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct ForcingConfig {
    pub kind: ForcingKind,
    pub amplitude: f64,
    pub width: f64,
    pub omega: f64,
}

impl Default for ForcingConfig {
    fn default() -> Self {
        ForcingConfig { kind: ForcingKind::None, amplitude: 1.0, width: 2.0, omega: 3.0 }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub inverse_tol: f64,
    pub series_tol: f64,
    pub garding_tol: f64,
    pub energy_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances { inverse_tol: 1e-8, series_tol: 1e-10, garding_tol: 1e-8, energy_tol: 1e-6 }
    }
}

#[derive(Clone, Debug, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    /// FIELD1 dump of u at the logged times.
    pub snapshots: bool,
    /// PSIDO1 dump of op(e^Λ̃).
    pub operator: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("out"), snapshots: true, operator: false }
    }
}

#[derive(Clone, Debug, Default, Deserialize, PartialEq)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub problem: ProblemConfig,
    pub grid: GridConfig,
    pub data: DataConfig,
    pub weights: WeightsConfig,
    pub time: TimeConfig,
    pub forcing: ForcingConfig,
    pub tolerances: Tolerances,
    pub output: OutputConfig,
    /// Noise phases. TOML integers are signed, so at most i64::MAX.
    pub seed: u64,
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<RunConfig> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads and validates a config; a relative output.dir is kept relative
    /// to the working directory.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        RunConfig::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !MODEL_IDS.contains(&self.problem.id.as_str()) {
            return bad(format!("unknown problem.id {:?}; known ids: {}", self.problem.id, MODEL_IDS.join(", ")));
        }
        let sigma = self.problem.sigma;
        if !(sigma > 0.5 && sigma < 1.0) {
            return bad(format!("problem.sigma must lie in (1/2, 1), got {sigma}"));
        }
        let upper = 1.0 / (2.0 * (1.0 - sigma));
        let theta = self.data.theta;
        if !(theta > 1.0 && theta < upper) {
            return bad(format!(
                "data.theta = {theta} is outside the admissible range 1 < theta < 1/(2(1 - sigma)) = {upper}"
            ));
        }
        if !(self.grid.l > 0.0 && self.grid.l.is_finite()) {
            return bad(format!("grid.L must be positive, got {}", self.grid.l));
        }
        if self.grid.n < 8 || !self.grid.n.is_multiple_of(2) {
            return bad(format!("grid.N must be even and at least 8, got {}", self.grid.n));
        }
        if !(self.time.horizon > 0.0 && self.time.horizon.is_finite()) {
            return bad(format!("time.T must be positive, got {}", self.time.horizon));
        }
        if self.time.logs == 0 {
            return bad("time.logs must be at least 1".into());
        }
        if !(self.data.rho >= 0.0 && self.data.m >= 0.0) {
            return bad(format!("data.rho and data.m must be nonnegative ({}, {})", self.data.rho, self.data.m));
        }
        for (name, s, lo) in [
            ("weights.M2", self.weights.m2, 0.0),
            ("weights.M1", self.weights.m1, 0.0),
            ("weights.h", self.weights.h, 1.0),
            ("weights.k0", self.weights.k0, 0.0),
        ] {
            if let Setting::Value(v) = s {
                if !(v >= lo && v.is_finite()) {
                    return bad(format!("{name} must be a finite number >= {lo} or \"auto\", got {v}"));
                }
            }
        }
        if let Setting::Value(dt) = self.time.dt {
            if !(dt > 0.0) {
                return bad(format!("time.dt must be positive or \"auto\", got {dt}"));
            }
        }
        let t = &self.tolerances;
        for (name, v) in [
            ("tolerances.inverse_tol", t.inverse_tol),
            ("tolerances.series_tol", t.series_tol),
            ("tolerances.garding_tol", t.garding_tol),
            ("tolerances.energy_tol", t.energy_tol),
        ] {
            if !(v > 0.0) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        Ok(())
    }

    /// Flat dotted-key form that parses back to the same config.
    pub fn to_toml(&self) -> String {
        let mut s = String::new();
        let p = &self.problem;
        let _ = writeln!(s, "problem.id = {:?}", p.id);
        let _ = writeln!(s, "problem.sigma = {}", num(p.sigma));
        let _ = writeln!(s, "problem.c2 = {}", num(p.c2));
        let _ = writeln!(s, "problem.c1 = {}", num(p.c1));
        let _ = writeln!(s, "problem.c0 = {}", num(p.c0));
        let _ = writeln!(s, "grid.L = {}", num(self.grid.l));
        let _ = writeln!(s, "grid.N = {}", self.grid.n);
        let d = &self.data;
        let _ = writeln!(s, "data.kind = {:?}", d.kind.name());
        let _ = writeln!(s, "data.m = {}", num(d.m));
        let _ = writeln!(s, "data.rho = {}", num(d.rho));
        let _ = writeln!(s, "data.theta = {}", num(d.theta));
        let _ = writeln!(s, "data.amplitude = {}", num(d.amplitude));
        let _ = writeln!(s, "data.shift = {}", num(d.shift));
        let w = &self.weights;
        let _ = writeln!(s, "weights.M2 = {}", w.m2);
        let _ = writeln!(s, "weights.M1 = {}", w.m1);
        let _ = writeln!(s, "weights.h = {}", w.h);
        let _ = writeln!(s, "weights.k0 = {}", w.k0);
        let _ = writeln!(s, "time.T = {}", num(self.time.horizon));
        let _ = writeln!(s, "time.dt = {}", self.time.dt);
        let _ = writeln!(s, "time.logs = {}", self.time.logs);
        let f = &self.forcing;
        let kind = match f.kind {
            ForcingKind::None => "none",
            ForcingKind::GaussianCos => "gaussian-cos",
        };
        let _ = writeln!(s, "forcing.kind = {kind:?}");
        let _ = writeln!(s, "forcing.amplitude = {}", num(f.amplitude));
        let _ = writeln!(s, "forcing.width = {}", num(f.width));
        let _ = writeln!(s, "forcing.omega = {}", num(f.omega));
        let t = &self.tolerances;
        let _ = writeln!(s, "tolerances.inverse_tol = {}", num(t.inverse_tol));
        let _ = writeln!(s, "tolerances.series_tol = {}", num(t.series_tol));
        let _ = writeln!(s, "tolerances.garding_tol = {}", num(t.garding_tol));
        let _ = writeln!(s, "tolerances.energy_tol = {}", num(t.energy_tol));
        let _ = writeln!(s, "output.dir = {:?}", self.output.dir.display().to_string());
        let _ = writeln!(s, "output.snapshots = {}", self.output.snapshots);
        let _ = writeln!(s, "output.operator = {}", self.output.operator);
        let _ = writeln!(s, "seed = {}", self.seed);
        s
    }
}

/// Sweep axes and the config field each one sets.
pub const AXES: [&str; 9] = ["theta", "sigma", "h", "M2", "M1", "N", "dt", "c2", "c1"];

impl RunConfig {
    /// Copy of `self` with one sweep axis set to `value`.
    pub fn with_axis(&self, axis: &str, value: f64) -> Result<RunConfig> {
        let mut c = self.clone();
        match axis {
            "theta" => c.data.theta = value,
            "sigma" => c.problem.sigma = value,
            "h" => c.weights.h = Setting::Value(value),
            "M2" => c.weights.m2 = Setting::Value(value),
            "M1" => c.weights.m1 = Setting::Value(value),
            "N" => {
                if !(value >= 1.0 && value.fract() == 0.0) {
                    return Err(Error::Config(format!("N must be a positive integer, got {value}")));
                }
                c.grid.n = value as usize
            }
            "dt" => c.time.dt = Setting::Value(value),
            "c2" => c.problem.c2 = value,
            "c1" => c.problem.c1 = value,
            other => {
                return Err(Error::Config(format!("unknown sweep axis {other:?}; axes: {}", AXES.join(", "))))
            }
        }
        Ok(c)
    }
}

/// Parses a comma-separated list of numbers.
pub fn parse_values(list: &str) -> Result<Vec<f64>> {
    let values: Vec<f64> = list
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|e| Error::Config(format!("bad sweep value {s:?}: {e}"))))
        .collect::<Result<_>>()?;
    if values.is_empty() {
        return Err(Error::Config("sweep needs at least one value".into()));
    }
    Ok(values)
}
