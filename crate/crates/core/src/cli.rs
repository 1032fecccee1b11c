//! Config-driven front end: run files, pipelines, CSV grids, validation
//! reports and plot scripts.
//!
//! A run file is a list of `key = value` lines grouped under `[section]`
//! headers; `#` starts a comment. Keys before the first header belong to the
//! top level (`command`, `label`).

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::hyperelliptic::{BranchPointList, Involution, SheetPoint, Surface};
use crate::quadrature::{chebyshev_diff_matrix, clenshaw_curtis_rule};
use crate::solutions::{
    ds_assemble, ds_grid, ds_pde_residual, materialize_d, nls_assemble, nls_grid, nls_pde_residual,
    Axis, DsSpec, DsVariant, FieldGrid, NlsSpec, NodeKind, PdeResidual,
};
use crate::theta::{direct_sum, Characteristic, ThetaSeries};
use crate::vinnikov::{
    mcurve_characteristic, reality_matrix_from_riemann, search_transform, IMat, IngestedPeriods,
    RealityMatrix, SymplecticMatrix, VinnikovTransform,
};
use crate::{CMat, CVec, C64};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error(transparent)]
    Numeric(#[from] crate::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numeric(_) => 3,
            CliError::Io(_) => 1,
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn cfg_err<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Config(msg.into()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Periods,
    ThetaEval,
    SolveNls,
    SolveDs,
    TransformBasis,
    Validate,
}

impl Command {
    pub fn parse(s: &str) -> CliResult<Self> {
        Ok(match s.trim() {
            "periods" => Self::Periods,
            "theta-eval" => Self::ThetaEval,
            "solve-nls" => Self::SolveNls,
            "solve-ds" => Self::SolveDs,
            "transform-basis" => Self::TransformBasis,
            "validate" => Self::Validate,
            other => return cfg_err(format!("unknown command '{other}'")),
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Periods => "periods",
            Self::ThetaEval => "theta-eval",
            Self::SolveNls => "solve-nls",
            Self::SolveDs => "solve-ds",
            Self::TransformBasis => "transform-basis",
            Self::Validate => "validate",
        }
    }
}

// ---------------------------------------------------------------- parsing

/// Parse `1.5`, `-2i`, `i`, `-1.5+2i`, `1e-10-3.5e-2i`.
pub fn parse_complex(s: &str) -> CliResult<C64> {
    let t: String = s.chars().filter(|c| !c.is_whitespace()).collect();
    let bad = || CliError::Config(format!("bad complex number '{s}'"));
    if t.is_empty() {
        return Err(bad());
    }
    let Some(body) = t.strip_suffix('i') else {
        return t
            .parse::<f64>()
            .map(|v| C64::new(v, 0.0))
            .map_err(|_| bad());
    };
    // split before the last sign that is not an exponent sign
    let bytes = body.as_bytes();
    let split = (1..bytes.len())
        .rev()
        .find(|&k| (bytes[k] == b'+' || bytes[k] == b'-') && !matches!(bytes[k - 1], b'e' | b'E'));
    let imag = |x: &str| -> CliResult<f64> {
        match x {
            "" | "+" => Ok(1.0),
            "-" => Ok(-1.0),
            v => v.parse::<f64>().map_err(|_| bad()),
        }
    };
    match split {
        Some(k) => {
            let re = body[..k].parse::<f64>().map_err(|_| bad())?;
            Ok(C64::new(re, imag(&body[k..])?))
        }
        None => Ok(C64::new(0.0, imag(body)?)),
    }
}

fn parse_f64(s: &str, key: &str) -> CliResult<f64> {
    s.trim()
        .parse()
        .or_else(|_| cfg_err(format!("{key}: '{s}' is not a number")))
}

fn split_list(s: &str) -> impl Iterator<Item = &str> {
    s.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|t| !t.is_empty())
}

fn parse_reals(s: &str, key: &str) -> CliResult<Vec<f64>> {
    split_list(s).map(|t| parse_f64(t, key)).collect()
}

fn parse_ints(s: &str, key: &str) -> CliResult<Vec<i64>> {
    split_list(s)
        .map(|t| {
            t.parse::<i64>()
                .or_else(|_| cfg_err(format!("{key}: '{t}' is not an integer")))
        })
        .collect()
}

/// `1 0 ; 0 1` → vectors separated by `;`.
fn parse_int_rows(s: &str, key: &str) -> CliResult<Vec<Vec<i64>>> {
    s.split(';').map(|r| parse_ints(r, key)).collect()
}

fn parse_complex_list(s: &str) -> CliResult<Vec<C64>> {
    s.split(',')
        .filter(|t| !t.trim().is_empty())
        .map(parse_complex)
        .collect()
}

/// `-1.9 @ 1` (λ and sheet label).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointSpec {
    pub lambda: C64,
    pub sheet: u8,
}

impl PointSpec {
    pub fn parse(s: &str) -> CliResult<Self> {
        let Some((l, sh)) = s.split_once('@') else {
            return cfg_err(format!("point '{s}' needs a sheet label: λ @ 1|2"));
        };
        let sheet = match sh.trim() {
            "1" => 1,
            "2" => 2,
            other => return cfg_err(format!("sheet label must be 1 or 2, got '{other}'")),
        };
        Ok(Self {
            lambda: parse_complex(l)?,
            sheet,
        })
    }

    fn on(&self, s: &Surface) -> CliResult<SheetPoint> {
        Ok(s.point(self.lambda, self.sheet)?)
    }
}

impl std::fmt::Display for PointSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({})^{}", fmt_c(self.lambda), self.sheet)
    }
}

fn parse_characteristic(s: &str, key: &str) -> CliResult<Characteristic> {
    let rows = parse_int_rows(s, key)?;
    if rows.len() != 2
        || rows[0].len() != rows[1].len()
        || rows.iter().flatten().any(|&v| v != 0 && v != 1)
    {
        return cfg_err(format!(
            "{key}: expected two 0/1 rows of equal length separated by ';'"
        ));
    }
    let bits = |r: &[i64]| r.iter().map(|&v| v as u8).collect();
    Ok(Characteristic::new(bits(&rows[0]), bits(&rows[1])))
}

fn parse_axis(s: &str, key: &str) -> CliResult<Axis> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if parts.len() < 3 || parts.len() > 4 {
        return cfg_err(format!(
            "{key}: axis is 'lo, hi, count[, chebyshev|uniform]'"
        ));
    }
    let lo = parse_f64(parts[0], key)?;
    let hi = parse_f64(parts[1], key)?;
    let count = parts[2]
        .parse::<usize>()
        .or_else(|_| cfg_err(format!("{key}: bad node count '{}'", parts[2])))?;
    let kind = match parts.get(3).copied().unwrap_or("chebyshev") {
        "chebyshev" => NodeKind::Chebyshev,
        "uniform" => NodeKind::Uniform,
        other => return cfg_err(format!("{key}: unknown node type '{other}'")),
    };
    if !(hi > lo) || count == 0 {
        return cfg_err(format!("{key}: need lo < hi and count ≥ 1"));
    }
    Ok(Axis {
        lo,
        hi,
        count,
        kind,
    })
}

fn parse_involution(s: &str) -> CliResult<Involution> {
    match s.trim() {
        "tau1" => Ok(Involution::Tau1),
        "tau2" => Ok(Involution::Tau2),
        other => cfg_err(format!("involution must be tau1 or tau2, got '{other}'")),
    }
}

fn involution_name(t: Involution) -> &'static str {
    match t {
        Involution::Tau1 => "tau1",
        Involution::Tau2 => "tau2",
    }
}

/// Raw `section → [(key, value)]` view; repeated keys keep their order.
#[derive(Debug, Default)]
struct RawConfig {
    sections: BTreeMap<String, Vec<(String, String)>>,
}

impl RawConfig {
    fn parse(text: &str) -> CliResult<Self> {
        let mut out = RawConfig::default();
        let mut section = String::new();
        for (no, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let Some(name) = name.strip_suffix(']') else {
                    return cfg_err(format!("line {}: unterminated section header", no + 1));
                };
                section = name.trim().to_string();
                if !KNOWN_SECTIONS.contains(&section.as_str()) {
                    return cfg_err(format!("line {}: unknown section [{section}]", no + 1));
                }
                out.sections.entry(section.clone()).or_default();
                continue;
            }
            let Some((k, v)) = line.split_once('=') else {
                return cfg_err(format!("line {}: expected 'key = value'", no + 1));
            };
            out.sections
                .entry(section.clone())
                .or_default()
                .push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(out)
    }

    fn has(&self, section: &str) -> bool {
        self.sections.contains_key(section)
    }

    fn all(&self, section: &str, key: &str) -> Vec<&str> {
        self.sections
            .get(section)
            .map(|v| {
                v.iter()
                    .filter(|(k, _)| k == key)
                    .map(|(_, v)| v.as_str())
                    .collect()
            })
            .unwrap_or_default()
    }

    fn get(&self, section: &str, key: &str) -> CliResult<Option<&str>> {
        let v = self.all(section, key);
        match v.len() {
            0 => Ok(None),
            1 => Ok(Some(v[0])),
            _ => cfg_err(format!("[{section}] {key} given more than once")),
        }
    }

    fn check_keys(&self, section: &str, allowed: &[&str]) -> CliResult<()> {
        for (k, _) in self
            .sections
            .get(section)
            .map(|v| v.as_slice())
            .unwrap_or(&[])
        {
            if !allowed.contains(&k.as_str()) {
                let name = if section.is_empty() {
                    "top level"
                } else {
                    section
                };
                return cfg_err(format!("unknown key '{k}' in [{name}]"));
            }
        }
        Ok(())
    }
}

const KNOWN_SECTIONS: [&str; 8] = [
    "curve",
    "solution",
    "grid",
    "residual",
    "numerics",
    "output",
    "theta",
    "transform",
];

#[derive(Debug, Clone)]
pub enum CurveSource {
    BranchPoints {
        points: Vec<C64>,
        sigma0: f64,
        involution: Option<Involution>,
    },
    PeriodFile(PathBuf),
}

#[derive(Debug, Clone)]
pub struct SolutionConfig {
    pub variant: Option<DsVariant>,
    pub involution: Option<Involution>,
    /// NLS points a_1 … a_{n+1}
    pub points: Vec<PointSpec>,
    pub a: Option<PointSpec>,
    pub b: Option<PointSpec>,
    /// d = 𝔹δ₁ + 2πiδ₂ + offset
    pub half: Option<Characteristic>,
    pub d_offset: Vec<f64>,
    pub theta: f64,
    pub h: f64,
    pub kappa1: C64,
    pub kappa2: f64,
    pub kappa_tilde1: f64,
    pub gamma_free: Vec<f64>,
    pub alpha: Vec<i64>,
    pub m: Vec<Vec<i64>>,
    pub n: Vec<i64>,
}

impl Default for SolutionConfig {
    fn default() -> Self {
        Self {
            variant: None,
            involution: None,
            points: Vec::new(),
            a: None,
            b: None,
            half: None,
            d_offset: Vec::new(),
            theta: 0.0,
            h: 0.0,
            kappa1: C64::new(1.0, 0.0),
            kappa2: 1.0,
            kappa_tilde1: 1.0,
            gamma_free: Vec::new(),
            alpha: Vec::new(),
            m: Vec::new(),
            n: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct GridConfig {
    pub x: Option<Axis>,
    pub y: Option<Axis>,
    /// NLS time axis
    pub t: Option<Axis>,
    /// DS time slices
    pub times: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct ResidualConfig {
    pub x: Option<Axis>,
    pub y: Option<Axis>,
    pub t: Option<Axis>,
    pub t0: f64,
    pub gate: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct NumericsConfig {
    pub nc: usize,
    pub eps: f64,
    pub gate: f64,
    pub budget: i64,
    pub samples: usize,
    pub seed: u64,
}

impl Default for NumericsConfig {
    fn default() -> Self {
        Self {
            nc: 128,
            eps: 1e-16,
            gate: 1e-6,
            budget: 2,
            samples: 20,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OutputConfig {
    pub csv: String,
    pub report: String,
    pub plot: String,
    /// also draw Re/Im panels
    pub parts: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            csv: "field.csv".into(),
            report: "report.txt".into(),
            plot: "plot.py".into(),
            parts: false,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ThetaConfig {
    pub z: Vec<Vec<C64>>,
    pub characteristic: Option<Characteristic>,
}

/// Optional explicit quadruple; skips the search when present.
#[derive(Debug, Clone, Default)]
pub struct TransformConfig {
    pub blocks: Option<[Vec<Vec<i64>>; 4]>,
}

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub command: Command,
    pub label: String,
    pub curve: CurveSource,
    pub solution: Option<SolutionConfig>,
    pub grid: GridConfig,
    pub residual: Option<ResidualConfig>,
    pub numerics: NumericsConfig,
    pub output: OutputConfig,
    pub theta: ThetaConfig,
    pub transform: TransformConfig,
}

impl RunConfig {
    /// Parse run-file text; relative period paths resolve against `base`.
    pub fn parse(text: &str, base: &Path) -> CliResult<Self> {
        let raw = RawConfig::parse(text)?;
        raw.check_keys("", &["command", "label"])?;
        raw.check_keys(
            "curve",
            &["branch_points", "sigma0", "involution", "periods"],
        )?;
        raw.check_keys(
            "solution",
            &[
                "variant",
                "involution",
                "point",
                "a",
                "b",
                "half",
                "d_offset",
                "theta",
                "h",
                "kappa1",
                "kappa2",
                "kappa_tilde1",
                "gamma_free",
                "alpha",
                "m",
                "n",
            ],
        )?;
        raw.check_keys("grid", &["x", "y", "t", "times"])?;
        raw.check_keys("residual", &["x", "y", "t", "t0", "gate"])?;
        raw.check_keys(
            "numerics",
            &["nc", "eps", "gate", "budget", "samples", "seed"],
        )?;
        raw.check_keys("output", &["csv", "report", "plot", "parts"])?;
        raw.check_keys("theta", &["z", "characteristic"])?;
        raw.check_keys("transform", &["a", "b", "c", "d"])?;

        let command = match raw.get("", "command")? {
            Some(c) => Command::parse(c)?,
            None => return cfg_err("missing 'command'"),
        };
        let label = raw.get("", "label")?.unwrap_or("run").to_string();

        let bp = raw.get("curve", "branch_points")?;
        let pf = raw.get("curve", "periods")?;
        let curve = match (bp, pf) {
            (Some(_), Some(_)) => {
                return cfg_err("[curve] needs branch_points or periods, not both")
            }
            (None, None) => return cfg_err("[curve] needs branch_points or periods"),
            (Some(list), None) => CurveSource::BranchPoints {
                points: parse_complex_list(list)?,
                sigma0: raw
                    .get("curve", "sigma0")?
                    .map(|v| parse_f64(v, "sigma0"))
                    .transpose()?
                    .unwrap_or(1.0),
                involution: raw
                    .get("curve", "involution")?
                    .map(parse_involution)
                    .transpose()?,
            },
            (None, Some(p)) => {
                let p = Path::new(p);
                CurveSource::PeriodFile(if p.is_absolute() {
                    p.to_path_buf()
                } else {
                    base.join(p)
                })
            }
        };

        let solution = if raw.has("solution") {
            let sec = "solution";
            let real = |k: &str, dflt: f64| -> CliResult<f64> {
                Ok(raw
                    .get(sec, k)?
                    .map(|v| parse_f64(v, k))
                    .transpose()?
                    .unwrap_or(dflt))
            };
            let point = |k: &str| -> CliResult<Option<PointSpec>> {
                raw.get(sec, k)?.map(PointSpec::parse).transpose()
            };
            Some(SolutionConfig {
                variant: raw
                    .get(sec, "variant")?
                    .map(|v| DsVariant::parse(v))
                    .transpose()?,
                involution: raw
                    .get(sec, "involution")?
                    .map(parse_involution)
                    .transpose()?,
                points: raw
                    .all(sec, "point")
                    .into_iter()
                    .map(PointSpec::parse)
                    .collect::<CliResult<_>>()?,
                a: point("a")?,
                b: point("b")?,
                half: raw
                    .get(sec, "half")?
                    .map(|v| parse_characteristic(v, "half"))
                    .transpose()?,
                d_offset: raw
                    .get(sec, "d_offset")?
                    .map(|v| parse_reals(v, "d_offset"))
                    .transpose()?
                    .unwrap_or_default(),
                theta: real("theta", 0.0)?,
                h: real("h", 0.0)?,
                kappa1: raw
                    .get(sec, "kappa1")?
                    .map(parse_complex)
                    .transpose()?
                    .unwrap_or(C64::new(1.0, 0.0)),
                kappa2: real("kappa2", 1.0)?,
                kappa_tilde1: real("kappa_tilde1", 1.0)?,
                gamma_free: raw
                    .get(sec, "gamma_free")?
                    .map(|v| parse_reals(v, "gamma_free"))
                    .transpose()?
                    .unwrap_or_default(),
                alpha: raw
                    .get(sec, "alpha")?
                    .map(|v| parse_ints(v, "alpha"))
                    .transpose()?
                    .unwrap_or_default(),
                m: raw
                    .get(sec, "m")?
                    .map(|v| parse_int_rows(v, "m"))
                    .transpose()?
                    .unwrap_or_default(),
                n: raw
                    .get(sec, "n")?
                    .map(|v| parse_ints(v, "n"))
                    .transpose()?
                    .unwrap_or_default(),
            })
        } else {
            None
        };

        let axis = |sec: &str, k: &str| -> CliResult<Option<Axis>> {
            raw.get(sec, k)?
                .map(|v| parse_axis(v, &format!("[{sec}] {k}")))
                .transpose()
        };
        let grid = GridConfig {
            x: axis("grid", "x")?,
            y: axis("grid", "y")?,
            t: axis("grid", "t")?,
            times: raw
                .get("grid", "times")?
                .map(|v| parse_reals(v, "times"))
                .transpose()?
                .unwrap_or_else(|| vec![0.0]),
        };
        let residual = if raw.has("residual") {
            Some(ResidualConfig {
                x: axis("residual", "x")?,
                y: axis("residual", "y")?,
                t: axis("residual", "t")?,
                t0: raw
                    .get("residual", "t0")?
                    .map(|v| parse_f64(v, "t0"))
                    .transpose()?
                    .unwrap_or(0.0),
                gate: raw
                    .get("residual", "gate")?
                    .map(|v| parse_f64(v, "gate"))
                    .transpose()?,
            })
        } else {
            None
        };

        let mut numerics = NumericsConfig::default();
        if let Some(v) = raw.get("numerics", "nc")? {
            numerics.nc = v
                .parse()
                .or_else(|_| cfg_err("nc must be a positive integer"))?;
        }
        if let Some(v) = raw.get("numerics", "eps")? {
            numerics.eps = parse_f64(v, "eps")?;
        }
        if let Some(v) = raw.get("numerics", "gate")? {
            numerics.gate = parse_f64(v, "gate")?;
        }
        if let Some(v) = raw.get("numerics", "budget")? {
            numerics.budget = v
                .parse()
                .or_else(|_| cfg_err("budget must be an integer"))?;
        }
        if let Some(v) = raw.get("numerics", "samples")? {
            numerics.samples = v
                .parse()
                .or_else(|_| cfg_err("samples must be an integer"))?;
        }
        if let Some(v) = raw.get("numerics", "seed")? {
            numerics.seed = v.parse().or_else(|_| cfg_err("seed must be an integer"))?;
        }

        let mut output = OutputConfig::default();
        for (k, slot) in [
            ("csv", &mut output.csv),
            ("report", &mut output.report),
            ("plot", &mut output.plot),
        ] {
            if let Some(v) = raw.get("output", k)? {
                *slot = v.to_string();
            }
        }
        if let Some(v) = raw.get("output", "parts")? {
            output.parts = match v {
                "abs2" => false,
                "all" => true,
                other => return cfg_err(format!("parts must be abs2 or all, got '{other}'")),
            };
        }

        let theta = ThetaConfig {
            z: raw
                .all("theta", "z")
                .into_iter()
                .map(parse_complex_list)
                .collect::<CliResult<_>>()?,
            characteristic: raw
                .get("theta", "characteristic")?
                .map(|v| parse_characteristic(v, "characteristic"))
                .transpose()?,
        };

        let blocks = ["a", "b", "c", "d"]
            .iter()
            .map(|k| {
                raw.get("transform", k)
                    .map(|v| v.map(|v| parse_int_rows(v, k)))
            })
            .collect::<CliResult<Vec<_>>>()?;
        let transform = match blocks.iter().filter(|b| b.is_some()).count() {
            0 => TransformConfig::default(),
            4 => {
                let mut it = blocks.into_iter().map(|b| b.expect("counted"));
                TransformConfig {
                    blocks: Some([
                        it.next().unwrap()?,
                        it.next().unwrap()?,
                        it.next().unwrap()?,
                        it.next().unwrap()?,
                    ]),
                }
            }
            _ => return cfg_err("[transform] needs all of a, b, c, d"),
        };

        let cfg = RunConfig {
            command,
            label,
            curve,
            solution,
            grid,
            residual,
            numerics,
            output,
            theta,
            transform,
        };
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn check(&self) -> CliResult<()> {
        if !(self.numerics.gate > 0.0) {
            return cfg_err("gate must be positive");
        }
        if !(self.numerics.eps > 0.0 && self.numerics.eps < 1.0) {
            return cfg_err("eps must lie in (0, 1)");
        }
        if self.numerics.nc < 2 {
            return cfg_err("nc must be at least 2");
        }
        let needs_branch = matches!(
            self.command,
            Command::SolveNls | Command::SolveDs | Command::ThetaEval
        );
        if needs_branch
            && matches!(self.curve, CurveSource::PeriodFile(_))
            && self.command != Command::ThetaEval
        {
            return cfg_err(format!(
                "{} needs a branch-point curve",
                self.command.name()
            ));
        }
        match self.command {
            Command::SolveDs => {
                let s = self
                    .solution
                    .as_ref()
                    .map_or_else(|| cfg_err("solve-ds needs a [solution] section"), Ok)?;
                if s.variant.is_none() || s.a.is_none() || s.b.is_none() {
                    return cfg_err("solve-ds needs variant, a and b");
                }
                if self.grid.x.is_none() || self.grid.y.is_none() {
                    return cfg_err("solve-ds needs [grid] x and y axes");
                }
            }
            Command::SolveNls => {
                let s = self
                    .solution
                    .as_ref()
                    .map_or_else(|| cfg_err("solve-nls needs a [solution] section"), Ok)?;
                if s.points.len() < 2 {
                    return cfg_err("solve-nls needs at least two 'point' entries");
                }
                if self.grid.x.is_none() || self.grid.t.is_none() {
                    return cfg_err("solve-nls needs [grid] x and t axes");
                }
            }
            Command::ThetaEval if self.theta.z.is_empty() => {
                return cfg_err("theta-eval needs at least one [theta] z")
            }
            _ => {}
        }
        Ok(())
    }
}

// ---------------------------------------------------------------- reports

#[derive(Debug, Clone)]
pub struct Check {
    pub name: String,
    pub value: f64,
    pub limit: f64,
    pub passed: bool,
}

/// Structured text report; written whether or not the checks pass.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub command: String,
    pub label: String,
    pub info: Vec<(String, String)>,
    pub checks: Vec<Check>,
    pub blocks: Vec<(String, String)>,
}

impl ValidationReport {
    fn new(cfg: &RunConfig) -> Self {
        Self {
            command: cfg.command.name().into(),
            label: cfg.label.clone(),
            ..Default::default()
        }
    }

    pub fn info(&mut self, key: &str, value: impl ToString) {
        self.info.push((key.into(), value.to_string()));
    }

    /// Passes when `value < limit` (NaN fails).
    pub fn check_below(&mut self, name: &str, value: f64, limit: f64) {
        self.checks.push(Check {
            name: name.into(),
            value,
            limit,
            passed: value < limit,
        });
    }

    pub fn check_flag(&mut self, name: &str, ok: bool) {
        self.checks.push(Check {
            name: name.into(),
            value: if ok { 0.0 } else { 1.0 },
            limit: 0.5,
            passed: ok,
        });
    }

    pub fn block(&mut self, title: &str, body: String) {
        self.blocks.push((title.into(), body));
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "command = {}", self.command);
        let _ = writeln!(s, "label = {}", self.label);
        for (k, v) in &self.info {
            let _ = writeln!(s, "{k} = {v}");
        }
        for (title, body) in &self.blocks {
            let _ = writeln!(s, "\n[{title}]\n{}", body.trim_end());
        }
        let _ = writeln!(s, "\n[checks]");
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            let _ = writeln!(
                s,
                "{tag} {:<40} value={:.3e} limit={:.3e}",
                c.name, c.value, c.limit
            );
        }
        let _ = writeln!(
            s,
            "\nresult = {}",
            if self.passed() { "PASS" } else { "FAIL" }
        );
        s
    }
}

// ---------------------------------------------------------------- CSV

fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

fn fmt_c(z: C64) -> String {
    if z.im == 0.0 {
        format!("{}", z.re)
    } else {
        format!("{}{:+}i", z.re, z.im)
    }
}

fn fmt_cvec(v: &CVec) -> String {
    v.iter()
        .map(|z| format!("{:.16e}{:+.16e}i", z.re, z.im))
        .collect::<Vec<_>>()
        .join(" ")
}

fn fmt_cmat(m: &CMat) -> String {
    let mut s = String::new();
    for i in 0..m.nrows() {
        let row: Vec<String> = (0..m.ncols())
            .map(|j| format!("{:+.16e}{:+.16e}i", m[(i, j)].re, m[(i, j)].im))
            .collect();
        let _ = writeln!(s, "{}", row.join("  "));
    }
    s
}

pub fn grid_columns(grid: &FieldGrid) -> Vec<String> {
    let mut cols = grid.axis_names.clone();
    for j in 1..=grid.components() {
        cols.extend([
            format!("re_psi{j}"),
            format!("im_psi{j}"),
            format!("abs2_psi{j}"),
        ]);
    }
    if grid.phi.is_some() {
        cols.push("phi".into());
    }
    cols
}

/// CSV with `# key=value` metadata, a `# columns=` line, then one row per
/// sample in row-major order (17 significant digits, NaN at poles).
pub fn emit_grid(grid: &FieldGrid, meta: &[(String, String)], path: &Path) -> std::io::Result<()> {
    let mut s = String::new();
    for (k, v) in meta {
        let _ = writeln!(s, "# {k}={}", v.replace('\n', " "));
    }
    let _ = writeln!(s, "# columns={}", grid_columns(grid).join(","));
    for idx in 0..grid.len() {
        let mut row: Vec<String> = grid.point(idx).into_iter().map(fmt_f).collect();
        for p in &grid.psi[idx] {
            row.extend([fmt_f(p.re), fmt_f(p.im), fmt_f(p.norm_sqr())]);
        }
        if let Some(phi) = &grid.phi {
            row.push(fmt_f(phi[idx]));
        }
        let _ = writeln!(s, "{}", row.join(","));
    }
    fs::write(path, s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CsvTable {
    pub meta: Vec<(String, String)>,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl CsvTable {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

pub fn read_grid(path: &Path) -> CliResult<CsvTable> {
    let text = fs::read_to_string(path)?;
    let mut table = CsvTable {
        meta: Vec::new(),
        columns: Vec::new(),
        rows: Vec::new(),
    };
    for line in text.lines() {
        if let Some(m) = line.strip_prefix("# ") {
            let (k, v) = m.split_once('=').unwrap_or((m, ""));
            if k == "columns" {
                table.columns = v.split(',').map(String::from).collect();
            } else {
                table.meta.push((k.into(), v.into()));
            }
        } else if !line.is_empty() {
            let row = line
                .split(',')
                .map(|t| parse_f64(t, "csv"))
                .collect::<CliResult<Vec<_>>>()?;
            if row.len() != table.columns.len() {
                return cfg_err(format!(
                    "csv row has {} fields, header lists {}",
                    row.len(),
                    table.columns.len()
                ));
            }
            table.rows.push(row);
        }
    }
    Ok(table)
}

// ---------------------------------------------------------------- plots

/// Self-contained matplotlib script rendering |ψ_j|² surfaces from the CSV
/// next to it: one panel per time slice for DS, one per component for NLS.
pub fn emit_plot_script(
    grid: &FieldGrid,
    csv_name: &str,
    parts: bool,
    path: &Path,
) -> std::io::Result<()> {
    let shape: Vec<String> = grid.coords.iter().map(|c| c.len().to_string()).collect();
    let axes: Vec<String> = grid.axis_names.iter().map(|a| format!("\"{a}\"")).collect();
    let ds = grid.phi.is_some();
    let script = format!(
        r##"#!/usr/bin/env python3
import os
import numpy as np
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))
CSV = os.path.join(HERE, "{csv}")
SHAPE = ({shape},)
AXES = [{axes}]
COMPONENTS = {n}
DS = {ds}
PARTS = {parts}

data = np.genfromtxt(CSV, delimiter=",", comments="#").reshape(-1, len(AXES) + 3 * COMPONENTS + (1 if DS else 0))
coords = [np.unique(data[:, k]) for k in range(len(AXES))]


def field(j, part):
    col = len(AXES) + 3 * j + {{"re": 0, "im": 1, "abs2": 2}}[part]
    return data[:, col].reshape(SHAPE)


def surface(ax, u, v, w, title, labels):
    U, V = np.meshgrid(u, v, indexing="ij")
    ax.plot_surface(U, V, w, cmap="viridis", linewidth=0, antialiased=True)
    ax.set_xlabel(labels[0])
    ax.set_ylabel(labels[1])
    ax.set_title(title)


kinds = ["abs2", "re", "im"] if PARTS else ["abs2"]
names = {{"abs2": "|psi{{}}|^2", "re": "Re psi{{}}", "im": "Im psi{{}}"}}
if DS:
    times = coords[0]
    fig = plt.figure(figsize=(5 * len(times), 4.5 * len(kinds)))
    for r, kind in enumerate(kinds):
        w = field(0, kind)
        for k, t in enumerate(times):
            ax = fig.add_subplot(len(kinds), len(times), r * len(times) + k + 1, projection="3d")
            surface(ax, coords[1], coords[2], w[k], names[kind].format("") + " at t = %g" % t, AXES[1:])
else:
    fig = plt.figure(figsize=(5 * COMPONENTS, 4.5 * len(kinds)))
    for r, kind in enumerate(kinds):
        for j in range(COMPONENTS):
            ax = fig.add_subplot(len(kinds), COMPONENTS, r * COMPONENTS + j + 1, projection="3d")
            surface(ax, coords[0], coords[1], field(j, kind), names[kind].format(j + 1), AXES)
fig.tight_layout()
fig.savefig(os.path.splitext(os.path.abspath(__file__))[0] + ".png", dpi=120)
"##,
        csv = csv_name,
        shape = shape.join(", "),
        axes = axes.join(", "),
        n = grid.components(),
        ds = if ds { "True" } else { "False" },
        parts = if parts { "True" } else { "False" },
    );
    fs::write(path, script)
}

// ---------------------------------------------------------------- running

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out: PathBuf,
    pub gate: Option<f64>,
    pub plot: bool,
    pub nc: Option<usize>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub report: ValidationReport,
    pub files: Vec<PathBuf>,
    /// short human summary for stdout
    pub summary: String,
}

impl RunOutcome {
    /// 0 when every check passes, 4 otherwise.
    pub fn exit_code(&self) -> i32 {
        if self.report.passed() {
            0
        } else {
            4
        }
    }
}

/// In-memory result of a solve command.
#[derive(Debug, Clone)]
pub struct Solved {
    pub grid: FieldGrid,
    pub pde: Option<PdeResidual>,
    pub genus: usize,
    /// DS background |A|, or |A_j| per NLS component
    pub amplitude: Vec<f64>,
    pub meta: Vec<(String, String)>,
    pub grid_seconds: f64,
    pub pde_seconds: f64,
}

/// Run a solve command without writing anything.
pub fn solve(cfg: &RunConfig, opts: &RunOptions) -> CliResult<(Solved, ValidationReport)> {
    let mut ctx = Ctx::new(cfg, opts);
    let solved = match cfg.command {
        Command::SolveDs => cmd_ds(&mut ctx)?,
        Command::SolveNls => cmd_nls(&mut ctx)?,
        other => return cfg_err(format!("{} is not a solve command", other.name())),
    };
    Ok((solved, ctx.report))
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    opts: &'a RunOptions,
    gate: f64,
    nc: usize,
    report: ValidationReport,
    files: Vec<PathBuf>,
    summary: String,
}

pub fn run(cfg: &RunConfig, opts: &RunOptions) -> CliResult<RunOutcome> {
    let mut ctx = Ctx::new(cfg, opts);
    fs::create_dir_all(&opts.out)?;
    match cfg.command {
        Command::Periods => cmd_periods(&mut ctx)?,
        Command::ThetaEval => cmd_theta(&mut ctx)?,
        Command::SolveNls => {
            let s = cmd_nls(&mut ctx)?;
            ctx.write_grid(&s.grid, s.meta)?;
        }
        Command::SolveDs => {
            let s = cmd_ds(&mut ctx)?;
            ctx.write_grid(&s.grid, s.meta)?;
        }
        Command::TransformBasis => cmd_transform(&mut ctx)?,
        Command::Validate => cmd_validate(&mut ctx)?,
    }
    let path = opts.out.join(&cfg.output.report);
    fs::write(&path, ctx.report.render())?;
    ctx.files.push(path);
    Ok(RunOutcome {
        report: ctx.report,
        files: ctx.files,
        summary: ctx.summary,
    })
}

impl<'a> Ctx<'a> {
    fn new(cfg: &'a RunConfig, opts: &'a RunOptions) -> Self {
        let mut ctx = Ctx {
            cfg,
            opts,
            gate: opts.gate.unwrap_or(cfg.numerics.gate),
            nc: opts.nc.unwrap_or(cfg.numerics.nc),
            report: ValidationReport::new(cfg),
            files: Vec::new(),
            summary: String::new(),
        };
        ctx.report.info("gate", format!("{:e}", ctx.gate));
        ctx.report.info("nc", ctx.nc);
        ctx
    }

    fn surface(&mut self) -> CliResult<Surface> {
        let CurveSource::BranchPoints {
            points,
            sigma0,
            involution,
        } = &self.cfg.curve
        else {
            return cfg_err(format!(
                "{} needs a branch-point curve",
                self.cfg.command.name()
            ));
        };
        let all_real = points.iter().all(|z| z.im == 0.0);
        let tau = involution.unwrap_or(if all_real {
            Involution::Tau2
        } else {
            Involution::Tau1
        });
        let curve = BranchPointList::new(points.clone(), *sigma0, tau)?;
        let s = Surface::new(curve, self.nc)?;
        if self.report.info.iter().any(|(k, _)| k == "genus") {
            return Ok(s);
        }
        self.report.info(
            "branch_points",
            points
                .iter()
                .map(|&z| fmt_c(z))
                .collect::<Vec<_>>()
                .join(", "),
        );
        self.report.info("involution", involution_name(tau));
        self.report.info("genus", s.genus());
        Ok(s)
    }

    fn ingested(&mut self) -> CliResult<IngestedPeriods> {
        match &self.cfg.curve {
            CurveSource::PeriodFile(p) => {
                self.report.info(
                    "periods",
                    p.file_name()
                        .map_or(String::new(), |f| f.to_string_lossy().into_owned()),
                );
                Ok(IngestedPeriods::load(p)?)
            }
            CurveSource::BranchPoints { .. } => {
                let s = self.surface()?;
                let mut p = IngestedPeriods::from_period_data(&s.periods, self.cfg.label.clone())?;
                p.reality = Some(RealityMatrix::infer(reality_matrix_from_riemann(
                    s.riemann(),
                ))?);
                Ok(p)
            }
        }
    }

    fn write_grid(&mut self, grid: &FieldGrid, meta: Vec<(String, String)>) -> CliResult<()> {
        let path = self.opts.out.join(&self.cfg.output.csv);
        emit_grid(grid, &meta, &path)?;
        self.files.push(path);
        if self.opts.plot {
            let path = self.opts.out.join(&self.cfg.output.plot);
            emit_plot_script(grid, &self.cfg.output.csv, self.cfg.output.parts, &path)?;
            self.files.push(path);
        }
        Ok(())
    }

    fn riemann_checks(&mut self, b: &CMat, asymmetry: f64, sym_limit: f64) {
        let re = b.map(|z| z.re);
        let top = re
            .symmetric_eigenvalues()
            .iter()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        self.report
            .check_below("riemann symmetry", asymmetry, sym_limit);
        // negative definite ⇔ largest eigenvalue < 0
        self.report
            .check_below("riemann real part definiteness", top, 0.0);
        self.report
            .info("max_eigenvalue_re_b", format!("{top:.6e}"));
    }

    fn pde_gate(&self) -> f64 {
        self.cfg
            .residual
            .as_ref()
            .and_then(|r| r.gate)
            .unwrap_or(self.gate)
    }

    fn grid_checks(&mut self, grid: &FieldGrid) {
        self.report.info("samples", grid.len());
        self.report.info("poles", grid.poles);
        self.report.info(
            "median_identity_residual",
            format!("{:.3e}", grid.median_residual()),
        );
        let peak = (0..grid.components())
            .map(|j| {
                grid.psi
                    .iter()
                    .map(|p| p[j].norm_sqr())
                    .filter(|v| v.is_finite())
                    .fold(0.0, f64::max)
            })
            .map(|v| format!("{v:.6e}"))
            .collect::<Vec<_>>();
        self.report.info("max_abs2_psi", peak.join(" "));
        self.report
            .check_below("identity 1 max residual", grid.max_res1(), self.gate);
        self.report
            .check_below("identity 2 max residual", grid.max_res2(), self.gate);
    }

    fn pde_check(&mut self, pde: &PdeResidual) {
        self.report
            .info("pde_median", format!("{:.3e}", pde.median));
        let limit = self.pde_gate();
        self.report
            .check_below("pde spectral residual max", pde.max, limit);
    }
}

fn cmd_periods(ctx: &mut Ctx) -> CliResult<()> {
    let (periods, tol) = match &ctx.cfg.curve {
        CurveSource::BranchPoints { points, .. } => {
            let all_real = points.iter().all(|z| z.im == 0.0);
            let s = ctx.surface()?;
            let b = s.riemann().clone();
            ctx.riemann_checks(&b, s.periods.asymmetry, 1e-10);
            if all_real {
                let im = b.iter().map(|z| z.im.abs()).fold(0.0, f64::max);
                ctx.report
                    .check_below("m-curve riemann matrix real", im, 1e-10);
            }
            (
                IngestedPeriods::from_period_data(&s.periods, ctx.cfg.label.clone())?,
                1e-10,
            )
        }
        CurveSource::PeriodFile(_) => {
            let p = ctx.ingested()?;
            let raw = p.raw_riemann()?;
            let asym = (&raw - raw.transpose())
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
            let scale = raw.iter().map(|z| z.norm()).fold(0.0, f64::max);
            let tol = p.tolerance() * scale;
            ctx.riemann_checks(&p.riemann()?, asym, tol);
            (p, tol)
        }
    };
    let b = periods.riemann()?;
    ctx.report.info("symmetry_limit", format!("{tol:e}"));
    ctx.report.block("riemann matrix", fmt_cmat(&b));
    ctx.report.block("a periods", fmt_cmat(&periods.pa));
    ctx.report.block("b periods", fmt_cmat(&periods.pb));
    let path = ctx.opts.out.join(format!("{}.periods", ctx.cfg.label));
    fs::write(&path, periods.to_text())?;
    ctx.files.push(path);
    ctx.summary = format!("riemann matrix:\n{}", fmt_cmat(&b));
    Ok(())
}

fn cmd_theta(ctx: &mut Ctx) -> CliResult<()> {
    let b = match &ctx.cfg.curve {
        CurveSource::BranchPoints { .. } => ctx.surface()?.riemann().clone(),
        CurveSource::PeriodFile(_) => ctx.ingested()?.riemann()?,
    };
    let g = b.nrows();
    let th = ThetaSeries::with_eps(&b, ctx.cfg.numerics.eps)?;
    let ch = ctx
        .cfg
        .theta
        .characteristic
        .clone()
        .unwrap_or_else(|| Characteristic::zero(g));
    if ch.genus() != g {
        return cfg_err(format!(
            "characteristic has length {}, genus is {g}",
            ch.genus()
        ));
    }
    ctx.report.info("characteristic", &ch);
    ctx.report.info("n_theta", th.n_theta);
    let mut body = String::new();
    for (k, z) in ctx.cfg.theta.z.iter().enumerate() {
        if z.len() != g {
            return cfg_err(format!("z #{k} has {} entries, genus is {g}", z.len()));
        }
        let zv = CVec::from_column_slice(z);
        let e = th.eval(&zv, &ch, &[], &[]);
        let _ = writeln!(
            body,
            "z{k} value={:+.16e}{:+.16e}i ln={:+.16e}{:+.16e}i",
            e.value().re,
            e.value().im,
            e.ln_value().re,
            e.ln_value().im
        );
        ctx.report.check_below(
            &format!("z{k} shifted relation"),
            th.shifted_relation_residual(&zv, &ch),
            1e-11,
        );
        ctx.report
            .check_below(&format!("z{k} parity"), th.parity_residual(&zv, &ch), 1e-11);
    }
    ctx.report.block("values", body.clone());
    ctx.summary = body;
    Ok(())
}

fn d_vector(s: &Surface, sol: &SolutionConfig, variant: Option<DsVariant>) -> CliResult<CVec> {
    let g = s.genus();
    let half = sol.half.clone().unwrap_or_else(|| Characteristic::zero(g));
    if half.genus() != g {
        return cfg_err(format!("half has length {}, genus is {g}", half.genus()));
    }
    Ok(materialize_d(&half, &sol.d_offset, s.riemann(), variant)?)
}

fn pad(v: &[i64], g: usize, key: &str) -> CliResult<Vec<i64>> {
    match v.len() {
        0 => Ok(vec![0; g]),
        n if n == g => Ok(v.to_vec()),
        n => cfg_err(format!("{key} has {n} entries, genus is {g}")),
    }
}

fn cmd_nls(ctx: &mut Ctx) -> CliResult<Solved> {
    let cfg = ctx.cfg;
    let sc = cfg.solution.as_ref().expect("checked");
    let s = ctx.surface()?;
    let g = s.genus();
    let points = sc
        .points
        .iter()
        .map(|p| p.on(&s))
        .collect::<CliResult<Vec<_>>>()?;
    let n = points.len() - 1;
    let alpha = if sc.alpha.is_empty() {
        vec![1; n]
    } else {
        sc.alpha.clone()
    };
    if alpha.len() != n {
        return cfg_err(format!("alpha needs {n} entries"));
    }
    let m =
        sc.m.iter()
            .map(|r| pad(r, g, "m"))
            .collect::<CliResult<Vec<_>>>()?;
    let spec = NlsSpec {
        involution: sc.involution.unwrap_or(s.curve.involution),
        points,
        gamma_free: sc.gamma_free.clone(),
        d: d_vector(&s, sc, None)?,
        theta: sc.theta,
        alpha,
        m,
    };
    let d = spec.d.clone();
    let sol = nls_assemble(&s, spec)?;
    ctx.report.info("components", n);
    ctx.report.info(
        "points",
        sc.points
            .iter()
            .map(|p| p.to_string())
            .collect::<Vec<_>>()
            .join(" "),
    );
    ctx.report.info(
        "gamma",
        sol.gamma
            .iter()
            .map(|v| format!("{v:.12e}"))
            .collect::<Vec<_>>()
            .join(" "),
    );
    ctx.report.info(
        "signs",
        sol.signs
            .iter()
            .map(|v| v.to_string())
            .collect::<Vec<_>>()
            .join(" "),
    );
    ctx.report
        .check_below("gamma system residual", sol.gamma_residual, 1e-10);

    let x = cfg.grid.x.clone().expect("checked");
    let t = cfg.grid.t.clone().expect("checked");
    let clock = Instant::now();
    let grid = nls_grid(&sol, &x, &t);
    let grid_seconds = clock.elapsed().as_secs_f64();
    ctx.grid_checks(&grid);
    let clock = Instant::now();
    let mut pde = None;
    if let Some(r) = &cfg.residual {
        let rx = r.x.clone().unwrap_or_else(|| x.clone());
        let rt = r.t.clone().unwrap_or_else(|| t.clone());
        let rgrid = if rx.lo == x.lo
            && rx.hi == x.hi
            && rx.count == x.count
            && rt.lo == t.lo
            && rt.hi == t.hi
            && rt.count == t.count
        {
            grid.clone()
        } else {
            nls_grid(&sol, &rx, &rt)
        };
        let res = nls_pde_residual(&sol, &rgrid, &rx, &rt)?;
        ctx.pde_check(&res);
        pde = Some(res);
    }
    let pde_seconds = clock.elapsed().as_secs_f64();
    let meta = vec![
        ("label".into(), cfg.label.clone()),
        ("command".into(), "solve-nls".into()),
        (
            "curve".into(),
            s.curve
                .points
                .iter()
                .map(|&z| fmt_c(z))
                .collect::<Vec<_>>()
                .join(" "),
        ),
        (
            "points".into(),
            sc.points
                .iter()
                .map(|p| p.to_string())
                .collect::<Vec<_>>()
                .join(" "),
        ),
        ("d".into(), fmt_cvec(&d)),
        ("gate".into(), format!("{:e}", ctx.gate)),
        ("max_identity1".into(), format!("{:.6e}", grid.max_res1())),
        ("max_identity2".into(), format!("{:.6e}", grid.max_res2())),
    ];
    ctx.summary = format!(
        "{} samples, identity residuals {:.2e} / {:.2e}",
        grid.len(),
        grid.max_res1(),
        grid.max_res2()
    );
    Ok(Solved {
        grid,
        pde,
        genus: g,
        amplitude: sol.amplitude.clone(),
        meta,
        grid_seconds,
        pde_seconds,
    })
}

fn cmd_ds(ctx: &mut Ctx) -> CliResult<Solved> {
    let cfg = ctx.cfg;
    let sc = cfg.solution.as_ref().expect("checked");
    let variant = sc.variant.expect("checked");
    let s = ctx.surface()?;
    let g = s.genus();
    // DS2⁻ lives on τ₂ even though the curve's own symmetry is τ₁
    let involution = sc.involution.unwrap_or(if variant == DsVariant::Ds2Minus {
        Involution::Tau2
    } else {
        s.curve.involution
    });
    let d = d_vector(&s, sc, Some(variant))?;
    let spec = DsSpec {
        variant,
        involution,
        a: sc.a.expect("checked").on(&s)?,
        b: sc.b.expect("checked").on(&s)?,
        d: d.clone(),
        theta: sc.theta,
        h: sc.h,
        kappa2: sc.kappa2,
        kappa_tilde1: sc.kappa_tilde1,
        kappa1: sc.kappa1,
        m: pad(sc.m.first().map(|v| v.as_slice()).unwrap_or(&[]), g, "m")?,
        n: pad(&sc.n, g, "n")?,
    };
    let sol = ds_assemble(&s, spec)?;
    ctx.report.info("variant", variant.name());
    ctx.report
        .info("solution_involution", involution_name(involution));
    ctx.report
        .info("background_amplitude", format!("{:.12e}", sol.amplitude));

    let x = cfg.grid.x.clone().expect("checked");
    let y = cfg.grid.y.clone().expect("checked");
    let clock = Instant::now();
    let grid = ds_grid(&sol, &x, &y, &cfg.grid.times);
    let grid_seconds = clock.elapsed().as_secs_f64();
    ctx.grid_checks(&grid);
    let reality = grid.reality.iter().cloned().fold(0.0, f64::max);
    ctx.report
        .check_below("reality psi* = rho conj(psi)", reality, ctx.gate);
    let clock = Instant::now();
    let mut pde = None;
    if let Some(r) = &cfg.residual {
        let rx = r.x.clone().unwrap_or_else(|| x.clone());
        let ry = r.y.clone().unwrap_or_else(|| y.clone());
        let res = ds_pde_residual(&sol, &rx, &ry, r.t0)?;
        ctx.pde_check(&res);
        pde = Some(res);
    }
    let pde_seconds = clock.elapsed().as_secs_f64();
    let meta = vec![
        ("label".into(), cfg.label.clone()),
        ("command".into(), "solve-ds".into()),
        (
            "curve".into(),
            s.curve
                .points
                .iter()
                .map(|&z| fmt_c(z))
                .collect::<Vec<_>>()
                .join(" "),
        ),
        ("variant".into(), variant.name().into()),
        (
            "points".into(),
            format!("a={} b={}", sc.a.expect("checked"), sc.b.expect("checked")),
        ),
        ("d".into(), fmt_cvec(&d)),
        ("gate".into(), format!("{:e}", ctx.gate)),
        ("max_identity1".into(), format!("{:.6e}", grid.max_res1())),
        ("max_identity2".into(), format!("{:.6e}", grid.max_res2())),
    ];
    ctx.summary = format!(
        "{} samples, identity residuals {:.2e} / {:.2e}, background |A| = {:.6}",
        grid.len(),
        grid.max_res1(),
        grid.max_res2(),
        sol.amplitude
    );
    Ok(Solved {
        grid,
        pde,
        genus: g,
        amplitude: vec![sol.amplitude],
        meta,
        grid_seconds,
        pde_seconds,
    })
}

fn transform_report(
    ctx: &mut Ctx,
    periods: &IngestedPeriods,
) -> CliResult<Option<(SymplecticMatrix, Characteristic)>> {
    let Some(h) = periods.reality.clone() else {
        return cfg_err("transform-basis needs an hmatrix in the period file");
    };
    let tr = match &ctx.cfg.transform.blocks {
        Some(blocks) => {
            let g = periods.genus();
            let mats = blocks
                .iter()
                .map(|rows| {
                    if rows.len() != g || rows.iter().any(|r| r.len() != g) {
                        return cfg_err(format!("[transform] blocks must be {g}×{g}"));
                    }
                    Ok(IMat::from_fn(g, g, |i, j| rows[i][j]))
                })
                .collect::<CliResult<Vec<_>>>()?;
            let [a, b, c, d]: [IMat; 4] = mats.try_into().expect("four blocks");
            ctx.report.info("transform_source", "supplied");
            VinnikovTransform::assemble(SymplecticMatrix::new(a, b, c, d)?, periods, &h)?
        }
        None => {
            ctx.report.info("transform_source", "search");
            search_transform(periods, &h, ctx.cfg.numerics.budget)?
        }
    };
    ctx.report.info("topology", format!("{:?}", h.topology));
    ctx.report.info("characteristic", &tr.characteristic);
    ctx.report
        .block("symplectic matrix [A | B]  [C | D]", tr.s.to_string());
    ctx.report
        .check_flag("symplectic constraints exact", tr.s.is_symplectic());
    ctx.report.check_below(
        "reality defect",
        tr.reality_defect,
        periods.tolerance().max(1e-10),
    );
    if h.is_m_curve() {
        match mcurve_characteristic(periods) {
            Ok(c) => {
                ctx.report.info("closed_form_characteristic", &c);
                ctx.report
                    .check_flag("closed-form characteristic agrees", c == tr.characteristic);
            }
            Err(e) => ctx
                .report
                .info("closed_form_characteristic", format!("unavailable: {e}")),
        }
    }
    Ok(Some((tr.s, tr.characteristic)))
}

fn cmd_transform(ctx: &mut Ctx) -> CliResult<()> {
    let periods = ctx.ingested()?;
    if let Some((s, ch)) = transform_report(ctx, &periods)? {
        ctx.summary = format!("{s}characteristic {ch}");
    }
    Ok(())
}

fn cmd_validate(ctx: &mut Ctx) -> CliResult<()> {
    // quadrature
    let rule = clenshaw_curtis_rule(ctx.nc)?;
    let q = rule.integrate(|x: f64| C64::new(x.powi(8) + x.exp(), 0.0));
    let exact = 2.0 / 9.0 + 1f64.exp() - (-1f64).exp();
    ctx.report
        .check_below("quadrature exactness", (q.re - exact).abs(), 1e-13);
    let dm = chebyshev_diff_matrix(32)?;
    let nodes = crate::quadrature::chebyshev_nodes(32);
    let vals: Vec<C64> = nodes.iter().map(|&x| C64::new(x.sin(), 0.0)).collect();
    let dv = dm.apply(&vals);
    let derr = nodes
        .iter()
        .zip(&dv)
        .map(|(x, d)| (d.re - x.cos()).abs())
        .fold(0.0, f64::max);
    ctx.report
        .check_below("chebyshev differentiation", derr, 1e-12);

    // periods and theta
    let (b, hyper) = match &ctx.cfg.curve {
        CurveSource::BranchPoints { points, .. } => {
            let all_real = points.iter().all(|z| z.im == 0.0);
            let s = ctx.surface()?;
            ctx.riemann_checks(s.riemann(), s.periods.asymmetry, 1e-10);
            if all_real {
                let im = s.riemann().iter().map(|z| z.im.abs()).fold(0.0, f64::max);
                ctx.report
                    .check_below("m-curve riemann matrix real", im, 1e-10);
            }
            (s.riemann().clone(), Some(s))
        }
        CurveSource::PeriodFile(_) => {
            let p = ctx.ingested()?;
            let raw = p.raw_riemann()?;
            let asym = (&raw - raw.transpose())
                .iter()
                .map(|z| z.norm())
                .fold(0.0, f64::max);
            let scale = raw.iter().map(|z| z.norm()).fold(0.0, f64::max);
            ctx.riemann_checks(&p.riemann()?, asym, p.tolerance() * scale);
            transform_report(ctx, &p)?;
            (p.riemann()?, None)
        }
    };
    theta_suite(ctx, &b)?;

    // solution pipelines reuse the solve commands' checks
    if let (Some(sc), Some(_)) = (&ctx.cfg.solution, &hyper) {
        let solved = if sc.variant.is_some() && ctx.cfg.grid.x.is_some() && ctx.cfg.grid.y.is_some()
        {
            Some(cmd_ds(ctx)?)
        } else if sc.points.len() >= 2 && ctx.cfg.grid.x.is_some() && ctx.cfg.grid.t.is_some() {
            Some(cmd_nls(ctx)?)
        } else {
            None
        };
        if let Some(s) = solved {
            ctx.write_grid(&s.grid, s.meta)?;
        }
    }
    let failed = ctx.report.failures().len();
    ctx.summary = format!("{} checks, {failed} failed", ctx.report.checks.len());
    Ok(())
}

fn theta_suite(ctx: &mut Ctx, b: &CMat) -> CliResult<()> {
    let g = b.nrows();
    let th = ThetaSeries::with_eps(b, ctx.cfg.numerics.eps)?;
    let mut rng = ChaCha8Rng::seed_from_u64(ctx.cfg.numerics.seed);
    // direct sums get expensive fast with the genus
    let radius = (th.n_theta as i64 + 3).min(match g {
        1 | 2 => 40,
        3 => 14,
        _ => 7,
    });
    let chars = Characteristic::all(g);
    let (mut direct, mut parity, mut quasi) = (0.0f64, 0.0f64, 0.0f64);
    for k in 0..ctx.cfg.numerics.samples {
        // z = 𝔹u + 2πi v with u, v in a unit box keeps the direct sum convergent
        let u = CVec::from_fn(g, |_, _| C64::new(rng.gen_range(-0.5..0.5), 0.0));
        let v = CVec::from_fn(g, |_, _| {
            C64::new(0.0, rng.gen_range(-0.5..0.5) * 2.0 * std::f64::consts::PI)
        });
        let z = b * u + v;
        let ch = &chars[rng.gen_range(0..chars.len())];
        if k < 4 {
            let a = th.value(&z, ch);
            let d = direct_sum(&z, b, ch, radius);
            direct = direct.max((a - d).norm() / d.norm().max(1e-300));
        }
        parity = parity.max(th.parity_residual(&z, ch));
        let n: Vec<i64> = (0..g).map(|_| rng.gen_range(-2..=2)).collect();
        let m: Vec<i64> = (0..g).map(|_| rng.gen_range(-2..=2)).collect();
        quasi = quasi.max(th.quasi_periodicity_residual(&z, ch, &n, &m));
    }
    ctx.report.info("n_theta", th.n_theta);
    ctx.report
        .check_below("theta reduced vs direct sum", direct, 1e-12);
    ctx.report.check_below("theta parity", parity, 1e-11);
    ctx.report
        .check_below("theta quasi-periodicity", quasi, 1e-11);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn complex_forms() {
        let c = |s| parse_complex(s).unwrap();
        assert_eq!(c("1.5"), C64::new(1.5, 0.0));
        assert_eq!(c("-2i"), C64::new(0.0, -2.0));
        assert_eq!(c("i"), C64::new(0.0, 1.0));
        assert_eq!(c("-i"), C64::new(0.0, -1.0));
        assert_eq!(c("-1.5+2i"), C64::new(-1.5, 2.0));
        assert_eq!(c(" -1.5 - i "), C64::new(-1.5, -1.0));
        assert_eq!(c("1e-10-3.5e-2i"), C64::new(1e-10, -3.5e-2));
        assert_eq!(c("2.5E+3+1e-3i"), C64::new(2500.0, 1e-3));
        for bad in ["", "2+", "1+2j", "x", "1..2i"] {
            assert!(parse_complex(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn points_and_axes() {
        let p = PointSpec::parse("-1.5+2i @ 2").unwrap();
        assert_eq!((p.lambda, p.sheet), (C64::new(-1.5, 2.0), 2));
        assert!(PointSpec::parse("-1.9").is_err());
        assert!(PointSpec::parse("-1.9 @ 3").is_err());
        let a = parse_axis("-8, 8, 129", "x").unwrap();
        assert_eq!(
            (a.lo, a.hi, a.count, a.kind),
            (-8.0, 8.0, 129, NodeKind::Chebyshev)
        );
        assert_eq!(
            parse_axis("0, 1, 5, uniform", "x").unwrap().kind,
            NodeKind::Uniform
        );
        assert!(parse_axis("1, 0, 5", "x").is_err());
        assert!(parse_axis("0, 1", "x").is_err());
        let ch = parse_characteristic("1 1 ; 0 1", "half").unwrap();
        assert_eq!((ch.a, ch.b), (vec![1, 1], vec![0, 1]));
        assert!(parse_characteristic("1 2 ; 0 1", "half").is_err());
        assert!(parse_characteristic("1 1", "half").is_err());
    }

    const DS: &str = "command = solve-ds\nlabel = t\n[curve]\nbranch_points = -2, -1, 0, 1, 2, 3\n\
        [solution]\nvariant = ds1+\na = -1.9 @ 1\nb = -1.1 @ 2\n[grid]\nx = -1, 1, 5\ny = -1, 1, 5\n";

    #[test]
    fn config_round() {
        let cfg = RunConfig::parse(DS, Path::new(".")).unwrap();
        assert_eq!(cfg.command, Command::SolveDs);
        assert_eq!(cfg.numerics.nc, 128);
        assert!(
            matches!(&cfg.curve, CurveSource::BranchPoints { points, .. } if points.len() == 6)
        );
        let with = |extra: &str| RunConfig::parse(&format!("{DS}{extra}"), Path::new("."));
        assert!(matches!(with("[bogus]\n"), Err(CliError::Config(_))));
        assert!(matches!(
            with("[grid]\nz = 1, 2, 3\n"),
            Err(CliError::Config(_))
        ));
        assert!(matches!(
            with("[numerics]\nnc = many\n"),
            Err(CliError::Config(_))
        ));
        assert!(RunConfig::parse("command = fly\n", Path::new(".")).is_err());
    }

    #[test]
    fn report_rendering() {
        let cfg = RunConfig::parse(DS, Path::new(".")).unwrap();
        let mut r = ValidationReport::new(&cfg);
        r.check_below("small", 1e-12, 1e-6);
        r.check_below("nan", f64::NAN, 1e-6);
        assert!(!r.passed());
        assert_eq!(r.failures().len(), 1);
        let text = r.render();
        assert!(
            text.contains("FAIL") && text.ends_with("result = FAIL\n"),
            "{text}"
        );
    }

    proptest! {
        #[test]
        fn complex_round_trip(re in -1e6..1e6f64, im in -1e6..1e6f64) {
            let s = format!("{re:e}{im:+e}i");
            prop_assert_eq!(parse_complex(&s).unwrap(), C64::new(re, im));
            prop_assert_eq!(parse_complex(&format!("{re}")).unwrap(), C64::new(re, 0.0));
        }
    }
}
