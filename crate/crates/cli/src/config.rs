//! Run configuration: a flat `key=value` file merged with command-line
//! flags, flags winning.

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use ma_hybrid::hybrid::MaskHeuristics;
use ma_hybrid::solver::SolverConfig;
use ma_hybrid::GridSpec;
use serde::Serialize;

/// Keys accepted in config files; each is also a `--key` flag.
pub const KEYS: &[&str] = &[
    "problem",
    "h",
    "refine",
    "mask",
    "fmin",
    "fmax",
    "margin",
    "nu1",
    "nu2",
    "auto-steps",
    "tol",
    "hybrid-tol",
    "max-iter",
    "radius",
    "shrink",
    "backtracking",
    "seed",
    "trials",
    "out",
    "format",
];

/// Usage, validation and I/O failures; all map to exit code 1.
#[derive(Debug, Clone, PartialEq)]
pub enum CliError {
    Usage(String),
    Core(ma_hybrid::Error),
    Io(String),
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(m) => write!(f, "i/o error: {m}"),
        }
    }
}

impl From<ma_hybrid::Error> for CliError {
    fn from(e: ma_hybrid::Error) -> Self {
        CliError::Core(e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

impl Format {
    pub fn as_str(self) -> &'static str {
        match self {
            Format::Csv => "csv",
            Format::Json => "json",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskSource {
    Auto,
    File(PathBuf),
    Singular,
    Regular,
}

impl fmt::Display for MaskSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MaskSource::Auto => f.write_str("auto"),
            MaskSource::File(p) => write!(f, "file:{}", p.display()),
            MaskSource::Singular => f.write_str("singular"),
            MaskSource::Regular => f.write_str("regular"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Solve,
    Study,
    Check,
}

impl Command {
    pub fn as_str(self) -> &'static str {
        match self {
            Command::Solve => "solve",
            Command::Study => "study",
            Command::Check => "check",
        }
    }
}

/// Fully resolved settings, echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunConfig {
    pub command: Command,
    pub problem: String,
    /// `1/h` per level; one level except for studies. Empty when a mask
    /// file decides the grid.
    pub cells: Vec<usize>,
    pub mask: MaskSource,
    pub f_min: Option<f64>,
    pub f_max: Option<f64>,
    pub margin: Option<f64>,
    pub solver: SolverConfig,
    pub trials: usize,
    pub out: Option<PathBuf>,
    pub format: Format,
}

impl RunConfig {
    /// The mask heuristics of `base` with the command-line overrides applied.
    pub fn heuristics(&self, base: &MaskHeuristics) -> MaskHeuristics {
        let mut h = base.clone();
        if let Some(v) = self.f_min {
            h.f_min = v;
        }
        if let Some(v) = self.f_max {
            h.f_max = v;
        }
        if let Some(v) = self.margin {
            h.boundary_margin = v;
        }
        h
    }

    /// `(key, value)` pairs for CSV header comments.
    pub fn echo(&self) -> Vec<(String, String)> {
        let s = &self.solver;
        let opt = |v: Option<f64>| v.map_or("default".to_string(), |v| v.to_string());
        let cells = self.cells.iter().map(|c| format!("1/{c}")).collect::<Vec<_>>().join(",");
        vec![
            ("command".into(), self.command.as_str().into()),
            ("problem".into(), self.problem.clone()),
            ("h".into(), cells),
            ("mask".into(), self.mask.to_string()),
            ("fmin".into(), opt(self.f_min)),
            ("fmax".into(), opt(self.f_max)),
            ("margin".into(), opt(self.margin)),
            ("nu1".into(), s.nu_singular.to_string()),
            ("nu2".into(), s.nu_regular.to_string()),
            ("auto-steps".into(), s.auto_steps.to_string()),
            ("tol".into(), s.tol.to_string()),
            ("hybrid-tol".into(), opt(s.hybrid_tol)),
            ("max-iter".into(), s.max_iter.to_string()),
            ("radius".into(), s.radius.to_string()),
            ("shrink".into(), s.shrink.to_string()),
            ("backtracking".into(), s.backtracking.to_string()),
            ("seed".into(), s.seed.to_string()),
            ("trials".into(), self.trials.to_string()),
            ("format".into(), self.format.as_str().into()),
        ]
    }
}

/// Parses a flat `key=value` file. Blank lines and `#` comments are skipped.
pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected key=value, got {line:?}", n + 1)))?;
        let (k, v) = (k.trim(), v.trim());
        if !KEYS.contains(&k) {
            return Err(CliError::Usage(format!("config line {}: unknown key {k:?}", n + 1)));
        }
        if out.insert(k.to_string(), v.to_string()).is_some() {
            return Err(CliError::Usage(format!("config line {}: key {k:?} given twice", n + 1)));
        }
    }
    Ok(out)
}

/// Reads `1/8`, `0.125` or similar, insisting that `1/h` is an integer.
pub fn parse_h(text: &str) -> Result<usize, CliError> {
    let text = text.trim();
    let h = match text.split_once('/') {
        Some((a, b)) => {
            let a: f64 = parse_num("h", a)?;
            let b: f64 = parse_num("h", b)?;
            a / b
        }
        None => parse_num("h", text)?,
    };
    Ok(GridSpec::from_h(h)?.cells())
}

/// Comma-separated mesh sizes, strictly decreasing, at least three.
pub fn parse_refine(text: &str) -> Result<Vec<usize>, CliError> {
    let items: Vec<&str> = text.split(',').map(str::trim).filter(|s| !s.is_empty()).collect();
    if items.is_empty() {
        return Err(CliError::Usage("refinement list is empty".into()));
    }
    let cells = items.iter().map(|s| parse_h(s)).collect::<Result<Vec<_>, _>>()?;
    if cells.len() < 3 {
        return Err(CliError::Usage(format!("a study needs at least 3 refinement levels, got {}", cells.len())));
    }
    if cells.windows(2).any(|w| w[1] <= w[0]) {
        return Err(CliError::Usage("refinement list must have strictly decreasing h".into()));
    }
    Ok(cells)
}

fn parse_num<T: std::str::FromStr>(key: &str, text: &str) -> Result<T, CliError> {
    text.trim()
        .parse()
        .map_err(|_| CliError::Usage(format!("cannot parse {key} = {text:?}")))
}

fn parse_bool(key: &str, text: &str) -> Result<bool, CliError> {
    match text.trim() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        other => Err(CliError::Usage(format!("{key} expects true or false, got {other:?}"))),
    }
}

fn parse_mask(text: &str) -> Result<MaskSource, CliError> {
    match text.trim() {
        "auto" => Ok(MaskSource::Auto),
        "singular" => Ok(MaskSource::Singular),
        "regular" => Ok(MaskSource::Regular),
        other => match other.strip_prefix("file:") {
            Some(p) if !p.is_empty() => Ok(MaskSource::File(PathBuf::from(p))),
            _ => Err(CliError::Usage(format!(
                "mask must be auto, singular, regular or file:PATH, got {other:?}"
            ))),
        },
    }
}

/// Resolves merged settings for `command`.
pub fn resolve(command: Command, values: &BTreeMap<String, String>) -> Result<RunConfig, CliError> {
    let get = |k: &str| values.get(k).map(String::as_str);
    let default_solver = SolverConfig::default();
    let mut solver = SolverConfig {
        tol: get("tol").map(|v| parse_num("tol", v)).transpose()?.unwrap_or(default_solver.tol),
        hybrid_tol: get("hybrid-tol").map(|v| parse_num("hybrid-tol", v)).transpose()?,
        max_iter: get("max-iter").map(|v| parse_num("max-iter", v)).transpose()?.unwrap_or(default_solver.max_iter),
        radius: get("radius").map(|v| parse_num("radius", v)).transpose()?.unwrap_or(default_solver.radius),
        shrink: get("shrink").map(|v| parse_num("shrink", v)).transpose()?.unwrap_or(default_solver.shrink),
        backtracking: get("backtracking")
            .map(|v| parse_bool("backtracking", v))
            .transpose()?
            .unwrap_or(default_solver.backtracking),
        seed: get("seed").map(|v| parse_num("seed", v)).transpose()?.unwrap_or(default_solver.seed),
        ..default_solver
    };
    // explicit step sizes switch the probe-based estimate off unless asked
    let nu1 = get("nu1").map(|v| parse_num("nu1", v)).transpose()?;
    let nu2 = get("nu2").map(|v| parse_num("nu2", v)).transpose()?;
    if let Some(v) = nu1 {
        solver.nu_singular = v;
    }
    if let Some(v) = nu2 {
        solver.nu_regular = v;
    }
    solver.auto_steps = match get("auto-steps") {
        Some(v) => parse_bool("auto-steps", v)?,
        None => nu1.is_none() && nu2.is_none(),
    };
    solver.validate()?;

    let mask = get("mask").map(parse_mask).transpose()?.unwrap_or(MaskSource::Auto);
    let f_min = get("fmin").map(|v| parse_num("fmin", v)).transpose()?;
    let f_max = get("fmax").map(|v| parse_num("fmax", v)).transpose()?;
    let margin = get("margin").map(|v| parse_num("margin", v)).transpose()?;
    if mask != MaskSource::Auto && (f_min.is_some() || f_max.is_some() || margin.is_some()) {
        return Err(CliError::Usage(format!(
            "exactly one mask source: fmin/fmax/margin only apply to the auto mask, not {mask}"
        )));
    }

    let cells = match command {
        Command::Study => {
            if get("h").is_some() {
                return Err(CliError::Usage("study takes --refine, not --h".into()));
            }
            if matches!(mask, MaskSource::File(_)) {
                return Err(CliError::Usage("a mask file fixes one grid and cannot drive a study".into()));
            }
            parse_refine(get("refine").ok_or_else(|| CliError::Usage("study needs --refine h1,h2,h3,...".into()))?)?
        }
        _ => {
            if get("refine").is_some() {
                return Err(CliError::Usage(format!("{} takes --h, not --refine", command.as_str())));
            }
            match (get("h"), &mask) {
                (Some(h), _) => vec![parse_h(h)?],
                (None, MaskSource::File(_)) if command == Command::Solve => Vec::new(),
                (None, _) => vec![16],
            }
        }
    };

    let default_format = if command == Command::Study { Format::Csv } else { Format::Json };
    let format = match get("format") {
        None => default_format,
        Some("csv") => Format::Csv,
        Some("json") => Format::Json,
        Some(other) => return Err(CliError::Usage(format!("format must be csv or json, got {other:?}"))),
    };
    let trials = get("trials").map(|v| parse_num("trials", v)).transpose()?.unwrap_or(1000);
    if trials == 0 {
        return Err(CliError::Usage("trials must be positive".into()));
    }

    Ok(RunConfig {
        command,
        problem: get("problem").unwrap_or("P2").to_string(),
        cells,
        mask,
        f_min,
        f_max,
        margin,
        solver,
        trials,
        out: get("out").map(PathBuf::from),
        format,
    })
}
