//! Plain-text run configuration: one `key = value` per line, `#` comments.

use std::fmt::Write as _;
use std::path::Path;

use lhw::map1d::MapParams;
use lhw::semiflow::FlowParams;
use lhw::witness::{Mode, NeighborhoodStyle};
use lhw::{BoxSpec, Model};

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub rho: f64,
    pub c: f64,
    pub lambda: f64,
    pub mu: f64,
    pub nu: f64,
    pub t_out: f64,
    pub eta: f64,
    pub mode: Mode,
    pub style: NeighborhoodStyle,
    /// Margin used by `deepen` after the first level.
    pub deep_margin: f64,
    /// Minimum precision of parsed decimal inputs; 0 derives it from the
    /// digits given.
    pub precision_bits: u32,
    pub precision_scale: u32,
    pub grid: usize,
    pub seed: u64,
    pub json_out: Option<String>,
    pub csv_out: Option<String>,
    pub orbit_out: Option<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = Model::default();
        RunConfig {
            rho: m.map.rho,
            c: m.map.c,
            lambda: m.flow.lambda,
            mu: m.flow.mu,
            nu: m.flow.nu,
            t_out: m.flow.t_out,
            eta: m.boxes.eta,
            mode: Mode::Strict,
            style: NeighborhoodStyle::Sampled,
            deep_margin: 3.0,
            precision_bits: 0,
            precision_scale: 1,
            grid: 2000,
            seed: 0,
            json_out: None,
            csv_out: None,
            orbit_out: None,
        }
    }
}

const KEYS: &[&str] = &[
    "rho",
    "c",
    "lambda",
    "mu",
    "nu",
    "t_out",
    "eta",
    "mode",
    "margin",
    "style",
    "deep_margin",
    "precision_bits",
    "precision_scale",
    "grid",
    "seed",
    "json_out",
    "csv_out",
    "orbit_out",
];

fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, String> {
    v.parse().map_err(|_| format!("{key}: cannot parse {v:?}"))
}

impl RunConfig {
    pub fn model(&self) -> Model {
        Model {
            map: MapParams {
                rho: self.rho,
                c: self.c,
            },
            flow: FlowParams {
                lambda: self.lambda,
                mu: self.mu,
                nu: self.nu,
                t_out: self.t_out,
                ..FlowParams::default()
            },
            boxes: BoxSpec { eta: self.eta },
        }
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut cfg = RunConfig::default();
        let mut seen: Vec<String> = Vec::new();
        let mut margin: Option<f64> = None;
        let mut mode: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| format!("line {}: expected `key = value`", i + 1))?;
            let (key, value) = (key.trim(), value.trim());
            if !KEYS.contains(&key) {
                return Err(format!("line {}: unknown key {key:?}", i + 1));
            }
            if seen.iter().any(|k| k == key) {
                return Err(format!("line {}: duplicate key {key:?}", i + 1));
            }
            seen.push(key.to_string());
            match key {
                "rho" => cfg.rho = num(key, value)?,
                "c" => cfg.c = num(key, value)?,
                "lambda" => cfg.lambda = num(key, value)?,
                "mu" => cfg.mu = num(key, value)?,
                "nu" => cfg.nu = num(key, value)?,
                "t_out" => cfg.t_out = num(key, value)?,
                "eta" => cfg.eta = num(key, value)?,
                "mode" => mode = Some(value.to_string()),
                "margin" => margin = Some(num(key, value)?),
                "style" => cfg.style = parse_style(value)?,
                "deep_margin" => cfg.deep_margin = num(key, value)?,
                "precision_bits" => cfg.precision_bits = num(key, value)?,
                "precision_scale" => cfg.precision_scale = num(key, value)?,
                "grid" => cfg.grid = num(key, value)?,
                "seed" => cfg.seed = num(key, value)?,
                "json_out" => cfg.json_out = Some(value.to_string()),
                "csv_out" => cfg.csv_out = Some(value.to_string()),
                "orbit_out" => cfg.orbit_out = Some(value.to_string()),
                _ => unreachable!(),
            }
        }
        cfg.mode = parse_mode(mode.as_deref().unwrap_or("strict"), margin)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.model().validate().map_err(|e| e.to_string())?;
        if let Mode::Relaxed { margin } = self.mode {
            if !(margin >= lhw::witness::MIN_MARGIN) {
                return Err(format!("margin {margin} must be at least {}", lhw::witness::MIN_MARGIN));
            }
        }
        if !(self.deep_margin >= lhw::witness::MIN_MARGIN) {
            return Err(format!("deep_margin {} must be at least {}", self.deep_margin, lhw::witness::MIN_MARGIN));
        }
        if self.precision_scale == 0 {
            return Err("precision_scale must be at least 1".into());
        }
        Ok(())
    }

    /// The effective configuration in the format [`RunConfig::parse`] reads.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let w = &mut s;
        writeln!(w, "rho = {}", self.rho).unwrap();
        writeln!(w, "c = {}", self.c).unwrap();
        writeln!(w, "lambda = {}", self.lambda).unwrap();
        writeln!(w, "mu = {}", self.mu).unwrap();
        writeln!(w, "nu = {}", self.nu).unwrap();
        writeln!(w, "t_out = {}", self.t_out).unwrap();
        writeln!(w, "eta = {}", self.eta).unwrap();
        match self.mode {
            Mode::Strict => writeln!(w, "mode = strict").unwrap(),
            Mode::Relaxed { margin } => {
                writeln!(w, "mode = relaxed").unwrap();
                writeln!(w, "margin = {margin}").unwrap();
            }
        }
        let style = match self.style {
            NeighborhoodStyle::Sampled => "sampled",
            NeighborhoodStyle::Shadowing => "shadowing",
        };
        writeln!(w, "style = {style}").unwrap();
        writeln!(w, "deep_margin = {}", self.deep_margin).unwrap();
        writeln!(w, "precision_bits = {}", self.precision_bits).unwrap();
        writeln!(w, "precision_scale = {}", self.precision_scale).unwrap();
        writeln!(w, "grid = {}", self.grid).unwrap();
        writeln!(w, "seed = {}", self.seed).unwrap();
        for (k, v) in [
            ("json_out", &self.json_out),
            ("csv_out", &self.csv_out),
            ("orbit_out", &self.orbit_out),
        ] {
            if let Some(v) = v {
                writeln!(w, "{k} = {v}").unwrap();
            }
        }
        s
    }

    /// `key = value` lines echoed into output headers.
    pub fn header_lines(&self) -> Vec<String> {
        self.dump()
            .lines()
            .filter(|l| !l.split('=').next().unwrap_or("").trim().ends_with("_out"))
            .map(str::to_string)
            .collect()
    }
}

pub fn parse_mode(text: &str, margin: Option<f64>) -> Result<Mode, String> {
    match (text, margin) {
        ("strict", None) => Ok(Mode::Strict),
        ("strict", Some(_)) => Err("margin only applies to relaxed mode".into()),
        ("relaxed", m) => Ok(Mode::Relaxed { margin: m.unwrap_or(3.0) }),
        (other, _) => Err(format!("mode must be strict or relaxed, not {other:?}")),
    }
}

pub fn parse_style(text: &str) -> Result<NeighborhoodStyle, String> {
    match text {
        "sampled" => Ok(NeighborhoodStyle::Sampled),
        "shadowing" => Ok(NeighborhoodStyle::Shadowing),
        other => Err(format!("style must be sampled or shadowing, not {other:?}")),
    }
}
