//! Key=value run configuration: file values are overridden by flags, and the
//! fully resolved configuration is persisted next to every run's outputs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use dcg_core::config::ScalePreset;

#[derive(Debug, Clone)]
pub struct RunConfig {
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub ckpt: Option<PathBuf>,
    pub scale: ScalePreset,
    pub scale_explicit: bool,
    pub mask: f64,
    pub seed: u64,
    pub epochs: usize,
    pub batch: Option<usize>,
    pub patches: Option<usize>,
    pub use_abs_pe: bool,
    pub use_rel_pe: bool,
    pub pe_in_edges: bool,
    pub dump_graph: bool,
    pub threads: usize,
    pub temperature: f64,
    pub count: usize,
    pub steps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            data: None,
            out: default_out_root(),
            ckpt: None,
            scale: ScalePreset::Toy,
            scale_explicit: false,
            mask: 0.0,
            seed: 0,
            epochs: 1,
            batch: None,
            patches: None,
            use_abs_pe: true,
            use_rel_pe: true,
            pe_in_edges: false,
            dump_graph: false,
            threads: 1,
            temperature: 0.1,
            count: 32,
            steps: 5,
        }
    }
}

fn default_out_root() -> PathBuf {
    std::env::var_os("DCG_OUT_DIR")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("out"))
}

pub fn parse_config_file(path: &Path) -> Result<BTreeMap<String, String>, String> {
    let body = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read config file {}: {e}", path.display()))?;
    let mut map = BTreeMap::new();
    for (lineno, line) in body.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) => {
                map.insert(k.trim().to_string(), v.trim().to_string());
            }
            None => {
                return Err(format!(
                    "{}:{}: expected key=value, got {line:?}",
                    path.display(),
                    lineno + 1
                ));
            }
        }
    }
    Ok(map)
}

impl RunConfig {
    pub fn apply_file(&mut self, map: &BTreeMap<String, String>) -> Result<(), String> {
        for (key, value) in map {
            match key.as_str() {
                "data" => self.data = Some(PathBuf::from(value)),
                "out" => self.out = PathBuf::from(value),
                "ckpt" => self.ckpt = Some(PathBuf::from(value)),
                "scale" => {
                    self.scale = value.parse()?;
                    self.scale_explicit = true;
                }
                "mask" => self.mask = parse_num(key, value)?,
                "seed" => self.seed = parse_num(key, value)?,
                "epochs" => self.epochs = parse_num(key, value)?,
                "batch" => self.batch = Some(parse_num(key, value)?),
                "patches" => self.patches = Some(parse_num(key, value)?),
                "use_abs_pe" => self.use_abs_pe = parse_bool(key, value)?,
                "use_rel_pe" => self.use_rel_pe = parse_bool(key, value)?,
                "pe_in_edges" => self.pe_in_edges = parse_bool(key, value)?,
                "dump_graph" => self.dump_graph = parse_bool(key, value)?,
                "threads" => self.threads = parse_num(key, value)?,
                "temperature" => self.temperature = parse_num(key, value)?,
                "count" => self.count = parse_num(key, value)?,
                "steps" => self.steps = parse_num(key, value)?,
                other => return Err(format!("unknown config key {other:?}")),
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), String> {
        const ALLOWED_MASKS: [f64; 3] = [0.0, 0.1, 0.3];
        if !ALLOWED_MASKS.iter().any(|m| (m - self.mask).abs() < 1e-12) {
            return Err(format!(
                "--mask must be one of 0, 0.1, 0.3 (got {})",
                self.mask
            ));
        }
        if self.threads == 0 {
            return Err("--threads must be >= 1".into());
        }
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(format!("temperature must be in [0, 1], got {}", self.temperature));
        }
        Ok(())
    }

    /// Canonical key=value rendering, stable across runs with equal fields.
    pub fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "batch={}", self.batch.map_or("auto".into(), |b| b.to_string()));
        let _ = writeln!(s, "ckpt={}", self.ckpt.as_deref().map_or("".into(), |p| p.display().to_string()));
        let _ = writeln!(s, "count={}", self.count);
        let _ = writeln!(s, "data={}", self.data.as_deref().map_or("".into(), |p| p.display().to_string()));
        let _ = writeln!(s, "dump_graph={}", self.dump_graph);
        let _ = writeln!(s, "epochs={}", self.epochs);
        let _ = writeln!(s, "mask={}", self.mask);
        let _ = writeln!(s, "out={}", self.out.display());
        let _ = writeln!(s, "patches={}", self.patches.map_or("auto".into(), |p| p.to_string()));
        let _ = writeln!(s, "pe_in_edges={}", self.pe_in_edges);
        let _ = writeln!(s, "scale={}", match self.scale {
            ScalePreset::Paper => "paper",
            ScalePreset::Toy => "toy",
        });
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "steps={}", self.steps);
        let _ = writeln!(s, "temperature={}", self.temperature);
        let _ = writeln!(s, "threads={}", self.threads);
        let _ = writeln!(s, "use_abs_pe={}", self.use_abs_pe);
        let _ = writeln!(s, "use_rel_pe={}", self.use_rel_pe);
        s
    }

    pub fn persist(&self) -> std::io::Result<()> {
        std::fs::create_dir_all(&self.out)?;
        std::fs::write(self.out.join("config.resolved.txt"), self.render())
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value
        .parse()
        .map_err(|e| format!("config key {key}: {e}"))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, String> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(format!("config key {key}: expected bool, got {other:?}")),
    }
}
