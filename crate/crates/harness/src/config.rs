//! Experiment configuration: flat `key = value` text with `#` comments.
//!
//! Resolution order is subcommand defaults, then the config file, then the
//! paper-scale presets (if requested), then explicit CLI flags. Unknown keys
//! are rejected with their line number.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use catecho_core::classical::{shear_maximum_position, CatMap, ShearWindow};
use catecho_core::quantum::{HilbertDim, PerturbationKind, PerturbationSpec, DEFAULT_K0};
use catecho_core::spectral::StateSample;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Experiment {
    SigmaSweep,
    GammaSweep,
    LocalSweep,
    LdosGrid,
    Lyapunov,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::SigmaSweep => "sigma-sweep",
            Experiment::GammaSweep => "gamma-sweep",
            Experiment::LocalSweep => "local-sweep",
            Experiment::LdosGrid => "ldos-grid",
            Experiment::Lyapunov => "lyapunov",
        }
    }
}

/// Inclusive χ grid `min, min + step, …, ≤ max`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ChiGrid {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl ChiGrid {
    pub fn values(&self) -> Vec<f64> {
        if !(self.step > 0.0) || self.max < self.min {
            return Vec::new();
        }
        let count = ((self.max - self.min) / self.step + 1e-9).floor() as usize + 1;
        (0..count).map(|i| self.min + i as f64 * self.step).collect()
    }
}

impl Default for ChiGrid {
    fn default() -> Self {
        Self { min: 0.0, max: 60.0, step: 1.0 }
    }
}

/// How the echo reference evolution is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EchoReference {
    /// The map perturbed at `k0` (default).
    K0,
    /// The bare cat map.
    Bare,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub map: CatMap,
    pub kind: PerturbationKind,
    pub k0: f64,
    pub chi: ChiGrid,
    pub dims: Vec<usize>,
    /// LDOS averaging sample; `None` means every state.
    pub ldos_states: Option<usize>,
    pub n_states: usize,
    pub steps: usize,
    pub windows: Vec<f64>,
    pub window_center: f64,
    pub echo_reference: EchoReference,
    pub echo_curves: bool,
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
    pub threads: usize,
    pub paper_scale: bool,
    // lyapunov
    pub k: f64,
    pub lyapunov_steps: usize,
    pub lyapunov_samples: usize,
}

pub const KNOWN_KEYS: &[&str] = &[
    "map", "kind", "k0", "chi_min", "chi_max", "chi_step", "n", "ldos_states", "n_states", "steps",
    "windows", "window_center", "echo_reference", "echo_curves", "seed", "out_dir", "cache_dir",
    "threads", "k", "lyapunov_steps", "lyapunov_samples",
];

impl ExperimentConfig {
    /// Desk-scale defaults for a subcommand.
    pub fn defaults(experiment: Experiment) -> Self {
        let dims = match experiment {
            Experiment::SigmaSweep => vec![300, 600],
            Experiment::LdosGrid => vec![600],
            _ => vec![800],
        };
        Self {
            experiment,
            map: CatMap::g2(),
            kind: PerturbationKind::MomentumShear,
            k0: DEFAULT_K0,
            chi: ChiGrid::default(),
            dims,
            ldos_states: Some(50),
            n_states: 50,
            steps: 60,
            windows: match experiment {
                Experiment::LocalSweep => vec![0.1, 0.2, 0.3, 0.4],
                _ => vec![1.0],
            },
            window_center: shear_maximum_position(),
            echo_reference: EchoReference::K0,
            echo_curves: false,
            seed: None,
            out_dir: PathBuf::from("out"),
            cache_dir: None,
            threads: 1,
            paper_scale: false,
            k: 0.0,
            lyapunov_steps: 1000,
            lyapunov_samples: 100,
        }
    }

    /// Switch to the large-scale ensemble sizes and dimensions.
    pub fn apply_paper_scale(&mut self) {
        self.paper_scale = true;
        match self.experiment {
            Experiment::SigmaSweep => self.dims = vec![300, 600, 1200],
            Experiment::GammaSweep => {
                self.dims = vec![2000];
                self.n_states = 200;
            }
            Experiment::LocalSweep => {
                self.dims = vec![800];
                self.n_states = 200;
            }
            Experiment::LdosGrid => self.dims = vec![1200],
            Experiment::Lyapunov => {}
        }
    }

    /// Apply one `key = value` assignment. `line` is used for diagnostics.
    pub fn set(&mut self, key: &str, value: &str, line: Option<usize>) -> Result<()> {
        let bad = |msg: String| HarnessError::Config { line, key: key.to_string(), message: msg };
        let num = |v: &str| v.parse::<f64>().map_err(|e| bad(format!("{v:?}: {e}")));
        let int = |v: &str| v.parse::<usize>().map_err(|e| bad(format!("{v:?}: {e}")));
        let list = |v: &str| -> Result<Vec<f64>> {
            v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(num).collect()
        };
        match key {
            "map" => self.map = CatMap::named(value).map_err(|e| bad(e.to_string()))?,
            "kind" => self.kind = value.parse().map_err(|e: catecho_core::Error| bad(e.to_string()))?,
            "k0" => self.k0 = num(value)?,
            "chi_min" => self.chi.min = num(value)?,
            "chi_max" => self.chi.max = num(value)?,
            "chi_step" => self.chi.step = num(value)?,
            "n" => {
                self.dims = value
                    .split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(int)
                    .collect::<Result<_>>()?
            }
            "ldos_states" => {
                self.ldos_states = if value == "all" { None } else { Some(int(value)?) };
            }
            "n_states" => self.n_states = int(value)?,
            "steps" => self.steps = int(value)?,
            "windows" => self.windows = list(value)?,
            "window_center" => self.window_center = num(value)?,
            "echo_reference" => {
                self.echo_reference = match value {
                    "k0" => EchoReference::K0,
                    "bare" => EchoReference::Bare,
                    other => return Err(bad(format!("{other:?} (expected k0 or bare)"))),
                }
            }
            "echo_curves" => {
                self.echo_curves = value.parse().map_err(|e| bad(format!("{value:?}: {e}")))?;
            }
            "seed" => self.seed = Some(value.parse().map_err(|e| bad(format!("{value:?}: {e}")))?),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "cache_dir" => self.cache_dir = Some(PathBuf::from(value)),
            "threads" => self.threads = int(value)?,
            "k" => self.k = num(value)?,
            "lyapunov_steps" => self.lyapunov_steps = int(value)?,
            "lyapunov_samples" => self.lyapunov_samples = int(value)?,
            _ => return Err(bad("unknown key".into())),
        }
        Ok(())
    }

    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| HarnessError::Config {
                line: Some(idx + 1),
                key: line.to_string(),
                message: "expected key = value".into(),
            })?;
            self.set(key.trim(), value.trim(), Some(idx + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Validation(format!("cannot read config {}: {e}", path.display())))?;
        self.apply_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |m: String| Err(HarnessError::Validation(m));
        if self.seed.is_none() {
            return invalid("seed is required (set `seed = ...` or pass --seed)".into());
        }
        if self.experiment != Experiment::Lyapunov {
            let grid = self.chi.values();
            if grid.is_empty() {
                return invalid(format!("empty chi grid {:?}", self.chi));
            }
            if grid[0] < 0.0 {
                return invalid("chi values must be nonnegative".into());
            }
            if self.dims.is_empty() {
                return invalid("no Hilbert dimension given".into());
            }
            if self.dims.windows(2).any(|w| w[1] <= w[0]) {
                return invalid("dimension list must be ascending".into());
            }
            for &n in &self.dims {
                HilbertDim::for_map(&self.map, n).map_err(|e| HarnessError::Validation(e.to_string()))?;
            }
            if !(self.k0 >= 0.0) {
                return invalid(format!("k0 = {} must be nonnegative", self.k0));
            }
            if self.ldos_states == Some(0) || self.n_states == 0 {
                return invalid("state samples must be non-empty".into());
            }
            if self.steps < 4 {
                return invalid("steps must be at least 4 (a fit needs 5 time points)".into());
            }
        }
        if self.windows.is_empty() {
            return invalid("window list is empty".into());
        }
        if self.windows.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("window list must be ascending".into());
        }
        for &w in &self.windows {
            ShearWindow::new(self.window_center, w).map_err(|e| HarnessError::Validation(e.to_string()))?;
        }
        if self.kind == PerturbationKind::DoubleShear && self.windows.iter().any(|&w| w < 1.0) {
            return invalid("the double shear cannot be windowed".into());
        }
        if self.threads == 0 {
            return invalid("threads must be positive".into());
        }
        Ok(())
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn state_sample(&self) -> StateSample {
        match self.ldos_states {
            Some(count) => StateSample::Random(count),
            None => StateSample::All,
        }
    }

    pub fn window(&self, width: f64) -> Result<ShearWindow> {
        if width >= 1.0 {
            Ok(ShearWindow::global())
        } else {
            Ok(ShearWindow::new(self.window_center, width)?)
        }
    }

    /// Reference spec (`k = k0`) for one window width.
    pub fn template(&self, width: f64) -> Result<PerturbationSpec> {
        Ok(PerturbationSpec::reference(self.kind, self.k0, self.window(width)?)?)
    }

    /// Every key that influences results, in a fixed order. Output and
    /// cache locations and the thread count are excluded.
    pub fn canonical(&self) -> BTreeMap<&'static str, String> {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut m = BTreeMap::new();
        m.insert("experiment", self.experiment.name().to_string());
        m.insert("map", self.map.label().to_string());
        m.insert("kind", self.kind.to_string());
        m.insert("k0", self.k0.to_string());
        m.insert("chi_min", self.chi.min.to_string());
        m.insert("chi_max", self.chi.max.to_string());
        m.insert("chi_step", self.chi.step.to_string());
        m.insert("n", self.dims.iter().map(|n| n.to_string()).collect::<Vec<_>>().join(","));
        m.insert("ldos_states", self.ldos_states.map_or("all".into(), |c| c.to_string()));
        m.insert("n_states", self.n_states.to_string());
        m.insert("steps", self.steps.to_string());
        m.insert("windows", join(&self.windows));
        m.insert("window_center", self.window_center.to_string());
        m.insert(
            "echo_reference",
            match self.echo_reference {
                EchoReference::K0 => "k0",
                EchoReference::Bare => "bare",
            }
            .into(),
        );
        m.insert("echo_curves", self.echo_curves.to_string());
        m.insert("seed", self.seed().to_string());
        m.insert("k", self.k.to_string());
        m.insert("lyapunov_steps", self.lyapunov_steps.to_string());
        m.insert("lyapunov_samples", self.lyapunov_samples.to_string());
        m
    }

    /// Snapshot text: the canonical keys in a form `apply_text` accepts.
    pub fn snapshot(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("# catecho {} {}\n", env!("CARGO_PKG_VERSION"), self.experiment.name()));
        for (k, v) in self.canonical() {
            if k != "experiment" {
                out.push_str(&format!("{k} = {v}\n"));
            }
        }
        out
    }

    /// First 16 hex digits of the SHA-256 of the snapshot.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.snapshot().as_bytes());
        digest.iter().take(8).map(|b| format!("{b:02x}")).collect()
    }
}

impl fmt::Display for ExperimentConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.snapshot())
    }
}
