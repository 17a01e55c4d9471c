//! Sweeps over the χ grid and their CSV outputs.
//!
//! The `*_rows` methods compute results in memory; the `run_*` functions
//! wrap them and write files under the configured output directory.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use catecho_core::cache::EigenCache;
use catecho_core::classical::{lyapunov_closed_form, lyapunov_numeric, LyapunovEstimate};
use catecho_core::echo::{echo_reference_propagator, gamma_at_chi, DecayFit, EchoCurve, ReferenceEnsemble};
use catecho_core::quantum::{build_propagator, HilbertDim, PerturbationSpec};
use catecho_core::spectral::{
    choose_states, eigendecompose, ldos_averaged, ldos_width, EigenSystem, LdosDistribution,
    DEFAULT_WIDTH_FRACTION, LDOS_BINS,
};

use crate::config::{EchoReference, Experiment, ExperimentConfig};
use crate::error::{HarnessError, Result};
use crate::output::{fmt_f64, fmt_opt, CsvColumns, Table};

/// Lower χ bound (exclusive) of the Γ̄ average in local sweeps.
pub const LOCAL_AVERAGE_FROM: f64 = 20.0;

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaRow {
    pub chi: f64,
    pub sigma: std::result::Result<f64, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaRow {
    pub chi: f64,
    pub fit: std::result::Result<DecayFit, String>,
    pub curve: Option<EchoCurve>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LdosRow {
    pub chi: f64,
    pub density: std::result::Result<(Vec<f64>, Vec<f64>), String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LyapunovRow {
    pub width: f64,
    pub closed_form: Option<f64>,
    pub estimate: std::result::Result<LyapunovEstimate, String>,
}

/// One local-window row pair: σ and Γ on the same grid.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalRun {
    pub width: f64,
    pub sigma: Vec<SigmaRow>,
    pub gamma: Vec<GammaRow>,
}

impl LocalRun {
    /// Mean Γ over `χ > 20`, with the number of points used.
    pub fn gamma_bar(&self) -> Option<(f64, usize)> {
        let values: Vec<f64> = self
            .gamma
            .iter()
            .filter(|r| r.chi > LOCAL_AVERAGE_FROM)
            .filter_map(|r| r.fit.as_ref().ok().map(|f| f.gamma))
            .collect();
        (!values.is_empty()).then(|| (values.iter().sum::<f64>() / values.len() as f64, values.len()))
    }
}

/// Files written by a run and the number of grid points that failed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunSummary {
    pub config_hash: String,
    pub files: Vec<PathBuf>,
    pub failed_points: usize,
}

impl RunSummary {
    fn add(&mut self, path: PathBuf, failed: usize) {
        self.files.push(path);
        self.failed_points += failed;
    }
}

/// Validated configuration plus the worker pool and optional cache.
pub struct Runner {
    config: ExperimentConfig,
    hash: String,
    cache: Option<EigenCache>,
    pool: rayon::ThreadPool,
}

impl Runner {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(config.threads)
            .build()
            .map_err(|e| HarnessError::Validation(format!("thread pool: {e}")))?;
        let cache = match &config.cache_dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                Some(EigenCache::new(dir))
            }
            None => None,
        };
        Ok(Self { hash: config.hash(), config, cache, pool })
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    fn dim(&self, n: usize) -> Result<HilbertDim> {
        Ok(HilbertDim::for_map(&self.config.map, n)?)
    }

    fn eigensystem(&self, spec: &PerturbationSpec, n: HilbertDim) -> catecho_core::Result<EigenSystem> {
        match &self.cache {
            Some(cache) => cache.get_or_compute(&self.config.map, spec, n),
            None => eigendecompose(&build_propagator(&self.config.map, spec, n)?),
        }
    }

    fn ldos_points(&self, n: usize, width: f64) -> Result<Vec<(f64, catecho_core::Result<LdosDistribution>)>> {
        let n = self.dim(n)?;
        let template = self.config.template(width)?;
        let reference = self.eigensystem(&template.at_chi(0.0, n)?, n)?;
        let states = choose_states(n.get(), self.config.state_sample(), self.config.seed())?;
        let grid = self.config.chi.values();
        Ok(self.pool.install(|| {
            grid.par_iter()
                .map(|&chi| {
                    let dist = template
                        .at_chi(chi, n)
                        .and_then(|spec| self.eigensystem(&spec, n))
                        .and_then(|sys| ldos_averaged(&reference, &sys, &states));
                    (chi, dist)
                })
                .collect()
        }))
    }

    /// σ(χ) at dimension `n` for one window width.
    pub fn sigma_rows(&self, n: usize, width: f64) -> Result<Vec<SigmaRow>> {
        Ok(self
            .ldos_points(n, width)?
            .into_iter()
            .map(|(chi, dist)| SigmaRow {
                chi,
                sigma: dist
                    .and_then(|d| ldos_width(&d, DEFAULT_WIDTH_FRACTION))
                    .map(|w| w.sigma)
                    .map_err(|e| e.to_string()),
            })
            .collect())
    }

    /// Binned LDOS density (`LDOS_BINS` bins on (−π, π]) per χ.
    pub fn ldos_rows(&self, n: usize, width: f64) -> Result<Vec<LdosRow>> {
        Ok(self
            .ldos_points(n, width)?
            .into_iter()
            .map(|(chi, dist)| LdosRow { chi, density: dist.map(|d| d.binned(LDOS_BINS)).map_err(|e| e.to_string()) })
            .collect())
    }

    /// Γ(χ) at dimension `n` for one window width.
    pub fn gamma_rows(&self, n: usize, width: f64) -> Result<Vec<GammaRow>> {
        let cfg = &self.config;
        let n = self.dim(n)?;
        let template = cfg.template(width)?;
        let bare = cfg.echo_reference == EchoReference::Bare;
        let u_ref = echo_reference_propagator(&cfg.map, &template, n, bare)?;
        let reference = ReferenceEnsemble::new(&u_ref, cfg.n_states, cfg.steps, cfg.seed())?;
        let grid = cfg.chi.values();
        Ok(self.pool.install(|| {
            grid.par_iter()
                .map(|&chi| match gamma_at_chi(&cfg.map, &template, chi, n, &reference) {
                    Ok((curve, fit)) => GammaRow { chi, fit: Ok(fit), curve: Some(curve) },
                    Err(e) => GammaRow { chi, fit: Err(e.to_string()), curve: None },
                })
                .collect()
        }))
    }

    pub fn local_runs(&self, n: usize) -> Result<Vec<LocalRun>> {
        self.config
            .windows
            .iter()
            .map(|&width| Ok(LocalRun { width, sigma: self.sigma_rows(n, width)?, gamma: self.gamma_rows(n, width)? }))
            .collect()
    }

    pub fn lyapunov_rows(&self) -> Result<Vec<LyapunovRow>> {
        let cfg = &self.config;
        cfg.windows
            .iter()
            .map(|&width| {
                let window = cfg.window(width)?;
                let estimate =
                    lyapunov_numeric(&cfg.map, cfg.k, &window, cfg.lyapunov_steps, cfg.lyapunov_samples, cfg.seed())
                        .map_err(|e| e.to_string());
                let closed_form = (cfg.k == 0.0).then(|| lyapunov_closed_form(&cfg.map));
                Ok(LyapunovRow { width, closed_form, estimate })
            })
            .collect()
    }

    fn tag(&self, n: usize, width: f64) -> String {
        let mut tag = format!("{}_{}_N{n}", self.config.map.label(), self.config.kind);
        if width < 1.0 {
            tag.push_str(&format!("_w{}", fmt_f64(width)));
        }
        tag
    }

    fn out(&self, name: String) -> PathBuf {
        self.config.out_dir.join(name)
    }

    fn write_snapshot(&self) -> Result<PathBuf> {
        fs::create_dir_all(&self.config.out_dir)?;
        let path = self.out(format!("config-{}.txt", self.hash));
        fs::write(&path, self.config.snapshot())?;
        Ok(path)
    }

    fn ldos_state_count(&self, n: usize) -> usize {
        self.config.ldos_states.map_or(n, |c| c.min(n))
    }

    fn sigma_table(&self, n: usize, rows: &[SigmaRow]) -> (Table, usize) {
        let cfg = &self.config;
        let mut t = Table::new(&["chi", "sigma", "N", "map", "kind", "k0", "n_states", "seed", "config_hash", "error"]);
        let mut failed = 0;
        for r in rows {
            failed += r.sigma.is_err() as usize;
            t.push(vec![
                fmt_f64(r.chi),
                fmt_opt(r.sigma.as_ref().ok().copied()),
                n.to_string(),
                cfg.map.label().to_string(),
                cfg.kind.to_string(),
                fmt_f64(cfg.k0),
                self.ldos_state_count(n).to_string(),
                cfg.seed().to_string(),
                self.hash.clone(),
                r.sigma.as_ref().err().cloned().unwrap_or_default(),
            ]);
        }
        (t, failed)
    }

    fn gamma_table(&self, n: usize, rows: &[GammaRow]) -> (Table, usize) {
        let cfg = &self.config;
        let mut t = Table::new(&[
            "chi", "gamma", "gamma_stderr", "t_start", "t_end", "r_squared", "quality_flag", "N", "map", "kind",
            "n_states", "seed", "config_hash", "error",
        ]);
        let mut failed = 0;
        for r in rows {
            let fit = r.fit.as_ref().ok();
            failed += fit.is_none() as usize;
            t.push(vec![
                fmt_f64(r.chi),
                fmt_opt(fit.map(|f| f.gamma)),
                fmt_opt(fit.map(|f| f.stderr)),
                fit.map(|f| f.t_start.to_string()).unwrap_or_default(),
                fit.map(|f| f.t_end.to_string()).unwrap_or_default(),
                fmt_opt(fit.map(|f| f.r_squared)),
                fit.map(|f| f.quality.as_str().to_string()).unwrap_or_default(),
                n.to_string(),
                cfg.map.label().to_string(),
                cfg.kind.to_string(),
                cfg.n_states.to_string(),
                cfg.seed().to_string(),
                self.hash.clone(),
                r.fit.as_ref().err().cloned().unwrap_or_default(),
            ]);
        }
        (t, failed)
    }

    fn write_echo_curves(&self, tag: &str, rows: &[GammaRow], summary: &mut RunSummary) -> Result<()> {
        if !self.config.echo_curves {
            return Ok(());
        }
        for r in rows {
            let Some(curve) = &r.curve else { continue };
            let mut t = Table::new(&["t", "m_mean", "m_sem", "config_hash"]);
            for (step, (m, s)) in curve.m.iter().zip(&curve.sem).enumerate() {
                t.push(vec![step.to_string(), fmt_f64(*m), fmt_f64(*s), self.hash.clone()]);
            }
            let path = self.out(format!("echo_{tag}_chi{}.csv", fmt_f64(r.chi)));
            t.write(&path)?;
            summary.add(path, 0);
        }
        Ok(())
    }
}

/// σ column of a joined table: value, or the reason it is missing.
type SigmaCell = (f64, std::result::Result<f64, String>);

fn joined_table(sigma: &[SigmaCell], gamma: &[GammaRow], n: usize, hash: &str) -> (Table, usize) {
    let mut t =
        Table::new(&["chi", "sigma", "gamma", "gamma_stderr", "quality_flag", "N", "config_hash", "error"]);
    let mut failed = 0;
    for ((chi, s), g) in sigma.iter().zip(gamma) {
        let fit = g.fit.as_ref().ok();
        let errors: Vec<&str> = [s.as_ref().err(), g.fit.as_ref().err()].into_iter().flatten().map(String::as_str).collect();
        failed += !errors.is_empty() as usize;
        t.push(vec![
            fmt_f64(*chi),
            fmt_opt(s.as_ref().ok().copied()),
            fmt_opt(fit.map(|f| f.gamma)),
            fmt_opt(fit.map(|f| f.stderr)),
            fit.map(|f| f.quality.as_str().to_string()).unwrap_or_default(),
            n.to_string(),
            hash.to_string(),
            errors.join("; "),
        ]);
    }
    (t, failed)
}

fn require(runner: &Runner, experiment: Experiment) -> Result<()> {
    if runner.config.experiment != experiment {
        return Err(HarnessError::Validation(format!(
            "configuration is for {}, not {}",
            runner.config.experiment.name(),
            experiment.name()
        )));
    }
    Ok(())
}

/// One σ CSV per (N, window).
pub fn run_sigma_sweep(runner: &Runner) -> Result<RunSummary> {
    require(runner, Experiment::SigmaSweep)?;
    let mut summary = RunSummary { config_hash: runner.hash.clone(), ..Default::default() };
    summary.add(runner.write_snapshot()?, 0);
    for &width in &runner.config.windows {
        for &n in &runner.config.dims {
            let rows = runner.sigma_rows(n, width)?;
            let (table, failed) = runner.sigma_table(n, &rows);
            let path = runner.out(format!("sigma_{}.csv", runner.tag(n, width)));
            table.write(&path)?;
            summary.add(path, failed);
        }
    }
    Ok(summary)
}

/// σ values from an earlier sweep in the output directory, if its χ
/// column matches `grid` exactly.
fn matching_sigma(path: &Path, grid: &[f64]) -> Option<Vec<SigmaCell>> {
    let cols = CsvColumns::read(path).ok()?;
    let chi = cols.floats("chi", path).ok()?;
    let sigma = cols.floats("sigma", path).ok()?;
    let same = chi.len() == grid.len() && chi.iter().zip(grid).all(|(a, b)| *a == Some(*b));
    same.then(|| {
        grid.iter().zip(sigma).map(|(&chi, s)| (chi, s.ok_or_else(|| "sigma missing".to_string()))).collect()
    })
}

/// One Γ CSV per (N, window); a joined (χ, σ, Γ) table is added when a σ
/// sweep with the same tag and grid exists in the output directory.
pub fn run_gamma_sweep(runner: &Runner) -> Result<RunSummary> {
    require(runner, Experiment::GammaSweep)?;
    let mut summary = RunSummary { config_hash: runner.hash.clone(), ..Default::default() };
    summary.add(runner.write_snapshot()?, 0);
    let grid = runner.config.chi.values();
    for &width in &runner.config.windows {
        for &n in &runner.config.dims {
            let tag = runner.tag(n, width);
            let rows = runner.gamma_rows(n, width)?;
            let (table, failed) = runner.gamma_table(n, &rows);
            let path = runner.out(format!("gamma_{tag}.csv"));
            table.write(&path)?;
            summary.add(path, failed);
            runner.write_echo_curves(&tag, &rows, &mut summary)?;
            if let Some(sigma) = matching_sigma(&runner.out(format!("sigma_{tag}.csv")), &grid) {
                let path = runner.out(format!("joined_{tag}.csv"));
                joined_table(&sigma, &rows, n, &runner.hash).0.write(&path)?;
                summary.add(path, 0);
            }
        }
    }
    Ok(summary)
}

/// Per-window joined tables and a (w, Γ̄) summary, for every N.
pub fn run_local_sweep(runner: &Runner) -> Result<RunSummary> {
    require(runner, Experiment::LocalSweep)?;
    let mut summary = RunSummary { config_hash: runner.hash.clone(), ..Default::default() };
    summary.add(runner.write_snapshot()?, 0);
    for &n in &runner.config.dims {
        let mut table = Table::new(&["w", "gamma_bar", "two_w", "n_points", "N", "config_hash"]);
        for run in runner.local_runs(n)? {
            let tag = runner.tag(n, run.width);
            let sigma: Vec<SigmaCell> = run.sigma.iter().map(|r| (r.chi, r.sigma.clone())).collect();
            let (joined, failed) = joined_table(&sigma, &run.gamma, n, &runner.hash);
            let path = runner.out(format!("local_{tag}.csv"));
            joined.write(&path)?;
            summary.add(path, failed);
            runner.write_echo_curves(&tag, &run.gamma, &mut summary)?;
            let bar = run.gamma_bar();
            table.push(vec![
                fmt_f64(run.width),
                fmt_opt(bar.map(|b| b.0)),
                fmt_f64(2.0 * run.width),
                bar.map_or(0, |b| b.1).to_string(),
                n.to_string(),
                runner.hash.clone(),
            ]);
        }
        let path = runner.out(format!("local_summary_{}_{}_N{n}.csv", runner.config.map.label(), runner.config.kind));
        table.write(&path)?;
        summary.add(path, 0);
    }
    Ok(summary)
}

/// Binned ρ(Δφ, χ) grids, one file per (N, window).
pub fn run_ldos_grid(runner: &Runner) -> Result<RunSummary> {
    require(runner, Experiment::LdosGrid)?;
    let mut summary = RunSummary { config_hash: runner.hash.clone(), ..Default::default() };
    summary.add(runner.write_snapshot()?, 0);
    for &width in &runner.config.windows {
        for &n in &runner.config.dims {
            let mut t = Table::new(&["chi", "dphi_bin_center", "density", "N", "config_hash", "error"]);
            let mut failed = 0;
            for row in runner.ldos_rows(n, width)? {
                match &row.density {
                    Ok((centers, density)) => {
                        for (c, d) in centers.iter().zip(density) {
                            t.push(vec![
                                fmt_f64(row.chi),
                                fmt_f64(*c),
                                fmt_f64(*d),
                                n.to_string(),
                                runner.hash.clone(),
                                String::new(),
                            ]);
                        }
                    }
                    Err(e) => {
                        failed += 1;
                        t.push(vec![
                            fmt_f64(row.chi),
                            String::new(),
                            String::new(),
                            n.to_string(),
                            runner.hash.clone(),
                            e.clone(),
                        ]);
                    }
                }
            }
            let path = runner.out(format!("ldos_{}.csv", runner.tag(n, width)));
            t.write(&path)?;
            summary.add(path, failed);
        }
    }
    Ok(summary)
}

/// Tangent-map Lyapunov estimates, one row per window width.
pub fn run_lyapunov(runner: &Runner) -> Result<RunSummary> {
    require(runner, Experiment::Lyapunov)?;
    let cfg = &runner.config;
    let mut summary = RunSummary { config_hash: runner.hash.clone(), ..Default::default() };
    summary.add(runner.write_snapshot()?, 0);
    let mut t = Table::new(&[
        "map", "k", "w", "lambda_closed_form", "lambda", "std_error", "n_steps", "n_samples", "converged", "seed",
        "config_hash", "error",
    ]);
    let mut failed = 0;
    for row in runner.lyapunov_rows()? {
        let est = row.estimate.as_ref().ok();
        failed += est.is_none() as usize;
        t.push(vec![
            cfg.map.label().to_string(),
            fmt_f64(cfg.k),
            fmt_f64(row.width),
            fmt_opt(row.closed_form),
            fmt_opt(est.map(|e| e.value)),
            fmt_opt(est.map(|e| e.std_error)),
            cfg.lyapunov_steps.to_string(),
            cfg.lyapunov_samples.to_string(),
            est.map(|e| e.converged.to_string()).unwrap_or_default(),
            cfg.seed().to_string(),
            runner.hash.clone(),
            row.estimate.as_ref().err().cloned().unwrap_or_default(),
        ]);
    }
    let path = runner.out(format!("lyapunov_{}_k{}.csv", cfg.map.label(), fmt_f64(cfg.k)));
    t.write(&path)?;
    summary.add(path, failed);
    Ok(summary)
}

/// Dispatch on the configured experiment.
pub fn run(runner: &Runner) -> Result<RunSummary> {
    match runner.config.experiment {
        Experiment::SigmaSweep => run_sigma_sweep(runner),
        Experiment::GammaSweep => run_gamma_sweep(runner),
        Experiment::LocalSweep => run_local_sweep(runner),
        Experiment::LdosGrid => run_ldos_grid(runner),
        Experiment::Lyapunov => run_lyapunov(runner),
    }
}
