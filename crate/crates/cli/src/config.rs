//! Run configuration: defaults, a sectioned key-value file, then flags.

use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use kirkwood::dynamics::MU_SUN_JUPITER;
use kirkwood::homoclinic::{DISCOVERY_MESH, J_LABEL};
use kirkwood::integrate::IntegratorConfig;
use kirkwood::porbit::{J_MAX, J_MIN};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Environment variable overriding the cache directory.
pub const CACHE_ENV: &str = "KIRKWOOD_CACHE_DIR";
pub const DEFAULT_CACHE: &str = ".kirkwood-cache";
pub const DEFAULT_OUT: &str = "out";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    Porbit,
    Manifold,
    Homoclinic,
    Splitting,
    Bounds,
    Alpha,
    Melnikov,
    Variance,
    Ansatz2,
    Skewshift,
    All,
}

impl Command {
    pub const EACH: [Command; 10] = [
        Command::Porbit,
        Command::Manifold,
        Command::Homoclinic,
        Command::Splitting,
        Command::Bounds,
        Command::Alpha,
        Command::Melnikov,
        Command::Variance,
        Command::Ansatz2,
        Command::Skewshift,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Command::Porbit => "porbit",
            Command::Manifold => "manifold",
            Command::Homoclinic => "homoclinic",
            Command::Splitting => "splitting",
            Command::Bounds => "bounds",
            Command::Alpha => "alpha",
            Command::Melnikov => "melnikov",
            Command::Variance => "variance",
            Command::Ansatz2 => "ansatz2",
            Command::Skewshift => "skewshift",
            Command::All => "all",
        }
    }
}

/// Half-width of the time window for the homoclinic bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Horizon {
    /// Doubling until the suprema settle.
    Auto,
    Fixed(f64),
}

impl std::str::FromStr for Horizon {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Horizon::Auto);
        }
        s.parse::<f64>().map(Horizon::Fixed).map_err(|_| format!("horizon must be `auto` or a number, got `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: Command,
    pub mu: f64,
    pub j_min: f64,
    pub j_max: f64,
    pub j_step: f64,
    /// Energy of the single-energy commands (`manifold`).
    pub j: f64,
    pub channels: Vec<usize>,
    pub pair: (usize, usize),
    pub integ_tol: f64,
    pub quad_tol: f64,
    pub cauchy_tol: f64,
    /// Bisection width of the tangency refinement.
    pub brent_tol: f64,
    pub mesh: usize,
    pub horizon: Horizon,
    pub theta_nodes: usize,
    pub e0: f64,
    pub theta: f64,
    pub j0: f64,
    pub n_traj: usize,
    pub n_steps: usize,
    pub seed: u64,
    pub cache_dir: PathBuf,
    pub out_dir: PathBuf,
    pub workers: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            command: Command::All,
            mu: MU_SUN_JUPITER,
            j_min: J_MIN,
            j_max: J_MAX,
            j_step: 0.01,
            j: J_LABEL,
            channels: vec![1, 2, 3, 4],
            pair: (2, 3),
            integ_tol: 1e-14,
            quad_tol: 1e-8,
            cauchy_tol: 1e-6,
            brent_tol: 1e-4,
            mesh: DISCOVERY_MESH,
            horizon: Horizon::Auto,
            theta_nodes: 64,
            e0: 1e-3,
            theta: 1.0,
            j0: -1.54,
            n_traj: 10_000,
            n_steps: 1_000_000,
            seed: 1,
            cache_dir: PathBuf::from(DEFAULT_CACHE),
            out_dir: PathBuf::from(DEFAULT_OUT),
            workers: 1,
        }
    }
}

/// Flags shared by every command; any flag given overrides the config file.
#[derive(Debug, Clone, Default, Args)]
pub struct Flags {
    /// Key-value config file with one section per command.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub mu: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub j_min: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub j_max: Option<f64>,
    #[arg(long, global = true)]
    pub j_step: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub j: Option<f64>,
    /// Comma-separated channel labels.
    #[arg(long, global = true)]
    pub channels: Option<String>,
    /// Channel pair of the variance and skew-shift commands, as `a,b`.
    #[arg(long, global = true)]
    pub pair: Option<String>,
    #[arg(long, global = true)]
    pub integ_tol: Option<f64>,
    #[arg(long, global = true)]
    pub quad_tol: Option<f64>,
    #[arg(long, global = true)]
    pub cauchy_tol: Option<f64>,
    #[arg(long, global = true)]
    pub brent_tol: Option<f64>,
    #[arg(long, global = true)]
    pub mesh: Option<usize>,
    /// `auto` or a fixed half-width.
    #[arg(long, global = true)]
    pub horizon: Option<String>,
    #[arg(long, global = true)]
    pub theta_nodes: Option<usize>,
    #[arg(long, global = true)]
    pub e0: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub theta: Option<f64>,
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub j0: Option<f64>,
    #[arg(long, global = true)]
    pub n_traj: Option<usize>,
    #[arg(long, global = true)]
    pub n_steps: Option<usize>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub cache_dir: Option<PathBuf>,
    #[arg(long = "out", global = true)]
    pub out_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    pub workers: Option<usize>,
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T, CliError> {
    v.trim().parse().map_err(|_| usage(format!("cannot parse `{key} = {v}`")))
}

fn parse_list(key: &str, v: &str) -> Result<Vec<usize>, CliError> {
    v.split(',').filter(|s| !s.trim().is_empty()).map(|s| parse(key, s)).collect()
}

fn parse_pair(key: &str, v: &str) -> Result<(usize, usize), CliError> {
    match parse_list(key, v)?.as_slice() {
        [a, b] => Ok((*a, *b)),
        _ => Err(usage(format!("`{key}` needs two channels, got `{v}`"))),
    }
}

impl RunConfig {
    fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        match key {
            "mu" => self.mu = parse(key, v)?,
            "j_min" => self.j_min = parse(key, v)?,
            "j_max" => self.j_max = parse(key, v)?,
            "j_step" => self.j_step = parse(key, v)?,
            "j" => self.j = parse(key, v)?,
            "channels" => self.channels = parse_list(key, v)?,
            "pair" => self.pair = parse_pair(key, v)?,
            "integ_tol" => self.integ_tol = parse(key, v)?,
            "quad_tol" => self.quad_tol = parse(key, v)?,
            "cauchy_tol" => self.cauchy_tol = parse(key, v)?,
            "brent_tol" => self.brent_tol = parse(key, v)?,
            "mesh" => self.mesh = parse(key, v)?,
            "horizon" => self.horizon = v.trim().parse().map_err(usage)?,
            "theta_nodes" => self.theta_nodes = parse(key, v)?,
            "e0" => self.e0 = parse(key, v)?,
            "theta" => self.theta = parse(key, v)?,
            "j0" => self.j0 = parse(key, v)?,
            "n_traj" => self.n_traj = parse(key, v)?,
            "n_steps" => self.n_steps = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "cache_dir" => self.cache_dir = PathBuf::from(v.trim()),
            "out_dir" => self.out_dir = PathBuf::from(v.trim()),
            "workers" => self.workers = parse(key, v)?,
            _ => return Err(usage(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies the general section of `path`, then the section named after the command.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), CliError> {
        let ini = ini::Ini::load_from_file(path).map_err(|e| usage(format!("config {}: {e}", path.display())))?;
        for section in ini.sections().flatten() {
            if !Command::EACH.iter().any(|c| c.name() == section) && section != "all" {
                return Err(usage(format!("unknown config section [{section}]")));
            }
        }
        if let Some(general) = ini.section(None::<String>) {
            for (k, v) in general.iter() {
                self.set(k, v)?;
            }
        }
        if let Some(own) = ini.section(Some(self.command.name())) {
            for (k, v) in own.iter() {
                self.set(k, v)?;
            }
        }
        Ok(())
    }

    pub fn apply_flags(&mut self, f: &Flags) -> Result<(), CliError> {
        macro_rules! take {
            ($($field:ident),*) => { $(if let Some(v) = f.$field.clone() { self.$field = v; })* };
        }
        take!(mu, j_min, j_max, j_step, j, integ_tol, quad_tol, cauchy_tol, brent_tol, mesh, theta_nodes, e0, theta, j0);
        take!(n_traj, n_steps, seed, cache_dir, out_dir, workers);
        if let Some(v) = &f.channels {
            self.channels = parse_list("channels", v)?;
        }
        if let Some(v) = &f.pair {
            self.pair = parse_pair("pair", v)?;
        }
        if let Some(v) = &f.horizon {
            self.horizon = v.parse().map_err(usage)?;
        }
        Ok(())
    }

    /// Defaults, then the config file, then the cache variable, then flags.
    pub fn resolve(command: Command, flags: &Flags, env_cache: Option<PathBuf>) -> Result<Self, CliError> {
        let mut cfg = RunConfig { command, ..RunConfig::default() };
        if let Some(path) = &flags.config {
            cfg.apply_file(path)?;
        }
        if let Some(dir) = env_cache {
            cfg.cache_dir = dir;
        }
        cfg.apply_flags(flags)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let check = |ok: bool, msg: String| if ok { Ok(()) } else { Err(usage(msg)) };
        check(self.mu > 0.0 && self.mu < 0.5, format!("mu = {} outside (0, 0.5)", self.mu))?;
        check(self.j_step > 0.0, format!("j_step = {} must be positive", self.j_step))?;
        check(self.j_min <= self.j_max, format!("j_min = {} exceeds j_max = {}", self.j_min, self.j_max))?;
        for (name, v) in [("j_min", self.j_min), ("j_max", self.j_max), ("j", self.j), ("j0", self.j0)] {
            check(v.is_finite() && v < 0.0, format!("{name} = {v} must be a negative energy"))?;
        }
        IntegratorConfig::with_tol(self.integ_tol).validate().map_err(|e| usage(e.to_string()))?;
        check((1e-12..=1e-4).contains(&self.quad_tol), format!("quad_tol = {:e} outside [1e-12, 1e-4]", self.quad_tol))?;
        check(self.cauchy_tol > 0.0 && self.cauchy_tol <= 1e-3, format!("cauchy_tol = {:e} outside (0, 1e-3]", self.cauchy_tol))?;
        check(self.brent_tol > 0.0 && self.brent_tol <= 1e-2, format!("brent_tol = {:e} outside (0, 1e-2]", self.brent_tol))?;
        check(self.mesh >= 10, format!("mesh = {} below 10", self.mesh))?;
        if let Horizon::Fixed(m) = self.horizon {
            check(m > 0.0 && m.is_finite(), format!("horizon = {m} must be positive"))?;
        }
        check(!self.channels.is_empty(), "no channels selected".into())?;
        for &c in self.channels.iter().chain([self.pair.0, self.pair.1].iter()) {
            check((1..=4).contains(&c), format!("channel {c} outside 1..4"))?;
        }
        check(self.pair.0 != self.pair.1, "pair needs two distinct channels".into())?;
        check(self.theta_nodes >= 1, "theta_nodes must be at least 1".into())?;
        check((0.0..=0.1).contains(&self.e0), format!("e0 = {} outside [0, 0.1]", self.e0))?;
        check(self.theta.is_finite(), "theta must be finite".into())?;
        check(self.n_traj >= 2 && self.n_steps >= 1, "skew-shift needs n_traj >= 2 and n_steps >= 1".into())?;
        check(self.workers >= 1, "workers must be at least 1".into())
    }

    /// `j_min, j_min + j_step, ...` up to `j_max` inclusive.
    pub fn grid(&self) -> Vec<f64> {
        let n = ((self.j_max - self.j_min) / self.j_step + 1e-9).floor() as usize;
        (0..=n).map(|k| self.j_min + k as f64 * self.j_step).collect()
    }

    /// `theta_nodes` equally spaced phases in `[0, 2 pi)`.
    pub fn theta_grid(&self) -> Vec<f64> {
        (0..self.theta_nodes).map(|k| 2.0 * std::f64::consts::PI * k as f64 / self.theta_nodes as f64).collect()
    }

    pub fn integrator(&self) -> IntegratorConfig {
        IntegratorConfig::with_tol(self.integ_tol)
    }
}
