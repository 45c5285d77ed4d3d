//! The commands, each a cached set of artifacts published into the output directory.

use std::fs;
use std::path::{Path, PathBuf};

use kirkwood::dynamics::MassParams;
use kirkwood::homoclinic::{self, ChannelInterval, HomoclinicBounds, HomoclinicChannelRecord, Tangency};
use kirkwood::integrate::Integrator;
use kirkwood::manifold::{self, Branch, GlobalizeOptions, Stability};
use kirkwood::melnikov::{self, MelnikovConfig, MelnikovRecord};
use kirkwood::porbit::{self, PeriodicOrbitRecord};
use kirkwood::quad::QuadTol;
use kirkwood::section::SectionMap;
use kirkwood::skewshift::{self, EnsembleConfig, SkewShiftModel};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::{self, Cache};
use crate::config::{Command, Horizon, RunConfig};
use crate::error::{CliError, FailureRecord};
use crate::plot;

/// Result of one `(channel, J)` cell of a sweep.
#[allow(non_snake_case)]
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Cell<T> {
    pub channel: usize,
    pub J: f64,
    pub value: Option<T>,
    pub error: Option<String>,
}

impl<T> Cell<T> {
    fn failure(&self, command: &str) -> Option<FailureRecord> {
        self.error.as_ref().map(|m| FailureRecord { command: command.into(), J: Some(self.J), channel: Some(self.channel), message: m.clone() })
    }
}

/// What a finished command wrote and whether it came from the cache.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub command: Command,
    pub key: String,
    pub hit: bool,
    pub files: Vec<PathBuf>,
}

pub struct Ctx {
    pub cfg: RunConfig,
    pub cache: Cache,
    map: SectionMap,
}

fn write(dir: &Path, name: &str, bytes: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(dir.join(name), bytes)?;
    Ok(())
}

fn write_json<T: Serialize>(dir: &Path, name: &str, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("artifact serializes");
    text.push('\n');
    write(dir, name, text)
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> std::io::Result<()>) -> Result<Vec<u8>, CliError> {
    let mut buf = Vec::new();
    f(&mut buf)?;
    Ok(buf)
}

fn lib_failure(command: &str, e: &kirkwood::Error) -> CliError {
    let message = match e {
        kirkwood::Error::AtEnergy { source, .. } => source.to_string(),
        _ => e.to_string(),
    };
    CliError::numerical(command, e.energy(), e.channel(), message)
}

impl Ctx {
    pub fn new(cfg: RunConfig) -> Result<Self, CliError> {
        let params = MassParams::new(cfg.mu).map_err(|e| CliError::Usage(e.to_string()))?;
        let map = SectionMap::new(Integrator::new(params, cfg.integrator()));
        let cache = Cache::new(cfg.cache_dir.clone());
        Ok(Self { cfg, cache, map })
    }

    fn melnikov_config(&self) -> MelnikovConfig {
        let base = MelnikovConfig::default();
        MelnikovConfig { quad: QuadTol { rel: self.cfg.quad_tol, ..base.quad }, cauchy_tol: self.cfg.cauchy_tol, ..base }
    }

    fn sweep_inputs(&self) -> serde_json::Value {
        serde_json::json!({ "mu": self.cfg.mu, "J": self.cfg.grid(), "integ_tol": self.cfg.integ_tol, "mesh": self.cfg.mesh })
    }

    /// Inputs that determine the artifacts of `command`.
    pub fn command_inputs(&self, command: Command) -> serde_json::Value {
        let c = &self.cfg;
        let channels = &c.channels;
        let melnikov = serde_json::json!({ "sweep": self.sweep_inputs(), "quad_tol": c.quad_tol, "cauchy_tol": c.cauchy_tol });
        match command {
            Command::Porbit => serde_json::json!({ "mu": c.mu, "J": c.grid(), "integ_tol": c.integ_tol }),
            Command::Manifold => serde_json::json!({ "mu": c.mu, "J": c.j, "integ_tol": c.integ_tol }),
            Command::Homoclinic => serde_json::json!({ "sweep": self.sweep_inputs(), "channels": channels, "brent_tol": c.brent_tol }),
            Command::Splitting => serde_json::json!({ "sweep": self.sweep_inputs(), "channels": channels }),
            Command::Bounds => serde_json::json!({ "sweep": self.sweep_inputs(), "channels": channels, "horizon": c.horizon }),
            Command::Alpha | Command::Melnikov => serde_json::json!({ "melnikov": melnikov, "channels": channels }),
            Command::Variance | Command::Ansatz2 => {
                serde_json::json!({ "melnikov": melnikov, "pair": c.pair, "theta_nodes": c.theta_nodes })
            }
            Command::Skewshift => serde_json::json!({
                "melnikov": melnikov, "pair": c.pair, "e0": c.e0, "theta": c.theta, "J0": c.j0,
                "n_traj": c.n_traj, "n_steps": c.n_steps, "seed": c.seed,
            }),
            Command::All => serde_json::json!(Command::EACH.iter().map(|&c| self.command_inputs(c)).collect::<Vec<_>>()),
        }
    }

    pub fn command_key(&self, command: Command) -> String {
        cache::key(command.name(), &self.command_inputs(command))
    }

    /// Runs `command` into the output directory, through the cache.
    pub fn run(&self, command: Command) -> Result<Vec<Outcome>, CliError> {
        if command == Command::All {
            let mut out = Vec::new();
            for c in Command::EACH {
                let sub = Ctx::new(RunConfig { command: c, out_dir: self.cfg.out_dir.join(c.name()), ..self.cfg.clone() })?;
                out.extend(sub.run(c)?);
            }
            return Ok(out);
        }
        let key = self.command_key(command);
        let (entry, hit) = self.cache.get_or_make(&key, |dir| self.make(command, dir))?;
        let files = cache::publish(&entry, &self.cfg.out_dir)?;
        Ok(vec![Outcome { command, key, hit, files }])
    }

    fn make(&self, command: Command, dir: &Path) -> Result<(), CliError> {
        match command {
            Command::Porbit => self.make_porbit(dir),
            Command::Manifold => self.make_manifold(dir),
            Command::Homoclinic => self.make_homoclinic(dir),
            Command::Splitting => self.make_splitting(dir),
            Command::Bounds => self.make_bounds(dir),
            Command::Alpha => self.make_alpha(dir),
            Command::Melnikov => self.make_melnikov(dir),
            Command::Variance => self.make_variance(dir),
            Command::Ansatz2 => self.make_ansatz2(dir),
            Command::Skewshift => self.make_skewshift(dir),
            Command::All => unreachable!("expanded by run"),
        }
    }

    /// The periodic-orbit family on the grid.
    pub fn family(&self) -> Result<Vec<PeriodicOrbitRecord>, CliError> {
        let key = cache::key("family", &self.command_inputs(Command::Porbit));
        let (entry, _) = self.cache.get_or_make(&key, |dir| {
            let fam = porbit::continue_family(&self.map, &self.cfg.grid()).map_err(|e| lib_failure("porbit", &e))?;
            write_json(dir, "family.json", &fam)
        })?;
        cache::read_json(&entry, "family.json")
    }

    /// Channel records of all four channels on the grid.
    pub fn sweep(&self) -> Result<Vec<Cell<HomoclinicChannelRecord>>, CliError> {
        let key = cache::key("sweep", &self.sweep_inputs());
        let (entry, _) = self.cache.get_or_make(&key, |dir| {
            let grid = self.cfg.grid();
            let runs = homoclinic::sweep_channels(&self.map, &grid, self.cfg.mesh).map_err(|e| lib_failure("homoclinic", &e))?;
            let mut cells = Vec::new();
            for (c, run) in runs.into_iter().enumerate() {
                for (n, r) in run.into_iter().enumerate() {
                    let (value, error) = match r {
                        Ok(rec) => (Some(rec), None),
                        Err(e) => (None, Some(e.to_string())),
                    };
                    cells.push(Cell { channel: c + 1, J: grid[n], value, error });
                }
            }
            write_json(dir, "sweep.json", &cells)
        })?;
        cache::read_json(&entry, "sweep.json")
    }

    fn selected_sweep(&self) -> Result<Vec<Cell<HomoclinicChannelRecord>>, CliError> {
        Ok(self.sweep()?.into_iter().filter(|c| self.cfg.channels.contains(&c.channel)).collect())
    }

    /// Melnikov records of one channel on the grid.
    pub fn melnikov_channel(&self, channel: usize) -> Result<Vec<Cell<MelnikovRecord>>, CliError> {
        let inputs = serde_json::json!({
            "sweep": self.sweep_inputs(), "quad_tol": self.cfg.quad_tol, "cauchy_tol": self.cfg.cauchy_tol, "channel": channel,
        });
        let key = cache::key("melnikov-channel", &inputs);
        let (entry, _) = self.cache.get_or_make(&key, |dir| {
            let sweep: Vec<_> = self.sweep()?.into_iter().filter(|c| c.channel == channel).collect();
            let mcfg = self.melnikov_config();
            let cells: Vec<Cell<MelnikovRecord>> = sweep
                .par_iter()
                .map(|cell| {
                    let r = match &cell.value {
                        Some(rec) => melnikov::melnikov(&self.map, rec, &mcfg).map_err(|e| e.to_string()),
                        None => Err(cell.error.clone().unwrap_or_default()),
                    };
                    Cell { channel, J: cell.J, value: r.as_ref().ok().copied(), error: r.err() }
                })
                .collect();
            write_json(dir, "records.json", &cells)
        })?;
        cache::read_json(&entry, "records.json")
    }

    fn melnikov_selected(&self) -> Result<Vec<Cell<MelnikovRecord>>, CliError> {
        let mut all = Vec::new();
        for &c in &self.cfg.channels {
            all.extend(self.melnikov_channel(c)?);
        }
        Ok(all)
    }

    /// Records of the pair at the energies where both channels have one.
    fn pair_records(&self, command: &str) -> Result<(Vec<MelnikovRecord>, Vec<MelnikovRecord>, Vec<FailureRecord>), CliError> {
        let a = self.melnikov_channel(self.cfg.pair.0)?;
        let b = self.melnikov_channel(self.cfg.pair.1)?;
        let failures: Vec<FailureRecord> = a.iter().chain(&b).filter_map(|c| c.failure(command)).collect();
        let (mut ra, mut rb) = (Vec::new(), Vec::new());
        for (x, y) in a.iter().zip(&b) {
            if let (Some(x), Some(y)) = (x.value, y.value) {
                ra.push(x);
                rb.push(y);
            }
        }
        if ra.is_empty() {
            let first = failures.first().cloned();
            return Err(CliError::Numerical(first.unwrap_or(FailureRecord {
                command: command.into(),
                J: None,
                channel: None,
                message: "no energy with records for both channels".into(),
            })));
        }
        Ok((ra, rb, failures))
    }

    fn make_porbit(&self, dir: &Path) -> Result<(), CliError> {
        let fam = self.family()?;
        write(dir, "porbit.csv", csv_bytes(|w| porbit::write_family_csv(&fam, w))?)?;
        let clauses = vec!["'porbit.csv' using 1:4 with linespoints title 'T - 2 pi'".to_string()];
        write(dir, "porbit.gp", plot::script("porbit", "Period of the resonant family", "J", "T - 2 pi", &clauses))
    }

    fn make_manifold(&self, dir: &Path) -> Result<(), CliError> {
        let fail = |e: kirkwood::Error| CliError::numerical("manifold", Some(self.cfg.j), None, e);
        let po = porbit::find_resonant_po(&self.map, self.cfg.j, None).map_err(fail)?;
        let opts = GlobalizeOptions::default();
        let mut csv = Vec::new();
        let mut summary = Vec::new();
        for sign in [1.0, -1.0] {
            let branch = Branch::new(Stability::Unstable, sign);
            let u = manifold::globalize(&self.map, &po, branch, 0, &manifold::straddles_axis, &opts).map_err(fail)?;
            for curve in [manifold::stable_from_unstable(&u), u] {
                let mut buf = Vec::new();
                curve.write_csv(&mut buf)?;
                let body = if csv.is_empty() { &buf[..] } else { &buf[buf.iter().position(|&b| b == b'\n').map_or(0, |p| p + 1)..] };
                csv.extend_from_slice(body);
                summary.push(serde_json::json!({
                    "branch": curve.branch.label(), "iterates": curve.N, "samples": curve.samples.len(), "warnings": curve.warnings,
                }));
            }
        }
        write(dir, "manifold.csv", csv)?;
        write_json(dir, "manifold.json", &serde_json::json!({ "J": self.cfg.j, "branches": summary }))?;
        let clauses: Vec<String> = ["unstable+", "unstable-", "stable+", "stable-"]
            .iter()
            .map(|b| format!("'manifold.csv' using (strcol(1) eq '{b}' ? $3 : 1/0):4 with dots title '{b}'"))
            .collect();
        write(dir, "manifold.gp", plot::script("manifold", &format!("Manifolds at J = {}", self.cfg.j), "x", "p_x", &clauses))
    }

    fn write_failures(&self, dir: &Path, failures: &[FailureRecord]) -> Result<(), CliError> {
        write_json(dir, "failures.json", &failures)
    }

    fn make_homoclinic(&self, dir: &Path) -> Result<(), CliError> {
        let cells = self.selected_sweep()?;
        let records: Vec<HomoclinicChannelRecord> = cells.iter().filter_map(|c| c.value).collect();
        write(dir, "channels.csv", csv_bytes(|w| homoclinic::write_channels_csv(&records, w))?)?;
        let mut tangencies: Vec<Tangency> = Vec::new();
        for &c in &self.cfg.channels {
            let run: Vec<kirkwood::Result<HomoclinicChannelRecord>> = cells
                .iter()
                .filter(|x| x.channel == c)
                .map(|x| x.value.ok_or_else(|| kirkwood::Error::ChannelAbsent { channel: c, j: x.J, reason: "not computed".into() }))
                .collect();
            let found = homoclinic::tangencies(&self.map, &run, self.cfg.brent_tol).map_err(|e| lib_failure("homoclinic", &e))?;
            tangencies.extend(found);
        }
        let intervals: Vec<ChannelInterval> = homoclinic::channel_intervals(&tangencies, self.cfg.j_max, 0.005);
        write_json(dir, "tangencies.json", &tangencies)?;
        write_json(dir, "intervals.json", &intervals)?;
        self.write_failures(dir, &cells.iter().filter_map(|c| c.failure("homoclinic")).collect::<Vec<_>>())?;
        let clauses = plot::per_channel("channels.csv", 1, 3, &self.cfg.channels);
        write(dir, "channels.gp", plot::script("channels", "Symmetric homoclinic points", "J", "x_z", &clauses))
    }

    fn make_splitting(&self, dir: &Path) -> Result<(), CliError> {
        let cells = self.selected_sweep()?;
        let mut csv = String::from("J,i,theta_i\n");
        for r in cells.iter().filter_map(|c| c.value) {
            csv.push_str(&format!("{},{},{}\n", r.J, r.i, r.theta));
        }
        write(dir, "splitting.csv", csv)?;
        self.write_failures(dir, &cells.iter().filter_map(|c| c.failure("splitting")).collect::<Vec<_>>())?;
        let clauses = plot::per_channel("splitting.csv", 1, 3, &self.cfg.channels);
        write(dir, "splitting.gp", plot::script("splitting", "Splitting angles", "J", "theta_i", &clauses))
    }

    fn make_bounds(&self, dir: &Path) -> Result<(), CliError> {
        let cells = self.selected_sweep()?;
        let horizon = match self.cfg.horizon {
            Horizon::Auto => None,
            Horizon::Fixed(m) => Some(m),
        };
        let results: Vec<Cell<HomoclinicBounds>> = cells
            .par_iter()
            .map(|cell| {
                let r = match &cell.value {
                    Some(rec) => homoclinic::homoclinic_bounds(&self.map, rec, horizon).map_err(|e| e.to_string()),
                    None => Err(cell.error.clone().unwrap_or_default()),
                };
                Cell { channel: cell.channel, J: cell.J, value: r.as_ref().ok().copied(), error: r.err() }
            })
            .collect();
        let bounds: Vec<HomoclinicBounds> = results.iter().filter_map(|c| c.value).collect();
        write(dir, "bounds.csv", csv_bytes(|w| homoclinic::write_bounds_csv(&bounds, w))?)?;
        self.write_failures(dir, &results.iter().filter_map(|c| c.failure("bounds")).collect::<Vec<_>>())?;
        let mut clauses = plot::per_channel("bounds.csv", 1, 3, &self.cfg.channels);
        clauses.push("0.041 with lines dashtype 2 title 'bound'".into());
        write(dir, "bounds.gp", plot::script("bounds", "Action deviation along homoclinic orbits", "J", "max |L - L0|", &clauses))
    }

    fn make_alpha(&self, dir: &Path) -> Result<(), CliError> {
        let cells = self.melnikov_selected()?;
        let mut csv = String::from("J,i,alpha_plus,alpha_minus,alpha,N_used,tail_estimate\n");
        for r in cells.iter().filter_map(|c| c.value) {
            csv.push_str(&format!("{},{},{},{},{},{},{}\n", r.J, r.i, r.alpha_plus, r.alpha_minus, r.alpha, r.N_used, r.tail_estimate));
        }
        write(dir, "alpha.csv", csv)?;
        self.write_failures(dir, &cells.iter().filter_map(|c| c.failure("alpha")).collect::<Vec<_>>())?;
        let clauses = plot::per_channel("alpha.csv", 1, 5, &self.cfg.channels);
        write(dir, "alpha.gp", plot::script("alpha", "Phase shifts", "J", "alpha_i", &clauses))
    }

    fn make_melnikov(&self, dir: &Path) -> Result<(), CliError> {
        let cells = self.melnikov_selected()?;
        let records: Vec<MelnikovRecord> = cells.iter().filter_map(|c| c.value).collect();
        write(dir, "melnikov.csv", csv_bytes(|w| melnikov::write_melnikov_csv(&records, w))?)?;
        write_json(dir, "melnikov.json", &records)?;
        self.write_failures(dir, &cells.iter().filter_map(|c| c.failure("melnikov")).collect::<Vec<_>>())?;
        let mut clauses = plot::per_channel("melnikov.csv", 1, 5, &self.cfg.channels);
        clauses.extend(plot::per_channel("melnikov.csv", 1, 6, &self.cfg.channels));
        write(dir, "melnikov.gp", plot::script("melnikov", "Inner amplitudes", "J", "Re, Im B_in", &clauses))
    }

    fn make_variance(&self, dir: &Path) -> Result<(), CliError> {
        let (a, b, failures) = self.pair_records("variance")?;
        let surface = melnikov::sigma0_surface(&a, &b, &self.cfg.theta_grid()).map_err(|e| lib_failure("variance", &e))?;
        write(dir, "variance.csv", csv_bytes(|w| surface.write_csv(w))?)?;
        let mut min = (f64::INFINITY, f64::NAN, f64::NAN);
        let mut degenerate = 0;
        for (j, row) in surface.J.iter().zip(&surface.values) {
            for (t, v) in surface.theta.iter().zip(row) {
                match v {
                    Some(v) if *v < min.0 => min = (*v, *j, *t),
                    Some(_) => {}
                    None => degenerate += 1,
                }
            }
        }
        let summary = serde_json::json!({
            "pair": self.cfg.pair, "J_nodes": surface.J.len(), "theta_nodes": surface.theta.len(),
            "min_sigma0_sq": min.0, "argmin_J": min.1, "argmin_theta": min.2,
            "degenerate_nodes": degenerate, "positive": min.0 > 0.0 && min.0.is_finite(),
        });
        write_json(dir, "variance_summary.json", &summary)?;
        self.write_failures(dir, &failures)?;
        write(dir, "variance.gp", plot::heatmap("variance", "variance.csv", "sigma_0^2", "J", "theta"))
    }

    fn make_ansatz2(&self, dir: &Path) -> Result<(), CliError> {
        let (a, b, failures) = self.pair_records("ansatz2")?;
        let nodes = melnikov::ansatz2_check(&a, &b, &self.cfg.theta_grid(), self.cfg.mu).map_err(|e| lib_failure("ansatz2", &e))?;
        let mut csv = String::from("J,alpha_margin,alpha_ok,separation,separation_ok,sigma_min,sigma_ok\n");
        for n in &nodes {
            csv.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                n.J, n.alpha_margin, n.alpha_ok, n.separation, n.separation_ok, n.sigma_min, n.sigma_ok
            ));
        }
        write(dir, "ansatz2.csv", csv)?;
        let summary = serde_json::json!({
            "pair": self.cfg.pair,
            "alpha_ok": nodes.iter().all(|n| n.alpha_ok),
            "separation_ok": nodes.iter().all(|n| n.separation_ok),
            "sigma_ok": nodes.iter().all(|n| n.sigma_ok),
            "nodes": nodes,
        });
        write_json(dir, "ansatz2.json", &summary)?;
        self.write_failures(dir, &failures)
    }

    fn make_skewshift(&self, dir: &Path) -> Result<(), CliError> {
        let (a, b, failures) = self.pair_records("skewshift")?;
        let c = &self.cfg;
        let model = SkewShiftModel::from_records(&a, &b, c.theta, c.e0, c.mu).map_err(|e| lib_failure("skewshift", &e))?;
        let ens = EnsembleConfig::new(c.n_traj, c.n_steps, c.seed);
        let (report, stats) =
            skewshift::validate(&model, c.j0, 0.0, &ens).map_err(|e| CliError::numerical("skewshift", Some(c.j0), None, e))?;
        write_json(dir, "skewshift.json", &report)?;
        let mut csv = String::from("n,mean,variance\n");
        for k in 0..stats.steps.len() {
            csv.push_str(&format!("{},{},{}\n", stats.steps[k], stats.mean[k], stats.variance[k]));
        }
        write(dir, "skewshift_variance.csv", csv)?;
        write_json(dir, "skewshift_model.json", &model.data)?;
        self.write_failures(dir, &failures)?;
        let slope = c.e0 * c.e0 * report.sigma0_prediction;
        let clauses = vec![
            "'skewshift_variance.csv' using 1:3 with points title 'Var(I_n - I_0)'".to_string(),
            format!("{slope:e}*x with lines title 'e0^2 sigma_0^2 n'"),
        ];
        write(dir, "skewshift.gp", plot::script("skewshift", "Ensemble variance", "n", "variance", &clauses))
    }
}
