//! Run configuration files: the training fields plus a data source.
//!
//! The data source is either `data = <dataset dir>` (relative paths resolve
//! against the config file's directory) or a simulation described by
//! `process = ou` and optional overrides: `n_train`, `n_test`, `data_seed`,
//! `t0`, `dt`, `steps`, `substeps`, `solver`, `x0_mean`, `x0_halfwidth` and
//! any of the process's parameters (e.g. `kappa = 0.1`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use sdegan_core::dataset::{default_substeps, DEFAULT_TEST, DEFAULT_TRAIN};
use sdegan_core::sde::SolverOptions;
use sdegan_core::training::{parse_kv, parse_scheme, TrainConfig};
use sdegan_core::{ProcessKind, ProcessSpec, TimeGrid};

use crate::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSpec {
    pub process: ProcessSpec,
    pub grid: TimeGrid,
    pub n_train: usize,
    pub n_test: usize,
    pub seed: u64,
    pub solver: SolverOptions,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DataSpec {
    Dir(PathBuf),
    Simulate(SimulationSpec),
    Unset,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub data: DataSpec,
}

fn field_error(key: &str, value: &str, what: &str) -> CliError {
    CliError::usage(format!("config field {key}: cannot parse {value:?} as {what}"))
}

fn take<T: std::str::FromStr>(map: &mut BTreeMap<String, String>, key: &str, what: &str) -> CliResult<Option<T>> {
    match map.remove(key) {
        None => Ok(None),
        Some(v) => v.parse().map(Some).map_err(|_| field_error(key, &v, what)),
    }
}

impl SimulationSpec {
    /// Benchmark settings for `kind` with the simulation keys of `map` applied
    /// (and removed). Process parameters are recognized by name.
    pub fn from_map(kind: ProcessKind, map: &mut BTreeMap<String, String>) -> CliResult<Self> {
        let mut process = ProcessSpec::benchmark(kind)?;
        let bench = TimeGrid::benchmark();
        let t0 = take(map, "t0", "a number")?.unwrap_or(bench.t0);
        let dt = take(map, "dt", "a number")?.unwrap_or(bench.dt);
        let steps = take(map, "steps", "a positive integer")?.unwrap_or(bench.steps);
        let grid = TimeGrid::new(t0, dt, steps)?;
        let n_train = take(map, "n_train", "a positive integer")?.unwrap_or(DEFAULT_TRAIN);
        let n_test = take(map, "n_test", "a positive integer")?.unwrap_or(DEFAULT_TEST);
        let seed = take(map, "data_seed", "an unsigned integer")?.unwrap_or(0);
        let substeps = take(map, "substeps", "a positive integer")?.unwrap_or(default_substeps(kind));
        if substeps == 0 {
            return Err(CliError::usage("config field substeps must be positive"));
        }
        let scheme = match map.remove("solver") {
            Some(v) => parse_scheme(&v).map_err(|_| field_error("solver", &v, "em or heun"))?,
            None => sdegan_core::sde::Scheme::EulerMaruyama,
        };
        if let Some(m) = take(map, "x0_mean", "a number")? {
            process.x0_mean = m;
        }
        if let Some(h) = take(map, "x0_halfwidth", "a number")? {
            process.x0_halfwidth = h;
        }
        let names: Vec<String> = process.params.keys().cloned().collect();
        for name in names {
            if let Some(v) = take::<f64>(map, &name, "a number")? {
                process = process.with_param(&name, v)?;
            }
        }
        process.validate()?;
        Ok(Self {
            process,
            grid,
            n_train,
            n_test,
            seed,
            solver: SolverOptions { scheme, substeps },
        })
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new(""));
        Self::parse(&text, &path.display().to_string(), base)
    }

    pub fn parse(text: &str, source: &str, base_dir: &Path) -> CliResult<Self> {
        let mut map = parse_kv(text, source)?;
        let train = TrainConfig::from_map(&mut map)?;
        let dir = map.remove("data");
        let process = map.remove("process");
        let data = match (dir, process) {
            (Some(_), Some(_)) => return Err(CliError::usage("config sets both data and process; choose one data source")),
            (Some(d), None) => DataSpec::Dir(base_dir.join(d)),
            (None, Some(p)) => {
                let kind: ProcessKind = p.parse()?;
                DataSpec::Simulate(SimulationSpec::from_map(kind, &mut map)?)
            }
            (None, None) => DataSpec::Unset,
        };
        if let Some(key) = map.keys().next() {
            return Err(CliError::usage(format!("unknown config field {key} in {source}")));
        }
        Ok(Self { train, data })
    }
}

/// Hermite orders from `4`, `1..6` (inclusive) or `1,2,3,4,6`.
pub fn parse_orders(spec: &str) -> CliResult<Vec<usize>> {
    let bad = || CliError::usage(format!("cannot parse hermite order list {spec:?} (examples: 4, 1..6, 1,2,4)"));
    let mut orders = Vec::new();
    for part in spec.split(',').map(str::trim) {
        if let Some((a, b)) = part.split_once("..") {
            let b = b.strip_prefix('=').unwrap_or(b);
            let (a, b): (usize, usize) = (a.trim().parse().map_err(|_| bad())?, b.trim().parse().map_err(|_| bad())?);
            if a > b {
                return Err(bad());
            }
            orders.extend(a..=b);
        } else {
            orders.push(part.parse().map_err(|_| bad())?);
        }
    }
    orders.sort_unstable();
    orders.dedup();
    if orders.is_empty() {
        return Err(bad());
    }
    Ok(orders)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simulation_overrides_apply() {
        let text = "process = ou\nkappa = 0.1\nn_train = 200\nn_test = 60\nsteps = 49\nbatch_size = 16\n";
        let cfg = RunConfig::parse(text, "t", Path::new("")).unwrap();
        assert_eq!(cfg.train.batch_size, 16);
        let DataSpec::Simulate(sim) = cfg.data else { panic!("expected simulation") };
        assert_eq!(sim.process.param("kappa").unwrap(), 0.1);
        assert_eq!(sim.process.param("alpha").unwrap(), 23.0);
        assert_eq!((sim.n_train, sim.n_test, sim.grid.steps), (200, 60, 49));
        assert_eq!(sim.solver.substeps, default_substeps(ProcessKind::Ou));
    }

    #[test]
    fn data_dir_resolves_against_config_dir() {
        let cfg = RunConfig::parse("data = ds\n", "t", Path::new("/runs")).unwrap();
        assert_eq!(cfg.data, DataSpec::Dir(PathBuf::from("/runs/ds")));
    }

    #[test]
    fn errors_name_the_field() {
        let err = RunConfig::parse("process = ou\nkapa = 1\n", "t", Path::new("")).unwrap_err();
        assert!(err.to_string().contains("kapa"), "{err}");
        let err = RunConfig::parse("batch_size = many\n", "t", Path::new("")).unwrap_err();
        assert!(err.to_string().contains("batch_size"), "{err}");
        assert_eq!(err.exit_code(), crate::EXIT_USAGE);
        let err = RunConfig::parse("data = x\nprocess = ou\n", "t", Path::new("")).unwrap_err();
        assert_eq!(err.exit_code(), crate::EXIT_USAGE);
    }

    #[test]
    fn order_lists() {
        assert_eq!(parse_orders("4").unwrap(), vec![4]);
        assert_eq!(parse_orders("1..6").unwrap(), vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(parse_orders("6,1,2,3,4").unwrap(), vec![1, 2, 3, 4, 6]);
        assert!(parse_orders("3..1").is_err());
        assert!(parse_orders("a").is_err());
    }
}
