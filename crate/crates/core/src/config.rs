//! Typed experiment configuration (TOML, unknown keys rejected).

use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::channel::sigma_grid;
use crate::dataio::{parse_libsvm, partition, synth_logistic, Dataset, PartitionScheme};
use crate::engine::{MethodKind, MethodOptions, ReceiverKind, World};
use crate::error::{Error, Result};
use crate::gp::{GpOptions, PosteriorSign, PosteriorSolver, TauChoice};
use crate::loss::{quadratic_problem, GlobalObjective, LocalObjective, LogisticLoss};
use crate::receiver::{DcOptions, InnerSolver};
use crate::scheduler::{GibbsOptions, SchedulerKind};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
#[derive(Default)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub channel: ChannelConfig,
    pub scheduler: SchedulerConfig,
    pub receiver: ReceiverConfig,
    pub gp: GpConfig,
    pub run: RunSection,
    pub bounds: BoundsConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Synthetic,
    Libsvm,
    Quadratic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartitionKind {
    Iid,
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    pub path: Option<PathBuf>,
    pub features: usize,
    pub samples: usize,
    pub separation: f64,
    pub seed: u64,
    pub max_abs_scale: bool,
    pub regularization: f64,
    pub clients: usize,
    pub partition: PartitionKind,
    pub dirichlet_beta: f64,
    /// Quadratic benchmark: curvature spectrum and per-client sample count.
    pub eig_min: f64,
    pub eig_max: f64,
    pub samples_per_client: usize,
    pub center_scale: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            kind: DatasetKind::Synthetic,
            path: None,
            features: 30,
            samples: 2000,
            separation: 2.0,
            seed: 1,
            max_abs_scale: false,
            regularization: 0.1,
            clients: 20,
            partition: PartitionKind::Iid,
            dirichlet_beta: 0.5,
            eig_min: 1.0,
            eig_max: 2.0,
            samples_per_client: 50,
            center_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelConfig {
    pub antennas: usize,
    pub p0: f64,
    pub sigma_step: f64,
    pub sigma_count: usize,
    pub sigma_scale: f64,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        Self {
            antennas: 5,
            p0: 1.0,
            sigma_step: 0.005,
            sigma_count: 200,
            sigma_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchedulerName {
    Gibbs,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SchedulerConfig {
    pub kind: SchedulerName,
    pub rho: f64,
    pub sweeps: usize,
    pub cooling: f64,
    pub uniform_count: Option<usize>,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        let g = GibbsOptions::default();
        Self {
            kind: SchedulerName::Gibbs,
            rho: g.rho,
            sweeps: g.sweeps,
            cooling: g.cooling,
            uniform_count: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReceiverName {
    Dc,
    Mrc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InnerSolverName {
    Barrier,
    Projected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReceiverConfig {
    pub kind: ReceiverName,
    pub zeta: f64,
    pub max_iter: usize,
    pub tol: f64,
    pub inner_solver: InnerSolverName,
}

impl Default for ReceiverConfig {
    fn default() -> Self {
        let d = DcOptions::default();
        Self {
            kind: ReceiverName::Dc,
            zeta: d.zeta,
            max_iter: d.max_iter,
            tol: d.tol,
            inner_solver: InnerSolverName::Barrier,
        }
    }
}

/// `"median"` or a positive number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TauSetting {
    Value(f64),
    Name(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignName {
    Paper,
    Standard,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosteriorSolverName {
    Cholesky,
    Cg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GpConfig {
    pub window: usize,
    pub tau: TauSetting,
    pub jitter: f64,
    pub posterior_sign: SignName,
    pub solver: PosteriorSolverName,
}

impl Default for GpConfig {
    fn default() -> Self {
        Self {
            window: 20,
            tau: TauSetting::Name("median".into()),
            jitter: 1e-6,
            posterior_sign: SignName::Paper,
            solver: PosteriorSolverName::Cholesky,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSection {
    pub methods: Vec<String>,
    pub rounds: usize,
    pub seeds: Vec<u64>,
    pub first_order_rate: f64,
    pub warmup_rounds: usize,
    pub probe_delta: bool,
    pub timing: bool,
    pub output_dir: PathBuf,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            methods: vec!["gpfl".into(), "fedavg_air".into(), "bfgs_air".into()],
            rounds: 50,
            seeds: vec![0],
            first_order_rate: 0.1,
            warmup_rounds: 2,
            probe_delta: true,
            timing: false,
            output_dir: PathBuf::from("out"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum T0FormName {
    Corrected,
    Printed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BoundsConfig {
    /// Fixed δ; the largest probed δ̂ of each method is used when absent.
    pub delta: Option<f64>,
    pub t0_form: T0FormName,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        Self {
            delta: None,
            t0_form: T0FormName::Corrected,
        }
    }
}


fn invalid(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.dataset;
        if d.clients < 1 {
            return Err(invalid("dataset.clients must be at least 1"));
        }
        if self.channel.antennas < 1 {
            return Err(invalid("channel.antennas must be at least 1"));
        }
        if !(self.channel.p0 > 0.0) {
            return Err(invalid("channel.p0 must be positive"));
        }
        if !(self.channel.sigma_scale >= 0.0) || !(self.channel.sigma_step > 0.0) || self.channel.sigma_count == 0 {
            return Err(invalid("channel sigma grid must be positive and sigma_scale non-negative"));
        }
        if !(d.regularization > 0.0) && d.kind != DatasetKind::Quadratic {
            return Err(invalid("dataset.regularization must be positive"));
        }
        if d.kind == DatasetKind::Libsvm && d.path.is_none() {
            return Err(invalid("dataset.path is required for libsvm data"));
        }
        if d.kind == DatasetKind::Quadratic && !(d.eig_min > 0.0 && d.eig_max >= d.eig_min) {
            return Err(invalid("dataset eig_min/eig_max must satisfy 0 < eig_min <= eig_max"));
        }
        if d.partition == PartitionKind::Dirichlet && !(d.dirichlet_beta > 0.0) {
            return Err(invalid("dataset.dirichlet_beta must be positive"));
        }
        self.tau_choice()?;
        if !(self.gp.jitter > 0.0) {
            return Err(invalid("gp.jitter must be positive"));
        }
        if !(self.receiver.zeta >= 0.0) || self.receiver.max_iter == 0 {
            return Err(invalid("receiver.zeta must be non-negative and max_iter positive"));
        }
        if !(self.scheduler.cooling > 0.0 && self.scheduler.cooling <= 1.0) {
            return Err(invalid("scheduler.cooling must lie in (0, 1]"));
        }
        if self.run.methods.is_empty() {
            return Err(invalid("run.methods is empty"));
        }
        self.methods()?;
        if self.run.seeds.is_empty() {
            return Err(invalid("run.seeds is empty"));
        }
        if !(self.run.first_order_rate > 0.0) {
            return Err(invalid("run.first_order_rate must be positive"));
        }
        if let Some(delta) = self.bounds.delta {
            if !(delta >= 0.0) {
                return Err(invalid("bounds.delta must be non-negative"));
            }
        }
        Ok(())
    }

    pub fn methods(&self) -> Result<Vec<MethodKind>> {
        self.run.methods.iter().map(|m| m.parse()).collect()
    }

    pub fn tau_choice(&self) -> Result<TauChoice> {
        match &self.gp.tau {
            TauSetting::Name(n) if n == "median" => Ok(TauChoice::Median),
            TauSetting::Value(v) if *v > 0.0 && v.is_finite() => Ok(TauChoice::Fixed(*v)),
            other => Err(invalid(format!("gp.tau must be \"median\" or a positive number, got {other:?}"))),
        }
    }

    pub fn gp_options(&self) -> Result<GpOptions> {
        Ok(GpOptions {
            window: self.gp.window,
            tau: self.tau_choice()?,
            jitter: self.gp.jitter,
            sign: match self.gp.posterior_sign {
                SignName::Paper => PosteriorSign::Paper,
                SignName::Standard => PosteriorSign::Standard,
            },
            solver: match self.gp.solver {
                PosteriorSolverName::Cholesky => PosteriorSolver::Cholesky,
                PosteriorSolverName::Cg => PosteriorSolver::ConjugateGradient,
            },
        })
    }

    pub fn method_options(&self, method: MethodKind) -> Result<MethodOptions> {
        Ok(MethodOptions {
            method,
            first_order_rate: self.run.first_order_rate,
            warmup_rounds: self.run.warmup_rounds,
            gp: self.gp_options()?,
            probe_delta: self.run.probe_delta,
            timing: self.run.timing,
        })
    }

    fn load_dataset(&self) -> Result<Dataset> {
        let d = &self.dataset;
        let mut data = match d.kind {
            DatasetKind::Synthetic => synth_logistic(d.features, d.samples, d.separation, d.seed)?.0,
            DatasetKind::Libsvm => {
                let path = d.path.as_ref().expect("validated");
                let file = std::fs::File::open(path)?;
                parse_libsvm(std::io::BufReader::new(file))?
            }
            DatasetKind::Quadratic => unreachable!("quadratic problems carry no samples"),
        };
        if d.max_abs_scale {
            data.max_abs_scale();
        }
        Ok(data)
    }

    pub fn objective(&self) -> Result<GlobalObjective> {
        let d = &self.dataset;
        if d.kind == DatasetKind::Quadratic {
            let mut r = crate::rng::stream(d.seed, &[crate::rng::tag::DATA]);
            let center = DVector::from_fn(d.features, |_, _| crate::rng::normal(&mut r)) * (d.center_scale / (d.features as f64).sqrt());
            return quadratic_problem(d.features, d.eig_min, d.eig_max, d.clients, d.samples_per_client, center, d.seed);
        }
        let data = self.load_dataset()?;
        let scheme = match d.partition {
            PartitionKind::Iid => PartitionScheme::Iid,
            PartitionKind::Dirichlet => PartitionScheme::Dirichlet { beta: d.dirichlet_beta },
        };
        let parts = partition(&data.samples, d.clients, scheme, d.seed)?;
        let clients = parts
            .assignments
            .iter()
            .map(|idx| {
                let (x, y) = data.dense(idx);
                LogisticLoss::new(x, y, d.regularization).map(LocalObjective::Logistic)
            })
            .collect::<Result<Vec<_>>>()?;
        GlobalObjective::new(clients)
    }

    pub fn world(&self) -> Result<World> {
        let objective = self.objective()?;
        let constants = objective.constants();
        let optimum = Some(objective.optimum()?);
        let scheduler = match self.scheduler.kind {
            SchedulerName::Gibbs => SchedulerKind::Gibbs,
            SchedulerName::Uniform => SchedulerKind::Uniform {
                count: self.scheduler.uniform_count,
            },
        };
        let receiver = match self.receiver.kind {
            ReceiverName::Mrc => ReceiverKind::Mrc,
            ReceiverName::Dc => ReceiverKind::Dc(DcOptions {
                zeta: self.receiver.zeta,
                max_iter: self.receiver.max_iter,
                tol: self.receiver.tol,
                solver: match self.receiver.inner_solver {
                    InnerSolverName::Barrier => InnerSolver::Barrier,
                    InnerSolverName::Projected => InnerSolver::ProjectedGradient,
                },
            }),
        };
        Ok(World {
            objective,
            constants,
            optimum,
            sigma_grid: sigma_grid(self.channel.sigma_step, self.channel.sigma_count),
            sigma_scale: self.channel.sigma_scale,
            antennas: self.channel.antennas,
            p0: self.channel.p0,
            scheduler,
            gibbs: GibbsOptions {
                sweeps: self.scheduler.sweeps,
                rho: self.scheduler.rho,
                cooling: self.scheduler.cooling,
            },
            receiver,
        })
    }

    /// Sets a parameter by dotted path (`gp.window`) or alias (`r`,
    /// `sigma_scale`) from its textual value.
    pub fn set_param(&mut self, name: &str, value: &str) -> Result<()> {
        let path = match name {
            "r" => "gp.window",
            "sigma_scale" => "channel.sigma_scale",
            "tau" => "gp.tau",
            other => other,
        };
        let (section, key) = path
            .split_once('.')
            .ok_or_else(|| invalid(format!("unknown parameter `{name}`")))?;
        let mut doc: toml::Table = toml::from_str(&self.to_toml()).expect("round-trips");
        let table = doc
            .get_mut(section)
            .and_then(|v| v.as_table_mut())
            .ok_or_else(|| invalid(format!("unknown parameter `{name}`")))?;
        let known = table.contains_key(key) || self.optional_key(section, key);
        if !known {
            return Err(invalid(format!("unknown parameter `{name}`")));
        }
        let parsed: toml::Value = toml::from_str::<toml::Table>(&format!("v = {value}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(value.to_string()));
        table.insert(key.to_string(), parsed);
        let next: RunConfig = toml::from_str(&toml::to_string(&doc).expect("table serializes"))
            .map_err(|e| invalid(format!("bad value `{value}` for `{name}`: {}", e.message())))?;
        next.validate()?;
        *self = next;
        Ok(())
    }

    fn optional_key(&self, section: &str, key: &str) -> bool {
        matches!((section, key), ("dataset", "path") | ("scheduler", "uniform_count") | ("bounds", "delta"))
    }
}
