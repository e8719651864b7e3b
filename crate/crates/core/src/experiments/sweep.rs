use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run, RunConfig, RunRecord, TrainConfig};
use crate::error::{Error, Result};
use crate::models::{Activation, Family, ModelConfig, Placement};
use crate::tasks::TaskSpec;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub depths: Vec<usize>,
    pub widths: Vec<usize>,
    /// Width list used instead of `widths` for the given depth.
    #[serde(default)]
    pub widths_by_depth: BTreeMap<usize, Vec<usize>>,
    pub families: Vec<Family>,
    pub activations: Vec<Activation>,
}

impl Grid {
    pub fn widths_for(&self, depth: usize) -> &[usize] {
        self.widths_by_depth.get(&depth).unwrap_or(&self.widths)
    }

    pub fn len(&self) -> usize {
        let per_depth: usize = self.depths.iter().map(|&l| self.widths_for(l).len()).sum();
        per_depth * self.families.len() * self.activations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub task: TaskSpec,
    pub train: TrainConfig,
    pub grid: Grid,
    /// CP rank for the CP families.
    #[serde(default = "default_rank")]
    pub rank: usize,
    /// Trainable linear readout from the top layer to the target dimension.
    #[serde(default = "default_true")]
    pub readout: bool,
}

fn default_rank() -> usize {
    2
}

fn default_true() -> bool {
    true
}

impl SweepConfig {
    pub fn new(task: TaskSpec, grid: Grid) -> Self {
        let base = RunConfig::new(task, ModelConfig::linear_rnn(1, 2, 1));
        Self { task: base.task, train: base.train, grid, rank: default_rank(), readout: true }
    }

    pub fn paper_scale(mut self) -> Self {
        let base = RunConfig {
            task: self.task.clone(),
            model: ModelConfig::linear_rnn(1, 2, 1),
            train: self.train.clone(),
        }
        .paper_scale();
        self.task = base.task;
        self.train = base.train;
        self
    }

    /// One run config per grid cell, in grid order.
    pub fn cells(&self) -> Vec<RunConfig> {
        let mut out = Vec::with_capacity(self.grid.len());
        for &family in &self.grid.families {
            for &activation in &self.grid.activations {
                for &depth in &self.grid.depths {
                    for &n in self.grid.widths_for(depth) {
                        let mut model = ModelConfig::new(family, depth, n, self.task.d).with_activation(activation);
                        if family.has_cp() {
                            model = model.with_rank(self.rank);
                        }
                        if self.readout {
                            model = model.with_readout(self.task.d);
                        }
                        out.push(RunConfig { task: self.task.clone(), model, train: self.train.clone() });
                    }
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub task: String,
    pub family: String,
    pub placement: String,
    pub activation: String,
    pub n: usize,
    #[serde(rename = "L")]
    pub depth: usize,
    pub units: usize,
    pub params: usize,
    pub metric_mean: f64,
    pub metric_std: f64,
    pub best_metric: f64,
    pub completed: usize,
    pub failed: usize,
    /// Every completed seed reached the success threshold.
    pub solved: bool,
    pub config_hash: String,
}

impl SweepCell {
    fn from_record(r: &RunRecord) -> Self {
        let m = &r.config.model;
        Self {
            task: r.config.task.kind.name().to_string(),
            family: m.family.name().to_string(),
            placement: match m.activation.placement {
                Placement::Recurrent => "recurrent",
                Placement::DepthOnly => "depth_only",
            }
            .to_string(),
            activation: format!("{:?}", m.activation.kind).to_lowercase(),
            n: m.hidden,
            depth: m.depth,
            units: m.hidden * m.depth,
            params: r.seeds.first().map_or(0, |s| s.param_count),
            metric_mean: r.aggregate.test_mean,
            metric_std: r.aggregate.test_std,
            best_metric: r.best_test(),
            completed: r.aggregate.completed,
            failed: r.aggregate.failed,
            solved: r.solved(),
            config_hash: r.config_hash.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    pub records: Vec<RunRecord>,
}

impl SweepResult {
    /// Smallest width whose cell is solved, per depth, for cells matching
    /// `family` and `placement`.
    pub fn minimal_solving_width(&self, family: Family, placement: Placement) -> BTreeMap<usize, Option<usize>> {
        let mut out: BTreeMap<usize, Option<usize>> = BTreeMap::new();
        for c in self.select(family, placement) {
            let e = out.entry(c.depth).or_insert(None);
            if c.solved && e.is_none_or(|w| c.n < w) {
                *e = Some(c.n);
            }
        }
        out
    }

    pub fn select(&self, family: Family, placement: Placement) -> impl Iterator<Item = &SweepCell> {
        let placement = match placement {
            Placement::Recurrent => "recurrent",
            Placement::DepthOnly => "depth_only",
        };
        self.cells.iter().filter(move |c| c.family == family.name() && c.placement == placement)
    }
}

/// Runs every grid cell (in parallel when threads are available). Failed
/// seeds are kept in their records; cells and records are ordered by
/// config hash.
pub fn sweep(config: &SweepConfig) -> Result<SweepResult> {
    if config.grid.is_empty() {
        return Err(Error::InvalidArgument("sweep grid is empty".into()));
    }
    let cells = config.cells();
    for c in &cells {
        c.validate()?;
    }
    let mut records = cells.par_iter().map(run).collect::<Result<Vec<_>>>()?;
    records.sort_by(|a, b| a.config_hash.cmp(&b.config_hash));
    let cells = records.iter().map(SweepCell::from_record).collect();
    Ok(SweepResult { cells, records })
}

pub fn write_sweep_csv<W: Write>(w: W, cells: &[SweepCell]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    for c in cells {
        wr.serialize(c)?;
    }
    wr.flush()?;
    Ok(())
}

/// X axes available for plot-data files: hidden size, total hidden units
/// `n·L`, and trainable parameter count.
pub const PLOT_AXES: [&str; 3] = ["n", "units", "params"];

#[derive(Serialize)]
struct PlotRow {
    x: usize,
    y: f64,
    y_err: f64,
}

/// Writes one `x,y,y_err` series per (family, placement, depth) for the
/// requested axis. Returns the series names in write order; each series is
/// handed to `open` to obtain its writer.
pub fn write_plot_data<W, F>(cells: &[SweepCell], axis: &str, mut open: F) -> Result<Vec<String>>
where
    W: Write,
    F: FnMut(&str) -> Result<W>,
{
    if !PLOT_AXES.contains(&axis) {
        return Err(Error::InvalidArgument(format!("unknown plot axis {axis:?}, expected one of {PLOT_AXES:?}")));
    }
    let mut series: BTreeMap<String, Vec<PlotRow>> = BTreeMap::new();
    for c in cells {
        let name = format!("{}_{}_{}_L{}_by_{}", c.task, c.family, c.placement, c.depth, axis);
        let x = match axis {
            "n" => c.n,
            "units" => c.units,
            _ => c.params,
        };
        series.entry(name).or_default().push(PlotRow { x, y: c.metric_mean, y_err: c.metric_std });
    }
    let mut names = Vec::with_capacity(series.len());
    for (name, mut rows) in series {
        rows.sort_by_key(|r| r.x);
        let mut wr = csv::Writer::from_writer(open(&name)?);
        for r in &rows {
            wr.serialize(r)?;
        }
        wr.flush()?;
        names.push(name);
    }
    Ok(names)
}
