//! Exhaustive sweep over array shapes `(R, C)` and Pareto filtering on
//! (efficiency up, memory traffic down).

use std::cmp::Ordering;
use std::ops::RangeInclusive;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::EngineConfig;
use crate::error::{Error, Result};
use crate::perfmodel::layer_perf;
use crate::workload::Network;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Constraints {
    /// Only cores counts divisible by this are feasible.
    pub core_multiple: Option<usize>,
    /// Peak stream bandwidth over all layers, bytes per clock.
    pub max_bytes_per_clock: Option<u64>,
    /// Rotator depth limit, beats per core.
    pub max_wsram_depth: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct DseQuery {
    pub networks: Vec<Network>,
    pub rows: RangeInclusive<usize>,
    pub cores: RangeInclusive<usize>,
    pub constraints: Constraints,
    /// Rebind fully-connected batch rows to `R` at every point.
    pub batch_matrix_layers_by_rows: bool,
    pub word_bits: u32,
}

impl DseQuery {
    pub fn new(networks: Vec<Network>, rows: RangeInclusive<usize>, cores: RangeInclusive<usize>) -> Self {
        DseQuery {
            networks,
            rows,
            cores,
            constraints: Constraints::default(),
            batch_matrix_layers_by_rows: true,
            word_bits: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() || self.cores.is_empty() || *self.rows.start() == 0 || *self.cores.start() == 0 {
            return Err(Error::Config(format!("empty grid {:?} x {:?}", self.rows, self.cores)));
        }
        self.networks.iter().try_for_each(|n| n.validate())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkScore {
    pub name: String,
    pub conv_efficiency: Option<f64>,
    /// Clock-weighted over all layers of the network.
    pub efficiency: f64,
    /// Conv traffic plus matrix traffic divided by the batch.
    pub words_per_frame: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Feasibility {
    pub mappable: bool,
    pub core_multiple: bool,
    pub bandwidth: bool,
    pub wsram_depth: bool,
}

impl Feasibility {
    pub fn all(&self) -> bool {
        self.mappable && self.core_multiple && self.bandwidth && self.wsram_depth
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DsePoint {
    pub rows: usize,
    pub cores: usize,
    pub networks: Vec<NetworkScore>,
    /// Clock-weighted efficiency across every layer of every network.
    pub efficiency: f64,
    pub words_per_frame: f64,
    pub peak_bytes_per_clock: u64,
    pub feasible: Feasibility,
}

impl DsePoint {
    pub fn is_feasible(&self) -> bool {
        self.feasible.all()
    }

    pub fn network(&self, name: &str) -> Option<&NetworkScore> {
        self.networks.iter().find(|n| n.name == name)
    }
}

fn infeasible(rows: usize, cores: usize, feasible: Feasibility) -> DsePoint {
    DsePoint {
        rows,
        cores,
        networks: Vec::new(),
        efficiency: f64::NAN,
        words_per_frame: f64::NAN,
        peak_bytes_per_clock: 0,
        feasible,
    }
}

pub fn evaluate_point(query: &DseQuery, rows: usize, cores: usize) -> DsePoint {
    let cfg = EngineConfig::new(rows, cores);
    let c = &query.constraints;
    let mut feasible = Feasibility {
        mappable: true,
        core_multiple: c.core_multiple.is_none_or(|m| m > 0 && cores.is_multiple_of(m)),
        bandwidth: true,
        wsram_depth: true,
    };
    let (mut clocks, mut macs, mut words) = (0u64, 0u64, 0.0f64);
    let mut peak_bytes = 0u64;
    let mut deepest = 0usize;
    let mut networks = Vec::with_capacity(query.networks.len());
    for net in &query.networks {
        let net = if query.batch_matrix_layers_by_rows { net.with_matrix_batch(rows) } else { net.clone() };
        let (mut n_clocks, mut n_macs, mut n_words) = (0u64, 0u64, 0.0f64);
        let (mut c_clocks, mut c_macs) = (0u64, 0u64);
        for layer in &net.layers {
            let Ok(perf) = layer_perf(layer, &cfg, 1.0) else {
                feasible.mappable = false;
                return infeasible(rows, cores, feasible);
            };
            n_clocks += perf.clocks;
            n_macs += perf.ops.macs_valid;
            n_words += perf.words.total() as f64 / layer.batch_rows().max(1) as f64;
            if layer.is_conv() {
                c_clocks += perf.clocks;
                c_macs += perf.ops.macs_valid;
            }
            peak_bytes = peak_bytes.max(perf.bytes_per_clock(query.word_bits));
            if layer.batch * perf.params.blocks * layer.width > 1 {
                deepest = deepest.max(layer.stride_w * layer.in_channels * layer.kernel_h);
            }
        }
        let pes = cfg.pe_count() as f64;
        networks.push(NetworkScore {
            name: net.name.clone(),
            conv_efficiency: (c_clocks > 0).then(|| c_macs as f64 / (pes * c_clocks as f64)),
            efficiency: n_macs as f64 / (pes * n_clocks as f64),
            words_per_frame: n_words,
        });
        clocks += n_clocks;
        macs += n_macs;
        words += n_words;
    }
    feasible.bandwidth = c.max_bytes_per_clock.is_none_or(|m| peak_bytes <= m);
    feasible.wsram_depth = c.max_wsram_depth.is_none_or(|d| deepest <= d);
    DsePoint {
        rows,
        cores,
        networks,
        efficiency: macs as f64 / (cfg.pe_count() as f64 * clocks as f64),
        words_per_frame: words,
        peak_bytes_per_clock: peak_bytes,
        feasible,
    }
}

/// Every grid point in `(R, C)` order, evaluated in parallel.
pub fn sweep(query: &DseQuery) -> Result<Vec<DsePoint>> {
    query.validate()?;
    let grid: Vec<(usize, usize)> = query
        .rows
        .clone()
        .flat_map(|r| query.cores.clone().map(move |c| (r, c)))
        .collect();
    Ok(grid.par_iter().map(|&(r, c)| evaluate_point(query, r, c)).collect())
}

fn dominates(a: &DsePoint, b: &DsePoint) -> bool {
    a.efficiency >= b.efficiency
        && a.words_per_frame <= b.words_per_frame
        && (a.efficiency > b.efficiency || a.words_per_frame < b.words_per_frame)
}

/// Non-dominated feasible points, in `(R, C)` order. Equal points are all kept.
pub fn pareto(points: &[DsePoint]) -> Vec<DsePoint> {
    let feasible: Vec<&DsePoint> = points.iter().filter(|p| p.is_feasible()).collect();
    let mut front: Vec<DsePoint> = feasible
        .iter()
        .filter(|p| !feasible.iter().any(|q| dominates(q, p)))
        .map(|p| (*p).clone())
        .collect();
    front.sort_by_key(|p| (p.rows, p.cores));
    front
}

/// Least-traffic feasible point whose efficiency is within `tolerance` of the best.
/// Ties prefer fewer PEs, then fewer cores.
pub fn recommend(points: &[DsePoint], tolerance: f64) -> Option<&DsePoint> {
    let best = points.iter().filter(|p| p.is_feasible()).map(|p| p.efficiency).fold(f64::NAN, f64::max);
    points
        .iter()
        .filter(|p| p.is_feasible() && p.efficiency >= best - tolerance)
        .min_by(|a, b| {
            a.words_per_frame
                .partial_cmp(&b.words_per_frame)
                .unwrap_or(Ordering::Equal)
                .then((a.rows * a.cores).cmp(&(b.rows * b.cores)))
                .then(a.cores.cmp(&b.cores))
        })
}
