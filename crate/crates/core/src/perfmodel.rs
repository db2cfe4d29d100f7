//! Closed-form clocks, efficiency, memory traffic and bandwidth per layer.
//!
//! Output traffic counts the words the array actually streams out:
//! `T N L W_out E S_W R`, one `E S_W R` column per output column.

use serde::{Deserialize, Serialize};

use crate::engine::EngineConfig;
use crate::error::Result;
use crate::tiling::{derive_params, DerivedParams};
use crate::workload::{count_macs, LayerDescriptor, Network, OpCounts};

pub fn clocks(layer: &LayerDescriptor, cfg: &EngineConfig) -> Result<u64> {
    let p = derive_params(layer, cfg)?;
    Ok(clocks_from(layer, &p))
}

fn iteration_clocks(layer: &LayerDescriptor, p: &DerivedParams) -> u64 {
    let phases = (layer.batch * p.blocks * layer.width) as u64;
    p.config_stall as u64 + phases * (p.shift_stall + layer.in_channels * layer.kernel_h) as u64
}

fn clocks_from(layer: &LayerDescriptor, p: &DerivedParams) -> u64 {
    p.iterations as u64 * iteration_clocks(layer, p)
}

pub fn efficiency(layer: &LayerDescriptor, cfg: &EngineConfig) -> Result<f64> {
    let q = clocks(layer, cfg)?;
    let macs = count_macs(layer)?.macs_valid;
    Ok(macs as f64 / (cfg.pe_count() as f64 * q as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MemoryAccesses {
    pub x: u64,
    pub k: u64,
    pub y: u64,
}

impl MemoryAccesses {
    pub fn total(&self) -> u64 {
        self.x + self.k + self.y
    }
}

impl std::ops::Add for MemoryAccesses {
    type Output = MemoryAccesses;

    fn add(self, o: Self) -> Self {
        MemoryAccesses { x: self.x + o.x, k: self.k + o.k, y: self.y + o.y }
    }
}

pub fn memory_accesses(layer: &LayerDescriptor, cfg: &EngineConfig) -> Result<MemoryAccesses> {
    let p = derive_params(layer, cfg)?;
    Ok(accesses_from(layer, cfg, &p))
}

fn accesses_from(layer: &LayerDescriptor, cfg: &EngineConfig, p: &DerivedParams) -> MemoryAccesses {
    let t = p.iterations as u64;
    let strips = (layer.batch * p.blocks) as u64;
    let (rows, cores) = (cfg.rows as u64, cfg.cores as u64);
    let (ci, kh, sh, sw) =
        (layer.in_channels as u64, layer.kernel_h as u64, layer.stride_h as u64, layer.stride_w as u64);
    MemoryAccesses {
        x: t * strips * layer.width as u64 * ci * sh * (rows + p.shift as u64),
        k: t * ci * kh * sw * cores,
        y: t * strips * layer.out_width() as u64 * p.groups as u64 * sw * rows,
    }
}

/// Two operations per MAC over words moved.
pub fn arithmetic_intensity(macs_valid: u64, words: u64) -> f64 {
    2.0 * macs_valid as f64 / words as f64
}

pub fn layer_arithmetic_intensity(layer: &LayerDescriptor, cfg: &EngineConfig) -> Result<f64> {
    Ok(arithmetic_intensity(count_macs(layer)?.macs_valid, memory_accesses(layer, cfg)?.total()))
}

pub fn network_arithmetic_intensity(net: &Network, cfg: &EngineConfig) -> Result<f64> {
    let (mut macs, mut words) = (0u64, 0u64);
    for l in &net.layers {
        macs += count_macs(l)?.macs_valid;
        words += memory_accesses(l, cfg)?.total();
    }
    Ok(arithmetic_intensity(macs, words))
}

/// Stream bandwidths in words per second.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Bandwidth {
    pub x: f64,
    pub k: f64,
    pub y: f64,
    /// Set when the last shifter load issues no shifts and one clock per load is assumed.
    pub unit_shift_convention: bool,
}

impl Bandwidth {
    pub fn total(&self) -> f64 {
        self.x + self.k + self.y
    }

    /// Whole bytes per clock needed to sustain all three streams.
    pub fn bytes_per_clock(&self, f: f64, word_bits: u32) -> u64 {
        let per_clock = self.total() / f * word_bits as f64 / 8.0;
        // Guard against representation error pushing an exact integer up.
        (per_clock - 1e-9).ceil().max(0.0) as u64
    }
}

pub fn bandwidth(layer: &LayerDescriptor, cfg: &EngineConfig, f: f64) -> Result<Bandwidth> {
    let p = derive_params(layer, cfg)?;
    Ok(bandwidth_from(layer, cfg, &p, f))
}

fn bandwidth_from(layer: &LayerDescriptor, cfg: &EngineConfig, p: &DerivedParams, f: f64) -> Bandwidth {
    let last_shift = if layer.is_conv() { layer.kernel_h / layer.stride_h } else { 0 };
    let window = p.window(cfg.rows) as f64;
    let mac_clocks = (layer.in_channels * layer.kernel_h) as f64;
    let iteration_words = (layer.in_channels * layer.kernel_h * layer.stride_w * cfg.cores) as f64;
    let column_words = (p.groups * layer.stride_w * cfg.rows) as f64;
    Bandwidth {
        x: f * window / last_shift.max(1) as f64,
        k: f * iteration_words / iteration_clocks(layer, p) as f64,
        y: f * column_words / (mac_clocks + p.shift_stall as f64),
        unit_shift_convention: last_shift == 0,
    }
}

pub fn peak_ops_per_second(cfg: &EngineConfig, f: f64) -> f64 {
    2.0 * cfg.pe_count() as f64 * f
}

pub fn peak_gops(cfg: &EngineConfig, f: f64) -> f64 {
    peak_ops_per_second(cfg, f) / 1e9
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LayerPerf {
    pub layer: LayerDescriptor,
    pub params: DerivedParams,
    pub ops: OpCounts,
    pub clocks: u64,
    pub efficiency: f64,
    pub words: MemoryAccesses,
    pub ai: f64,
    pub frequency_hz: f64,
    pub bandwidth: Bandwidth,
}

impl LayerPerf {
    pub fn bytes_per_clock(&self, word_bits: u32) -> u64 {
        self.bandwidth.bytes_per_clock(self.frequency_hz, word_bits)
    }

    /// Simplified efficiency that ignores the shift and config clocks.
    pub fn efficiency_without_stalls(&self, cfg: &EngineConfig) -> f64 {
        let l = &self.layer;
        let p = &self.params;
        let mac_clocks = (p.iterations * l.batch * p.blocks * l.width * l.in_channels * l.kernel_h) as f64;
        self.ops.macs_valid as f64 / (cfg.pe_count() as f64 * mac_clocks)
    }
}

pub fn layer_perf(layer: &LayerDescriptor, cfg: &EngineConfig, f: f64) -> Result<LayerPerf> {
    let params = derive_params(layer, cfg)?;
    let ops = count_macs(layer)?;
    let clocks = clocks_from(layer, &params);
    let words = accesses_from(layer, cfg, &params);
    Ok(LayerPerf {
        layer: *layer,
        params,
        ops,
        clocks,
        efficiency: ops.macs_valid as f64 / (cfg.pe_count() as f64 * clocks as f64),
        words,
        ai: arithmetic_intensity(ops.macs_valid, words.total()),
        frequency_hz: f,
        bandwidth: bandwidth_from(layer, cfg, &params, f),
    })
}

/// Aggregate over the layers of one clock domain.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DomainPerf {
    pub layers: usize,
    pub frequency_hz: f64,
    /// Frames processed per pass: N for conv stacks, batch rows for matrix layers.
    pub batch: usize,
    pub clocks: u64,
    pub macs_valid: u64,
    pub efficiency: f64,
    pub words: MemoryAccesses,
    pub ai: f64,
    pub fps: f64,
    pub latency_s: f64,
    pub words_per_frame: f64,
    /// Kernel words divided by the batch, activation words counted once per batch.
    pub words_per_frame_kernel_amortized: f64,
    pub ai_per_frame_kernel_amortized: f64,
}

fn domain(layers: &[&LayerPerf], f: f64, cfg: &EngineConfig) -> Option<DomainPerf> {
    let first = layers.first()?;
    let batch = first.layer.batch_rows().max(1);
    let clocks: u64 = layers.iter().map(|l| l.clocks).sum();
    let macs_valid: u64 = layers.iter().map(|l| l.ops.macs_valid).sum();
    let words = layers.iter().fold(MemoryAccesses::default(), |a, l| a + l.words);
    let b = batch as f64;
    let amortized = words.k as f64 / b + (words.x + words.y) as f64;
    Some(DomainPerf {
        layers: layers.len(),
        frequency_hz: f,
        batch,
        clocks,
        macs_valid,
        efficiency: macs_valid as f64 / (cfg.pe_count() as f64 * clocks as f64),
        words,
        ai: arithmetic_intensity(macs_valid, words.total()),
        fps: b * f / clocks as f64,
        latency_s: clocks as f64 / f,
        words_per_frame: words.total() as f64 / b,
        words_per_frame_kernel_amortized: amortized,
        ai_per_frame_kernel_amortized: 2.0 * macs_valid as f64 / b / amortized,
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkPerf {
    pub name: String,
    pub layers: Vec<LayerPerf>,
    pub conv: Option<DomainPerf>,
    pub matrix: Option<DomainPerf>,
    /// Clock-weighted efficiency over every layer.
    pub efficiency: f64,
    pub words: MemoryAccesses,
    pub ai: f64,
    /// Rotator fill rate (words/s) for each layer boundary: the next layer's
    /// first iteration prefetched during this layer's last iteration.
    pub boundary_bw_k: Vec<f64>,
}

impl NetworkPerf {
    /// Largest byte-per-clock requirement among the conv (or matrix) layers.
    pub fn peak_bytes_per_clock(&self, conv: bool, word_bits: u32) -> Option<(usize, u64)> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| l.layer.is_conv() == conv)
            .map(|(j, l)| (j, l.bytes_per_clock(word_bits)))
            .max_by_key(|&(j, b)| (b, std::cmp::Reverse(j)))
    }
}

pub fn network_perf(net: &Network, cfg: &EngineConfig, f_conv: f64, f_fc: f64) -> Result<NetworkPerf> {
    let layers = net
        .layers
        .iter()
        .map(|l| layer_perf(l, cfg, if l.is_conv() { f_conv } else { f_fc }))
        .collect::<Result<Vec<_>>>()?;
    let conv: Vec<&LayerPerf> = layers.iter().filter(|l| l.layer.is_conv()).collect();
    let matrix: Vec<&LayerPerf> = layers.iter().filter(|l| !l.layer.is_conv()).collect();
    let clocks: u64 = layers.iter().map(|l| l.clocks).sum();
    let macs: u64 = layers.iter().map(|l| l.ops.macs_valid).sum();
    let words = layers.iter().fold(MemoryAccesses::default(), |a, l| a + l.words);
    let boundary_bw_k = layers
        .windows(2)
        .map(|w| {
            let (cur, next) = (&w[0], &w[1]);
            let next_words = next.words.k / next.params.iterations as u64;
            cur.frequency_hz * next_words as f64 / iteration_clocks(&cur.layer, &cur.params) as f64
        })
        .collect();
    Ok(NetworkPerf {
        name: net.name.clone(),
        conv: domain(&conv, f_conv, cfg),
        matrix: domain(&matrix, f_fc, cfg),
        efficiency: if clocks == 0 { 0.0 } else { macs as f64 / (cfg.pe_count() as f64 * clocks as f64) },
        words,
        ai: if words.total() == 0 { 0.0 } else { arithmetic_intensity(macs, words.total()) },
        boundary_bw_k,
        layers,
    })
}
