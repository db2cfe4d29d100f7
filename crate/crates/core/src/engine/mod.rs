//! Cycle-level functional simulator of the elastic PE array.
//!
//! Schedule per layer:
//!
//! ```text
//! for t in T:                       one config clock if q_c
//!   for n in N, l in L:             accumulators cleared
//!     for w in W:
//!       for c_i in C_i, k_h in K_H: one MAC clock
//!       one shift clock if q_s      completed sums leave for the output pipe
//! ```
//!
//! Every clock is counted, so a run of a layer takes exactly
//! `T * (q_c + N L W (q_s + C_i K_H))` clocks.

mod config;
mod datapath;
mod header;
mod trace;

pub use config::{EngineConfig, BUILTIN_ADAPTERS};
pub use datapath::{MuxSelect, OutputPipe, PeArray, PeState, PixelShifter, WeightsRotator};
pub use header::ConfigHeader;
pub use trace::{write_trace, Phase, TraceRecord, TRACE_HEADER};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::{ArithmeticModel, Matrix, Tensor4};
use crate::tiling::{
    self, clocks_per_load, core_slot, derive_params, detile_output, lane_tap, output_beats, tile_input,
    tile_weights, CoreSlot, DerivedParams, Provenance, TiledStream,
};
use crate::workload::{LayerDescriptor, Network};

#[derive(Debug, Clone, Default)]
pub struct SimOptions {
    pub trace: bool,
    /// Record per-output product and merge counts.
    pub track_taps: bool,
    /// Rotator fill rate in words per clock. `None` spreads each iteration's
    /// weights evenly over the previous iteration.
    pub weight_words_per_clock: Option<f64>,
    /// Input word width override, used for chained layers fed by accumulators.
    pub input_bits: Option<u32>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MemBeats {
    /// Pixel-shifter loads of `R + F` words.
    pub x_beats: u64,
    /// Weight beats of `C` words.
    pub k_beats: u64,
    /// Released row vectors of `R` words.
    pub y_beats: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct StreamWords {
    pub x: u64,
    pub k: u64,
    pub y: u64,
}

/// Products and neighbor merges behind each output, in output tensor layout.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TapCounts {
    pub products: Tensor4,
    pub merges: Tensor4,
}

#[derive(Debug, Clone)]
pub struct SimReport {
    pub layer: LayerDescriptor,
    pub params: DerivedParams,
    pub header: u64,
    pub cycles: u64,
    pub mac_clocks: u64,
    pub shift_clocks: u64,
    pub config_clocks: u64,
    pub mem_beats: MemBeats,
    pub words: StreamWords,
    pub output: Tensor4,
    pub busy_pe_cycles: u64,
    pub idle_pe_cycles: u64,
    /// Clocks on which the multipliers pause (config and shift clocks).
    pub stalls: u64,
    pub output_pipe_peak: usize,
    pub trace: Option<Vec<TraceRecord>>,
    pub taps: Option<TapCounts>,
}

impl SimReport {
    pub fn utilization(&self, pe_count: usize) -> f64 {
        1.0 - self.idle_pe_cycles as f64 / (pe_count as f64 * self.cycles as f64)
    }
}

pub fn simulate_layer(x: &Tensor4, k: &Tensor4, layer: &LayerDescriptor, cfg: &EngineConfig) -> Result<SimReport> {
    simulate_layer_with(x, k, layer, cfg, &SimOptions::default())
}

pub fn simulate_layer_with(
    x: &Tensor4,
    k: &Tensor4,
    layer: &LayerDescriptor,
    cfg: &EngineConfig,
    opts: &SimOptions,
) -> Result<SimReport> {
    let prepared = Prepared::new(x, k, layer, cfg, opts)?;
    let mut rotator = WeightsRotator::new(cfg.cores, cfg.wsram_depth);
    rotator.preload(prepared.iteration_weights(0));
    run_layer(&prepared, cfg, opts, &mut rotator, &[])
}

/// Streams and parameters of one layer, checked against the engine.
struct Prepared {
    layer: LayerDescriptor,
    params: DerivedParams,
    header: u64,
    xhat: TiledStream,
    khat: TiledStream,
}

impl Prepared {
    fn new(x: &Tensor4, k: &Tensor4, layer: &LayerDescriptor, cfg: &EngineConfig, opts: &SimOptions) -> Result<Self> {
        let params = derive_params(layer, cfg)?;
        cfg.supports_adapter(layer.kernel_h, layer.stride_h, params.shift)?;
        tiling::check_engine_shape(layer)?;
        let arith = ArithmeticModel { input_bits: opts.input_bits.unwrap_or(cfg.input_bits), ..cfg.arithmetic() };
        arith.check_input(x)?;
        arith.check_weights(k)?;
        let header = ConfigHeader::for_layer(layer)?.encode();
        let input_cfg = EngineConfig { input_bits: arith.input_bits, ..cfg.clone() };
        Ok(Prepared {
            layer: *layer,
            params,
            header,
            xhat: tile_input(x, layer, &input_cfg)?,
            khat: tile_weights(k, layer, cfg)?,
        })
    }

    fn iteration_words(&self) -> usize {
        self.khat.words() / self.params.iterations
    }

    fn iteration_weights(&self, t: usize) -> &[i64] {
        let n = self.iteration_words();
        &self.khat.data[t * n..(t + 1) * n]
    }
}

struct Clock<'a> {
    cycles: u64,
    rotator: &'a mut WeightsRotator,
    pipe: OutputPipe,
    trace: Option<Vec<TraceRecord>>,
}

impl Clock<'_> {
    #[allow(clippy::too_many_arguments)]
    fn tick(&mut self, phase: Phase, t: usize, idx: [Option<usize>; 5], released: usize) {
        if let Some(trace) = &mut self.trace {
            trace.push(TraceRecord {
                cycle: self.cycles,
                phase,
                t,
                n: idx[0],
                l: idx[1],
                w: idx[2],
                c_i: idx[3],
                k_h: idx[4],
                released,
            });
        }
        self.cycles += 1;
        self.rotator.tick();
        self.pipe.tick();
    }
}

/// Runs one layer. `next_weights` is prefetched during the last iteration.
fn run_layer(
    prep: &Prepared,
    cfg: &EngineConfig,
    opts: &SimOptions,
    rotator: &mut WeightsRotator,
    next_weights: &[i64],
) -> Result<SimReport> {
    let layer = &prep.layer;
    let p = &prep.params;
    let header = ConfigHeader::decode(prep.header)?;
    let (rows, cores) = (cfg.rows, cfg.cores);
    let (n_batch, width, ci_n) = (layer.batch, layer.width, layer.in_channels);
    let (kh_n, sh, sw) = (layer.kernel_h, layer.stride_h, layer.stride_w);
    let (ho, wo) = (layer.out_height(), layer.out_width());
    let shift_stall = header.shift_stall();
    debug_assert_eq!(shift_stall as usize, p.shift_stall);

    let mut shifter = PixelShifter::new(rows, cfg.max_shift);
    shifter.configure(&header)?;
    let beats_per_rotation = sw * ci_n * kh_n;
    rotator.check_capacity(beats_per_rotation, n_batch * p.blocks * width)?;
    let mut array = PeArray::new(rows, cores, ArithmeticModel {
        input_bits: opts.input_bits.unwrap_or(cfg.input_bits),
        ..cfg.arithmetic()
    });

    let loads: Vec<usize> = (0..sh).map(|b| clocks_per_load(b, kh_n, sh)).collect();
    let iteration_clocks = (p.config_stall + n_batch * p.blocks * width * (p.shift_stall + ci_n * kh_n)) as u64;
    let per_iter_channels = p.channels_per_iteration(layer);
    let column_words = per_iter_channels * rows;
    // One iteration's channels can all finish in the same phase (K_W < S_W),
    // so the pipe is sized to empty a full column per phase.
    let drain = OutputPipe::drain_rate(column_words, ci_n * kh_n + p.shift_stall);
    let mut clock = Clock {
        cycles: 0,
        rotator,
        pipe: OutputPipe::new(rows * cores + rows * (cores / 3), drain),
        trace: opts.trace.then(Vec::new),
    };

    let y_beats_total = output_beats(layer, p);
    let mut yhat = vec![0i64; y_beats_total * column_words];
    let mut slot_filled = vec![false; y_beats_total * per_iter_channels];
    let mut tap_products = opts.track_taps.then(|| vec![0i64; yhat.len()]);
    let mut tap_merges = opts.track_taps.then(|| vec![0i64; yhat.len()]);

    // Lane geometry per column parity: (group, phase, kernel column).
    let geometry: Vec<Vec<Option<(usize, usize, usize)>>> = (0..sw)
        .map(|parity| {
            (0..cores)
                .map(|c| {
                    let group = c / p.group;
                    if group >= p.groups {
                        return None;
                    }
                    lane_tap(c % p.group, parity, layer).map(|(s, k)| (group, s, k))
                })
                .collect()
        })
        .collect();

    let mut x_ptr = 0usize;
    let (mut mac_clocks, mut shift_clocks, mut config_clocks) = (0u64, 0u64, 0u64);
    let mut busy = 0u64;
    let mut y_vectors = 0u64;

    for t in 0..p.iterations {
        let slots: Vec<Vec<Option<CoreSlot>>> = (0..sw)
            .map(|parity| (0..cores).map(|c| core_slot(c, parity, t, layer, p)).collect())
            .collect();
        let next = if t + 1 < p.iterations { prep.iteration_weights(t + 1) } else { next_weights };
        clock.rotator.begin_prefetch(next, iteration_clocks, opts.weight_words_per_clock);

        if p.config_stall == 1 {
            clock.tick(Phase::Config, t, [None; 5], 0);
            config_clocks += 1;
        }

        for n in 0..n_batch {
            for l in 0..p.blocks {
                array.reset();
                let mut next_column = 0usize;
                for w in 0..width {
                    let parity = w % sw;
                    let active: Vec<(usize, CoreSlot)> = slots[parity]
                        .iter()
                        .enumerate()
                        .filter_map(|(c, s)| s.map(|s| (c, s)))
                        .collect();
                    // Cores whose diagonal ends on a real output column.
                    let useful_cores = active
                        .iter()
                        .filter(|(_, s)| {
                            (w + layer.pad_w)
                                .checked_sub(s.kernel_col)
                                .is_some_and(|d| d % sw == 0 && d / sw < wo)
                        })
                        .count() as u64;

                    let mut last_trace = None;
                    for ci in 0..ci_n {
                        let mut order = 0usize;
                        for (b, &clocks) in loads.iter().enumerate() {
                            shifter.load(prep.xhat.beat(x_ptr));
                            x_ptr += 1;
                            for m in 0..clocks {
                                let kh = m * sh + b;
                                let beat = clock.rotator.beat(parity * ci_n * kh_n + ci * kh_n + order);
                                order += 1;
                                let pixels = shifter.rows();
                                for &(c, _) in &active {
                                    array.mac(c, beat[c], pixels)?;
                                }
                                let useful_rows = (0..rows)
                                    .filter(|&r| {
                                        let out_row = l * rows + r;
                                        out_row < ho
                                            && (out_row * sh + kh)
                                                .checked_sub(layer.pad_h)
                                                .is_some_and(|h| h < layer.height)
                                    })
                                    .count() as u64;
                                busy += useful_rows * useful_cores;
                                last_trace = clock.trace.as_ref().map(|tr| tr.len());
                                clock.tick(Phase::Mac, t, [Some(n), Some(l), Some(w), Some(ci), Some(kh)], 0);
                                mac_clocks += 1;
                                if m + 1 < clocks {
                                    shifter.shift();
                                }
                            }
                        }
                    }

                    // Completed sums at the end of the column phase.
                    let mut released: Vec<(usize, usize, usize, usize)> = Vec::new();
                    for (c, g) in geometry[parity].iter().enumerate() {
                        let Some((group, s, k)) = *g else { continue };
                        let done = k + 1 == layer.kernel_w || w + 1 == width;
                        if !done {
                            continue;
                        }
                        let Some(d) = (w + layer.pad_w).checked_sub(k) else { continue };
                        if d % sw != 0 || d / sw >= wo {
                            continue;
                        }
                        released.push((d / sw, group, s, c));
                    }
                    released.sort_unstable();
                    let beat_base = ((t * n_batch + n) * p.blocks + l) * wo;
                    for &(col, group, s, c) in &released {
                        let slot = group * sw + s;
                        let flag = &mut slot_filled[(beat_base + col) * per_iter_channels + slot];
                        if *flag {
                            return Err(schedule_error(format!("column {col} slot {slot} released twice")));
                        }
                        *flag = true;
                        let base = (beat_base + col) * column_words + slot * rows;
                        for r in 0..rows {
                            let pe = array.pe(c, r);
                            yhat[base + r] = pe.accumulator;
                            if let (Some(tp), Some(tm)) = (&mut tap_products, &mut tap_merges) {
                                tp[base + r] = pe.products as i64;
                                tm[base + r] = pe.merges as i64;
                            }
                        }
                    }
                    let mut columns: Vec<usize> = released.iter().map(|r| r.0).collect();
                    columns.dedup();
                    for &col in &columns {
                        if col != next_column {
                            return Err(schedule_error(format!("column {col} released before column {next_column}")));
                        }
                        let complete = (0..per_iter_channels)
                            .all(|slot| slot_filled[(beat_base + col) * per_iter_channels + slot]);
                        if !complete {
                            return Err(schedule_error(format!("column {col} released incomplete")));
                        }
                        next_column += 1;
                        clock.pipe.push(column_words)?;
                    }
                    let released_words = columns.len() * column_words;
                    y_vectors += (columns.len() * per_iter_channels) as u64;

                    if shift_stall {
                        clock.tick(Phase::Shift, t, [Some(n), Some(l), Some(w), None, None], released_words);
                        shift_clocks += 1;
                        array.shift_groups(p.group, p.groups);
                        array.release_mux();
                    } else {
                        if let (Some(trace), Some(i)) = (&mut clock.trace, last_trace) {
                            trace[i].released = released_words;
                        }
                        array.reset();
                    }
                }
                if next_column != wo {
                    return Err(schedule_error(format!("strip ended after {next_column} of {wo} columns")));
                }
            }
        }
        clock.rotator.switch()?;
    }

    let cycles = clock.cycles;
    let output_stream = TiledStream::new(Provenance::Output, column_words, cfg.acc_bits, yhat)?;
    let output = detile_output(&output_stream, layer, cfg)?;
    let taps = match (tap_products, tap_merges) {
        (Some(tp), Some(tm)) => Some(TapCounts {
            products: detile_output(&TiledStream::new(Provenance::Output, column_words, 64, tp)?, layer, cfg)?,
            merges: detile_output(&TiledStream::new(Provenance::Output, column_words, 64, tm)?, layer, cfg)?,
        }),
        _ => None,
    };
    let pe_cycles = (rows * cores) as u64 * cycles;
    Ok(SimReport {
        layer: *layer,
        params: *p,
        header: prep.header,
        cycles,
        mac_clocks,
        shift_clocks,
        config_clocks,
        mem_beats: MemBeats {
            x_beats: x_ptr as u64,
            k_beats: (prep.khat.beats) as u64,
            y_beats: y_vectors,
        },
        words: StreamWords {
            x: (x_ptr * prep.xhat.width) as u64,
            k: prep.khat.words() as u64,
            y: y_vectors * rows as u64,
        },
        output,
        busy_pe_cycles: busy,
        idle_pe_cycles: pe_cycles - busy,
        stalls: shift_clocks + config_clocks,
        output_pipe_peak: clock.pipe.peak,
        trace: clock.trace,
        taps,
    })
}

fn schedule_error(reason: String) -> Error {
    Error::MalformedStream { provenance: Provenance::Output, reason }
}

/// Runs every layer back to back on one engine instance with seeded data.
///
/// Chained networks feed each conv output forward (detile, then tile for the
/// next layer) and check later inputs at accumulator width. Unchained
/// networks draw fresh inputs per layer. The rotator prefetches each layer's
/// first iteration during the previous layer's last one.
pub fn simulate_network(net: &Network, cfg: &EngineConfig, seed: u64) -> Result<Vec<SimReport>> {
    net.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let weights: Vec<Tensor4> =
        net.layers.iter().map(|l| Tensor4::random(l.weight_dims(), cfg.weight_bits, &mut rng)).collect();

    let mut rotator = WeightsRotator::new(cfg.cores, cfg.wsram_depth);
    let mut reports: Vec<SimReport> = Vec::with_capacity(net.layers.len());
    let mut pending: Option<Prepared> = None;
    let mut carried: Option<Tensor4> = None;

    for (j, layer) in net.layers.iter().enumerate() {
        let prep = match pending.take() {
            Some(p) => p,
            None => {
                let (x, opts) = layer_input(layer, cfg, &mut carried, net.chained && j > 0, &mut rng);
                let p = Prepared::new(&x, &weights[j], layer, cfg, &opts)?;
                rotator.preload(p.iteration_weights(0));
                p
            }
        };
        // Weights are offline, so the next layer's first iteration is known now.
        // Its input may depend on this layer's output, so only its weights are tiled ahead.
        let next_weights = match net.layers.get(j + 1) {
            Some(next) => {
                let p = derive_params(next, cfg)?;
                let khat = tile_weights(&weights[j + 1], next, cfg)?;
                let words = khat.words() / p.iterations;
                khat.data[..words].to_vec()
            }
            None => Vec::new(),
        };
        let opts = SimOptions { input_bits: chained_bits(net, j, cfg), ..SimOptions::default() };
        let report = run_layer(&prep, cfg, &opts, &mut rotator, &next_weights)
            .map_err(|e| annotate(j, e))?;
        if net.chained {
            carried = Some(report.output.clone());
        }
        if let Some(next) = net.layers.get(j + 1) {
            let (x, opts) = layer_input(next, cfg, &mut carried, net.chained, &mut rng);
            pending = Some(Prepared::new(&x, &weights[j + 1], next, cfg, &opts).map_err(|e| annotate(j + 1, e))?);
        }
        reports.push(report);
    }
    Ok(reports)
}

fn chained_bits(net: &Network, j: usize, cfg: &EngineConfig) -> Option<u32> {
    (net.chained && j > 0).then_some(cfg.acc_bits)
}

fn layer_input(
    layer: &LayerDescriptor,
    cfg: &EngineConfig,
    carried: &mut Option<Tensor4>,
    chained: bool,
    rng: &mut ChaCha8Rng,
) -> (Tensor4, SimOptions) {
    match carried.take() {
        Some(x) if chained && x.dims() == layer.input_dims() => {
            (x, SimOptions { input_bits: Some(cfg.acc_bits), ..SimOptions::default() })
        }
        _ => (Tensor4::random(layer.input_dims(), cfg.input_bits, rng), SimOptions::default()),
    }
}

fn annotate(j: usize, e: Error) -> Error {
    match e {
        Error::Shape(s) => Error::Shape(format!("layer {j}: {s}")),
        other => other,
    }
}

/// Batched matrix product `x [N^f, C_i] * k [C_i, C_o]` on the array, one
/// `R x C` block of outputs per `C_i` MAC clocks.
pub fn fc_batched(x: &Matrix, k: &Matrix, cfg: &EngineConfig) -> Result<SimReport> {
    if x.cols != k.rows {
        return Err(Error::ShapeMismatch(format!("{}x{} by {}x{}", x.rows, x.cols, k.rows, k.cols)));
    }
    let layer = LayerDescriptor::fully_connected(x.rows, x.cols, k.cols);
    simulate_layer(&x.as_activations(), &k.as_kernel(), &layer, cfg)
}
