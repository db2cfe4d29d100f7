//! Stream restructurings between dense tensors and the engine's beat streams.
//!
//! Three streams feed or leave the array:
//!
//! * input `[T][N][L][W][C_i][S_H]` beats of `R + F` pixels, one pixel-shifter load each;
//! * weights `[T][S_W][C_i][K_H]` beats of `C` words, one per core;
//! * output `[T][N][L][W_out]` beats of `E * S_W * R` accumulators, word order `[E][S_W][R]`.
//!
//! Within a column phase the kernel rows are visited load-major: load `b`
//! (of `S_H`) serves kernel rows `b, b + S_H, b + 2 S_H, ...`. Block `l`
//! covers input rows starting at `l * R * S_H - pad_h`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::engine::EngineConfig;
use crate::error::{Error, Result};
use crate::oracle::Tensor4;
use crate::workload::LayerDescriptor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DerivedParams {
    /// Cores per elastic group, `K_W + S_W - 1`.
    pub group: usize,
    /// Elastic groups that fit, `floor(C / G)`.
    pub groups: usize,
    /// Pixel-shifter registers beyond `R`, `ceil(K_H / S_H) - 1`.
    pub shift: usize,
    /// Row blocks, `ceil(H / (R S_H))`.
    pub blocks: usize,
    /// Output-channel iterations, `ceil(C_o / (E S_W))`.
    pub iterations: usize,
    /// Clocks per column phase, `1 + C_i K_H`.
    pub phase_clocks: usize,
    /// One shift clock per column phase.
    pub shift_stall: usize,
    /// One configuration clock per iteration.
    pub config_stall: usize,
}

impl DerivedParams {
    /// Pixel words per shifter load, `R + F`.
    pub fn window(&self, rows: usize) -> usize {
        rows + self.shift
    }

    /// Output channels produced per iteration, `E S_W`.
    pub fn channels_per_iteration(&self, layer: &LayerDescriptor) -> usize {
        self.groups * layer.stride_w
    }

    /// Active cores, `E G`.
    pub fn active_cores(&self) -> usize {
        self.groups * self.group
    }
}

fn div_ceil(a: usize, b: usize) -> usize {
    a.div_ceil(b)
}

/// Fully-connected and matmul layers run as one column of `H` rows with a
/// single-core group, so every core computes its own output column.
pub fn derive_params(layer: &LayerDescriptor, cfg: &EngineConfig) -> Result<DerivedParams> {
    layer.validate()?;
    cfg.validate()?;
    let (rows, cores) = (cfg.rows, cfg.cores);
    if !layer.is_conv() {
        return Ok(DerivedParams {
            group: 1,
            groups: cores,
            shift: 0,
            blocks: div_ceil(layer.height, rows),
            iterations: div_ceil(layer.out_channels, cores),
            phase_clocks: 1 + layer.in_channels,
            shift_stall: 0,
            config_stall: 1,
        });
    }
    let group = layer.kernel_w + layer.stride_w - 1;
    if group > cores {
        return Err(Error::Unmappable { group, cores });
    }
    let groups = cores / group;
    let (shift_stall, config_stall) = if layer.kernel_w != 1 { (1, 0) } else { (0, 1) };
    Ok(DerivedParams {
        group,
        groups,
        shift: div_ceil(layer.kernel_h, layer.stride_h) - 1,
        blocks: div_ceil(layer.height, rows * layer.stride_h),
        iterations: div_ceil(layer.out_channels, groups * layer.stride_w),
        phase_clocks: 1 + layer.in_channels * layer.kernel_h,
        shift_stall,
        config_stall,
    })
}

/// Register shifts after load `load_index` (1-based) of a column phase.
///
/// The last load shifts `floor(K_H / S_H)` times and earlier loads shift `F`
/// times. The simulator itself issues `clocks_per_load` MAC clocks per load,
/// which this bounds from above.
pub fn shift_count(load_index: usize, params: &DerivedParams, layer: &LayerDescriptor) -> Result<usize> {
    if !layer.is_conv() {
        return Ok(0);
    }
    if load_index == 0 || load_index > layer.stride_h {
        return Err(Error::Shape(format!("load index {load_index} outside 1..={}", layer.stride_h)));
    }
    if load_index == layer.stride_h {
        Ok(layer.kernel_h / layer.stride_h)
    } else {
        Ok(params.shift)
    }
}

/// MAC clocks served by load `b` (0-based): the kernel rows `b + m S_H < K_H`.
pub fn clocks_per_load(b: usize, kernel_h: usize, stride_h: usize) -> usize {
    if b >= kernel_h {
        0
    } else {
        div_ceil(kernel_h - b, stride_h)
    }
}

/// Kernel rows in the order the pixel shifter presents them.
pub fn kernel_row_order(kernel_h: usize, stride_h: usize) -> Vec<usize> {
    (0..stride_h)
        .flat_map(|b| (0..clocks_per_load(b, kernel_h, stride_h)).map(move |m| m * stride_h + b))
        .collect()
}

/// The weight a core multiplies during a column phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CoreSlot {
    pub group: usize,
    /// Position of the core inside its group.
    pub lane: usize,
    /// Channel phase within the group, `0..S_W`.
    pub phase: usize,
    pub kernel_col: usize,
    pub out_channel: usize,
}

/// Assignment of core `core` during a phase with column parity `parity = w mod S_W`.
///
/// Lane `c` carries channel phase `s = (c - w - pad_w) mod S_W` and tap column
/// `c - s`. Each output diagonal thus walks one lane per column phase and
/// completes at lane `K_W - 1 + s`. `None` marks an idle core or a null word.
pub fn core_slot(
    core: usize,
    parity: usize,
    iteration: usize,
    layer: &LayerDescriptor,
    params: &DerivedParams,
) -> Option<CoreSlot> {
    let group = core / params.group;
    if group >= params.groups {
        return None;
    }
    let lane = core % params.group;
    let (phase, kernel_col) = lane_tap(lane, parity, layer)?;
    let out_channel = iteration * params.channels_per_iteration(layer) + group * layer.stride_w + phase;
    (out_channel < layer.out_channels).then_some(CoreSlot { group, lane, phase, kernel_col, out_channel })
}

/// Channel phase and tap column of group lane `lane`, independent of channel bounds.
#[inline]
pub fn lane_tap(lane: usize, parity: usize, layer: &LayerDescriptor) -> Option<(usize, usize)> {
    let sw = layer.stride_w;
    let phase = (lane + sw * (parity + layer.pad_w + 1) - parity - layer.pad_w) % sw;
    let kernel_col = lane.checked_sub(phase).filter(|&k| k < layer.kernel_w)?;
    Some((phase, kernel_col))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Provenance {
    Input,
    Weights,
    Output,
}

impl Provenance {
    fn code(self) -> u8 {
        match self {
            Provenance::Input => 0,
            Provenance::Weights => 1,
            Provenance::Output => 2,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Provenance::Input),
            1 => Some(Provenance::Weights),
            2 => Some(Provenance::Output),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TiledStream {
    pub provenance: Provenance,
    pub beats: usize,
    pub width: usize,
    pub word_bits: u32,
    pub data: Vec<i64>,
}

pub const STREAM_MAGIC: [u8; 4] = *b"KRTS";
pub const STREAM_VERSION: u16 = 1;

impl TiledStream {
    pub fn new(provenance: Provenance, width: usize, word_bits: u32, data: Vec<i64>) -> Result<Self> {
        if width == 0 || !data.len().is_multiple_of(width) {
            return Err(malformed(provenance, format!("{} words do not split into beats of {width}", data.len())));
        }
        Ok(TiledStream { provenance, beats: data.len() / width, width, word_bits, data })
    }

    pub fn words(&self) -> usize {
        self.data.len()
    }

    pub fn beat(&self, i: usize) -> &[i64] {
        &self.data[i * self.width..(i + 1) * self.width]
    }

    fn expect_shape(&self, provenance: Provenance, beats: usize, width: usize) -> Result<()> {
        if self.provenance != provenance {
            return Err(malformed(provenance, format!("stream carries {:?} data", self.provenance)));
        }
        if self.beats != beats || self.width != width || self.data.len() != beats * width {
            return Err(malformed(
                provenance,
                format!(
                    "{} beats of {} words ({} total), expected {beats} of {width}",
                    self.beats,
                    self.width,
                    self.data.len()
                ),
            ));
        }
        Ok(())
    }

    /// Binary dump: magic, version, provenance, word bits, beats, width, then
    /// little-endian two's-complement words of `ceil(word_bits / 8)` bytes.
    pub fn write_to<W: Write>(&self, mut out: W) -> Result<()> {
        let bytes = word_bytes(self.word_bits)?;
        out.write_all(&STREAM_MAGIC)?;
        out.write_all(&STREAM_VERSION.to_le_bytes())?;
        out.write_all(&[self.provenance.code(), self.word_bits as u8])?;
        out.write_all(&(self.beats as u64).to_le_bytes())?;
        out.write_all(&(self.width as u32).to_le_bytes())?;
        for &v in &self.data {
            if !crate::oracle::fits(v, self.word_bits) {
                return Err(Error::WordRange { what: "stream", value: v, bits: self.word_bits });
            }
            out.write_all(&v.to_le_bytes()[..bytes])?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(mut input: R) -> Result<Self> {
        let bad = |reason: &str| malformed(Provenance::Input, reason.to_string());
        let mut head = [0u8; 20];
        input.read_exact(&mut head).map_err(|_| bad("truncated header"))?;
        if head[..4] != STREAM_MAGIC {
            return Err(bad("bad magic"));
        }
        let version = u16::from_le_bytes([head[4], head[5]]);
        if version != STREAM_VERSION {
            return Err(bad(&format!("unsupported version {version}")));
        }
        let provenance = Provenance::from_code(head[6]).ok_or_else(|| bad("unknown provenance"))?;
        let word_bits = head[7] as u32;
        let beats = u64::from_le_bytes(head[8..16].try_into().unwrap()) as usize;
        let width = u32::from_le_bytes(head[16..20].try_into().unwrap()) as usize;
        let bytes = word_bytes(word_bits)?;
        let words = beats.checked_mul(width).ok_or_else(|| bad("size overflow"))?;
        let mut raw = Vec::new();
        input.read_to_end(&mut raw)?;
        if raw.len() != words * bytes {
            return Err(malformed(provenance, format!("{} payload bytes, expected {}", raw.len(), words * bytes)));
        }
        let shift = 64 - 8 * bytes as u32;
        let data = raw
            .chunks_exact(bytes)
            .map(|chunk| {
                let mut buf = [0u8; 8];
                buf[..bytes].copy_from_slice(chunk);
                (i64::from_le_bytes(buf) << shift) >> shift
            })
            .collect();
        Ok(TiledStream { provenance, beats, width, word_bits, data })
    }
}

fn word_bytes(bits: u32) -> Result<usize> {
    if !(1..=64).contains(&bits) {
        return Err(Error::Config(format!("word width {bits} outside 1..=64")));
    }
    Ok(bits.div_ceil(8) as usize)
}

fn malformed(provenance: Provenance, reason: String) -> Error {
    Error::MalformedStream { provenance, reason }
}

pub(crate) fn check_engine_shape(layer: &LayerDescriptor) -> Result<()> {
    if layer.pad_h > layer.kernel_h.saturating_sub(1) / 2 || layer.pad_w > layer.kernel_w.saturating_sub(1) / 2 {
        return Err(Error::Shape(format!(
            "padding ({}, {}) exceeds (K-1)/2 for a {}x{} kernel",
            layer.pad_h, layer.pad_w, layer.kernel_h, layer.kernel_w
        )));
    }
    Ok(())
}

/// Input row held by word `a` of load `b` in block `l`, if inside the tensor.
#[inline]
fn source_row(layer: &LayerDescriptor, rows: usize, block: usize, load: usize, word: usize) -> Option<usize> {
    let r = block * rows * layer.stride_h + word * layer.stride_h + load;
    r.checked_sub(layer.pad_h).filter(|&h| h < layer.height)
}

pub fn input_beats(layer: &LayerDescriptor, params: &DerivedParams) -> usize {
    params.iterations * layer.batch * params.blocks * layer.width * layer.in_channels * layer.stride_h
}

pub fn weight_beats(layer: &LayerDescriptor, params: &DerivedParams) -> usize {
    params.iterations * layer.stride_w * layer.in_channels * layer.kernel_h
}

pub fn output_beats(layer: &LayerDescriptor, params: &DerivedParams) -> usize {
    params.iterations * layer.batch * params.blocks * layer.out_width()
}

/// X to X̂. The block sequence repeats once per iteration.
pub fn tile_input(x: &Tensor4, layer: &LayerDescriptor, cfg: &EngineConfig) -> Result<TiledStream> {
    let p = derive_params(layer, cfg)?;
    check_engine_shape(layer)?;
    if x.dims() != layer.input_dims() {
        return Err(Error::ShapeMismatch(format!("input {:?} vs layer {:?}", x.dims(), layer.input_dims())));
    }
    let window = p.window(cfg.rows);
    let mut one_pass = Vec::with_capacity(input_beats(layer, &p) / p.iterations * window);
    for n in 0..layer.batch {
        for l in 0..p.blocks {
            for w in 0..layer.width {
                for ci in 0..layer.in_channels {
                    for b in 0..layer.stride_h {
                        one_pass.extend((0..window).map(|a| {
                            source_row(layer, cfg.rows, l, b, a).map_or(0, |h| x.get([n, h, w, ci]))
                        }));
                    }
                }
            }
        }
    }
    let data = one_pass.repeat(p.iterations);
    TiledStream::new(Provenance::Input, window, cfg.input_bits, data)
}

/// Inverse of [`tile_input`]. Fails when iterations disagree, a padding word is
/// nonzero, two copies of a pixel differ, or some input row never reaches the array.
pub fn untile_input(xhat: &TiledStream, layer: &LayerDescriptor, cfg: &EngineConfig) -> Result<Tensor4> {
    let p = derive_params(layer, cfg)?;
    check_engine_shape(layer)?;
    let window = p.window(cfg.rows);
    let beats = input_beats(layer, &p);
    xhat.expect_shape(Provenance::Input, beats, window)?;
    let pass = beats / p.iterations * window;
    let first = &xhat.data[..pass];
    if let Some(t) = (1..p.iterations).find(|&t| &xhat.data[t * pass..(t + 1) * pass] != first) {
        return Err(malformed(Provenance::Input, format!("iteration {t} differs from iteration 0")));
    }
    let mut x = Tensor4::zeros(layer.input_dims());
    let mut seen = vec![false; x.data().len()];
    let mut words = first.iter();
    for n in 0..layer.batch {
        for l in 0..p.blocks {
            for w in 0..layer.width {
                for ci in 0..layer.in_channels {
                    for b in 0..layer.stride_h {
                        for a in 0..window {
                            let v = *words.next().unwrap();
                            match source_row(layer, cfg.rows, l, b, a) {
                                None if v != 0 => {
                                    return Err(malformed(
                                        Provenance::Input,
                                        format!("nonzero padding word in block {l} load {b} word {a}"),
                                    ))
                                }
                                None => {}
                                Some(h) => {
                                    let i = x.offset([n, h, w, ci]);
                                    if seen[i] && x.data()[i] != v {
                                        return Err(malformed(
                                            Provenance::Input,
                                            format!("conflicting copies of pixel [{n}, {h}, {w}, {ci}]"),
                                        ));
                                    }
                                    seen[i] = true;
                                    x.set([n, h, w, ci], v);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        let h = i / (layer.width * layer.in_channels) % layer.height;
        return Err(malformed(Provenance::Input, format!("input row {h} is not carried by the stream")));
    }
    Ok(x)
}

/// K to K̂: per iteration, `S_W` column parities of `C_i * K_H` beats in shifter order.
pub fn tile_weights(k: &Tensor4, layer: &LayerDescriptor, cfg: &EngineConfig) -> Result<TiledStream> {
    let p = derive_params(layer, cfg)?;
    if k.dims() != layer.weight_dims() {
        return Err(Error::ShapeMismatch(format!("weights {:?} vs layer {:?}", k.dims(), layer.weight_dims())));
    }
    let rows = kernel_row_order(layer.kernel_h, layer.stride_h);
    let mut data = Vec::with_capacity(weight_beats(layer, &p) * cfg.cores);
    for t in 0..p.iterations {
        for parity in 0..layer.stride_w {
            let slots: Vec<_> = (0..cfg.cores).map(|c| core_slot(c, parity, t, layer, &p)).collect();
            for ci in 0..layer.in_channels {
                for &kh in &rows {
                    data.extend(
                        slots
                            .iter()
                            .map(|s| s.map_or(0, |s| k.get([kh, s.kernel_col, ci, s.out_channel]))),
                    );
                }
            }
        }
    }
    TiledStream::new(Provenance::Weights, cfg.cores, cfg.weight_bits, data)
}

/// Ŷ′ to Y, dropping rows past the output height and channels past `C_o`.
pub fn detile_output(yhat: &TiledStream, layer: &LayerDescriptor, cfg: &EngineConfig) -> Result<Tensor4> {
    let p = derive_params(layer, cfg)?;
    let width = p.channels_per_iteration(layer) * cfg.rows;
    yhat.expect_shape(Provenance::Output, output_beats(layer, &p), width)?;
    let mut y = Tensor4::zeros(layer.output_dims());
    let (ho, wo) = (layer.out_height(), layer.out_width());
    let mut beat = 0;
    for t in 0..p.iterations {
        for n in 0..layer.batch {
            for l in 0..p.blocks {
                for w in 0..wo {
                    let words = yhat.beat(beat);
                    beat += 1;
                    for (j, chunk) in words.chunks_exact(cfg.rows).enumerate() {
                        let c = t * p.channels_per_iteration(layer) + j;
                        if c >= layer.out_channels {
                            break;
                        }
                        for (r, &v) in chunk.iter().enumerate() {
                            let h = l * cfg.rows + r;
                            if h < ho {
                                y.set([n, h, w, c], v);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(y)
}

/// Inverse of [`detile_output`]; cropped slots are zero.
pub fn retile_output(y: &Tensor4, layer: &LayerDescriptor, cfg: &EngineConfig) -> Result<TiledStream> {
    let p = derive_params(layer, cfg)?;
    if y.dims() != layer.output_dims() {
        return Err(Error::ShapeMismatch(format!("output {:?} vs layer {:?}", y.dims(), layer.output_dims())));
    }
    let per_iter = p.channels_per_iteration(layer);
    let (ho, wo) = (layer.out_height(), layer.out_width());
    let mut data = Vec::with_capacity(output_beats(layer, &p) * per_iter * cfg.rows);
    for t in 0..p.iterations {
        for n in 0..layer.batch {
            for l in 0..p.blocks {
                for w in 0..wo {
                    for j in 0..per_iter {
                        let c = t * per_iter + j;
                        data.extend((0..cfg.rows).map(|r| {
                            let h = l * cfg.rows + r;
                            if h < ho && c < layer.out_channels {
                                y.get([n, h, w, c])
                            } else {
                                0
                            }
                        }));
                    }
                }
            }
        }
    }
    TiledStream::new(Provenance::Output, per_iter * cfg.rows, cfg.acc_bits, data)
}
