//! Seeded shape corpus and the cross-checks run over it: simulator against
//! the reference evaluator, simulator against the closed-form counts, and
//! stream round trips.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::engine::{simulate_layer, EngineConfig};
use crate::error::Error;
use crate::oracle::{conv_reference, Tensor4};
use crate::perfmodel::{clocks, memory_accesses};
use crate::tiling::{derive_params, detile_output, retile_output, tile_input, untile_input};
use crate::workload::LayerDescriptor;

pub const KERNELS: [usize; 5] = [1, 3, 5, 7, 11];
pub const STRIDES: [usize; 3] = [1, 2, 4];
pub const CONFIGS: [(usize, usize); 2] = [(4, 6), (7, 24)];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CorpusCase {
    pub index: usize,
    pub layer: LayerDescriptor,
    pub rows: usize,
    pub cores: usize,
    /// Seed for this case's input and weight tensors.
    pub seed: u64,
}

impl CorpusCase {
    pub fn config(&self) -> EngineConfig {
        EngineConfig::new(self.rows, self.cores)
    }
}

/// Draws one conv shape. Every fourth draw uses the largest padding the engine accepts.
fn draw_conv<R: Rng>(rng: &mut R) -> LayerDescriptor {
    let kh = KERNELS[rng.gen_range(0..KERNELS.len())];
    let kw = if rng.gen_bool(0.75) { kh } else { KERNELS[rng.gen_range(0..KERNELS.len())] };
    let sh = STRIDES[rng.gen_range(0..STRIDES.len())];
    let sw = if rng.gen_bool(0.75) { sh } else { STRIDES[rng.gen_range(0..STRIDES.len())] };
    let h = rng.gen_range(kh..=32);
    let w = rng.gen_range(kw..=32);
    let ci = rng.gen_range(1..=16);
    let co = rng.gen_range(1..=32);
    let (ph, pw) = if rng.gen_bool(0.25) {
        ((kh - 1) / 2, (kw - 1) / 2)
    } else {
        (rng.gen_range(0..=(kh - 1) / 2), rng.gen_range(0..=(kw - 1) / 2))
    };
    let mut l = LayerDescriptor::conv_padded(h, w, ci, co, kh, sh, 0);
    l.kernel_w = kw;
    l.stride_w = sw;
    l.pad_h = ph;
    l.pad_w = pw;
    l
}

fn draw_fc<R: Rng>(rng: &mut R) -> LayerDescriptor {
    LayerDescriptor::fully_connected(rng.gen_range(1..=16), rng.gen_range(1..=64), rng.gen_range(1..=64))
}

/// `size` mappable cases. Configs alternate; one case in eight is fully connected.
pub fn corpus(seed: u64, size: usize) -> Vec<CorpusCase> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::with_capacity(size);
    while cases.len() < size {
        let index = cases.len();
        let (rows, cores) = CONFIGS[index % CONFIGS.len()];
        let layer = if index % 8 == 7 { draw_fc(&mut rng) } else { draw_conv(&mut rng) };
        if derive_params(&layer, &EngineConfig::new(rows, cores)).is_err() {
            continue;
        }
        cases.push(CorpusCase { index, layer, rows, cores, seed: rng.gen() });
    }
    cases
}

/// Fault injection for exercising the checks themselves.
#[derive(Debug, Clone, Copy, Default)]
pub struct Sabotage {
    /// Added to the closed-form clock count before comparison.
    pub q_offset: i64,
}

pub const CHECKS: [&str; 5] = ["oracle", "cycles", "stream-words", "input-round-trip", "output-round-trip"];

#[derive(Debug, Clone, Serialize)]
pub struct CaseResult {
    pub case: CorpusCase,
    pub cycles: u64,
    /// `(check, reason)` for every failed check.
    pub failures: Vec<(&'static str, String)>,
}

/// Every input row reaches the array when the last block's window, pushed
/// down by the shift registers, reaches past the bottom padding.
fn input_fully_streamed(layer: &LayerDescriptor, rows: usize) -> bool {
    if !layer.is_conv() {
        return true;
    }
    let blocks = layer.height.div_ceil(rows * layer.stride_h);
    let shift = layer.kernel_h.div_ceil(layer.stride_h) - 1;
    blocks * rows * layer.stride_h + shift * layer.stride_h >= layer.height + layer.pad_h
}

/// Input and weight tensors drawn at the configured word widths.
pub fn seeded_operands(layer: &LayerDescriptor, cfg: &EngineConfig, seed: u64) -> (Tensor4, Tensor4) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = Tensor4::random(layer.input_dims(), cfg.input_bits, &mut rng);
    let k = Tensor4::random(layer.weight_dims(), cfg.weight_bits, &mut rng);
    (x, k)
}

pub fn run_case(case: &CorpusCase, sabotage: Sabotage) -> CaseResult {
    let cfg = case.config();
    let layer = &case.layer;
    let (x, k) = seeded_operands(layer, &cfg, case.seed);
    let mut failures = Vec::new();
    let mut fail = |check, reason: String| failures.push((check, reason));

    let report = match simulate_layer(&x, &k, layer, &cfg) {
        Ok(r) => r,
        Err(e) => {
            fail("oracle", format!("simulation failed: {e}"));
            return CaseResult { case: *case, cycles: 0, failures };
        }
    };
    match conv_reference(&x, &k, layer, &cfg.arithmetic()) {
        Ok(y) => {
            if let Some(i) = y.first_difference(&report.output) {
                fail("oracle", format!("first difference at {i:?}: {} vs {}", report.output.get(i), y.get(i)));
            }
        }
        Err(e) => fail("oracle", format!("reference failed: {e}")),
    }

    match (clocks(layer, &cfg), memory_accesses(layer, &cfg)) {
        (Ok(q), Ok(m)) => {
            let q = q as i64 + sabotage.q_offset;
            if report.cycles as i64 != q {
                fail("cycles", format!("simulated {} vs formula {q}", report.cycles));
            }
            let w = report.words;
            if (w.x, w.k, w.y) != (m.x, m.k, m.y) {
                fail("stream-words", format!("measured {:?} vs formula {:?}", (w.x, w.k, w.y), (m.x, m.k, m.y)));
            }
        }
        (Err(e), _) | (_, Err(e)) => fail("cycles", format!("formula failed: {e}")),
    }

    let expect_full = input_fully_streamed(layer, cfg.rows);
    match tile_input(&x, layer, &cfg).and_then(|s| untile_input(&s, layer, &cfg)) {
        Ok(back) if !expect_full => fail("input-round-trip", format!("uncovered rows not reported ({})", back.dims()[1])),
        Ok(back) if back != x => fail("input-round-trip", "untile(tile(x)) != x".into()),
        Ok(_) => {}
        Err(Error::MalformedStream { .. }) if !expect_full => {}
        Err(e) => fail("input-round-trip", e.to_string()),
    }

    match retile_output(&report.output, layer, &cfg) {
        Ok(s) => match detile_output(&s, layer, &cfg) {
            Ok(y) if y != report.output => fail("output-round-trip", "detile(retile(y)) != y".into()),
            Ok(y) => {
                if retile_output(&y, layer, &cfg).map(|again| again != s).unwrap_or(true) {
                    fail("output-round-trip", "retile(detile(s)) != s".into());
                }
            }
            Err(e) => fail("output-round-trip", e.to_string()),
        },
        Err(e) => fail("output-round-trip", e.to_string()),
    }

    CaseResult { case: *case, cycles: report.cycles, failures }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct VerifySummary {
    pub cases: usize,
    /// Check name to `(passed, failed)`.
    pub checks: BTreeMap<&'static str, (usize, usize)>,
    pub failures: Vec<CaseResult>,
}

impl VerifySummary {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

pub fn run_corpus(cases: &[CorpusCase], sabotage: Sabotage) -> VerifySummary {
    use rayon::prelude::*;
    let results: Vec<CaseResult> = cases.par_iter().map(|c| run_case(c, sabotage)).collect();
    let mut summary = VerifySummary { cases: cases.len(), ..Default::default() };
    for name in CHECKS {
        summary.checks.insert(name, (0, 0));
    }
    for r in results {
        for name in CHECKS {
            let entry = summary.checks.get_mut(name).expect("registered check");
            if r.failures.iter().any(|(c, _)| *c == name) {
                entry.1 += 1;
            } else {
                entry.0 += 1;
            }
        }
        if !r.failures.is_empty() {
            summary.failures.push(r);
        }
    }
    summary
}
