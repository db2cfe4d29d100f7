//! Criteria 1 to 10. Each prints one PASS/FAIL line; the process exits
//! nonzero when any criterion fails.

use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use kraken_core::dse::{self, DsePoint, DseQuery};
use kraken_core::oracle::Tensor4;
use kraken_core::perfmodel::{layer_perf, network_perf, peak_gops, NetworkPerf};
use kraken_core::tiling::{derive_params, detile_output, retile_output, tile_input, untile_input};
use kraken_core::verify::{corpus, run_corpus, Sabotage};
use kraken_core::{builtin_network, EngineConfig, Error};

const F_CONV: f64 = 400e6;
const F_FC: f64 = 200e6;
const NETS: [&str; 3] = ["alexnet", "vgg16", "resnet50"];

/// Efficiency band in percentage points.
const EFF_PP: f64 = 0.1;

/// Published figure with its printed precision; `scale` is 1000 for a `k` suffix.
#[derive(Clone, Copy)]
struct Printed {
    value: f64,
    decimals: i32,
    scale: f64,
}

const fn printed(value: f64, decimals: i32) -> Printed {
    Printed { value, decimals, scale: 1.0 }
}

const fn kilo(value: f64, decimals: i32) -> Printed {
    Printed { value: value * 1e3, decimals, scale: 1e3 }
}

impl Printed {
    /// Relative band of 0.5 %, widened to half a unit in the last printed digit.
    fn accepts(&self, x: f64) -> bool {
        let half_digit = 0.5 * 10f64.powi(-self.decimals) * self.scale;
        (x - self.value).abs() <= (0.005 * self.value.abs()).max(half_digit) + 1e-9
    }
}

struct Criterion {
    pass: bool,
    lines: Vec<String>,
}

impl Criterion {
    fn new() -> Self {
        Criterion { pass: true, lines: Vec::new() }
    }

    fn check(&mut self, ok: bool, what: String) {
        self.pass &= ok;
        self.lines.push(format!("{} {what}", if ok { "ok  " } else { "MISS" }));
    }

    fn eff(&mut self, label: &str, measured: f64, published_pct: f64) {
        let pct = 100.0 * measured;
        self.check((pct - published_pct).abs() <= EFF_PP + 1e-9, format!("{label}: {pct:.3} % vs {published_pct} %"));
    }

    fn printed(&mut self, label: &str, measured: f64, published: Printed) {
        let shown = published.value / published.scale;
        let suffix = if published.scale > 1.0 { "k" } else { "" };
        self.check(published.accepts(measured), format!("{label}: {measured:.3} vs {shown:.*}{suffix}", published.decimals as usize));
    }

    fn budget(&mut self, label: &str, elapsed: Duration, limit: Duration) {
        self.check(elapsed < limit, format!("{label} runtime {:.2} s (limit {} s)", elapsed.as_secs_f64(), limit.as_secs()));
    }
}

fn shipped() -> EngineConfig {
    EngineConfig::new(7, 96)
}

fn perf(name: &str) -> NetworkPerf {
    network_perf(&builtin_network(name).unwrap(), &shipped(), F_CONV, F_FC).unwrap()
}

fn efficiency_goldens() -> Criterion {
    let mut c = Criterion::new();
    let start = Instant::now();
    let conv = [77.2, 96.5, 88.3];
    let fc = [99.1, 99.1, 94.7];
    for (i, name) in NETS.iter().enumerate() {
        let p = perf(name);
        c.eff(&format!("{name} conv"), p.conv.as_ref().unwrap().efficiency, conv[i]);
        c.eff(&format!("{name} fc"), p.matrix.as_ref().unwrap().efficiency, fc[i]);
    }
    c.budget("model", start.elapsed(), Duration::from_secs(1));
    c
}

fn throughput_goldens() -> Criterion {
    let mut c = Criterion::new();
    let alex = perf("alexnet");
    let conv = alex.conv.as_ref().unwrap();
    c.printed("alexnet conv fps", conv.fps, printed(336.6, 1));
    c.printed("alexnet conv latency ms", conv.latency_s * 1e3, printed(3.0, 1));
    c.printed("vgg16 conv fps", perf("vgg16").conv.unwrap().fps, printed(17.5, 1));
    c.printed("resnet50 conv fps", perf("resnet50").conv.unwrap().fps, printed(64.2, 1));
    for (name, fps) in [("alexnet", kilo(2.4, 1)), ("vgg16", kilo(1.1, 1)), ("resnet50", kilo(62.1, 1))] {
        c.printed(&format!("{name} fc fps"), perf(name).matrix.unwrap().fps, fps);
    }
    c
}

fn traffic_goldens() -> Criterion {
    let mut c = Criterion::new();
    let words = [6.4, 96.8, 67.9];
    let ai = [191.8, 306.8, 108.9];
    for (i, name) in NETS.iter().enumerate() {
        let conv = perf(name).conv.unwrap();
        c.printed(&format!("{name} conv Mwords/frame"), conv.words_per_frame / 1e6, printed(words[i], 1));
        c.printed(&format!("{name} conv AI"), conv.ai, printed(ai[i], 1));
    }
    c
}

fn bandwidth_goldens() -> Criterion {
    let mut c = Criterion::new();
    let mut best_conv = (0, String::new());
    let mut best_fc = 0;
    for name in NETS {
        let p = perf(name);
        let (j, conv) = p.peak_bytes_per_clock(true, 8).unwrap();
        if conv > best_conv.0 {
            best_conv = (conv, format!("{name} layer {}", j + 1));
        }
        best_fc = best_fc.max(p.peak_bytes_per_clock(false, 8).unwrap().1);
    }
    c.check(best_conv.0 == 26, format!("conv peak {} bytes/clock at {} vs 26", best_conv.0, best_conv.1));
    c.check(best_conv.1 == "vgg16 layer 1", format!("conv peak attained at {} vs vgg16 layer 1", best_conv.1));
    c.check(best_fc == 104, format!("fc peak {best_fc} bytes/clock vs 104"));
    c
}

fn peak_identity() -> Criterion {
    let mut c = Criterion::new();
    let g = peak_gops(&shipped(), F_CONV);
    c.check(format!("{g:.1}") == "537.6" && (g - 537.6).abs() < 1e-9, format!("peak {g} Gops vs 537.6"));
    c
}

fn resnet_first_layer() -> Criterion {
    let mut c = Criterion::new();
    let first = builtin_network("resnet50").unwrap().layers[0];
    for ((r, cores), published) in [((7, 96), 73.1), ((7, 24), 79.8)] {
        let p = layer_perf(&first, &EngineConfig::new(r, cores), F_CONV).unwrap();
        c.eff(&format!("resnet50 layer 1 at {r}x{cores}"), p.efficiency, published);
    }
    c
}

fn corpus_checks(checks: &[&str], budget: Option<Duration>) -> Criterion {
    let mut c = Criterion::new();
    let start = Instant::now();
    let cases = corpus(0xC0FFEE, 240);
    let summary = run_corpus(&cases, Sabotage::default());
    let configs: std::collections::BTreeSet<(usize, usize)> = cases.iter().map(|k| (k.rows, k.cores)).collect();
    c.check(
        cases.len() >= 200 && configs.contains(&(4, 6)) && configs.contains(&(7, 24)),
        format!("{} cases over configs {configs:?}", cases.len()),
    );
    for check in checks {
        let (passed, failed) = summary.checks[check];
        c.check(failed == 0 && passed == cases.len(), format!("{check}: {passed} passed, {failed} failed"));
    }
    for f in summary.failures.iter().take(5) {
        c.lines.push(format!("     case {}: {:?}", f.case.index, f.failures));
    }
    if let Some(limit) = budget {
        c.budget("corpus", start.elapsed(), limit);
    }
    c
}

fn tiling_round_trips() -> Criterion {
    let mut c = Criterion::new();
    let cases = corpus(0x5EED, 100);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (mut identity, mut refused, mut bijective) = (0, 0, 0);
    let mut problems = Vec::new();
    for case in &cases {
        let (l, cfg) = (&case.layer, case.config());
        let p = derive_params(l, &cfg).unwrap();
        let x = Tensor4::random(l.input_dims(), cfg.input_bits, &mut rng);
        // Input rows past the last block's reach never enter the array; those
        // shapes must be refused rather than silently zero-filled.
        let covered = p.blocks * cfg.rows * l.stride_h + p.shift * l.stride_h >= l.height + l.pad_h || !l.is_conv();
        match (untile_input(&tile_input(&x, l, &cfg).unwrap(), l, &cfg), covered) {
            (Ok(back), true) if back == x => identity += 1,
            (Err(Error::MalformedStream { .. }), false) => refused += 1,
            (r, _) => problems.push(format!("case {} input: covered={covered} ok={}", case.index, r.is_ok())),
        }
        let y = Tensor4::random(l.output_dims(), 20, &mut rng);
        let s = retile_output(&y, l, &cfg).unwrap();
        let back = detile_output(&s, l, &cfg).unwrap();
        if back == y && retile_output(&back, l, &cfg).unwrap() == s {
            bijective += 1;
        } else {
            problems.push(format!("case {} output", case.index));
        }
    }
    c.check(cases.len() == 100, format!("{} shapes", cases.len()));
    c.check(
        identity + refused == cases.len(),
        format!("input: {identity} identities, {refused} uncovered shapes refused"),
    );
    c.check(bijective == cases.len(), format!("output: {bijective} bijections"));
    c.lines.extend(problems.into_iter().take(5).map(|p| format!("     {p}")));
    c
}

fn dse_ordering() -> Criterion {
    let mut c = Criterion::new();
    let start = Instant::now();
    let nets = NETS.iter().map(|n| builtin_network(n).unwrap()).collect();
    let points = dse::sweep(&DseQuery::new(nets, 1..=16, 8..=128)).unwrap();
    let at = |r: usize, cores: usize| -> &DsePoint { points.iter().find(|p| (p.rows, p.cores) == (r, cores)).unwrap() };
    let base = at(7, 96);
    for (r, cores) in [(7, 15), (7, 24), (14, 24)] {
        let p = at(r, cores);
        c.check(
            p.efficiency >= base.efficiency,
            format!("eff({r},{cores}) {:.2} % >= eff(7,96) {:.2} %", 100.0 * p.efficiency, 100.0 * base.efficiency),
        );
        c.check(
            p.words_per_frame > base.words_per_frame,
            format!("M({r},{cores}) {:.1} M > M(7,96) {:.1} M", p.words_per_frame / 1e6, base.words_per_frame / 1e6),
        );
    }
    let resnet = |p: &DsePoint| p.network("resnet50").unwrap().conv_efficiency.unwrap();
    c.check(
        resnet(at(7, 24)) > resnet(base),
        format!("resnet50 conv eff(7,24) {:.2} % > eff(7,96) {:.2} %", 100.0 * resnet(at(7, 24)), 100.0 * resnet(base)),
    );
    c.budget("sweep", start.elapsed(), Duration::from_secs(30));
    c
}

type Check = fn() -> Criterion;

fn main() {
    let criteria: [(&str, Check); 10] = [
        ("golden efficiency", efficiency_goldens),
        ("throughput and latency", throughput_goldens),
        ("memory accesses and arithmetic intensity", traffic_goldens),
        ("bandwidth", bandwidth_goldens),
        ("peak performance identity", peak_identity),
        ("resnet50 first-layer efficiency", resnet_first_layer),
        ("simulator/oracle equivalence", || corpus_checks(&["oracle"], Some(Duration::from_secs(120)))),
        ("cycle and stream-word exactness", || corpus_checks(&["cycles", "stream-words"], None)),
        ("tiling round trips", tiling_round_trips),
        ("dse ordering", dse_ordering),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        let c = run();
        println!("criterion {}: {} ({name})", i + 1, if c.pass { "PASS" } else { "FAIL" });
        for line in &c.lines {
            println!("    {line}");
        }
        if !c.pass {
            failed.push(i + 1);
        }
    }
    if failed.is_empty() {
        println!("acceptance: all criteria pass");
    } else {
        println!("acceptance: failing criteria {failed:?}");
        std::process::exit(1);
    }
}
