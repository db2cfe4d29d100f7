//! Published reference figures for the built-in networks at 7x96 and the
//! comparison rules applied to them.

use kraken_core::perfmodel::{network_perf, peak_gops, DomainPerf};
use kraken_core::{builtin_network, EngineConfig, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Metric {
    EfficiencyPct,
    Fps,
    LatencyMs,
    MegaWordsPerFrame,
    Ai,
    Gops,
}

impl Metric {
    pub fn as_str(self) -> &'static str {
        match self {
            Metric::EfficiencyPct => "eff_%",
            Metric::Fps => "fps",
            Metric::LatencyMs => "latency_ms",
            Metric::MegaWordsPerFrame => "Mwords/frame",
            Metric::Ai => "AI",
            Metric::Gops => "Gops",
        }
    }

    fn of(self, d: &DomainPerf, peak: f64) -> f64 {
        match self {
            Metric::EfficiencyPct => 100.0 * d.efficiency,
            Metric::Fps => d.fps,
            Metric::LatencyMs => 1e3 * d.latency_s,
            // Matrix layers reuse each weight across the batch, so their
            // kernel words are charged once per batch.
            Metric::MegaWordsPerFrame => d.words_per_frame_kernel_amortized / 1e6,
            Metric::Ai => d.ai_per_frame_kernel_amortized,
            Metric::Gops => d.efficiency * peak,
        }
    }
}

/// A printed figure such as `"2.4k"` or `"3.0"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Printed {
    pub text: &'static str,
    pub value: f64,
    /// Half a unit in the last printed digit.
    pub half_digit: f64,
}

impl Printed {
    pub fn parse(text: &'static str) -> Printed {
        let (digits, scale) = match text.strip_suffix('k') {
            Some(d) => (d, 1e3),
            None => (text, 1.0),
        };
        let decimals = digits.split_once('.').map_or(0, |(_, f)| f.len());
        let value: f64 = digits.parse().expect("golden literal");
        Printed { text, value: value * scale, half_digit: 0.5 * 10f64.powi(-(decimals as i32)) * scale }
    }
}

/// Efficiency is held to a tenth of a point. Everything else is held to
/// 0.5% or the printed rounding, whichever is looser.
pub fn tolerance(metric: Metric, golden: &Printed) -> f64 {
    match metric {
        Metric::EfficiencyPct => 0.1,
        _ => (0.005 * golden.value.abs()).max(golden.half_digit),
    }
}

const METRICS: [Metric; 6] =
    [Metric::EfficiencyPct, Metric::Fps, Metric::LatencyMs, Metric::MegaWordsPerFrame, Metric::Ai, Metric::Gops];

/// `(network, domain, [eff, fps, latency, M/frame, AI, Gops])`.
pub const TABLE: [(&str, &str, [&str; 6]); 6] = [
    ("alexnet", "conv", ["77.2", "336.6", "3.0", "6.4", "191.8", "414.8"]),
    ("alexnet", "fc", ["99.1", "2.4k", "2.9", "12.2", "9.1", "266.5"]),
    ("vgg16", "conv", ["96.5", "17.5", "57.2", "96.8", "306.8", "518.7"]),
    ("vgg16", "fc", ["99.1", "1.1k", "6.5", "27.0", "9.2", "266.3"]),
    ("resnet50", "conv", ["88.3", "64.2", "15.6", "67.9", "108.9", "474.9"]),
    ("resnet50", "fc", ["94.7", "62.1k", "0.1", "0.5", "8.6", "254.5"]),
];

pub const PEAK_GOPS: &str = "537.6";

#[derive(Debug, Clone)]
pub struct Comparison {
    pub network: &'static str,
    pub domain: &'static str,
    pub metric: &'static str,
    pub computed: f64,
    pub golden: Printed,
    pub tolerance: f64,
}

impl Comparison {
    pub fn passed(&self) -> bool {
        (self.computed - self.golden.value).abs() <= self.tolerance
    }
}

pub fn compare(f_conv: f64, f_fc: f64) -> Result<Vec<Comparison>> {
    let cfg = EngineConfig::new(7, 96);
    let mut out = Vec::new();
    for (network, domain, values) in TABLE {
        let perf = network_perf(&builtin_network(network)?, &cfg, f_conv, f_fc)?;
        let (d, f) = if domain == "conv" { (perf.conv, f_conv) } else { (perf.matrix, f_fc) };
        let d = d.expect("built-in networks have both domains");
        for (metric, text) in METRICS.into_iter().zip(values) {
            let golden = Printed::parse(text);
            out.push(Comparison {
                network,
                domain,
                metric: metric.as_str(),
                computed: metric.of(&d, peak_gops(&cfg, f)),
                tolerance: tolerance(metric, &golden),
                golden,
            });
        }
    }
    let golden = Printed::parse(PEAK_GOPS);
    out.push(Comparison {
        network: "engine",
        domain: "conv",
        metric: "peak_Gops",
        computed: peak_gops(&cfg, f_conv),
        tolerance: 0.0,
        golden,
    });
    Ok(out)
}
