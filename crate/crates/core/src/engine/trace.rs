use std::io::Write;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Config,
    Mac,
    Shift,
}

impl Phase {
    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Config => "config",
            Phase::Mac => "mac",
            Phase::Shift => "shift",
        }
    }
}

/// One clock of the schedule. Loop indices that do not apply to the clock are `None`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub cycle: u64,
    pub phase: Phase,
    pub t: usize,
    pub n: Option<usize>,
    pub l: Option<usize>,
    pub w: Option<usize>,
    pub c_i: Option<usize>,
    pub k_h: Option<usize>,
    /// Accumulator words handed to the output pipe on this clock.
    pub released: usize,
}

pub const TRACE_HEADER: &str = "cycle,phase,t,n,l,w,c_i,k_h,released";

pub fn write_trace<W: Write>(records: &[TraceRecord], mut out: W) -> std::io::Result<()> {
    fn opt(v: Option<usize>) -> String {
        v.map_or_else(String::new, |v| v.to_string())
    }
    writeln!(out, "{TRACE_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.cycle,
            r.phase.as_str(),
            r.t,
            opt(r.n),
            opt(r.l),
            opt(r.w),
            opt(r.c_i),
            opt(r.k_h),
            r.released
        )?;
    }
    Ok(())
}
