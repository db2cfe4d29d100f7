use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracle::ArithmeticModel;

/// Static engine parameters fixed at synthesis time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EngineConfig {
    /// PE rows (R).
    pub rows: usize,
    /// Cores (C), one column of `rows` PEs each.
    pub cores: usize,
    pub input_bits: u32,
    pub weight_bits: u32,
    pub acc_bits: u32,
    /// Beats each rotator bank holds per core.
    pub wsram_depth: usize,
    /// Extra pixel-shifter registers beyond `rows`.
    pub max_shift: usize,
    /// Instantiated (K_H, S_H) shifter adapters; `None` accepts any within `max_shift`.
    pub adapters: Option<BTreeSet<(usize, usize)>>,
}

/// (K_H, S_H) pairs used by the built-in networks.
pub const BUILTIN_ADAPTERS: [(usize, usize); 5] = [(1, 1), (3, 1), (5, 1), (7, 2), (11, 4)];

impl EngineConfig {
    pub fn new(rows: usize, cores: usize) -> Self {
        EngineConfig {
            rows,
            cores,
            input_bits: 8,
            weight_bits: 8,
            acc_bits: 32,
            wsram_depth: 2048,
            max_shift: 10,
            adapters: None,
        }
    }

    /// Configuration restricted to the shifter adapters the built-in networks need.
    pub fn builtin_preset(rows: usize, cores: usize) -> Self {
        EngineConfig {
            max_shift: 4,
            adapters: Some(BUILTIN_ADAPTERS.into_iter().collect()),
            ..EngineConfig::new(rows, cores)
        }
    }

    pub fn with_acc_bits(mut self, bits: u32) -> Self {
        self.acc_bits = bits;
        self
    }

    pub fn pe_count(&self) -> usize {
        self.rows * self.cores
    }

    pub fn arithmetic(&self) -> ArithmeticModel {
        ArithmeticModel {
            input_bits: self.input_bits,
            weight_bits: self.weight_bits,
            acc_bits: self.acc_bits,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cores == 0 {
            return Err(Error::Config(format!("array {}x{} is empty", self.rows, self.cores)));
        }
        if self.wsram_depth == 0 {
            return Err(Error::Config("rotator depth must be positive".into()));
        }
        self.arithmetic().validate()
    }

    pub fn supports_adapter(&self, kernel_h: usize, stride_h: usize, shift: usize) -> Result<()> {
        let listed = self.adapters.as_ref().is_none_or(|set| set.contains(&(kernel_h, stride_h)));
        if shift > self.max_shift || !listed {
            return Err(Error::UnsupportedAdapter {
                kernel: kernel_h,
                stride: stride_h,
                shift,
                max_shift: self.max_shift,
            });
        }
        Ok(())
    }
}

impl Default for EngineConfig {
    fn default() -> Self {
        EngineConfig::new(7, 96)
    }
}
