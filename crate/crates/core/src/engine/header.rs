use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::LayerDescriptor;

/// 64-bit layer header carried ahead of the input and weight streams.
///
/// Bit layout, least significant first:
///
/// | bits  | field     |
/// |-------|-----------|
/// | 0-7   | K_H       |
/// | 8-15  | K_W       |
/// | 16-23 | S_H       |
/// | 24-31 | S_W       |
/// | 32-39 | F         |
/// | 40-55 | C_i       |
/// | 56    | matrix    |
/// | 57-63 | reserved, zero |
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConfigHeader {
    pub kernel_h: u8,
    pub kernel_w: u8,
    pub stride_h: u8,
    pub stride_w: u8,
    pub shift: u8,
    pub in_channels: u16,
    /// Fully-connected or matmul layer.
    pub matrix: bool,
}

const RESERVED_MASK: u64 = !((1u64 << 57) - 1);

impl ConfigHeader {
    pub fn for_layer(layer: &LayerDescriptor) -> Result<Self> {
        let narrow = |name: &str, v: usize| {
            u8::try_from(v).map_err(|_| Error::Header(format!("{name}={v} does not fit in 8 bits")))
        };
        let shift = layer.kernel_h.div_ceil(layer.stride_h) - 1;
        Ok(ConfigHeader {
            kernel_h: narrow("K_H", layer.kernel_h)?,
            kernel_w: narrow("K_W", layer.kernel_w)?,
            stride_h: narrow("S_H", layer.stride_h)?,
            stride_w: narrow("S_W", layer.stride_w)?,
            shift: narrow("F", shift)?,
            in_channels: u16::try_from(layer.in_channels)
                .map_err(|_| Error::Header(format!("C_i={} does not fit in 16 bits", layer.in_channels)))?,
            matrix: !layer.is_conv(),
        })
    }

    pub fn encode(&self) -> u64 {
        self.kernel_h as u64
            | (self.kernel_w as u64) << 8
            | (self.stride_h as u64) << 16
            | (self.stride_w as u64) << 24
            | (self.shift as u64) << 32
            | (self.in_channels as u64) << 40
            | (self.matrix as u64) << 56
    }

    pub fn decode(bits: u64) -> Result<Self> {
        if bits & RESERVED_MASK != 0 {
            return Err(Error::Header(format!("reserved bits set in {bits:#018x}")));
        }
        let byte = |at: u32| (bits >> at) as u8;
        let h = ConfigHeader {
            kernel_h: byte(0),
            kernel_w: byte(8),
            stride_h: byte(16),
            stride_w: byte(24),
            shift: byte(32),
            in_channels: (bits >> 40) as u16,
            matrix: (bits >> 56) & 1 == 1,
        };
        if h.kernel_h == 0 || h.kernel_w == 0 || h.stride_h == 0 || h.stride_w == 0 || h.in_channels == 0 {
            return Err(Error::Header(format!("zero extent in {bits:#018x}")));
        }
        let expected = (h.kernel_h as usize).div_ceil(h.stride_h as usize) - 1;
        if h.shift as usize != expected {
            return Err(Error::Header(format!(
                "F={} inconsistent with K_H={} S_H={} (expected {expected})",
                h.shift, h.kernel_h, h.stride_h
            )));
        }
        Ok(h)
    }

    /// Shift clock after every column phase; otherwise one configuration clock per iteration.
    pub fn shift_stall(&self) -> bool {
        !self.matrix && self.kernel_w != 1
    }
}
