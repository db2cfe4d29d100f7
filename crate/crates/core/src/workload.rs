//! Layer descriptors, operation counts and the built-in CNN layer tables.
//!
//! Fully-connected and matrix-product layers share the convolution
//! parameterization: the batch rows go in `height`, and batch, width,
//! kernel and stride extents are all 1 with no padding.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayerKind {
    Conv,
    #[serde(rename = "fc")]
    FullyConnected,
    MatMul,
}

impl LayerKind {
    pub fn is_conv(self) -> bool {
        self == LayerKind::Conv
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LayerKind::Conv => "conv",
            LayerKind::FullyConnected => "fc",
            LayerKind::MatMul => "matmul",
        }
    }
}

impl std::str::FromStr for LayerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "conv" => Ok(LayerKind::Conv),
            "fc" | "fullyconnected" | "fully-connected" => Ok(LayerKind::FullyConnected),
            "matmul" => Ok(LayerKind::MatMul),
            other => Err(Error::Shape(format!("unknown layer kind '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerDescriptor {
    pub kind: LayerKind,
    pub batch: usize,
    pub height: usize,
    pub width: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride_h: usize,
    pub stride_w: usize,
    pub pad_h: usize,
    pub pad_w: usize,
}

impl LayerDescriptor {
    /// Square-kernel convolution with "same" padding `(k - 1) / 2`.
    pub fn conv(height: usize, width: usize, in_channels: usize, out_channels: usize, kernel: usize, stride: usize) -> Self {
        let pad = kernel.saturating_sub(1) / 2;
        Self::conv_padded(height, width, in_channels, out_channels, kernel, stride, pad)
    }

    pub fn conv_padded(
        height: usize,
        width: usize,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
    ) -> Self {
        LayerDescriptor {
            kind: LayerKind::Conv,
            batch: 1,
            height,
            width,
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride_h: stride,
            stride_w: stride,
            pad_h: pad,
            pad_w: pad,
        }
    }

    /// Fully-connected layer over `batch_rows` input vectors.
    pub fn fully_connected(batch_rows: usize, in_features: usize, out_features: usize) -> Self {
        Self::matrix(LayerKind::FullyConnected, batch_rows, in_features, out_features)
    }

    pub fn matmul(rows: usize, inner: usize, cols: usize) -> Self {
        Self::matrix(LayerKind::MatMul, rows, inner, cols)
    }

    fn matrix(kind: LayerKind, rows: usize, inner: usize, cols: usize) -> Self {
        LayerDescriptor {
            kind,
            batch: 1,
            height: rows,
            width: 1,
            in_channels: inner,
            out_channels: cols,
            kernel_h: 1,
            kernel_w: 1,
            stride_h: 1,
            stride_w: 1,
            pad_h: 0,
            pad_w: 0,
        }
    }

    pub fn with_batch(mut self, batch: usize) -> Self {
        self.batch = batch;
        self
    }

    pub fn is_conv(&self) -> bool {
        self.kind.is_conv()
    }

    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad_h - self.kernel_h) / self.stride_h + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad_w - self.kernel_w) / self.stride_w + 1
    }

    /// Rows of the matrix operand for fully-connected and matmul layers.
    pub fn batch_rows(&self) -> usize {
        if self.is_conv() {
            self.batch
        } else {
            self.height
        }
    }

    pub fn validate(&self) -> Result<()> {
        let extents = [
            ("N", self.batch),
            ("H", self.height),
            ("W", self.width),
            ("C_i", self.in_channels),
            ("C_o", self.out_channels),
            ("K_H", self.kernel_h),
            ("K_W", self.kernel_w),
            ("S_H", self.stride_h),
            ("S_W", self.stride_w),
        ];
        if let Some((name, _)) = extents.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Shape(format!("{name} must be at least 1")));
        }
        if self.kernel_h > self.height + 2 * self.pad_h {
            return Err(Error::Shape(format!(
                "K_H={} exceeds padded height {}",
                self.kernel_h,
                self.height + 2 * self.pad_h
            )));
        }
        if self.kernel_w > self.width + 2 * self.pad_w {
            return Err(Error::Shape(format!(
                "K_W={} exceeds padded width {}",
                self.kernel_w,
                self.width + 2 * self.pad_w
            )));
        }
        if !self.is_conv() {
            let unit = [self.batch, self.width, self.kernel_h, self.kernel_w, self.stride_h, self.stride_w];
            if unit.iter().any(|&v| v != 1) || self.pad_h != 0 || self.pad_w != 0 {
                return Err(Error::Shape(format!(
                    "{} layers require N=W=K=S=1 and no padding",
                    self.kind.as_str()
                )));
            }
        }
        Ok(())
    }

    /// True unless the layer is a convolution whose padding differs from `(K-1)/2`
    /// or whose kernel is even.
    pub fn is_same_padded(&self) -> bool {
        if !self.is_conv() {
            return true;
        }
        self.kernel_h % 2 == 1
            && self.kernel_w % 2 == 1
            && self.pad_h == (self.kernel_h - 1) / 2
            && self.pad_w == (self.kernel_w - 1) / 2
    }

    /// Zero-padded input shape `[N, H, W, C_i]`.
    pub fn input_dims(&self) -> [usize; 4] {
        [self.batch, self.height, self.width, self.in_channels]
    }

    pub fn output_dims(&self) -> [usize; 4] {
        [self.batch, self.out_height(), self.out_width(), self.out_channels]
    }

    pub fn weight_dims(&self) -> [usize; 4] {
        [self.kernel_h, self.kernel_w, self.in_channels, self.out_channels]
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Network {
    pub name: String,
    pub layers: Vec<LayerDescriptor>,
    /// When set, each conv layer's output extents must match the next conv layer's input.
    #[serde(default)]
    pub chained: bool,
}

impl Network {
    pub fn new(name: impl Into<String>, layers: Vec<LayerDescriptor>) -> Self {
        Network { name: name.into(), layers, chained: false }
    }

    pub fn chained(mut self) -> Self {
        self.chained = true;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (j, layer) in self.layers.iter().enumerate() {
            layer.validate().map_err(|e| Error::Shape(format!("layer {j}: {e}")))?;
        }
        if self.chained {
            for (j, pair) in self.layers.windows(2).enumerate() {
                let (a, b) = (&pair[0], &pair[1]);
                if a.is_conv() && b.is_conv() && a.output_dims() != b.input_dims() {
                    return Err(Error::Shape(format!(
                        "layer {j} output {:?} does not feed layer {} input {:?}",
                        a.output_dims(),
                        j + 1,
                        b.input_dims()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn conv_layers(&self) -> impl Iterator<Item = &LayerDescriptor> {
        self.layers.iter().filter(|l| l.is_conv())
    }

    pub fn matrix_layers(&self) -> impl Iterator<Item = &LayerDescriptor> {
        self.layers.iter().filter(|l| !l.is_conv())
    }

    /// Copy with every fully-connected/matmul layer rebound to `rows` batch rows.
    pub fn with_matrix_batch(&self, rows: usize) -> Network {
        let mut net = self.clone();
        for layer in net.layers.iter_mut().filter(|l| !l.is_conv()) {
            layer.height = rows;
        }
        net
    }

    pub fn conv_only(&self) -> Network {
        Network {
            name: format!("{}-conv", self.name),
            layers: self.conv_layers().copied().collect(),
            chained: self.chained,
        }
    }

    pub fn matrix_only(&self) -> Network {
        Network {
            name: format!("{}-fc", self.name),
            layers: self.matrix_layers().copied().collect(),
            chained: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OpCounts {
    pub macs_with_zpad: u64,
    pub macs_valid: u64,
    /// Zero-padding tap positions per image and per (c_i, c_o) pair.
    pub zero_taps: u64,
}

impl std::ops::Add for OpCounts {
    type Output = OpCounts;

    fn add(self, o: OpCounts) -> OpCounts {
        OpCounts {
            macs_with_zpad: self.macs_with_zpad + o.macs_with_zpad,
            macs_valid: self.macs_valid + o.macs_valid,
            zero_taps: self.zero_taps + o.zero_taps,
        }
    }
}

impl std::iter::Sum for OpCounts {
    fn sum<I: Iterator<Item = OpCounts>>(iter: I) -> OpCounts {
        iter.fold(OpCounts::default(), |a, b| a + b)
    }
}

/// Number of (output position, tap) pairs along one axis whose input index is in range.
fn in_range_taps(extent: usize, out_extent: usize, kernel: usize, stride: usize, pad: usize) -> u64 {
    let mut count = 0u64;
    for o in 0..out_extent {
        for k in 0..kernel {
            let idx = (o * stride + k) as i64 - pad as i64;
            if idx >= 0 && (idx as usize) < extent {
                count += 1;
            }
        }
    }
    count
}

pub fn count_macs(layer: &LayerDescriptor) -> Result<OpCounts> {
    layer.validate()?;
    let (ho, wo) = (layer.out_height() as u64, layer.out_width() as u64);
    let taps = (layer.kernel_h * layer.kernel_w) as u64;
    let rows = in_range_taps(layer.height, layer.out_height(), layer.kernel_h, layer.stride_h, layer.pad_h);
    let cols = in_range_taps(layer.width, layer.out_width(), layer.kernel_w, layer.stride_w, layer.pad_w);
    // Tap validity is separable: a (row, column) tap is in range iff both components are.
    let zero_taps = ho * wo * taps - rows * cols;
    let channels = (layer.in_channels * layer.out_channels) as u64;
    let batch = layer.batch as u64;
    Ok(OpCounts {
        macs_with_zpad: batch * ho * wo * taps * channels,
        macs_valid: batch * (ho * wo * taps - zero_taps) * channels,
        zero_taps,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RawAccesses {
    pub input: u64,
    pub kernel: u64,
    pub output: u64,
}

impl RawAccesses {
    pub fn total(&self) -> u64 {
        self.input + self.kernel + self.output
    }
}

/// Unrestructured word traffic: every input, weight and output word moved once.
pub fn raw_memory_accesses(layer: &LayerDescriptor) -> Result<RawAccesses> {
    layer.validate()?;
    let l = layer;
    Ok(RawAccesses {
        input: (l.batch * l.height * l.width * l.in_channels) as u64,
        kernel: (l.kernel_h * l.kernel_w * l.in_channels * l.out_channels) as u64,
        output: (l.batch * l.out_height() * l.out_width() * l.out_channels) as u64,
    })
}

pub const BUILTIN_NETWORKS: [&str; 3] = ["alexnet", "vgg16", "resnet50"];

/// Batch rows used for the fully-connected layers of the built-in networks.
pub const DEFAULT_FC_BATCH: usize = 7;

pub fn builtin_network(name: &str) -> Result<Network> {
    match name.to_ascii_lowercase().as_str() {
        "alexnet" => Ok(alexnet()),
        "vgg16" | "vgg-16" | "vgg" => Ok(vgg16()),
        "resnet50" | "resnet-50" | "resnet" => Ok(resnet50()),
        _ => Err(Error::UnknownNetwork(name.to_string())),
    }
}

fn fc_stack(dims: &[(usize, usize)]) -> impl Iterator<Item = LayerDescriptor> + '_ {
    dims.iter()
        .map(|&(ci, co)| LayerDescriptor::fully_connected(DEFAULT_FC_BATCH, ci, co))
}

/// AlexNet with the two-tower grouping folded into the per-group input channels.
/// The first layer takes a 232-pixel input with one pixel of padding, which yields
/// the 56x56 output grid the rest of the stack builds on.
fn alexnet() -> Network {
    let mut layers = vec![
        LayerDescriptor::conv_padded(232, 232, 3, 96, 11, 4, 1),
        LayerDescriptor::conv(27, 27, 48, 256, 5, 1),
        LayerDescriptor::conv(13, 13, 256, 384, 3, 1),
        LayerDescriptor::conv(13, 13, 192, 384, 3, 1),
        LayerDescriptor::conv(13, 13, 192, 256, 3, 1),
    ];
    layers.extend(fc_stack(&[(9216, 4096), (4096, 4096), (4096, 1000)]));
    Network::new("alexnet", layers)
}

fn vgg16() -> Network {
    let convs = [
        (224, 3, 64),
        (224, 64, 64),
        (112, 64, 128),
        (112, 128, 128),
        (56, 128, 256),
        (56, 256, 256),
        (56, 256, 256),
        (28, 256, 512),
        (28, 512, 512),
        (28, 512, 512),
        (14, 512, 512),
        (14, 512, 512),
        (14, 512, 512),
    ];
    let mut layers: Vec<_> = convs
        .iter()
        .map(|&(hw, ci, co)| LayerDescriptor::conv(hw, hw, ci, co, 3, 1))
        .collect();
    layers.extend(fc_stack(&[(25088, 4096), (4096, 4096), (4096, 1000)]));
    Network::new("vgg16", layers)
}

/// ResNet-50 (v1 bottlenecks). A strided 1x1 convolution reads only every
/// `s`-th pixel, so it is listed as an unstrided 1x1 layer over the
/// subsampled input. Projection shortcuts are separate 1x1 layers.
fn resnet50() -> Network {
    let mut layers = vec![LayerDescriptor::conv(224, 224, 3, 64, 7, 2)];
    let mut hw = 56;
    let mut ci = 64;
    for &(mid, out, blocks, stride) in &[(64, 256, 3, 1), (128, 512, 4, 2), (256, 1024, 6, 2), (512, 2048, 3, 2)] {
        for b in 0..blocks {
            let s = if b == 0 { stride } else { 1 };
            let sub = hw / s;
            layers.push(LayerDescriptor::conv(sub, sub, ci, mid, 1, 1));
            layers.push(LayerDescriptor::conv(sub, sub, mid, mid, 3, 1));
            layers.push(LayerDescriptor::conv(sub, sub, mid, out, 1, 1));
            if b == 0 {
                layers.push(LayerDescriptor::conv(sub, sub, ci, out, 1, 1));
            }
            hw = sub;
            ci = out;
        }
    }
    layers.extend(fc_stack(&[(2048, 1000)]));
    Network::new("resnet50", layers)
}
