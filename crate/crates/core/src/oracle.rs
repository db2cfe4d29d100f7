//! Direct integer reference evaluation of convolution and matrix products.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::workload::LayerDescriptor;

/// Dense 4-D integer tensor in row-major order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<i64>,
}

impl Tensor4 {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Tensor4 { dims, data: vec![0; dims.iter().product()] }
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<i64>) -> Result<Self> {
        let len: usize = dims.iter().product();
        if data.len() != len {
            return Err(Error::ShapeMismatch(format!(
                "{} values for dims {dims:?} ({len} expected)",
                data.len()
            )));
        }
        Ok(Tensor4 { dims, data })
    }

    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut([usize; 4]) -> i64) -> Self {
        let mut t = Tensor4::zeros(dims);
        for a in 0..dims[0] {
            for b in 0..dims[1] {
                for c in 0..dims[2] {
                    for d in 0..dims[3] {
                        let i = t.offset([a, b, c, d]);
                        t.data[i] = f([a, b, c, d]);
                    }
                }
            }
        }
        t
    }

    /// Uniform signed values representable in `bits`.
    pub fn random<R: Rng + ?Sized>(dims: [usize; 4], bits: u32, rng: &mut R) -> Self {
        let (lo, hi) = signed_range(bits);
        let data = (0..dims.iter().product::<usize>()).map(|_| rng.gen_range(lo..=hi)).collect();
        Tensor4 { dims, data }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn data(&self) -> &[i64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<i64> {
        self.data
    }

    #[inline]
    pub fn offset(&self, idx: [usize; 4]) -> usize {
        let d = self.dims;
        ((idx[0] * d[1] + idx[1]) * d[2] + idx[2]) * d[3] + idx[3]
    }

    #[inline]
    pub fn get(&self, idx: [usize; 4]) -> i64 {
        self.data[self.offset(idx)]
    }

    #[inline]
    pub fn set(&mut self, idx: [usize; 4], v: i64) {
        let i = self.offset(idx);
        self.data[i] = v;
    }

    /// Multi-index of the first element where `self` and `other` differ.
    pub fn first_difference(&self, other: &Tensor4) -> Option<[usize; 4]> {
        if self.dims != other.dims {
            return Some([0; 4]);
        }
        let pos = self.data.iter().zip(&other.data).position(|(a, b)| a != b)?;
        let d = self.dims;
        Some([
            pos / (d[1] * d[2] * d[3]),
            pos / (d[2] * d[3]) % d[1],
            pos / d[3] % d[2],
            pos % d[3],
        ])
    }

    pub fn scaled(&self, a: i64) -> Tensor4 {
        Tensor4 { dims: self.dims, data: self.data.iter().map(|v| v * a).collect() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<i64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<i64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!("{} values for a {rows}x{cols} matrix", data.len())));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn identity(n: usize) -> Self {
        let mut data = vec![0; n * n];
        for i in 0..n {
            data[i * n + i] = 1;
        }
        Matrix { rows: n, cols: n, data }
    }

    pub fn random<R: Rng + ?Sized>(rows: usize, cols: usize, bits: u32, rng: &mut R) -> Self {
        let (lo, hi) = signed_range(bits);
        Matrix { rows, cols, data: (0..rows * cols).map(|_| rng.gen_range(lo..=hi)).collect() }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> i64 {
        self.data[r * self.cols + c]
    }

    /// Activations as the `[1, rows, 1, cols]` tensor of the conv substitution.
    pub fn as_activations(&self) -> Tensor4 {
        Tensor4 { dims: [1, self.rows, 1, self.cols], data: self.data.clone() }
    }

    /// Weights as the `[1, 1, rows, cols]` kernel of the conv substitution.
    pub fn as_kernel(&self) -> Tensor4 {
        Tensor4 { dims: [1, 1, self.rows, self.cols], data: self.data.clone() }
    }

    pub fn from_activations(t: &Tensor4) -> Result<Self> {
        let [n, h, w, c] = t.dims();
        if n != 1 || w != 1 {
            return Err(Error::ShapeMismatch(format!("tensor {:?} is not a row matrix", t.dims())));
        }
        Matrix::new(h, c, t.data().to_vec())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArithmeticModel {
    pub input_bits: u32,
    pub weight_bits: u32,
    pub acc_bits: u32,
}

impl Default for ArithmeticModel {
    fn default() -> Self {
        ArithmeticModel { input_bits: 8, weight_bits: 8, acc_bits: 32 }
    }
}

impl ArithmeticModel {
    /// Smallest accumulator width that cannot overflow on `layer`.
    pub fn required_acc_bits(&self, layer: &LayerDescriptor) -> u32 {
        let terms = (layer.kernel_h * layer.kernel_w * layer.in_channels) as u64;
        self.input_bits + self.weight_bits + ceil_log2(terms)
    }

    pub fn check_input(&self, x: &Tensor4) -> Result<()> {
        check_words("input", x.data(), self.input_bits)
    }

    pub fn check_weights(&self, k: &Tensor4) -> Result<()> {
        check_words("weight", k.data(), self.weight_bits)
    }

    #[inline]
    pub fn accumulate(&self, acc: i64, x: i64, w: i64) -> Option<i64> {
        let v = acc.checked_add(x.checked_mul(w)?)?;
        fits(v, self.acc_bits).then_some(v)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, bits) in [("input", self.input_bits), ("weight", self.weight_bits), ("accumulator", self.acc_bits)] {
            if !(1..=64).contains(&bits) {
                return Err(Error::Config(format!("{name} width {bits} outside 1..=64")));
            }
        }
        Ok(())
    }
}

pub fn signed_range(bits: u32) -> (i64, i64) {
    if bits >= 64 {
        (i64::MIN, i64::MAX)
    } else {
        (-(1i64 << (bits - 1)), (1i64 << (bits - 1)) - 1)
    }
}

#[inline]
pub fn fits(v: i64, bits: u32) -> bool {
    let (lo, hi) = signed_range(bits);
    (lo..=hi).contains(&v)
}

fn ceil_log2(n: u64) -> u32 {
    if n <= 1 {
        0
    } else {
        64 - (n - 1).leading_zeros()
    }
}

fn check_words(what: &'static str, data: &[i64], bits: u32) -> Result<()> {
    match data.iter().find(|&&v| !fits(v, bits)) {
        Some(&value) => Err(Error::WordRange { what, value, bits }),
        None => Ok(()),
    }
}

pub fn conv_reference(x: &Tensor4, k: &Tensor4, layer: &LayerDescriptor, arith: &ArithmeticModel) -> Result<Tensor4> {
    layer.validate()?;
    if x.dims() != layer.input_dims() {
        return Err(Error::ShapeMismatch(format!("input {:?} vs layer {:?}", x.dims(), layer.input_dims())));
    }
    if k.dims() != layer.weight_dims() {
        return Err(Error::ShapeMismatch(format!("weights {:?} vs layer {:?}", k.dims(), layer.weight_dims())));
    }
    arith.check_input(x)?;
    arith.check_weights(k)?;

    let l = layer;
    let mut y = Tensor4::zeros(l.output_dims());
    for n in 0..l.batch {
        for ho in 0..l.out_height() {
            for wo in 0..l.out_width() {
                for co in 0..l.out_channels {
                    let mut acc = 0i64;
                    for kh in 0..l.kernel_h {
                        let Some(h) = (ho * l.stride_h + kh).checked_sub(l.pad_h).filter(|&h| h < l.height) else {
                            continue;
                        };
                        for kw in 0..l.kernel_w {
                            let Some(w) = (wo * l.stride_w + kw).checked_sub(l.pad_w).filter(|&w| w < l.width)
                            else {
                                continue;
                            };
                            for ci in 0..l.in_channels {
                                acc = arith
                                    .accumulate(acc, x.get([n, h, w, ci]), k.get([kh, kw, ci, co]))
                                    .ok_or_else(|| Error::Overflow {
                                        site: format!("output [{n}, {ho}, {wo}, {co}]"),
                                        bits: arith.acc_bits,
                                    })?;
                            }
                        }
                    }
                    y.set([n, ho, wo, co], acc);
                }
            }
        }
    }
    Ok(y)
}

pub fn fc_reference(x: &Matrix, k: &Matrix, arith: &ArithmeticModel) -> Result<Matrix> {
    if x.cols != k.rows {
        return Err(Error::ShapeMismatch(format!(
            "{}x{} by {}x{}",
            x.rows, x.cols, k.rows, k.cols
        )));
    }
    check_words("input", &x.data, arith.input_bits)?;
    check_words("weight", &k.data, arith.weight_bits)?;
    let mut out = vec![0i64; x.rows * k.cols];
    for r in 0..x.rows {
        for c in 0..k.cols {
            let mut acc = 0i64;
            for i in 0..x.cols {
                acc = arith.accumulate(acc, x.get(r, i), k.get(i, c)).ok_or_else(|| Error::Overflow {
                    site: format!("output [{r}, {c}]"),
                    bits: arith.acc_bits,
                })?;
            }
            out[r * k.cols + c] = acc;
        }
    }
    Matrix::new(x.rows, k.cols, out)
}
