//! Software BF16/FP16, precision-aware GEMM and dynamic loss scaling.
//!
//! Narrowing rounds to nearest, ties to even. Every NaN narrows to a single
//! quiet pattern (`0x7FC0` for BF16, `0x7E00` for FP16).

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::cost::Precision;

pub const BF16_CANONICAL_NAN: u16 = 0x7FC0;
pub const FP16_CANONICAL_NAN: u16 = 0x7E00;
pub const FP16_MAX: f32 = 65504.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NumericsError {
    #[error("shape mismatch: {left_rows}x{left_cols} by {right_rows}x{right_cols}")]
    DimensionMismatch {
        left_rows: usize,
        left_cols: usize,
        right_rows: usize,
        right_cols: usize,
    },
    #[error("matrix data has {found} elements, expected {expected}")]
    BadLength { expected: usize, found: usize },
    #[error("invalid loss scaler: {0}")]
    InvalidScaler(String),
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Bf16Value {
    bits: u16,
}

impl Bf16Value {
    pub const fn from_bits(bits: u16) -> Self {
        Self { bits }
    }

    pub const fn to_bits(self) -> u16 {
        self.bits
    }

    pub fn from_f32(x: f32) -> Self {
        f32_to_bf16(x)
    }

    pub fn to_f32(self) -> f32 {
        bf16_to_f32(self)
    }

    pub fn is_nan(self) -> bool {
        self.bits & 0x7F80 == 0x7F80 && self.bits & 0x007F != 0
    }
}

impl fmt::Debug for Bf16Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Bf16({:#06x} = {})", self.bits, self.to_f32())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Hash, Default)]
pub struct Fp16Value {
    bits: u16,
}

impl Fp16Value {
    pub const fn from_bits(bits: u16) -> Self {
        Self { bits }
    }

    pub const fn to_bits(self) -> u16 {
        self.bits
    }

    pub fn from_f32(x: f32) -> Self {
        f32_to_f16(x)
    }

    pub fn to_f32(self) -> f32 {
        f16_to_f32(self)
    }

    pub fn is_nan(self) -> bool {
        self.bits & 0x7C00 == 0x7C00 && self.bits & 0x03FF != 0
    }
}

impl fmt::Debug for Fp16Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fp16({:#06x} = {})", self.bits, self.to_f32())
    }
}

pub fn f32_to_bf16(x: f32) -> Bf16Value {
    if x.is_nan() {
        return Bf16Value::from_bits(BF16_CANONICAL_NAN);
    }
    let bits = x.to_bits();
    let lsb = (bits >> 16) & 1;
    // a carry out of the fraction bumps the exponent, which is also correct at the top (-> Inf)
    let rounded = bits.wrapping_add(0x7FFF + lsb);
    Bf16Value::from_bits((rounded >> 16) as u16)
}

pub fn bf16_to_f32(v: Bf16Value) -> f32 {
    f32::from_bits((v.bits as u32) << 16)
}

pub fn f32_to_f16(x: f32) -> Fp16Value {
    let bits = x.to_bits();
    let sign = ((bits >> 16) & 0x8000) as u16;
    let exp = ((bits >> 23) & 0xFF) as i32;
    let man = bits & 0x007F_FFFF;
    if exp == 0xFF {
        return Fp16Value::from_bits(if man != 0 {
            FP16_CANONICAL_NAN
        } else {
            sign | 0x7C00
        });
    }
    let unbiased = exp - 127;
    if unbiased > 15 {
        return Fp16Value::from_bits(sign | 0x7C00);
    }
    if unbiased >= -14 {
        let mut h = (((unbiased + 15) as u32) << 10) | (man >> 13);
        let rest = man & 0x1FFF;
        if rest > 0x1000 || (rest == 0x1000 && h & 1 == 1) {
            h += 1;
        }
        return Fp16Value::from_bits(sign | h as u16);
    }
    // below half the smallest subnormal (2^-25), or an f32 subnormal
    if unbiased < -25 {
        return Fp16Value::from_bits(sign);
    }
    let full = man | 0x0080_0000;
    let shift = (-unbiased - 1) as u32;
    let mut h = full >> shift;
    let rest = full & ((1 << shift) - 1);
    let half = 1 << (shift - 1);
    if rest > half || (rest == half && h & 1 == 1) {
        h += 1;
    }
    Fp16Value::from_bits(sign | h as u16)
}

pub fn f16_to_f32(v: Fp16Value) -> f32 {
    let bits = v.bits as u32;
    let sign = (bits & 0x8000) << 16;
    let exp = (bits >> 10) & 0x1F;
    let man = bits & 0x03FF;
    match exp {
        0 => {
            let mag = man as f32 * f32::from_bits(0x3380_0000); // 2^-24
            if sign != 0 {
                -mag
            } else {
                mag
            }
        }
        0x1F => f32::from_bits(sign | 0x7F80_0000 | (man << 13)),
        _ => f32::from_bits(sign | ((exp + 112) << 23) | (man << 13)),
    }
}

/// Rounds `x` through `precision` and back.
#[inline]
pub fn quantize(x: f32, precision: Precision) -> f32 {
    match precision {
        Precision::Fp32 => x,
        Precision::Bf16 => bf16_to_f32(f32_to_bf16(x)),
        Precision::Fp16 => f16_to_f32(f32_to_f16(x)),
    }
}

pub fn quantize_slice(xs: &mut [f32], precision: Precision) {
    if precision != Precision::Fp32 {
        for x in xs {
            *x = quantize(*x, precision);
        }
    }
}

pub fn has_nonfinite(xs: &[f32]) -> bool {
    xs.iter().any(|x| !x.is_finite())
}

/// Row-major dense matrix of f32.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self, NumericsError> {
        if data.len() != rows * cols {
            return Err(NumericsError::BadLength {
                expected: rows * cols,
                found: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f32>]) -> Result<Self, NumericsError> {
        let cols = rows.first().map_or(0, Vec::len);
        let data: Vec<f32> = rows.iter().flatten().copied().collect();
        Self::from_vec(rows.len(), cols, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: f32) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[f32] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn quantized(&self, precision: Precision) -> Matrix {
        let mut m = self.clone();
        quantize_slice(&mut m.data, precision);
        m
    }

    pub fn is_finite(&self) -> bool {
        !has_nonfinite(&self.data)
    }
}

/// `A·B` with operands narrowed to `precision` and f32 products and sums.
/// Each output element accumulates over the inner index in ascending order.
pub fn gemm(a: &Matrix, b: &Matrix, precision: Precision) -> Result<Matrix, NumericsError> {
    if a.cols != b.rows {
        return Err(NumericsError::DimensionMismatch {
            left_rows: a.rows,
            left_cols: a.cols,
            right_rows: b.rows,
            right_cols: b.cols,
        });
    }
    let (aq, bq);
    let (a, b) = if precision == Precision::Fp32 {
        (a, b)
    } else {
        aq = a.quantized(precision);
        bq = b.quantized(precision);
        (&aq, &bq)
    };
    let n = b.cols;
    let mut out = Matrix::zeros(a.rows, n);
    for i in 0..a.rows {
        let acc = &mut out.data[i * n..(i + 1) * n];
        for k in 0..a.cols {
            let aik = a.data[i * a.cols + k];
            let brow = &b.data[k * n..(k + 1) * n];
            for (o, &bkj) in acc.iter_mut().zip(brow) {
                *o += aik * bkj;
            }
        }
    }
    Ok(out)
}

/// Plain triple-loop f32 product, used as the unnarrowed reference.
pub fn gemm_reference(a: &Matrix, b: &Matrix) -> Result<Matrix, NumericsError> {
    if a.cols != b.rows {
        return Err(NumericsError::DimensionMismatch {
            left_rows: a.rows,
            left_cols: a.cols,
            right_rows: b.rows,
            right_cols: b.cols,
        });
    }
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        for j in 0..b.cols {
            let mut s = 0.0f32;
            for k in 0..a.cols {
                s += a.get(i, k) * b.get(k, j);
            }
            out.set(i, j, s);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossScalerConfig {
    pub initial_scale: f32,
    pub growth_factor: f32,
    pub backoff_factor: f32,
    pub growth_interval: u32,
    pub min_scale: f32,
    pub max_scale: f32,
}

impl Default for LossScalerConfig {
    fn default() -> Self {
        Self {
            initial_scale: 65536.0,
            growth_factor: 2.0,
            backoff_factor: 0.5,
            growth_interval: 200,
            min_scale: 1.0,
            max_scale: 16_777_216.0,
        }
    }
}

fn is_pow2(x: f32) -> bool {
    x.is_finite() && x > 0.0 && x.to_bits() & 0x007F_FFFF == 0 && x.to_bits() >> 23 != 0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalerEvent {
    Steady,
    Grew,
    BackedOff,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossScaler {
    pub scale: f32,
    pub growth_factor: f32,
    pub backoff_factor: f32,
    pub growth_interval: u32,
    pub good_steps: u32,
    pub min_scale: f32,
    pub max_scale: f32,
}

impl LossScaler {
    pub fn new(config: &LossScalerConfig) -> Result<Self, NumericsError> {
        let c = config;
        let bad = |m: &str| Err(NumericsError::InvalidScaler(m.into()));
        if !is_pow2(c.initial_scale) || !is_pow2(c.min_scale) || !is_pow2(c.max_scale) {
            return bad("initial, min and max scale must be powers of two");
        }
        if !is_pow2(c.growth_factor) || c.growth_factor <= 1.0 {
            return bad("growth_factor must be a power of two above 1");
        }
        if !is_pow2(c.backoff_factor) || c.backoff_factor >= 1.0 {
            return bad("backoff_factor must be a power of two below 1");
        }
        if c.growth_interval == 0 {
            return bad("growth_interval must be positive");
        }
        if !(c.min_scale <= c.initial_scale && c.initial_scale <= c.max_scale) {
            return bad("need min_scale <= initial_scale <= max_scale");
        }
        Ok(Self {
            scale: c.initial_scale,
            growth_factor: c.growth_factor,
            backoff_factor: c.backoff_factor,
            growth_interval: c.growth_interval,
            good_steps: 0,
            min_scale: c.min_scale,
            max_scale: c.max_scale,
        })
    }

    pub fn update(&mut self, found_nonfinite: bool) -> ScalerEvent {
        if found_nonfinite {
            self.scale = (self.scale * self.backoff_factor).max(self.min_scale);
            self.good_steps = 0;
            return ScalerEvent::BackedOff;
        }
        self.good_steps += 1;
        if self.good_steps == self.growth_interval {
            self.good_steps = 0;
            self.scale = (self.scale * self.growth_factor).min(self.max_scale);
            return ScalerEvent::Grew;
        }
        ScalerEvent::Steady
    }

    pub fn updated(mut self, found_nonfinite: bool) -> Self {
        self.update(found_nonfinite);
        self
    }

    pub fn unscale(&self, grads: &mut [f32]) {
        unscale(grads, self.scale);
    }
}

impl Default for LossScaler {
    fn default() -> Self {
        Self::new(&LossScalerConfig::default()).expect("defaults are valid")
    }
}

pub fn unscale(grads: &mut [f32], scale: f32) {
    for g in grads {
        *g /= scale;
    }
}

pub fn is_power_of_two(x: f32) -> bool {
    is_pow2(x)
}
