//! Fixed-point encoding of reals into Z_2^w and wrap-around arithmetic on
//! encoded tensors.

use std::marker::PhantomData;

use crate::error::{shape_check, Error, Result};
use crate::scalar::{Real, RingWord};
use crate::tensor::Matrix;

/// Ring width `w` and fractional bits `f` (scale 2^f).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct RingParams {
    width: u32,
    frac_bits: u32,
}

impl Default for RingParams {
    fn default() -> Self {
        Self {
            width: 64,
            frac_bits: 20,
        }
    }
}

impl RingParams {
    pub fn new(width: u32, frac_bits: u32) -> Result<Self> {
        if width != 32 && width != 64 {
            return Err(Error::InvalidParams(format!(
                "ring width must be 32 or 64, got {width}"
            )));
        }
        if frac_bits == 0 || frac_bits >= width - 8 {
            return Err(Error::InvalidParams(format!(
                "fractional bits must lie in 1..{}, got {frac_bits}",
                width - 8
            )));
        }
        Ok(Self { width, frac_bits })
    }

    #[inline]
    pub fn width(&self) -> u32 {
        self.width
    }

    #[inline]
    pub fn frac_bits(&self) -> u32 {
        self.frac_bits
    }

    #[inline]
    pub fn scale(&self) -> f64 {
        (self.frac_bits as f64).exp2()
    }

    /// Bytes per element on the wire.
    #[inline]
    pub fn element_bytes(&self) -> usize {
        self.width as usize / 8
    }

    /// Half-width of the representable real interval, 2^(w-1-f).
    pub fn real_limit(&self) -> f64 {
        ((self.width - 1 - self.frac_bits) as f64).exp2()
    }

    /// Worst-case decode error of a single encoded value.
    pub fn resolution(&self) -> f64 {
        (-(self.frac_bits as f64)).exp2()
    }
}

/// Matrix of w-bit ring elements carrying its fixed-point parameters.
#[derive(Clone, PartialEq, Eq)]
pub struct RingTensor<W> {
    rows: usize,
    cols: usize,
    data: Vec<W>,
    params: RingParams,
    _word: PhantomData<W>,
}

impl<W: std::fmt::Debug> std::fmt::Debug for RingTensor<W> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "RingTensor<Z_2^{}> {}x{} f={} ",
            self.params.width, self.rows, self.cols, self.params.frac_bits
        )?;
        f.debug_list().entries(self.data.iter().take(8)).finish()
    }
}

fn check_word<W: RingWord>(params: &RingParams) -> Result<()> {
    if params.width != W::BITS {
        return Err(Error::InvalidParams(format!(
            "parameters declare w={} but elements are {}-bit",
            params.width,
            W::BITS
        )));
    }
    Ok(())
}

impl<W: RingWord> RingTensor<W> {
    pub fn from_raw(rows: usize, cols: usize, data: Vec<W>, params: RingParams) -> Result<Self> {
        check_word::<W>(&params)?;
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "ring_from_raw",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Self {
            rows,
            cols,
            data,
            params,
            _word: PhantomData,
        })
    }

    pub fn zeros(rows: usize, cols: usize, params: RingParams) -> Result<Self> {
        Self::from_raw(rows, cols, vec![W::zero(); rows * cols], params)
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn params(&self) -> RingParams {
        self.params
    }

    #[inline]
    pub fn as_slice(&self) -> &[W] {
        &self.data
    }

    /// Payload size of the elements alone.
    pub fn element_bytes(&self) -> usize {
        self.data.len() * W::BYTES
    }

    fn compatible(&self, rhs: &Self, op: &'static str) -> Result<()> {
        shape_check(op, self.shape() == rhs.shape(), self.shape(), rhs.shape())?;
        if self.params != rhs.params {
            return Err(Error::ParamsMismatch);
        }
        Ok(())
    }

    fn zip(&self, rhs: &Self, op: &'static str, f: impl Fn(W, W) -> W) -> Result<Self> {
        self.compatible(rhs, op)?;
        Ok(Self {
            data: self.data.iter().zip(&rhs.data).map(|(&a, &b)| f(a, b)).collect(),
            ..self.clone()
        })
    }

    pub fn ring_add(&self, rhs: &Self) -> Result<Self> {
        self.zip(rhs, "ring_add", |a, b| a.wrapping_add(&b))
    }

    pub fn ring_sub(&self, rhs: &Self) -> Result<Self> {
        self.zip(rhs, "ring_sub", |a, b| a.wrapping_sub(&b))
    }

    pub fn ring_add_assign(&mut self, rhs: &Self) -> Result<()> {
        self.compatible(rhs, "ring_add_assign")?;
        self.data
            .iter_mut()
            .zip(&rhs.data)
            .for_each(|(a, b)| *a = a.wrapping_add(b));
        Ok(())
    }

    pub fn ring_neg(&self) -> Self {
        Self {
            data: self.data.iter().map(|a| a.wrapping_neg()).collect(),
            ..self.clone()
        }
    }

    /// Ring sum of a non-empty sequence of tensors.
    pub fn ring_sum<'a>(mut items: impl Iterator<Item = &'a Self>) -> Result<Self> {
        let first = items
            .next()
            .ok_or_else(|| Error::InvalidParams("ring sum of no tensors".into()))?;
        let mut acc = first.clone();
        for t in items {
            acc.ring_add_assign(t)?;
        }
        Ok(acc)
    }

    pub fn decode<T: Real>(&self) -> Matrix<T> {
        let scale = self.params.scale();
        let data = self
            .data
            .iter()
            .map(|w| T::of(w.to_signed() as f64 / scale))
            .collect();
        Matrix::from_vec(self.rows, self.cols, data).expect("decoded values are finite")
    }
}

/// Encodes every entry as round(x·2^f) mod 2^w, rounding half away from zero.
pub fn encode<W: RingWord, T: Real>(x: &Matrix<T>, params: RingParams) -> Result<RingTensor<W>> {
    check_word::<W>(&params)?;
    let scale = params.scale();
    let limit = params.real_limit();
    let half_ring = 1i128 << (params.width - 1);
    let data = x
        .as_slice()
        .iter()
        .map(|v| {
            let v = v.as_f64();
            let overflow = Error::RangeOverflow { value: v, limit };
            if !v.is_finite() || v >= limit || v < -limit {
                return Err(overflow);
            }
            let scaled = (v * scale).round() as i128;
            if scaled >= half_ring || scaled < -half_ring {
                return Err(overflow);
            }
            Ok(W::from_i128_wrapping(scaled))
        })
        .collect::<Result<Vec<W>>>()?;
    RingTensor::from_raw(x.rows(), x.cols(), data, params)
}

pub fn decode<W: RingWord, T: Real>(t: &RingTensor<W>) -> Matrix<T> {
    t.decode()
}
