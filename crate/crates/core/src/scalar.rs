//! Scalar abstractions: the real field used by plaintext model math and the
//! unsigned machine words that carry ring elements.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, PrimInt, ToPrimitive, Unsigned, WrappingAdd, WrappingNeg, WrappingSub};
use rand::Rng;

/// Floating point type usable for model math (`f32` or `f64`).
pub trait Real:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Copy + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`; every `Real` can represent (a rounding of) any finite f64.
    #[inline]
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("f64 is convertible to every Real")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("Real is convertible to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

mod sealed {
    pub trait Sealed {}
    impl Sealed for u32 {}
    impl Sealed for u64 {}
}

/// Machine word holding one element of Z_2^w, w = `BITS`.
///
/// All arithmetic on ring words wraps; the signed interpretation is
/// two's complement through the high bit.
pub trait RingWord:
    sealed::Sealed
    + PrimInt
    + Unsigned
    + WrappingAdd
    + WrappingSub
    + WrappingNeg
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + 'static
{
    const BITS: u32;
    const BYTES: usize;

    /// Reduces a signed integer mod 2^w.
    fn from_i128_wrapping(v: i128) -> Self;
    /// Two's complement signed value.
    fn to_signed(self) -> i128;
    fn random<R: Rng + ?Sized>(rng: &mut R) -> Self;
    fn write_le(self, out: &mut Vec<u8>);
    /// Reads `BYTES` little-endian bytes; `bytes.len()` must equal `BYTES`.
    fn read_le(bytes: &[u8]) -> Self;
}

macro_rules! ring_word {
    ($u:ty, $i:ty) => {
        impl RingWord for $u {
            const BITS: u32 = <$u>::BITS;
            const BYTES: usize = std::mem::size_of::<$u>();

            #[inline]
            fn from_i128_wrapping(v: i128) -> Self {
                v as $u
            }

            #[inline]
            fn to_signed(self) -> i128 {
                self as $i as i128
            }

            #[inline]
            fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
                rng.random::<$u>()
            }

            #[inline]
            fn write_le(self, out: &mut Vec<u8>) {
                out.extend_from_slice(&self.to_le_bytes());
            }

            #[inline]
            fn read_le(bytes: &[u8]) -> Self {
                let mut buf = [0u8; std::mem::size_of::<$u>()];
                buf.copy_from_slice(bytes);
                <$u>::from_le_bytes(buf)
            }
        }
    };
}

ring_word!(u32, i32);
ring_word!(u64, i64);
