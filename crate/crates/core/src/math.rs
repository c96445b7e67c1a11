//! Scalar math routed through `libm` so results do not depend on the
//! platform `std` implementation, plus small 2-vector / 2x2 helpers.

pub type Vec2 = [f64; 2];
/// Row-major: `m[i][j]` is row `i`, column `j`.
pub type Mat2 = [[f64; 2]; 2];

#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub(crate) fn sin(x: f64) -> f64 {
    libm::sin(x)
}

#[inline]
pub(crate) fn cos(x: f64) -> f64 {
    libm::cos(x)
}

#[inline]
pub(crate) fn floor(x: f64) -> f64 {
    libm::floor(x)
}

#[inline]
pub(crate) fn round(x: f64) -> f64 {
    libm::round(x)
}

#[inline]
pub(crate) fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

#[inline]
pub(crate) fn powi(x: f64, n: i32) -> f64 {
    libm::pow(x, n as f64)
}

#[inline]
pub(crate) fn hypot(a: f64, b: f64) -> f64 {
    libm::hypot(a, b)
}

/// Largest singular value of a 2x2 matrix.
pub fn spectral_norm(m: &Mat2) -> f64 {
    let [[a, b], [c, d]] = *m;
    let fro2 = a * a + b * b + c * c + d * d;
    let det = a * d - b * c;
    // σ₁² = (‖m‖_F² + sqrt(‖m‖_F⁴ − 4 det²)) / 2
    let disc = (fro2 * fro2 - 4.0 * det * det).max(0.0);
    sqrt(0.5 * (fro2 + sqrt(disc)))
}

#[inline]
pub fn det2(m: &Mat2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

/// FNV-1a over the bit patterns of the values written; a cheap, stable
/// identifier for the inputs a result was computed from.
#[derive(Debug, Clone, Copy)]
pub struct Fingerprint(u64);

impl Default for Fingerprint {
    fn default() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }
}

impl Fingerprint {
    pub fn write_u64(&mut self, x: u64) {
        for b in x.to_le_bytes() {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }

    pub fn write_f64(&mut self, x: f64) {
        self.write_u64(x.to_bits());
    }

    pub fn write_all(&mut self, xs: &[f64]) {
        for &x in xs {
            self.write_f64(x);
        }
    }

    pub fn finish(self) -> u64 {
        self.0
    }
}
