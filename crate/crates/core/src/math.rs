// Thin wrappers so the rest of the crate reads like std float code.

#[inline]
pub(crate) fn log2(x: f64) -> f64 {
    libm::log2(x)
}

#[inline]
pub(crate) fn log10(x: f64) -> f64 {
    libm::log10(x)
}

#[inline]
pub(crate) fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub(crate) fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub(crate) fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub(crate) fn db_to_linear(db: f64) -> f64 {
    powf(10.0, db / 10.0)
}

#[inline]
pub(crate) fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

/// `log2(1 + x)` for `x >= -1`, accurate for small `x`.
#[inline]
pub(crate) fn log2_1p(x: f64) -> f64 {
    libm::log1p(x) * core::f64::consts::LOG2_E
}
