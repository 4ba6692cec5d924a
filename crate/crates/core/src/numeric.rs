//! Small dense-vector helpers shared by the forward and backward passes.

/// Numerically stable softmax (max-shifted). The result is strictly positive
/// for finite input and sums to one up to rounding.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    for v in &mut out {
        *v /= sum;
    }
    out
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `out += scale * x`
#[inline]
pub fn axpy(out: &mut [f64], scale: f64, x: &[f64]) {
    debug_assert_eq!(out.len(), x.len());
    for (o, v) in out.iter_mut().zip(x) {
        *o += scale * v;
    }
}

/// Row-major `rows × cols` matrix times vector.
pub fn matvec(m: &[f64], rows: usize, cols: usize, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(m.len(), rows * cols);
    debug_assert_eq!(x.len(), cols);
    m.chunks_exact(cols).map(|row| dot(row, x)).collect()
}

/// Transposed product `mᵀ y` for a row-major `rows × cols` matrix.
pub fn matvec_t(m: &[f64], rows: usize, cols: usize, y: &[f64]) -> Vec<f64> {
    debug_assert_eq!(y.len(), rows);
    let mut out = vec![0.0; cols];
    for (row, &w) in m.chunks_exact(cols).zip(y) {
        axpy(&mut out, w, row);
    }
    out
}

pub fn mean_of<'a>(rows: impl IntoIterator<Item = &'a [f64]>, dim: usize) -> Vec<f64> {
    let mut acc = vec![0.0; dim];
    let mut n = 0usize;
    for r in rows {
        axpy(&mut acc, 1.0, r);
        n += 1;
    }
    if n > 0 {
        let inv = 1.0 / n as f64;
        acc.iter_mut().for_each(|v| *v *= inv);
    }
    acc
}

pub fn all_finite(x: &[f64]) -> bool {
    x.iter().all(|v| v.is_finite())
}

pub fn l2_norm(x: &[f64]) -> f64 {
    dot(x, x).sqrt()
}

/// Median of a sample (mean of the two middle values for even length).
/// Returns `None` for an empty sample.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Fixed decimal rendering with `sig` significant digits, used for every
/// report and CSV so output is byte-stable.
pub fn fmt_sig(x: f64, sig: usize) -> String {
    if !x.is_finite() {
        return format!("{x}");
    }
    if x == 0.0 {
        return format!("{:.*}", sig.saturating_sub(1), 0.0);
    }
    let magnitude = x.abs().log10().floor() as i64;
    let decimals = (sig as i64 - 1 - magnitude).clamp(0, 30) as usize;
    let s = format!("{x:.decimals$}");
    if s.starts_with("-") && s[1..].bytes().all(|b| b == b'0' || b == b'.') {
        s[1..].to_string()
    } else {
        s
    }
}

/// Descending order for scores. Signed zeros compare equal (`-0.0 + 0.0`
/// is `+0.0`), so ties are left to the caller's tie-break; otherwise total.
pub fn cmp_desc(a: f64, b: f64) -> std::cmp::Ordering {
    (b + 0.0).total_cmp(&(a + 0.0))
}

/// Nine significant digits, the report-wide convention.
pub fn fmt9(x: f64) -> String {
    fmt_sig(x, 9)
}
