//! Row-major dense helpers over `matrixmultiply`.

/// `c[m×n] = op(a)[m×k] · op(b)[k×n] + beta · c`, everything row-major.
///
/// With `ta`, `a` is stored as `k×m` and used transposed; likewise `tb`
/// means `b` is stored `n×k`.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    ta: bool,
    b: &[f64],
    tb: bool,
    beta: f64,
    c: &mut [f64],
) {
    assert!(a.len() >= m * k, "gemm: lhs too short");
    assert!(b.len() >= k * n, "gemm: rhs too short");
    assert!(c.len() >= m * n, "gemm: output too short");
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        for v in &mut c[..m * n] {
            *v *= beta;
        }
        return;
    }
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the asserts above bound every index matrixmultiply can touch
    // for these shapes and strides.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Adds `bias` to every row of the `rows × bias.len()` matrix `m`.
pub(crate) fn add_row_bias(m: &mut [f64], bias: &[f64]) {
    for row in m.chunks_exact_mut(bias.len()) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v += b;
        }
    }
}

/// Accumulates column sums of a row-major matrix into `out`.
pub(crate) fn add_column_sums(m: &[f64], out: &mut [f64]) {
    for row in m.chunks_exact(out.len()) {
        for (o, v) in out.iter_mut().zip(row) {
            *o += v;
        }
    }
}

const LOG2E: f64 = std::f64::consts::LOG2_E;
const LN2_HI: f64 = 6.931_471_803_691_238e-1;
const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
/// Adding 1.5·2⁵² rounds to the nearest integer and leaves it in the low
/// mantissa bits.
const ROUND_MAGIC: f64 = 6_755_399_441_055_744.0;

/// Branch-free `exp` that vectorizes. Arguments are clamped to
/// `[-708, 709]`, so the result is always a finite normal number (NaN
/// still propagates). Relative error is a few ulp.
#[inline(always)]
pub(crate) fn exp(x: f64) -> f64 {
    let x = x.clamp(-708.0, 709.0);
    let big = x * LOG2E + ROUND_MAGIC;
    let k = big - ROUND_MAGIC;
    let r = (x - k * LN2_HI) - k * LN2_LO;
    // Taylor series to degree 12; |r| <= ln2/2 keeps the remainder below 2e-16.
    let mut p = 1.0 / 479_001_600.0;
    for c in [
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    let scale = f64::from_bits(((big.to_bits() as i64).wrapping_add(1023) << 52) as u64);
    p * scale
}

#[inline(always)]
pub(crate) fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + exp(-x))
}

/// `tanh` with absolute (not relative) error of a few ulp near zero.
#[inline(always)]
pub(crate) fn tanh(x: f64) -> f64 {
    1.0 - 2.0 / (exp(2.0 * x) + 1.0)
}

#[inline(always)]
fn sigmoid_generic(v: &mut [f64]) {
    for x in v {
        *x = sigmoid(*x);
    }
}

#[inline(always)]
fn tanh_generic(v: &mut [f64]) {
    for x in v {
        *x = tanh(*x);
    }
}

#[inline(always)]
fn tanh_into_generic(src: &[f64], dst: &mut [f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d = tanh(*s);
    }
}

// Wider SIMD only changes how many lanes run at once; every lane performs
// the same IEEE operations, so results are bit-identical on all paths.
macro_rules! dispatch {
    ($(#[$doc:meta])* $name:ident, $generic:ident, ($($arg:ident: $ty:ty),*)) => {
        $(#[$doc])*
        pub(crate) fn $name($($arg: $ty),*) {
            #[cfg(target_arch = "x86_64")]
            {
                #[target_feature(enable = "avx512f")]
                unsafe fn wide($($arg: $ty),*) {
                    $generic($($arg),*)
                }
                #[target_feature(enable = "avx2")]
                unsafe fn narrow($($arg: $ty),*) {
                    $generic($($arg),*)
                }
                if std::arch::is_x86_feature_detected!("avx512f") {
                    // SAFETY: the feature was detected at runtime.
                    return unsafe { wide($($arg),*) };
                }
                if std::arch::is_x86_feature_detected!("avx2") {
                    // SAFETY: as above.
                    return unsafe { narrow($($arg),*) };
                }
            }
            $generic($($arg),*)
        }
    };
}

dispatch!(
    /// In-place logistic sigmoid.
    sigmoid_slice, sigmoid_generic, (v: &mut [f64])
);
dispatch!(
    /// In-place hyperbolic tangent.
    tanh_slice, tanh_generic, (v: &mut [f64])
);
dispatch!(
    /// `dst[i] = tanh(src[i])`.
    tanh_into, tanh_into_generic, (src: &[f64], dst: &mut [f64])
);

#[cfg(test)]
mod tests {
    use super::*;

    fn naive(m: usize, k: usize, n: usize, a: &[f64], b: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn transpose(r: usize, c: usize, x: &[f64]) -> Vec<f64> {
        let mut t = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                t[j * r + i] = x[i * c + j];
            }
        }
        t
    }

    #[test]
    fn matches_naive_in_all_layouts() {
        let (m, k, n) = (3, 5, 4);
        let a: Vec<f64> = (0..m * k).map(|i| i as f64 * 0.5 - 3.0).collect();
        let b: Vec<f64> = (0..k * n).map(|i| (i as f64).sin()).collect();
        let want = naive(m, k, n, &a, &b);
        let at = transpose(m, k, &a);
        let bt = transpose(k, n, &b);
        for (ta, tb) in [(false, false), (true, false), (false, true), (true, true)] {
            let mut c = vec![0.0; m * n];
            let aa = if ta { &at } else { &a };
            let bb = if tb { &bt } else { &b };
            gemm(m, k, n, aa, ta, bb, tb, 0.0, &mut c);
            for (x, y) in c.iter().zip(&want) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        let mut c = want.clone();
        gemm(m, k, n, &a, false, &b, false, 1.0, &mut c);
        for (x, y) in c.iter().zip(&want) {
            assert!((x - 2.0 * y).abs() < 1e-12);
        }
    }

    #[test]
    fn sigmoid_is_stable() {
        assert_eq!(sigmoid(0.0), 0.5);
        assert!(sigmoid(-800.0) >= 0.0);
        assert_eq!(sigmoid(800.0), 1.0);
        assert!(sigmoid(f64::NAN).is_nan());
    }

    #[test]
    fn exp_matches_std() {
        let mut worst: f64 = 0.0;
        for i in -70_000..=70_800 {
            let x = i as f64 * 0.01 + 0.003;
            let want = x.exp();
            worst = worst.max(((exp(x) - want) / want).abs());
        }
        assert!(worst < 1e-15, "relative error {worst:e}");
        assert_eq!(exp(0.0), 1.0);
        assert!(exp(-1000.0) > 0.0 && exp(-1000.0) < 1e-300);
        assert!(exp(1000.0).is_finite());
        assert!(exp(f64::NAN).is_nan());
    }

    #[test]
    fn tanh_and_sigmoid_match_std() {
        for i in -4000..=4000 {
            let x = i as f64 * 0.01 + 0.0007;
            assert!((tanh(x) - x.tanh()).abs() < 1e-15, "tanh({x})");
            let s = 1.0 / (1.0 + (-x).exp());
            assert!((sigmoid(x) - s).abs() < 1e-15 * s.max(1e-300) + 1e-300, "sigmoid({x})");
        }
        assert_eq!(tanh(400.0), 1.0);
        assert_eq!(tanh(-400.0), -1.0);
    }

    #[test]
    fn slice_kernels_match_scalar() {
        let xs: Vec<f64> = (0..1003).map(|i| (i as f64 * 0.37).sin() * 12.0).collect();
        let mut s = xs.clone();
        sigmoid_slice(&mut s);
        let mut t = xs.clone();
        tanh_slice(&mut t);
        let mut u = vec![0.0; xs.len()];
        tanh_into(&xs, &mut u);
        for (k, &x) in xs.iter().enumerate() {
            assert_eq!(s[k].to_bits(), sigmoid(x).to_bits());
            assert_eq!(t[k].to_bits(), tanh(x).to_bits());
            assert_eq!(u[k].to_bits(), tanh(x).to_bits());
        }
    }
}
