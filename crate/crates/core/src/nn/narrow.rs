//! Matrix products with a narrow right-hand side (at most [`MAX_N`] output
//! columns) and a row-contiguous left operand. A packing GEMM repacks the
//! tall operand on every call and then uses each packed value only `n`
//! times; here it is streamed once with the accumulators in registers.

use super::Real;

pub(super) const MAX_N: usize = 32;

#[derive(Clone, Copy)]
pub(super) struct Operand<'a, T> {
    pub data: &'a [T],
    pub rs: usize,
    pub cs: usize,
}

/// Layout decision for `out (m x n) = a (m x k) * b (k x n)`.
pub(super) fn eligible(n: usize, a_rs: isize, a_cs: isize) -> bool {
    n <= MAX_N && a_cs == 1 && a_rs >= 0
}

pub(super) fn gemm<T: Real>(
    m: usize,
    k: usize,
    n: usize,
    a: Operand<'_, T>,
    b: Operand<'_, T>,
    out: &mut [T],
    accumulate: bool,
) {
    let nb = n.div_ceil(8) * 8;
    // Zero-padded copy of `b`; it is small by construction.
    let mut bp = vec![T::zero(); k * nb];
    for kk in 0..k {
        for j in 0..n {
            bp[kk * nb + j] = b.data[kk * b.rs + j * b.cs];
        }
    }
    macro_rules! widths {
        ($($w:literal $r:literal)*) => {
            match nb {
                $($w => dispatch::<T, $w, $r>(m, k, n, a, &bp, out, accumulate),)*
                _ => unreachable!("narrow width {nb}"),
            }
        };
    }
    // Row blocks sized so the accumulators fit the vector registers.
    widths!(8 8 16 4 24 4 32 2);
}

fn dispatch<T: Real, const NB: usize, const ROWS: usize>(
    m: usize,
    k: usize,
    n: usize,
    a: Operand<'_, T>,
    bp: &[T],
    out: &mut [T],
    accumulate: bool,
) {
    #[cfg(target_arch = "x86_64")]
    {
        if std::is_x86_feature_detected!("avx2") && std::is_x86_feature_detected!("fma") {
            // SAFETY: the required CPU features were just detected.
            unsafe { avx2::<T, NB, ROWS>(m, k, n, a, bp, out, accumulate) };
            return;
        }
    }
    body::<T, NB, ROWS, false>(m, k, n, a, bp, out, accumulate);
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2,fma")]
unsafe fn avx2<T: Real, const NB: usize, const ROWS: usize>(
    m: usize,
    k: usize,
    n: usize,
    a: Operand<'_, T>,
    bp: &[T],
    out: &mut [T],
    accumulate: bool,
) {
    body::<T, NB, ROWS, true>(m, k, n, a, bp, out, accumulate);
}

#[inline(always)]
fn madd<T: Real, const FMA: bool>(x: T, y: T, acc: T) -> T {
    if FMA {
        x.mul_add(y, acc)
    } else {
        acc + x * y
    }
}

#[inline(always)]
fn store<T: Real>(dst: &mut [T], src: &[T], accumulate: bool) {
    if accumulate {
        for (d, &s) in dst.iter_mut().zip(src) {
            *d += s;
        }
    } else {
        dst.copy_from_slice(&src[..dst.len()]);
    }
}

#[inline(always)]
fn body<T: Real, const NB: usize, const ROWS: usize, const FMA: bool>(
    m: usize,
    k: usize,
    n: usize,
    a: Operand<'_, T>,
    bp: &[T],
    out: &mut [T],
    accumulate: bool,
) {
    let mut i = 0;
    while i + ROWS <= m {
        let mut acc = [[T::zero(); NB]; ROWS];
        let arows: [&[T]; ROWS] = std::array::from_fn(|t| &a.data[(i + t) * a.rs..][..k]);
        for (kk, brow) in bp.chunks_exact(NB).take(k).enumerate() {
            for (row, arow) in acc.iter_mut().zip(&arows) {
                let x = arow[kk];
                for (s, &y) in row.iter_mut().zip(brow) {
                    *s = madd::<T, FMA>(x, y, *s);
                }
            }
        }
        for (t, row) in acc.iter().enumerate() {
            store(&mut out[(i + t) * n..][..n], row, accumulate);
        }
        i += ROWS;
    }
    for i in i..m {
        let mut acc = [T::zero(); NB];
        let arow = &a.data[i * a.rs..][..k];
        for (&x, brow) in arow.iter().zip(bp.chunks_exact(NB)) {
            for (s, &y) in acc.iter_mut().zip(brow) {
                *s = madd::<T, FMA>(x, y, *s);
            }
        }
        store(&mut out[i * n..][..n], &acc, accumulate);
    }
}
