//! Unpacked f32 products for the skinny matrices convolution produces.
//!
//! A general GEMM packs both operands before multiplying; with only 8–24
//! output channels that copy costs more than the arithmetic. These kernels
//! read the operands in place and keep a register tile of accumulators.

use crate::real::MatRef;

fn accelerated() -> bool {
    #[cfg(target_arch = "x86_64")]
    {
        std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma")
    }
    #[cfg(not(target_arch = "x86_64"))]
    {
        false
    }
}

/// `c(m×n) = a(m×k) · b(k×n)` with `b` row-major. Returns `false` when no
/// accelerated path exists and nothing was written.
pub(crate) fn nn_f32(m: usize, k: usize, n: usize, a: MatRef<'_, f32>, b: &[f32], c: &mut [f32]) -> bool {
    if !accelerated() || m == 0 || n == 0 || k == 0 {
        return false;
    }
    assert!((m - 1) * a.row_stride + (k - 1) * a.col_stride < a.data.len(), "nn: lhs out of bounds");
    assert!(b.len() >= k * n && c.len() >= m * n, "nn: operand out of bounds");
    #[cfg(target_arch = "x86_64")]
    // SAFETY: AVX2/FMA availability checked above; extents checked against the slices.
    unsafe {
        avx::nn(m, k, n, a, b, c);
    }
    true
}

/// `c(m×n) = a(m×k) · b(n×k)ᵀ` with both operands row-major.
pub(crate) fn nt_f32(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) -> bool {
    if !accelerated() || m == 0 || n == 0 || k == 0 {
        return false;
    }
    assert!(a.len() >= m * k && b.len() >= n * k && c.len() >= m * n, "nt: operand out of bounds");
    #[cfg(target_arch = "x86_64")]
    // SAFETY: as above.
    unsafe {
        avx::nt(m, k, n, a, b, c);
    }
    true
}

/// Stride-1 correlation geometry for one sample: `cin×h×w` in, `cout×cin×k×k`
/// kernel, symmetric zero padding `pad < k`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Conv1 {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub k: usize,
    pub pad: usize,
}

impl Conv1 {
    pub fn ho(&self) -> usize {
        self.h + 2 * self.pad + 1 - self.k
    }
    pub fn wo(&self) -> usize {
        self.w + 2 * self.pad + 1 - self.k
    }
    fn hp(&self) -> usize {
        self.h + 2 * self.pad
    }
    fn wp(&self) -> usize {
        self.w + 2 * self.pad
    }
    fn usable(&self) -> bool {
        self.pad < self.k && self.k <= self.h + 2 * self.pad && self.k <= self.w + 2 * self.pad
    }
}

fn padded(x: &[f32], g: &Conv1) -> Vec<f32> {
    let (hp, wp) = (g.hp(), g.wp());
    let mut xp = vec![0.0f32; g.cin * hp * wp];
    for c in 0..g.cin {
        for y in 0..g.h {
            let dst = (c * hp + y + g.pad) * wp + g.pad;
            xp[dst..dst + g.w].copy_from_slice(&x[(c * g.h + y) * g.w..(c * g.h + y + 1) * g.w]);
        }
    }
    xp
}

/// `out(cout×ho×wo) = k ⋆ x`.
pub(crate) fn conv1_forward(x: &[f32], k: &[f32], g: &Conv1, out: &mut [f32]) -> bool {
    if !accelerated() || !g.usable() {
        return false;
    }
    assert!(x.len() >= g.cin * g.h * g.w && k.len() >= g.cout * g.cin * g.k * g.k && out.len() >= g.cout * g.ho() * g.wo());
    let xp = padded(x, g);
    #[cfg(target_arch = "x86_64")]
    // SAFETY: AVX2/FMA checked; every read stays inside the padded plane (see `avx::conv`).
    unsafe {
        avx::conv(&xp, k, g, out);
    }
    true
}

/// Gradient of `conv1_forward` with respect to `x`, from the output gradient `gy`.
pub(crate) fn conv1_input_grad(gy: &[f32], k: &[f32], g: &Conv1, dx: &mut [f32]) -> bool {
    let t = Conv1 { cin: g.cout, h: g.ho(), w: g.wo(), cout: g.cin, k: g.k, pad: g.k - 1 - g.pad };
    if !accelerated() || !g.usable() || !t.usable() {
        return false;
    }
    // full correlation with the spatially flipped, channel-transposed kernel
    let kk = g.k * g.k;
    let mut flipped = vec![0.0f32; g.cin * g.cout * kk];
    for o in 0..g.cout {
        for c in 0..g.cin {
            for i in 0..kk {
                flipped[(c * g.cout + o) * kk + (kk - 1 - i)] = k[(o * g.cin + c) * kk + i];
            }
        }
    }
    conv1_forward(gy, &flipped, &t, dx)
}

/// Gradient of `conv1_forward` with respect to the kernel.
pub(crate) fn conv1_kernel_grad(x: &[f32], gy: &[f32], g: &Conv1, dk: &mut [f32]) -> bool {
    if !accelerated() || !g.usable() {
        return false;
    }
    assert!(gy.len() >= g.cout * g.ho() * g.wo() && dk.len() >= g.cout * g.cin * g.k * g.k);
    let xp = padded(x, g);
    #[cfg(target_arch = "x86_64")]
    // SAFETY: as above.
    unsafe {
        avx::conv_kernel_grad(&xp, gy, g, dk);
    }
    true
}

#[cfg(target_arch = "x86_64")]
mod avx {
    use std::arch::x86_64::*;

    use crate::real::MatRef;

    const NR: usize = 16;

    #[target_feature(enable = "avx2,fma")]
    unsafe fn nn_tile<const R: usize>(i0: usize, j0: usize, k: usize, n: usize, a: &MatRef<'_, f32>, b: *const f32, c: *mut f32) {
        let mut acc = [[_mm256_setzero_ps(); 2]; R];
        let ap = a.data.as_ptr();
        for p in 0..k {
            let row = b.add(p * n + j0);
            let b0 = _mm256_loadu_ps(row);
            let b1 = _mm256_loadu_ps(row.add(8));
            for (r, acc_r) in acc.iter_mut().enumerate() {
                let av = _mm256_set1_ps(*ap.add((i0 + r) * a.row_stride + p * a.col_stride));
                acc_r[0] = _mm256_fmadd_ps(av, b0, acc_r[0]);
                acc_r[1] = _mm256_fmadd_ps(av, b1, acc_r[1]);
            }
        }
        for (r, acc_r) in acc.iter().enumerate() {
            let out = c.add((i0 + r) * n + j0);
            _mm256_storeu_ps(out, acc_r[0]);
            _mm256_storeu_ps(out.add(8), acc_r[1]);
        }
    }

    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn nn(m: usize, k: usize, n: usize, a: MatRef<'_, f32>, b: &[f32], c: &mut [f32]) {
        let (bp, cp) = (b.as_ptr(), c.as_mut_ptr());
        let full = n / NR * NR;
        for j0 in (0..full).step_by(NR) {
            let mut i0 = 0;
            while i0 + 4 <= m {
                nn_tile::<4>(i0, j0, k, n, &a, bp, cp);
                i0 += 4;
            }
            while i0 < m {
                nn_tile::<1>(i0, j0, k, n, &a, bp, cp);
                i0 += 1;
            }
        }
        for i in 0..m {
            for j in full..n {
                let mut s = 0.0f32;
                for p in 0..k {
                    s = a.data[i * a.row_stride + p * a.col_stride].mul_add(b[p * n + j], s);
                }
                c[i * n + j] = s;
            }
        }
    }

    #[target_feature(enable = "avx2,fma")]
    unsafe fn hsum(v: __m256) -> f32 {
        let s = _mm_add_ps(_mm256_castps256_ps128(v), _mm256_extractf128_ps(v, 1));
        let s = _mm_add_ps(s, _mm_movehl_ps(s, s));
        let s = _mm_add_ss(s, _mm_shuffle_ps(s, s, 1));
        _mm_cvtss_f32(s)
    }

    #[target_feature(enable = "avx2,fma")]
    unsafe fn nt_tile<const R: usize, const S: usize>(i0: usize, j0: usize, k: usize, n: usize, a: *const f32, b: *const f32, c: *mut f32) {
        let mut acc = [[_mm256_setzero_ps(); S]; R];
        let full = k / 8 * 8;
        let mut x = 0;
        while x < full {
            let mut bv = [_mm256_setzero_ps(); S];
            for (s, v) in bv.iter_mut().enumerate() {
                *v = _mm256_loadu_ps(b.add((j0 + s) * k + x));
            }
            for (r, acc_r) in acc.iter_mut().enumerate() {
                let av = _mm256_loadu_ps(a.add((i0 + r) * k + x));
                for s in 0..S {
                    acc_r[s] = _mm256_fmadd_ps(av, bv[s], acc_r[s]);
                }
            }
            x += 8;
        }
        for r in 0..R {
            for s in 0..S {
                let mut v = hsum(acc[r][s]);
                for t in full..k {
                    v = (*a.add((i0 + r) * k + t)).mul_add(*b.add((j0 + s) * k + t), v);
                }
                *c.add((i0 + r) * n + j0 + s) = v;
            }
        }
    }

    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn nt(m: usize, k: usize, n: usize, a: &[f32], b: &[f32], c: &mut [f32]) {
        let (ap, bp, cp) = (a.as_ptr(), b.as_ptr(), c.as_mut_ptr());
        let mut i0 = 0;
        while i0 < m {
            let rows = (m - i0).min(2);
            let mut j0 = 0;
            while j0 < n {
                let cols = (n - j0).min(4);
                match (rows, cols) {
                    (2, 4) => nt_tile::<2, 4>(i0, j0, k, n, ap, bp, cp),
                    (2, 3) => nt_tile::<2, 3>(i0, j0, k, n, ap, bp, cp),
                    (2, 2) => nt_tile::<2, 2>(i0, j0, k, n, ap, bp, cp),
                    (2, _) => nt_tile::<2, 1>(i0, j0, k, n, ap, bp, cp),
                    (_, 4) => nt_tile::<1, 4>(i0, j0, k, n, ap, bp, cp),
                    (_, 3) => nt_tile::<1, 3>(i0, j0, k, n, ap, bp, cp),
                    (_, 2) => nt_tile::<1, 2>(i0, j0, k, n, ap, bp, cp),
                    _ => nt_tile::<1, 1>(i0, j0, k, n, ap, bp, cp),
                }
                j0 += cols;
            }
            i0 += rows;
        }
    }

    use super::Conv1;

    /// Offset of each kernel tap's window origin inside the padded input;
    /// taps are ordered like the kernel's trailing `cin×k×k` block.
    fn tap_offsets(g: &Conv1) -> Vec<usize> {
        let kk = g.k * g.k;
        (0..g.cin * kk).map(|t| (t / kk * g.hp() + t % kk / g.k) * g.wp() + t % g.k).collect()
    }

    /// `V` vectors of 8 output columns for `R` output channels starting at `o0`.
    #[target_feature(enable = "avx2,fma")]
    unsafe fn conv_tile<const R: usize, const V: usize>(src: *const f32, taps: &[usize], k: *const f32, dst: *mut f32, plane: usize) {
        let n = taps.len();
        let mut acc = [[_mm256_setzero_ps(); V]; R];
        for (t, &off) in taps.iter().enumerate() {
            let p = src.add(off);
            let mut bv = [_mm256_setzero_ps(); V];
            for (v, b) in bv.iter_mut().enumerate() {
                *b = _mm256_loadu_ps(p.add(8 * v));
            }
            for (r, acc_r) in acc.iter_mut().enumerate() {
                let av = _mm256_set1_ps(*k.add(r * n + t));
                for v in 0..V {
                    acc_r[v] = _mm256_fmadd_ps(av, bv[v], acc_r[v]);
                }
            }
        }
        for (r, acc_r) in acc.iter().enumerate() {
            for v in 0..V {
                _mm256_storeu_ps(dst.add(r * plane + 8 * v), acc_r[v]);
            }
        }
    }

    #[target_feature(enable = "avx2,fma")]
    unsafe fn conv_cols<const V: usize>(src: *const f32, taps: &[usize], k: *const f32, dst: *mut f32, g: &Conv1) {
        let plane = g.ho() * g.wo();
        let n = taps.len();
        let mut o0 = 0;
        while o0 + 4 <= g.cout {
            conv_tile::<4, V>(src, taps, k.add(o0 * n), dst.add(o0 * plane), plane);
            o0 += 4;
        }
        while o0 < g.cout {
            conv_tile::<1, V>(src, taps, k.add(o0 * n), dst.add(o0 * plane), plane);
            o0 += 1;
        }
    }

    // Reads of padded row `y + ky`, columns `x0 + kx .. x0 + kx + 8V`, stay
    // below `wo − 1 + k = wp` because tiles never extend past `wo`.
    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn conv(xp: &[f32], k: &[f32], g: &Conv1, out: &mut [f32]) {
        let (ho, wo, wp) = (g.ho(), g.wo(), g.wp());
        let taps = tap_offsets(g);
        let (xptr, kptr, optr) = (xp.as_ptr(), k.as_ptr(), out.as_mut_ptr());
        for y in 0..ho {
            let mut x0 = 0;
            while x0 + 16 <= wo {
                conv_cols::<2>(xptr.add(y * wp + x0), &taps, kptr, optr.add(y * wo + x0), g);
                x0 += 16;
            }
            while x0 + 8 <= wo {
                conv_cols::<1>(xptr.add(y * wp + x0), &taps, kptr, optr.add(y * wo + x0), g);
                x0 += 8;
            }
            for x in x0..wo {
                for o in 0..g.cout {
                    let mut s = 0.0f32;
                    for (t, &off) in taps.iter().enumerate() {
                        s = k[o * taps.len() + t].mul_add(xp[off + y * wp + x], s);
                    }
                    out[(o * ho + y) * wo + x] = s;
                }
            }
        }
    }

    /// Dot products of `R` gradient planes with `S` shifted input windows.
    #[target_feature(enable = "avx2,fma")]
    unsafe fn dk_tile<const R: usize, const S: usize>(xp: *const f32, offs: &[usize], gy: *const f32, g: &Conv1, dk: *mut f32, taps: usize) {
        let (ho, wo, wp) = (g.ho(), g.wo(), g.wp());
        let plane = ho * wo;
        let full = wo / 8 * 8;
        let mut acc = [[_mm256_setzero_ps(); S]; R];
        let mut tail = [[0.0f32; S]; R];
        for y in 0..ho {
            let mut xs = [xp; S];
            for (s, p) in xs.iter_mut().enumerate() {
                *p = xp.add(offs[s] + y * wp);
            }
            let mut gs = [gy; R];
            for (r, p) in gs.iter_mut().enumerate() {
                *p = gy.add(r * plane + y * wo);
            }
            let mut x = 0;
            while x < full {
                let mut a = [_mm256_setzero_ps(); R];
                for r in 0..R {
                    a[r] = _mm256_loadu_ps(gs[r].add(x));
                }
                for s in 0..S {
                    let b = _mm256_loadu_ps(xs[s].add(x));
                    for r in 0..R {
                        acc[r][s] = _mm256_fmadd_ps(a[r], b, acc[r][s]);
                    }
                }
                x += 8;
            }
            for x in full..wo {
                for s in 0..S {
                    let b = *xs[s].add(x);
                    for r in 0..R {
                        tail[r][s] = (*gs[r].add(x)).mul_add(b, tail[r][s]);
                    }
                }
            }
        }
        for r in 0..R {
            for s in 0..S {
                *dk.add(r * taps + s) = hsum(acc[r][s]) + tail[r][s];
            }
        }
    }

    /// `dk[o, c, ky, kx] = Σ_{y,x} gy[o, y, x] · xp[c, y + ky, x + kx]`.
    #[target_feature(enable = "avx2,fma")]
    pub(super) unsafe fn conv_kernel_grad(xp: &[f32], gy: &[f32], g: &Conv1, dk: &mut [f32]) {
        let offs = tap_offsets(g);
        let taps = offs.len();
        let plane = g.ho() * g.wo();
        let (xptr, gptr, dptr) = (xp.as_ptr(), gy.as_ptr(), dk.as_mut_ptr());
        let mut o0 = 0;
        while o0 < g.cout {
            let rows = (g.cout - o0).min(2);
            let mut t0 = 0;
            while t0 < taps {
                let cols = (taps - t0).min(4);
                let (o, d) = (&offs[t0..], dptr.add(o0 * taps + t0));
                let gp = gptr.add(o0 * plane);
                match (rows, cols) {
                    (2, 4) => dk_tile::<2, 4>(xptr, o, gp, g, d, taps),
                    (2, 3) => dk_tile::<2, 3>(xptr, o, gp, g, d, taps),
                    (2, 2) => dk_tile::<2, 2>(xptr, o, gp, g, d, taps),
                    (2, _) => dk_tile::<2, 1>(xptr, o, gp, g, d, taps),
                    (_, 4) => dk_tile::<1, 4>(xptr, o, gp, g, d, taps),
                    (_, 3) => dk_tile::<1, 3>(xptr, o, gp, g, d, taps),
                    (_, 2) => dk_tile::<1, 2>(xptr, o, gp, g, d, taps),
                    _ => dk_tile::<1, 1>(xptr, o, gp, g, d, taps),
                }
                t0 += cols;
            }
            o0 += rows;
        }
    }
}
