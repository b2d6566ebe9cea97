//! Convolution kernels built on im2col/col2im and a strided GEMM.

use alloc::vec;
use alloc::vec::Vec;

use crate::real::Real;

/// Sliding-window geometry between a large plane (`h × w`) and the window
/// grid (`oh × ow`) that a stride/padding/kernel combination produces on it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl Window {
    pub fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0 && self.oh == self.h && self.ow == self.w
    }
}

/// Output extent of a strided convolution, `None` when the window does not fit.
pub fn conv_out(size: usize, k: usize, stride: usize, pad: usize) -> Option<usize> {
    let padded = size + 2 * pad;
    if padded < k || stride == 0 {
        return None;
    }
    Some((padded - k) / stride + 1)
}

/// Output extent of a transposed convolution.
pub fn tconv_out(size: usize, k: usize, stride: usize, pad: usize, out_pad: usize) -> Option<usize> {
    let full = (size.checked_sub(1)?) * stride + k + out_pad;
    full.checked_sub(2 * pad).filter(|&v| v > 0)
}

fn im2col<S: Real>(x: &[S], g: &Window, cols: &mut [S]) {
    let n = g.col_cols();
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let dst = &mut cols[row * n..(row + 1) * n];
                for oi in 0..g.oh {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    let drow = &mut dst[oi * g.ow..(oi + 1) * g.ow];
                    if ii < 0 || ii >= g.h as isize {
                        drow.iter_mut().for_each(|v| *v = S::ZERO);
                        continue;
                    }
                    let src = &plane[ii as usize * g.w..(ii as usize + 1) * g.w];
                    for (oj, d) in drow.iter_mut().enumerate() {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        *d = if jj < 0 || jj >= g.w as isize { S::ZERO } else { src[jj as usize] };
                    }
                }
                row += 1;
            }
        }
    }
}

fn col2im<S: Real>(cols: &[S], g: &Window, x: &mut [S]) {
    let n = g.col_cols();
    let mut row = 0;
    for c in 0..g.channels {
        let plane = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let src = &cols[row * n..(row + 1) * n];
                for oi in 0..g.oh {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[ii as usize * g.w..(ii as usize + 1) * g.w];
                    for oj in 0..g.ow {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        if jj >= 0 && jj < g.w as isize {
                            dst[jj as usize] += src[oi * g.ow + oj];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

/// Row-major `c[m×n] (+)= a[m×k] · b[k×n]`, with optional transposes.
#[allow(clippy::too_many_arguments)]
fn matmul<S: Real>(m: usize, k: usize, n: usize, a: &[S], ta: bool, b: &[S], tb: bool, c: &mut [S], acc: bool) {
    let (rsa, csa) = if ta { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if tb { (1, k as isize) } else { (n as isize, 1) };
    debug_assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let beta = if acc { S::ONE } else { S::ZERO };
    // SAFETY: slice lengths cover the strided m×k, k×n and m×n regions.
    unsafe {
        S::gemm(m, k, n, S::ONE, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

pub fn matmul_into<S: Real>(m: usize, k: usize, n: usize, a: &[S], ta: bool, b: &[S], tb: bool, c: &mut [S], acc: bool) {
    matmul(m, k, n, a, ta, b, tb, c, acc)
}

/// Grouped 2d convolution geometry: input `[N, cin, h, w]`, weight
/// `[cout, cin / groups, kh, kw]`, output `[N, cout, oh, ow]`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub groups: usize,
    pub win: Window,
}

impl ConvSpec {
    fn cin_g(&self) -> usize {
        self.cin / self.groups
    }
    fn cout_g(&self) -> usize {
        self.cout / self.groups
    }
    fn in_plane(&self) -> usize {
        self.win.h * self.win.w
    }
    fn out_plane(&self) -> usize {
        self.win.oh * self.win.ow
    }
    fn group_window(&self) -> Window {
        Window { channels: self.cin_g(), ..self.win }
    }
}

pub fn conv2d_forward<S: Real>(spec: &ConvSpec, x: &[S], w: &[S], b: Option<&[S]>) -> Vec<S> {
    let g = spec.group_window();
    let (ci, co, hw, ohw) = (spec.cin_g(), spec.cout_g(), spec.in_plane(), spec.out_plane());
    let krows = g.col_rows();
    let mut out = vec![S::ZERO; spec.batch * spec.cout * ohw];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![S::ZERO; krows * ohw] };
    for n in 0..spec.batch {
        for grp in 0..spec.groups {
            let xg = &x[(n * spec.cin + grp * ci) * hw..(n * spec.cin + (grp + 1) * ci) * hw];
            let wg = &w[grp * co * krows..(grp + 1) * co * krows];
            let yg = &mut out[(n * spec.cout + grp * co) * ohw..(n * spec.cout + (grp + 1) * co) * ohw];
            let src: &[S] = if g.is_pointwise() {
                xg
            } else {
                im2col(xg, &g, &mut cols);
                &cols
            };
            matmul(co, krows, ohw, wg, false, src, false, yg, false);
        }
        if let Some(b) = b {
            for (c, &bc) in b.iter().enumerate() {
                out[(n * spec.cout + c) * ohw..(n * spec.cout + c + 1) * ohw].iter_mut().for_each(|v| *v += bc);
            }
        }
    }
    out
}

/// Gradients of a grouped convolution. Returns `(dx, dw, db)` for the
/// requested parts.
pub fn conv2d_backward<S: Real>(
    spec: &ConvSpec,
    x: &[S],
    w: &[S],
    dy: &[S],
    want_dx: bool,
    want_dw: bool,
    want_db: bool,
) -> (Option<Vec<S>>, Option<Vec<S>>, Option<Vec<S>>) {
    let g = spec.group_window();
    let (ci, co, hw, ohw) = (spec.cin_g(), spec.cout_g(), spec.in_plane(), spec.out_plane());
    let krows = g.col_rows();
    let mut dx = want_dx.then(|| vec![S::ZERO; x.len()]);
    let mut dw = want_dw.then(|| vec![S::ZERO; w.len()]);
    let db = want_db.then(|| {
        let mut db = vec![S::ZERO; spec.cout];
        for n in 0..spec.batch {
            for (c, d) in db.iter_mut().enumerate() {
                *d += dy[(n * spec.cout + c) * ohw..(n * spec.cout + c + 1) * ohw].iter().copied().sum::<S>();
            }
        }
        db
    });
    let pointwise = g.is_pointwise();
    let mut cols = vec![S::ZERO; if pointwise && !want_dx { 0 } else { krows * ohw }];
    for n in 0..spec.batch {
        for grp in 0..spec.groups {
            let xoff = (n * spec.cin + grp * ci) * hw;
            let dyg = &dy[(n * spec.cout + grp * co) * ohw..(n * spec.cout + (grp + 1) * co) * ohw];
            let wg = &w[grp * co * krows..(grp + 1) * co * krows];
            if let Some(dw) = dw.as_mut() {
                let xg = &x[xoff..xoff + ci * hw];
                let src: &[S] = if pointwise {
                    xg
                } else {
                    im2col(xg, &g, &mut cols);
                    &cols
                };
                matmul(co, ohw, krows, dyg, false, src, true, &mut dw[grp * co * krows..(grp + 1) * co * krows], true);
            }
            if let Some(dx) = dx.as_mut() {
                let dxg = &mut dx[xoff..xoff + ci * hw];
                if pointwise {
                    matmul(krows, co, ohw, wg, true, dyg, false, dxg, true);
                } else {
                    matmul(krows, co, ohw, wg, true, dyg, false, &mut cols, false);
                    col2im(&cols, &g, dxg);
                }
            }
        }
    }
    (dx, dw, db)
}

/// Transposed convolution geometry: input `[N, cin, ih, iw]`, weight
/// `[cin, cout, kh, kw]`, output `[N, cout, h, w]`. `win` describes the
/// output plane (`h × w`) against the input grid (`oh = ih`, `ow = iw`).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TConvSpec {
    pub batch: usize,
    pub cin: usize,
    pub cout: usize,
    pub win: Window,
}

pub fn tconv2d_forward<S: Real>(spec: &TConvSpec, x: &[S], w: &[S], b: Option<&[S]>) -> Vec<S> {
    let g = spec.win;
    let (ihw, ohw, krows) = (g.col_cols(), g.h * g.w, g.col_rows());
    let mut out = vec![S::ZERO; spec.batch * spec.cout * ohw];
    let mut cols = vec![S::ZERO; krows * ihw];
    for n in 0..spec.batch {
        let xn = &x[n * spec.cin * ihw..(n + 1) * spec.cin * ihw];
        matmul(krows, spec.cin, ihw, w, true, xn, false, &mut cols, false);
        let yn = &mut out[n * spec.cout * ohw..(n + 1) * spec.cout * ohw];
        col2im(&cols, &g, yn);
        if let Some(b) = b {
            for (c, &bc) in b.iter().enumerate() {
                yn[c * ohw..(c + 1) * ohw].iter_mut().for_each(|v| *v += bc);
            }
        }
    }
    out
}

pub fn tconv2d_backward<S: Real>(
    spec: &TConvSpec,
    x: &[S],
    w: &[S],
    dy: &[S],
    want_dx: bool,
    want_dw: bool,
    want_db: bool,
) -> (Option<Vec<S>>, Option<Vec<S>>, Option<Vec<S>>) {
    let g = spec.win;
    let (ihw, ohw, krows) = (g.col_cols(), g.h * g.w, g.col_rows());
    let mut dx = want_dx.then(|| vec![S::ZERO; x.len()]);
    let mut dw = want_dw.then(|| vec![S::ZERO; w.len()]);
    let db = want_db.then(|| {
        let mut db = vec![S::ZERO; spec.cout];
        for n in 0..spec.batch {
            for (c, d) in db.iter_mut().enumerate() {
                *d += dy[(n * spec.cout + c) * ohw..(n * spec.cout + c + 1) * ohw].iter().copied().sum::<S>();
            }
        }
        db
    });
    let mut cols = vec![S::ZERO; krows * ihw];
    for n in 0..spec.batch {
        im2col(&dy[n * spec.cout * ohw..(n + 1) * spec.cout * ohw], &g, &mut cols);
        if let Some(dx) = dx.as_mut() {
            matmul(spec.cin, krows, ihw, w, false, &cols, false, &mut dx[n * spec.cin * ihw..(n + 1) * spec.cin * ihw], false);
        }
        if let Some(dw) = dw.as_mut() {
            let xn = &x[n * spec.cin * ihw..(n + 1) * spec.cin * ihw];
            matmul(spec.cin, ihw, krows, xn, false, &cols, true, dw, true);
        }
    }
    (dx, dw, db)
}
