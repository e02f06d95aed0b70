//! Raw numeric kernels behind the graph ops.
//!
//! Batch items are processed in parallel, but every cross-item reduction is
//! summed sequentially in batch order, so results do not depend on the
//! number of worker threads.

use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(cin: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || k == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return None;
        }
        Some(Self {
            cin,
            h,
            w,
            k,
            stride,
            pad,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (w + 2 * pad - k) / stride + 1,
        })
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn im2col(&self, x: &[f64], out: &mut [f64]) {
        let p = self.cols();
        for ci in 0..self.cin {
            let plane = &x[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let r = (ci * self.k + ky) * self.k + kx;
                    let row = &mut out[r * p..(r + 1) * p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        let dst = &mut row[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            dst.fill(0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, d) in dst.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *d = if ix < 0 || ix >= self.w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let p = self.cols();
        for ci in 0..self.cin {
            let plane = &mut dx[ci * self.h * self.w..(ci + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let r = (ci * self.k + ky) * self.k + kx;
                    let row = &cols[r * p..(r + 1) * p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += row[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `out[n] = w * im2col(x[n]) + b`. `w` is `(cout, cin*k*k)`.
pub(crate) fn conv2d_forward(
    x: &[f64],
    w: &[f64],
    b: Option<&[f64]>,
    batch: usize,
    cout: usize,
    g: &ConvGeom,
) -> Vec<f64> {
    let (r, p) = (g.rows(), g.cols());
    let in_len = g.cin * g.h * g.w;
    let mut out = vec![0.0; batch * cout * p];
    out.par_chunks_mut(cout * p)
        .zip(x.par_chunks(in_len))
        .for_each(|(out_n, x_n)| {
            let mut buf;
            let cols: &[f64] = if g.is_pointwise() {
                x_n
            } else {
                buf = vec![0.0; r * p];
                g.im2col(x_n, &mut buf);
                &buf
            };
            for co in 0..cout {
                let dst = &mut out_n[co * p..(co + 1) * p];
                if let Some(b) = b {
                    dst.fill(b[co]);
                }
                for (ri, &wv) in w[co * r..(co + 1) * r].iter().enumerate() {
                    if wv == 0.0 {
                        continue;
                    }
                    for (d, &c) in dst.iter_mut().zip(&cols[ri * p..(ri + 1) * p]) {
                        *d += wv * c;
                    }
                }
            }
        });
    out
}

/// Gradients of [`conv2d_forward`] with respect to input, weight and bias.
pub(crate) fn conv2d_backward(
    x: &[f64],
    w: &[f64],
    dout: &[f64],
    batch: usize,
    cout: usize,
    g: &ConvGeom,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (r, p) = (g.rows(), g.cols());
    let in_len = g.cin * g.h * g.w;
    let mut dx = vec![0.0; batch * in_len];
    let per_item: Vec<(Vec<f64>, Vec<f64>)> = dx
        .par_chunks_mut(in_len)
        .zip(x.par_chunks(in_len))
        .zip(dout.par_chunks(cout * p))
        .map(|((dx_n, x_n), dout_n)| {
            let mut buf;
            let cols: &[f64] = if g.is_pointwise() {
                x_n
            } else {
                buf = vec![0.0; r * p];
                g.im2col(x_n, &mut buf);
                &buf
            };
            let mut dw = vec![0.0; cout * r];
            let mut db = vec![0.0; cout];
            let mut dcols = vec![0.0; r * p];
            for co in 0..cout {
                let go = &dout_n[co * p..(co + 1) * p];
                db[co] = go.iter().sum();
                for ri in 0..r {
                    let c = &cols[ri * p..(ri + 1) * p];
                    dw[co * r + ri] = go.iter().zip(c).map(|(a, b)| a * b).sum();
                    let wv = w[co * r + ri];
                    if wv != 0.0 {
                        for (d, &gv) in dcols[ri * p..(ri + 1) * p].iter_mut().zip(go) {
                            *d += wv * gv;
                        }
                    }
                }
            }
            if g.is_pointwise() {
                dx_n.copy_from_slice(&dcols);
            } else {
                g.col2im(&dcols, dx_n);
            }
            (dw, db)
        })
        .collect();

    let mut dw = vec![0.0; cout * r];
    let mut db = vec![0.0; cout];
    for (dw_n, db_n) in &per_item {
        for (a, b) in dw.iter_mut().zip(dw_n) {
            *a += b;
        }
        for (a, b) in db.iter_mut().zip(db_n) {
            *a += b;
        }
    }
    (dx, dw, db)
}

/// Row-wise log-sum-exp.
pub(crate) fn log_sum_exp(row: &[f64]) -> f64 {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}
