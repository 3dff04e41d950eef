//! Single-image layer kernels in channel-major (`C x H x W`) layout.
//!
//! Every layer exposes a forward pass and an explicit backward pass that
//! accumulates parameter gradients and returns the input gradient.

use crate::scalar::Scalar;

/// Dense `C x H x W` activation.
#[derive(Debug, Clone, PartialEq)]
pub struct Feat<T> {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Feat<T> {
    pub fn zeros(c: usize, h: usize, w: usize) -> Self {
        Self { c, h, w, data: vec![T::zero(); c * h * w] }
    }

    pub fn from_vec(c: usize, h: usize, w: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), c * h * w, "feature buffer length");
        Self { c, h, w, data }
    }

    pub fn hw(&self) -> usize {
        self.h * self.w
    }

    pub fn channel(&self, c: usize) -> &[T] {
        let hw = self.hw();
        &self.data[c * hw..(c + 1) * hw]
    }

    /// Channel concatenation `[a; b]`.
    pub fn concat(a: &Feat<T>, b: &Feat<T>) -> Feat<T> {
        assert_eq!((a.h, a.w), (b.h, b.w), "concat spatial mismatch");
        let mut data = Vec::with_capacity(a.data.len() + b.data.len());
        data.extend_from_slice(&a.data);
        data.extend_from_slice(&b.data);
        Feat { c: a.c + b.c, h: a.h, w: a.w, data }
    }
}

/// Index of a "same"-padded 2-D convolution with odd kernel, stride 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2d {
    pub weight: usize,
    pub bias: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl Conv2d {
    pub fn weight_shape(&self) -> [usize; 4] {
        [self.cout, self.cin, self.k, self.k]
    }

    fn patch(&self) -> usize {
        self.cin * self.k * self.k
    }

    pub fn forward<T: Scalar>(&self, x: &Feat<T>, weight: &[T], bias: &[T], scratch: &mut Vec<T>) -> Feat<T> {
        debug_assert_eq!(x.c, self.cin);
        let hw = x.hw();
        let mut out = Feat::zeros(self.cout, x.h, x.w);
        for (co, chunk) in out.data.chunks_exact_mut(hw).enumerate() {
            chunk.fill(bias[co]);
        }
        let cols: &[T] = if self.k == 1 {
            &x.data
        } else {
            im2col(x, self.k, scratch);
            scratch
        };
        let kk = self.patch() as isize;
        T::gemm(self.cout, self.patch(), hw, T::one(), weight, (kk, 1), cols, (hw as isize, 1), T::one(), &mut out.data, (hw as isize, 1));
        out
    }

    /// Accumulates `d weight`, `d bias` and returns `d x` when requested.
    #[allow(clippy::too_many_arguments)]
    pub fn backward<T: Scalar>(
        &self,
        x: &Feat<T>,
        dout: &[T],
        weight: &[T],
        dweight: &mut [T],
        dbias: &mut [T],
        need_dx: bool,
        scratch: &mut Vec<T>,
    ) -> Option<Feat<T>> {
        let hw = x.hw();
        let kk = self.patch();
        for (co, g) in dout.chunks_exact(hw).enumerate() {
            let mut s = T::zero();
            for v in g {
                s += *v;
            }
            dbias[co] += s;
        }
        let cols: &[T] = if self.k == 1 {
            &x.data
        } else {
            im2col(x, self.k, scratch);
            scratch
        };
        // dW[cout, kk] += dout[cout, hw] * cols[kk, hw]^T
        T::gemm(self.cout, hw, kk, T::one(), dout, (hw as isize, 1), cols, (1, hw as isize), T::one(), dweight, (kk as isize, 1));
        if !need_dx {
            return None;
        }
        // dcols[kk, hw] = W[cout, kk]^T * dout[cout, hw]
        let mut dcols = vec![T::zero(); kk * hw];
        T::gemm(kk, self.cout, hw, T::one(), weight, (1, kk as isize), dout, (hw as isize, 1), T::zero(), &mut dcols, (hw as isize, 1));
        if self.k == 1 {
            return Some(Feat::from_vec(self.cin, x.h, x.w, dcols));
        }
        let mut dx = Feat::zeros(self.cin, x.h, x.w);
        col2im(&dcols, self.k, &mut dx);
        Some(dx)
    }
}

/// Unfolds `k x k` zero-padded neighbourhoods into a `(C k k) x (H W)` matrix.
fn im2col<T: Scalar>(x: &Feat<T>, k: usize, cols: &mut Vec<T>) {
    let (h, w) = (x.h, x.w);
    let hw = h * w;
    let pad = (k / 2) as isize;
    cols.clear();
    cols.resize(x.c * k * k * hw, T::zero());
    let mut row = 0;
    for c in 0..x.c {
        let src = x.channel(c);
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let dx = kx as isize - pad;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let x0 = (-dx).max(0) as usize;
                let x1 = (w as isize - dx).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize || x0 >= x1 {
                        continue;
                    }
                    let srow = &src[sy as usize * w..(sy as usize + 1) * w];
                    let drow = &mut dst[y * w..(y + 1) * w];
                    let sx0 = (x0 as isize + dx) as usize;
                    drow[x0..x1].copy_from_slice(&srow[sx0..sx0 + (x1 - x0)]);
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: folds column gradients back onto the image.
fn col2im<T: Scalar>(cols: &[T], k: usize, dx: &mut Feat<T>) {
    let (h, w) = (dx.h, dx.w);
    let hw = h * w;
    let pad = (k / 2) as isize;
    let mut row = 0;
    for c in 0..dx.c {
        for ky in 0..k {
            let dy = ky as isize - pad;
            for kx in 0..k {
                let ddx = kx as isize - pad;
                let src = &cols[row * hw..(row + 1) * hw];
                let x0 = (-ddx).max(0) as usize;
                let x1 = (w as isize - ddx).min(w as isize).max(0) as usize;
                let dst = &mut dx.data[c * hw..(c + 1) * hw];
                for y in 0..h {
                    let sy = y as isize + dy;
                    if sy < 0 || sy >= h as isize || x0 >= x1 {
                        continue;
                    }
                    let sx0 = (x0 as isize + ddx) as usize;
                    let drow = &mut dst[sy as usize * w + sx0..sy as usize * w + sx0 + (x1 - x0)];
                    for (d, s) in drow.iter_mut().zip(&src[y * w + x0..y * w + x1]) {
                        *d += *s;
                    }
                }
                row += 1;
            }
        }
    }
}

/// 2x2 stride-2 transposed convolution (learned upsampling).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UpConv {
    pub weight: usize,
    pub bias: usize,
    pub cin: usize,
    pub cout: usize,
}

impl UpConv {
    /// Stored as `[cin, cout, 2, 2]`.
    pub fn weight_shape(&self) -> [usize; 4] {
        [self.cin, self.cout, 2, 2]
    }

    pub fn forward<T: Scalar>(&self, x: &Feat<T>, weight: &[T], bias: &[T]) -> Feat<T> {
        let hw = x.hw();
        let rows = self.cout * 4;
        let mut y = vec![T::zero(); rows * hw];
        // y[cout*4, hw] = W[cin, cout*4]^T * x[cin, hw]
        T::gemm(rows, self.cin, hw, T::one(), weight, (1, rows as isize), &x.data, (hw as isize, 1), T::zero(), &mut y, (hw as isize, 1));
        let (h2, w2) = (x.h * 2, x.w * 2);
        let mut out = Feat::zeros(self.cout, h2, w2);
        for co in 0..self.cout {
            let dst = &mut out.data[co * h2 * w2..(co + 1) * h2 * w2];
            for d in 0..4 {
                let (dy, dx) = (d / 2, d % 2);
                let src = &y[(co * 4 + d) * hw..(co * 4 + d + 1) * hw];
                for i in 0..x.h {
                    let orow = &mut dst[(2 * i + dy) * w2..(2 * i + dy + 1) * w2];
                    for j in 0..x.w {
                        orow[2 * j + dx] = src[i * x.w + j] + bias[co];
                    }
                }
            }
        }
        out
    }

    pub fn backward<T: Scalar>(&self, x: &Feat<T>, dout: &[T], weight: &[T], dweight: &mut [T], dbias: &mut [T]) -> Feat<T> {
        let hw = x.hw();
        let rows = self.cout * 4;
        let (h2, w2) = (x.h * 2, x.w * 2);
        let mut dy_cols = vec![T::zero(); rows * hw];
        for co in 0..self.cout {
            let src = &dout[co * h2 * w2..(co + 1) * h2 * w2];
            let mut s = T::zero();
            for d in 0..4 {
                let (dy, dx) = (d / 2, d % 2);
                let dst = &mut dy_cols[(co * 4 + d) * hw..(co * 4 + d + 1) * hw];
                for i in 0..x.h {
                    for j in 0..x.w {
                        let g = src[(2 * i + dy) * w2 + 2 * j + dx];
                        dst[i * x.w + j] = g;
                        s += g;
                    }
                }
            }
            dbias[co] += s;
        }
        // dW[cin, rows] += x[cin, hw] * dy[rows, hw]^T
        T::gemm(self.cin, hw, rows, T::one(), &x.data, (hw as isize, 1), &dy_cols, (1, hw as isize), T::one(), dweight, (rows as isize, 1));
        // dx[cin, hw] = W[cin, rows] * dy[rows, hw]
        let mut dx = Feat::zeros(self.cin, x.h, x.w);
        T::gemm(
            self.cin,
            rows,
            hw,
            T::one(),
            weight,
            (rows as isize, 1),
            &dy_cols,
            (hw as isize, 1),
            T::zero(),
            &mut dx.data,
            (hw as isize, 1),
        );
        dx
    }
}

pub fn relu_inplace<T: Scalar>(x: &mut Feat<T>) {
    for v in &mut x.data {
        if *v < T::zero() {
            *v = T::zero();
        }
    }
}

/// Zeroes `grad` wherever the post-activation output was not positive.
pub fn relu_backward_inplace<T: Scalar>(activated: &Feat<T>, grad: &mut [T]) {
    for (g, a) in grad.iter_mut().zip(&activated.data) {
        if *a <= T::zero() {
            *g = T::zero();
        }
    }
}

/// 2x2 max pooling; returns the pooled map and the flat argmax of each window.
pub fn maxpool2<T: Scalar>(x: &Feat<T>) -> (Feat<T>, Vec<u32>) {
    assert!(x.h % 2 == 0 && x.w % 2 == 0, "max pool needs even sides");
    let (h2, w2) = (x.h / 2, x.w / 2);
    let mut out = Feat::zeros(x.c, h2, w2);
    let mut arg = vec![0u32; x.c * h2 * w2];
    for c in 0..x.c {
        let src = x.channel(c);
        for i in 0..h2 {
            for j in 0..w2 {
                let base = 2 * i * x.w + 2 * j;
                let cand = [base, base + 1, base + x.w, base + x.w + 1];
                let mut best = cand[0];
                for &p in &cand[1..] {
                    if src[p] > src[best] {
                        best = p;
                    }
                }
                let o = c * h2 * w2 + i * w2 + j;
                out.data[o] = src[best];
                arg[o] = (c * x.hw() + best) as u32;
            }
        }
    }
    (out, arg)
}

pub fn maxpool2_backward<T: Scalar>(dout: &[T], argmax: &[u32], dx: &mut [T]) {
    for (g, &a) in dout.iter().zip(argmax) {
        dx[a as usize] += *g;
    }
}

/// Index into `0..n` reflected about the edges (`abc|ba...`), valid for any offset.
pub fn reflect_index(i: usize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let j = i % period;
    if j < n {
        j
    } else {
        period - j
    }
}

/// Extends `x` to `h x w` (bottom/right) by mirror reflection.
pub fn reflect_pad<T: Scalar>(x: &Feat<T>, h: usize, w: usize) -> Feat<T> {
    if (h, w) == (x.h, x.w) {
        return x.clone();
    }
    let mut out = Feat::zeros(x.c, h, w);
    for c in 0..x.c {
        let src = x.channel(c);
        for i in 0..h {
            let si = reflect_index(i, x.h);
            for j in 0..w {
                out.data[c * h * w + i * w + j] = src[si * x.w + reflect_index(j, x.w)];
            }
        }
    }
    out
}
