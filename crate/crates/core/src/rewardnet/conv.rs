//! Stride-1, zero "same"-padded 2-D convolution on `[channels x h x w]`
//! planes stored channel-major.

use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    /// Odd kernel size.
    pub k: usize,
    /// `[out][in][k][k]`
    pub weight: Vec<f64>,
    pub bias: Vec<f64>,
    pub grad_weight: Vec<f64>,
    pub grad_bias: Vec<f64>,
}

impl Conv2d {
    pub fn zeros(in_ch: usize, out_ch: usize, k: usize) -> Self {
        assert!(k % 2 == 1, "kernel size must be odd");
        let n = out_ch * in_ch * k * k;
        Self {
            in_ch,
            out_ch,
            k,
            weight: vec![0.0; n],
            bias: vec![0.0; out_ch],
            grad_weight: vec![0.0; n],
            grad_bias: vec![0.0; out_ch],
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_ch * self.k * self.k
    }

    /// He-uniform bound `sqrt(6 / fan_in)`.
    pub fn init_bound(&self) -> f64 {
        (6.0 / self.fan_in() as f64).sqrt()
    }

    pub fn init_uniform<R: Rng>(&mut self, rng: &mut R) {
        let b = self.init_bound();
        for w in self.weight.iter_mut() {
            *w = rng.gen_range(-b..=b);
        }
        self.bias.fill(0.0);
    }

    #[inline]
    fn w_index(&self, oc: usize, ic: usize, ky: usize, kx: usize) -> usize {
        ((oc * self.in_ch + ic) * self.k + ky) * self.k + kx
    }

    /// `out = conv(input) + bias`; `out` is overwritten.
    pub fn forward(&self, input: &[f64], h: usize, w: usize, out: &mut [f64]) {
        let hw = h * w;
        debug_assert_eq!(input.len(), self.in_ch * hw);
        debug_assert_eq!(out.len(), self.out_ch * hw);
        let pad = (self.k / 2) as isize;
        for oc in 0..self.out_ch {
            let o_plane = &mut out[oc * hw..(oc + 1) * hw];
            o_plane.fill(self.bias[oc]);
            for ic in 0..self.in_ch {
                let i_plane = &input[ic * hw..(ic + 1) * hw];
                for ky in 0..self.k {
                    for kx in 0..self.k {
                        let wv = self.weight[self.w_index(oc, ic, ky, kx)];
                        if wv == 0.0 {
                            continue;
                        }
                        let (dy, dx) = (ky as isize - pad, kx as isize - pad);
                        for_each_row(h, w, dy, dx, |o_off, i_off, len| {
                            let o = &mut o_plane[o_off..o_off + len];
                            let i = &i_plane[i_off..i_off + len];
                            for (a, b) in o.iter_mut().zip(i) {
                                *a += wv * b;
                            }
                        });
                    }
                }
            }
        }
    }

    /// Accumulates parameter gradients of `sum(d_out * out)` and, when given,
    /// adds the input gradient into `d_input`.
    pub fn backward(
        &mut self,
        input: &[f64],
        h: usize,
        w: usize,
        d_out: &[f64],
        mut d_input: Option<&mut [f64]>,
    ) {
        let hw = h * w;
        debug_assert_eq!(d_out.len(), self.out_ch * hw);
        let pad = (self.k / 2) as isize;
        for oc in 0..self.out_ch {
            let g_plane = &d_out[oc * hw..(oc + 1) * hw];
            self.grad_bias[oc] += g_plane.iter().sum::<f64>();
            for ic in 0..self.in_ch {
                let i_plane = &input[ic * hw..(ic + 1) * hw];
                for ky in 0..self.k {
                    for kx in 0..self.k {
                        let (dy, dx) = (ky as isize - pad, kx as isize - pad);
                        let mut acc = 0.0;
                        for_each_row(h, w, dy, dx, |o_off, i_off, len| {
                            let g = &g_plane[o_off..o_off + len];
                            let i = &i_plane[i_off..i_off + len];
                            acc += g.iter().zip(i).map(|(a, b)| a * b).sum::<f64>();
                        });
                        let wi = self.w_index(oc, ic, ky, kx);
                        self.grad_weight[wi] += acc;
                        if let Some(d_in) = d_input.as_deref_mut() {
                            let wv = self.weight[wi];
                            if wv == 0.0 {
                                continue;
                            }
                            let d_plane = &mut d_in[ic * hw..(ic + 1) * hw];
                            for_each_row(h, w, dy, dx, |o_off, i_off, len| {
                                let g = &g_plane[o_off..o_off + len];
                                let d = &mut d_plane[i_off..i_off + len];
                                for (a, b) in d.iter_mut().zip(g) {
                                    *a += wv * b;
                                }
                            });
                        }
                    }
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad_weight.fill(0.0);
        self.grad_bias.fill(0.0);
    }
}

/// Calls `f(out_offset, in_offset, len)` for every output row segment whose
/// shifted input `(y + dy, x + dx)` lies inside the plane.
#[inline]
fn for_each_row<F: FnMut(usize, usize, usize)>(h: usize, w: usize, dy: isize, dx: isize, mut f: F) {
    let (h, w) = (h as isize, w as isize);
    let y_lo = (-dy).max(0);
    let y_hi = (h - dy).min(h);
    let x_lo = (-dx).max(0);
    let x_hi = (w - dx).min(w);
    if x_hi <= x_lo {
        return;
    }
    let len = (x_hi - x_lo) as usize;
    for y in y_lo..y_hi {
        let o_off = (y * w + x_lo) as usize;
        let i_off = ((y + dy) * w + x_lo + dx) as usize;
        f(o_off, i_off, len);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct definition with explicit bounds checks.
    fn naive(conv: &Conv2d, input: &[f64], h: usize, w: usize) -> Vec<f64> {
        let pad = (conv.k / 2) as isize;
        let mut out = vec![0.0; conv.out_ch * h * w];
        for oc in 0..conv.out_ch {
            for y in 0..h as isize {
                for x in 0..w as isize {
                    let mut acc = conv.bias[oc];
                    for ic in 0..conv.in_ch {
                        for ky in 0..conv.k as isize {
                            for kx in 0..conv.k as isize {
                                let (iy, ix) = (y + ky - pad, x + kx - pad);
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                acc += conv.weight[conv.w_index(oc, ic, ky as usize, kx as usize)]
                                    * input[ic * h * w + (iy as usize) * w + ix as usize];
                            }
                        }
                    }
                    out[oc * h * w + (y as usize) * w + x as usize] = acc;
                }
            }
        }
        out
    }

    #[test]
    fn matches_naive_convolution() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        for &(k, h, w) in &[(3, 5, 7), (1, 4, 4), (3, 1, 3), (5, 6, 6)] {
            let mut conv = Conv2d::zeros(3, 2, k);
            conv.init_uniform(&mut rng);
            for b in conv.bias.iter_mut() {
                *b = rng.gen_range(-1.0..1.0);
            }
            let input: Vec<f64> = (0..3 * h * w).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let mut out = vec![0.0; 2 * h * w];
            conv.forward(&input, h, w, &mut out);
            let expect = naive(&conv, &input, h, w);
            for (a, b) in out.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}
