//! Batched im2col convolution and max-pool routing on flattened feature maps.

use ndarray::{Array2, ArrayView2, NdFloat};

use super::topology::ConvGeometry;

/// Unfolds `[batch, c_in·h·w]` into patches `[c_in·k·k, batch·h_conv·w_conv]`.
/// Padding is zero.
pub(crate) fn im2col<A: NdFloat>(g: &ConvGeometry, input: ArrayView2<A>) -> Array2<A> {
    let batch = input.nrows();
    let l = g.conv_positions();
    let k = g.kernel;
    let n = batch * l;
    let mut cols = Array2::<A>::zeros((g.patch_len(), n));
    let pad = g.padding as isize;
    let dst_all = cols.as_slice_mut().expect("fresh array is contiguous");
    for b in 0..batch {
        let row = input.row(b);
        let owned;
        let x = match row.as_slice() {
            Some(x) => x,
            None => {
                owned = row.to_vec();
                &owned
            }
        };
        for c in 0..g.c_in {
            let plane = &x[c * g.h_in * g.w_in..(c + 1) * g.h_in * g.w_in];
            for ky in 0..k {
                for kx in 0..k {
                    let r = (c * k + ky) * k + kx;
                    let dst = &mut dst_all[r * n + b * l..r * n + (b + 1) * l];
                    for oy in 0..g.h_conv {
                        let iy = (oy * g.stride + ky) as isize - pad;
                        if iy < 0 || iy >= g.h_in as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * g.w_in..(iy as usize + 1) * g.w_in];
                        let out = &mut dst[oy * g.w_conv..(oy + 1) * g.w_conv];
                        let (lo, hi) = valid_range(kx, pad, g.stride, g.w_in, g.w_conv);
                        if g.stride == 1 {
                            let start = (lo as isize + kx as isize - pad) as usize;
                            out[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                        } else {
                            for (ox, d) in out.iter_mut().enumerate().take(hi).skip(lo) {
                                *d = src[(ox * g.stride + kx) - pad as usize];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Output columns `ox` in `lo..hi` whose input column `ox·stride + kx - pad`
/// lies inside `0..w_in`.
fn valid_range(kx: usize, pad: isize, stride: usize, w_in: usize, w_conv: usize) -> (usize, usize) {
    let first = pad - kx as isize;
    let lo = if first <= 0 {
        0
    } else {
        (first as usize).div_ceil(stride)
    };
    let last = w_in as isize - 1 + pad - kx as isize;
    let hi = if last < 0 {
        0
    } else {
        (last as usize / stride + 1).min(w_conv)
    };
    (lo.min(hi), hi)
}

/// Max-pools the conv output `[c_out, batch·L]` into `[batch, c_out·h_out·w_out]`.
/// Returns the pooled values and, per pooled unit, the conv position (within
/// its channel plane) that won the window. Ties go to the first index in
/// row-major window order.
pub(crate) fn max_pool<A: NdFloat>(g: &ConvGeometry, conv: ArrayView2<A>, batch: usize) -> (Array2<A>, Array2<u32>) {
    let l = g.conv_positions();
    let plane_out = g.h_out * g.w_out;
    let mut pooled = Array2::<A>::zeros((batch, g.n_out()));
    let mut route = Array2::<u32>::zeros((batch, g.n_out()));
    let n_out = g.n_out();
    let pooled_s = pooled.as_slice_mut().expect("contiguous");
    let route_s = route.as_slice_mut().expect("contiguous");
    for c in 0..g.c_out {
        let row = conv.row(c);
        let owned;
        let z = match row.as_slice() {
            Some(z) => z,
            None => {
                owned = row.to_vec();
                &owned
            }
        };
        for b in 0..batch {
            let zb = &z[b * l..(b + 1) * l];
            for py in 0..g.h_out {
                for px in 0..g.w_out {
                    let mut best = (py * g.pool) * g.w_conv + px * g.pool;
                    let mut best_v = zb[best];
                    for wy in 0..g.pool {
                        for wx in 0..g.pool {
                            let pos = (py * g.pool + wy) * g.w_conv + px * g.pool + wx;
                            if zb[pos] > best_v {
                                best = pos;
                                best_v = zb[pos];
                            }
                        }
                    }
                    let j = b * n_out + c * plane_out + py * g.w_out + px;
                    pooled_s[j] = best_v;
                    route_s[j] = best as u32;
                }
            }
        }
    }
    (pooled, route)
}

/// Scatters a pooled-resolution modulator `[batch, n_out]` back onto conv
/// positions `[c_out, batch·L]` through the pooling routes.
pub(crate) fn unpool<A: NdFloat>(g: &ConvGeometry, modulator: ArrayView2<A>, route: &Array2<u32>) -> Array2<A> {
    let batch = modulator.nrows();
    let l = g.conv_positions();
    let plane_out = g.h_out * g.w_out;
    let mut full = Array2::<A>::zeros((g.c_out, batch * l));
    for b in 0..batch {
        for j in 0..g.n_out() {
            let m = modulator[[b, j]];
            if m != A::zero() {
                let c = j / plane_out;
                full[[c, b * l + route[[b, j]] as usize]] += m;
            }
        }
    }
    full
}
