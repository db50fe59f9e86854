//! Batched forward and backward passes of single layers. Activations are
//! `N x size` matrices with one sample per row, laid out channel-major.

use ndarray::{Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;

use super::spec::{size, Dims, LayerSpec};
use super::NetRng;

#[derive(Debug, Clone)]
pub(crate) enum LayerCache {
    /// im2col patches, `(N * out_h * out_w) x (C * kh * kw)`.
    Conv { cols: Array2<f64> },
    /// Flat input index of the maximum for every output element.
    MaxPool { argmax: Array2<usize> },
    Dense { input: Array2<f64> },
    Relu { input: Array2<f64> },
    Dropout { mask: Option<Array2<f64>> },
    Softmax { output: Array2<f64> },
}

fn im2col(x: &ArrayView2<f64>, input: Dims, kernel: [usize; 2], stride: usize, out: Dims) -> Array2<f64> {
    let [c, h, w] = input;
    let [kh, kw] = kernel;
    let (oh, ow) = (out[1], out[2]);
    let n = x.nrows();
    let mut cols = Array2::zeros((n * oh * ow, c * kh * kw));
    for (s, row) in x.axis_iter(Axis(0)).enumerate() {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut patch = cols.row_mut((s * oh + oy) * ow + ox);
                let mut k = 0;
                for ch in 0..c {
                    for ky in 0..kh {
                        let base = (ch * h + oy * stride + ky) * w + ox * stride;
                        for kx in 0..kw {
                            patch[k] = row[base + kx];
                            k += 1;
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(dcols: &Array2<f64>, n: usize, input: Dims, kernel: [usize; 2], stride: usize, out: Dims) -> Array2<f64> {
    let [c, h, w] = input;
    let [kh, kw] = kernel;
    let (oh, ow) = (out[1], out[2]);
    let mut dx = Array2::zeros((n, size(input)));
    for s in 0..n {
        let mut row = dx.row_mut(s);
        for oy in 0..oh {
            for ox in 0..ow {
                let patch = dcols.row((s * oh + oy) * ow + ox);
                let mut k = 0;
                for ch in 0..c {
                    for ky in 0..kh {
                        let base = (ch * h + oy * stride + ky) * w + ox * stride;
                        for kx in 0..kw {
                            row[base + kx] += patch[k];
                            k += 1;
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Parameters of one layer: weight `out x fan_in` and bias `1 x out`.
pub(crate) struct LayerParams<'a> {
    pub weight: ArrayView2<'a, f64>,
    pub bias: ArrayView1<'a, f64>,
}

pub(crate) fn forward(
    layer: &LayerSpec,
    dims: (Dims, Dims),
    params: Option<LayerParams<'_>>,
    x: Array2<f64>,
    rng: Option<&mut NetRng>,
) -> (Array2<f64>, LayerCache) {
    let (input, output) = dims;
    let n = x.nrows();
    match *layer {
        LayerSpec::Conv { kernel, stride, .. } => {
            let p = params.expect("conv has parameters");
            let cols = im2col(&x.view(), input, kernel, stride, output);
            let mut prod = cols.dot(&p.weight.t());
            prod += &p.bias;
            let spatial = output[1] * output[2];
            let out_ch = output[0];
            let y = Array2::from_shape_fn((n, size(output)), |(s, k)| {
                prod[[s * spatial + k % spatial, k / spatial]]
            });
            debug_assert_eq!(out_ch * spatial, size(output));
            (y, LayerCache::Conv { cols })
        }
        LayerSpec::MaxPool { window } => {
            let [c, h, w] = input;
            let (oh, ow) = (output[1], output[2]);
            let mut y = Array2::zeros((n, size(output)));
            let mut argmax = Array2::zeros((n, size(output)));
            for s in 0..n {
                let row = x.row(s);
                for ch in 0..c {
                    for oy in 0..oh {
                        for ox in 0..ow {
                            let mut best = (usize::MAX, f64::NEG_INFINITY);
                            for ky in 0..window {
                                for kx in 0..window {
                                    let idx = (ch * h + oy * window + ky) * w + ox * window + kx;
                                    if row[idx] > best.1 || best.0 == usize::MAX {
                                        best = (idx, row[idx]);
                                    }
                                }
                            }
                            let o = (ch * oh + oy) * ow + ox;
                            y[[s, o]] = best.1;
                            argmax[[s, o]] = best.0;
                        }
                    }
                }
            }
            (y, LayerCache::MaxPool { argmax })
        }
        LayerSpec::Dense { .. } => {
            let p = params.expect("dense has parameters");
            let mut y = x.dot(&p.weight.t());
            y += &p.bias;
            (y, LayerCache::Dense { input: x })
        }
        LayerSpec::Relu => {
            let y = x.mapv(|v| v.max(0.0));
            (y, LayerCache::Relu { input: x })
        }
        LayerSpec::Dropout { keep } => match rng {
            Some(rng) if keep < 1.0 => {
                let mask = Array2::from_shape_fn(x.raw_dim(), |_| {
                    if rng.random::<f64>() < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                });
                (&x * &mask, LayerCache::Dropout { mask: Some(mask) })
            }
            _ => (x, LayerCache::Dropout { mask: None }),
        },
        LayerSpec::Softmax => {
            let mut y = x;
            for mut row in y.axis_iter_mut(Axis(0)) {
                let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
                row.mapv_inplace(|v| (v - max).exp());
                let total = row.sum();
                row /= total;
            }
            (y.clone(), LayerCache::Softmax { output: y })
        }
    }
}

/// Returns the gradient with respect to the layer input and, for layers
/// with parameters, `(d weight, d bias)`.
pub(crate) fn backward(
    layer: &LayerSpec,
    dims: (Dims, Dims),
    params: Option<LayerParams<'_>>,
    cache: &LayerCache,
    grad: Array2<f64>,
) -> (Array2<f64>, Option<(Array2<f64>, Array2<f64>)>) {
    let (input, output) = dims;
    let n = grad.nrows();
    match (layer, cache) {
        (LayerSpec::Conv { kernel, stride, .. }, LayerCache::Conv { cols }) => {
            let p = params.expect("conv has parameters");
            let spatial = output[1] * output[2];
            let g = Array2::from_shape_fn((n * spatial, output[0]), |(r, o)| {
                grad[[r / spatial, o * spatial + r % spatial]]
            });
            let dw = g.t().dot(cols);
            let db = g.sum_axis(Axis(0)).insert_axis(Axis(0));
            let dcols = g.dot(&p.weight);
            let dx = col2im(&dcols, n, input, *kernel, *stride, output);
            (dx, Some((dw, db)))
        }
        (LayerSpec::MaxPool { .. }, LayerCache::MaxPool { argmax }) => {
            let mut dx = Array2::zeros((n, size(input)));
            for s in 0..n {
                for (o, &idx) in argmax.row(s).iter().enumerate() {
                    dx[[s, idx]] += grad[[s, o]];
                }
            }
            (dx, None)
        }
        (LayerSpec::Dense { .. }, LayerCache::Dense { input }) => {
            let p = params.expect("dense has parameters");
            let dw = grad.t().dot(input);
            let db = grad.sum_axis(Axis(0)).insert_axis(Axis(0));
            let dx = grad.dot(&p.weight);
            (dx, Some((dw, db)))
        }
        (LayerSpec::Relu, LayerCache::Relu { input }) => {
            let mut dx = grad;
            Zip::from(&mut dx).and(input).for_each(|g, &x| {
                if x <= 0.0 {
                    *g = 0.0;
                }
            });
            (dx, None)
        }
        (LayerSpec::Dropout { .. }, LayerCache::Dropout { mask }) => match mask {
            Some(mask) => (grad * mask, None),
            None => (grad, None),
        },
        (LayerSpec::Softmax, LayerCache::Softmax { output }) => {
            let mut dx = grad;
            for (mut g, p) in dx.axis_iter_mut(Axis(0)).zip(output.axis_iter(Axis(0))) {
                let dot = g.dot(&p);
                Zip::from(&mut g).and(&p).for_each(|gi, &pi| *gi = pi * (*gi - dot));
            }
            (dx, None)
        }
        _ => unreachable!("cache kind always matches its layer"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn conv_matches_direct_sum() {
        // 1 channel 3x3 input, 2x2 kernel, 2 filters
        let x = array![[1., 2., 3., 4., 5., 6., 7., 8., 9.]];
        let weight = array![[1., 0., 0., 1.], [0.5, -1., 2., 0.]];
        let bias = ndarray::arr1(&[0.1, -0.2]);
        let layer = LayerSpec::Conv { kernel: [2, 2], out_channels: 2, stride: 1 };
        let dims = ([1, 3, 3], [2, 2, 2]);
        let params = LayerParams { weight: weight.view(), bias: bias.view() };
        let (y, _) = forward(&layer, dims, Some(params), x, None);
        // filter 0: x[y,x] + x[y+1,x+1]
        assert_eq!(y.row(0).slice(ndarray::s![..4]).to_vec(), vec![6.1, 8.1, 12.1, 14.1]);
        // filter 1 at (0,0): 0.5*1 - 2 + 2*4 - 0.2
        assert!((y[[0, 4]] - 6.3).abs() < 1e-12);
    }

    #[test]
    fn maxpool_picks_window_max() {
        let x = array![[1., 5., 2., 0., 3., 4., 9., 8., 7., 6., 1., 2., 0., 0., 0., 10.]];
        let layer = LayerSpec::MaxPool { window: 2 };
        let (y, cache) = forward(&layer, ([1, 4, 4], [1, 2, 2]), None, x, None);
        assert_eq!(y.row(0).to_vec(), vec![5., 9., 7., 10.]);
        let (dx, _) = backward(&layer, ([1, 4, 4], [1, 2, 2]), None, &cache, array![[1., 2., 3., 4.]]);
        assert_eq!(dx[[0, 1]], 1.0);
        assert_eq!(dx[[0, 15]], 4.0);
        assert_eq!(dx.sum(), 10.0);
    }

    #[test]
    fn relu_clamps_negative() {
        let (y, _) = forward(&LayerSpec::Relu, ([2, 1, 1], [2, 1, 1]), None, array![[-1.0, 2.0]], None);
        assert_eq!(y, array![[0.0, 2.0]]);
    }

    #[test]
    fn softmax_is_stable() {
        let (y, _) = forward(&LayerSpec::Softmax, ([2, 1, 1], [2, 1, 1]), None, array![[1e3, 0.0], [0.0, 0.0]], None);
        assert!((y[[0, 0]] - 1.0).abs() < 1e-12 && y[[0, 1]] >= 0.0 && y[[0, 1]] < 1e-300);
        assert_eq!(y.row(1).to_vec(), vec![0.5, 0.5]);
    }
}
