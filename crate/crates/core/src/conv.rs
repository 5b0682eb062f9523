//! The convolution forms over video volumes.
//!
//! All kernels use cross-correlation orientation (no kernel flip):
//!
//! ```text
//! F(x, y, t) = Σ_{i,j,k} V(x + i − cx, y + j − cy, t + k − ct) · K(i, j, k)
//! ```
//!
//! with `c* = (m* − 1) / 2` under [`Padding::Same`] and `c* = 0` under
//! [`Padding::Valid`]. `Same` pads every axis, time included, with zeros; the
//! padding is materialised, so every output element costs exactly the nominal
//! number of multiplies, which is what [`flop_model`] predicts.
//!
//! When a kernel factors as `K = K_s ⊗ k_t`, [`conv_factored`] computes the same
//! result as [`conv3d_full`] with a per-output cost of `mx·my + mt` multiplies
//! instead of `mx·my·mt`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::counter::OpCounter;
use crate::error::{Error, Result};
use crate::tensor::{ChannelFrame, FeatureTensor, Kernel2D, Kernel3D, SeparableKernel, VideoTensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    /// Zero padding; output dims equal input dims. Kernel dims must be odd.
    Same,
    /// No padding; each axis shrinks by `m − 1`.
    Valid,
}

impl fmt::Display for Padding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Padding::Same => "same",
            Padding::Valid => "valid",
        })
    }
}

impl FromStr for Padding {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "same" => Ok(Padding::Same),
            "valid" => Ok(Padding::Valid),
            other => Err(Error::config(format!(
                "unknown padding `{other}` (expected `same` or `valid`)"
            ))),
        }
    }
}

/// Which convolution route a cost estimate refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ConvMode {
    Full,
    Factored,
}

/// Output length and leading pad along one axis.
fn axis_plan(n: usize, m: usize, padding: Padding, axis: &str) -> Result<(usize, usize)> {
    if m == 0 {
        return Err(Error::shape(format!("kernel {axis} dim is zero")));
    }
    match padding {
        Padding::Same => {
            if m.is_multiple_of(2) {
                return Err(Error::config(format!(
                    "`same` padding needs odd kernel dims, {axis} dim is {m}"
                )));
            }
            Ok((n, (m - 1) / 2))
        }
        Padding::Valid => {
            if m > n {
                return Err(Error::shape(format!(
                    "kernel {axis} dim {m} exceeds input dim {n} in `valid` mode"
                )));
            }
            Ok((n - m + 1, 0))
        }
    }
}

/// Copies `src` (dims `[a, b, c]`, last axis fastest) into a zero buffer
/// enlarged by `pad[d]` on both sides of each axis.
fn zero_pad(src: &[f64], dims: [usize; 3], pad: [usize; 3]) -> (Vec<f64>, [usize; 3]) {
    if pad == [0, 0, 0] {
        return (src.to_vec(), dims);
    }
    let pdims = [
        dims[0] + 2 * pad[0],
        dims[1] + 2 * pad[1],
        dims[2] + 2 * pad[2],
    ];
    let mut out = vec![0.0; pdims[0] * pdims[1] * pdims[2]];
    for a in 0..dims[0] {
        for b in 0..dims[1] {
            let s = (a * dims[1] + b) * dims[2];
            let d = ((a + pad[0]) * pdims[1] + b + pad[1]) * pdims[2] + pad[2];
            out[d..d + dims[2]].copy_from_slice(&src[s..s + dims[2]]);
        }
    }
    (out, pdims)
}

/// Direct 3D convolution, `mx·my·mt` multiplies per output element.
pub fn conv3d_full(
    video: &VideoTensor,
    kernel: &Kernel3D,
    padding: Padding,
    counter: &OpCounter,
) -> Result<FeatureTensor> {
    let [mx, my, mt] = kernel.dims();
    let (ox, px) = axis_plan(video.nx(), mx, padding, "x")?;
    let (oy, py) = axis_plan(video.ny(), my, padding, "y")?;
    let (ot, pt) = axis_plan(video.nt(), mt, padding, "t")?;
    let (src, pdims) = zero_pad(video.data(), video.dims(), [px, py, pt]);
    let kdata = kernel.data();
    let taps = (mx * my * mt) as u64;

    let mut out = vec![0.0; ox * oy * ot];
    out.par_chunks_mut(oy * ot).enumerate().for_each(|(x, slab)| {
        for y in 0..oy {
            for t in 0..ot {
                let mut acc = 0.0;
                for i in 0..mx {
                    for j in 0..my {
                        let base = ((x + i) * pdims[1] + y + j) * pdims[2] + t;
                        let kb = (i * my + j) * mt;
                        for k in 0..mt {
                            acc += src[base + k] * kdata[kb + k];
                        }
                    }
                }
                slab[y * ot + t] = acc;
            }
        }
        let n = (oy * ot) as u64;
        counter.record(n * taps, n * (taps - 1));
    });
    Ok(FeatureTensor::from_parts([ox, oy, ot], out))
}

/// `K[x, y, t] = K_s[x, y] · k_t[t]`.
pub fn kron_kernel(sep: &SeparableKernel) -> Kernel3D {
    let [mx, my, mt] = sep.dims();
    let mut data = Vec::with_capacity(mx * my * mt);
    for &s in &sep.spatial.data {
        data.extend(sep.temporal.iter().map(|&k| s * k));
    }
    Kernel3D::new([mx, my, mt], data).expect("outer product of finite kernels")
}

/// Per-frame 2D convolution, `mx·my` multiplies per output element. Time is
/// never padded or shrunk here.
pub fn conv_spatial(
    video: &VideoTensor,
    spatial: &Kernel2D,
    padding: Padding,
    counter: &OpCounter,
) -> Result<FeatureTensor> {
    let (mx, my) = (spatial.mx, spatial.my);
    let (ox, px) = axis_plan(video.nx(), mx, padding, "x")?;
    let (oy, py) = axis_plan(video.ny(), my, padding, "y")?;
    let nt = video.nt();
    let (src, pdims) = zero_pad(video.data(), video.dims(), [px, py, 0]);
    let taps = (mx * my) as u64;

    let mut out = vec![0.0; ox * oy * nt];
    out.par_chunks_mut(oy * nt).enumerate().for_each(|(x, slab)| {
        for y in 0..oy {
            let dst = &mut slab[y * nt..(y + 1) * nt];
            for i in 0..mx {
                for j in 0..my {
                    let w = spatial.get(i, j);
                    let base = ((x + i) * pdims[1] + y + j) * nt;
                    for (d, s) in dst.iter_mut().zip(&src[base..base + nt]) {
                        *d += w * s;
                    }
                }
            }
        }
        let n = (oy * nt) as u64;
        counter.record(n * taps, n * (taps - 1));
    });
    Ok(FeatureTensor::from_parts([ox, oy, nt], out))
}

/// Per-pixel 1D convolution along time, `mt` multiplies per output element.
pub fn conv_temporal(
    features: &FeatureTensor,
    temporal: &[f64],
    padding: Padding,
    counter: &OpCounter,
) -> Result<FeatureTensor> {
    let mt = temporal.len();
    let (ot, pt) = axis_plan(features.nt(), mt, padding, "t")?;
    let [nx, ny, _] = features.dims();
    let (src, pdims) = zero_pad(features.data(), features.dims(), [0, 0, pt]);
    let taps = mt as u64;

    let mut out = vec![0.0; nx * ny * ot];
    out.par_chunks_mut(ny * ot).enumerate().for_each(|(x, slab)| {
        for y in 0..ny {
            let series = &src[(x * ny + y) * pdims[2]..(x * ny + y + 1) * pdims[2]];
            for t in 0..ot {
                let mut acc = 0.0;
                for (k, &w) in temporal.iter().enumerate() {
                    acc += series[t + k] * w;
                }
                slab[y * ot + t] = acc;
            }
        }
        let n = (ny * ot) as u64;
        counter.record(n * taps, n * (taps - 1));
    });
    Ok(FeatureTensor::from_parts([nx, ny, ot], out))
}

/// Spatial then temporal convolution with the two factors of `sep`.
pub fn conv_factored(
    video: &VideoTensor,
    sep: &SeparableKernel,
    padding: Padding,
    counter: &OpCounter,
) -> Result<FeatureTensor> {
    // Reject bad temporal dims before paying for the spatial pass.
    axis_plan(video.nt(), sep.temporal.len(), padding, "t")?;
    let spatial = conv_spatial(video, &sep.spatial, padding, counter)?;
    conv_temporal(&spatial, &sep.temporal, padding, counter)
}

/// 1×1 cross-channel map, `c_in × c_out`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Pointwise {
    pub c_in: usize,
    pub c_out: usize,
    pub weights: Vec<f64>,
}

impl Pointwise {
    pub fn new(c_in: usize, c_out: usize, weights: Vec<f64>) -> Result<Self> {
        if c_in == 0 || c_out == 0 || weights.len() != c_in * c_out {
            return Err(Error::shape(format!(
                "pointwise {c_in}x{c_out} with {} weights",
                weights.len()
            )));
        }
        Ok(Pointwise {
            c_in,
            c_out,
            weights,
        })
    }
}

/// Single-plane 2D correlation; returns `(ox, oy, data)`.
fn conv_plane(
    plane: &[f64],
    nx: usize,
    ny: usize,
    kernel: &Kernel2D,
    padding: Padding,
) -> Result<(usize, usize, Vec<f64>)> {
    let (ox, px) = axis_plan(nx, kernel.mx, padding, "x")?;
    let (oy, py) = axis_plan(ny, kernel.my, padding, "y")?;
    let (src, pdims) = zero_pad(plane, [nx, ny, 1], [px, py, 0]);
    let mut out = vec![0.0; ox * oy];
    for x in 0..ox {
        for y in 0..oy {
            let mut acc = 0.0;
            for i in 0..kernel.mx {
                for j in 0..kernel.my {
                    acc += src[(x + i) * pdims[1] + y + j] * kernel.get(i, j);
                }
            }
            out[x * oy + y] = acc;
        }
    }
    Ok((ox, oy, out))
}

/// Per-channel spatial convolution followed by a per-pixel 1×1 channel mix.
pub fn depthwise_separable_conv2d(
    input: &ChannelFrame,
    depthwise: &[Kernel2D],
    pointwise: &Pointwise,
    padding: Padding,
) -> Result<ChannelFrame> {
    let c = input.channels;
    if depthwise.len() != c {
        return Err(Error::shape(format!(
            "{} depthwise kernels for {c} input channels",
            depthwise.len()
        )));
    }
    if pointwise.c_in != c {
        return Err(Error::shape(format!(
            "pointwise expects {} input channels, frame has {c}",
            pointwise.c_in
        )));
    }
    if depthwise
        .iter()
        .any(|k| (k.mx, k.my) != (depthwise[0].mx, depthwise[0].my))
    {
        return Err(Error::shape("depthwise kernels must share dims"));
    }

    let mut planes = Vec::with_capacity(c);
    let mut out_dims = (0, 0);
    for (ch, kernel) in depthwise.iter().enumerate() {
        let (ox, oy, plane) = conv_plane(&input.channel(ch), input.nx, input.ny, kernel, padding)?;
        out_dims = (ox, oy);
        planes.push(plane);
    }
    let (ox, oy) = out_dims;
    let co = pointwise.c_out;
    let mut data = vec![0.0; ox * oy * co];
    for p in 0..ox * oy {
        let dst = &mut data[p * co..(p + 1) * co];
        for (ci, plane) in planes.iter().enumerate() {
            let v = plane[p];
            let row = &pointwise.weights[ci * co..(ci + 1) * co];
            for (d, w) in dst.iter_mut().zip(row) {
                *d += v * w;
            }
        }
    }
    ChannelFrame::new(ox, oy, co, data)
}

/// Closed-form multiply count of [`conv3d_full`] or [`conv_factored`].
///
/// Under `Valid` padding the spatial pass of the factored route runs on all
/// `nt` frames before the temporal pass trims them, so its count is
/// `ox·oy·nt·mx·my + ox·oy·ot·mt` rather than `ox·oy·ot·(mx·my + mt)`.
pub fn flop_model(
    video_dims: [usize; 3],
    kernel_dims: [usize; 3],
    mode: ConvMode,
    padding: Padding,
) -> Result<u64> {
    let [nx, ny, nt] = video_dims;
    let [mx, my, mt] = kernel_dims;
    if video_dims.contains(&0) {
        return Err(Error::shape(format!("video dims {video_dims:?}")));
    }
    let (ox, _) = axis_plan(nx, mx, padding, "x")?;
    let (oy, _) = axis_plan(ny, my, padding, "y")?;
    let (ot, _) = axis_plan(nt, mt, padding, "t")?;
    let (ox, oy, ot, nt) = (ox as u64, oy as u64, ot as u64, nt as u64);
    let (mx, my, mt) = (mx as u64, my as u64, mt as u64);
    Ok(match mode {
        ConvMode::Full => ox * oy * ot * mx * my * mt,
        ConvMode::Factored => ox * oy * nt * mx * my + ox * oy * ot * mt,
    })
}

/// Best separable (rank-one) approximation of a 3D kernel in the Frobenius
/// sense, found by power iteration on the `(mx·my) × mt` unfolding.
pub fn nearest_separable(kernel: &Kernel3D) -> SeparableKernel {
    let [mx, my, mt] = kernel.dims();
    let rows = mx * my;
    let m = kernel.data();
    let mut v = vec![1.0 / (mt as f64).sqrt(); mt];
    let mut u = vec![0.0; rows];
    for _ in 0..500 {
        for (r, ur) in u.iter_mut().enumerate() {
            *ur = (0..mt).map(|k| m[r * mt + k] * v[k]).sum();
        }
        let mut next: Vec<f64> = (0..mt)
            .map(|k| (0..rows).map(|r| m[r * mt + k] * u[r]).sum())
            .collect();
        let norm = next.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            break;
        }
        next.iter_mut().for_each(|x| *x /= norm);
        v = next;
    }
    for (r, ur) in u.iter_mut().enumerate() {
        *ur = (0..mt).map(|k| m[r * mt + k] * v[k]).sum();
    }
    SeparableKernel {
        spatial: Kernel2D { mx, my, data: u },
        temporal: v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Volume;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_volume(rng: &mut ChaCha8Rng, dims: [usize; 3]) -> Volume {
        Volume::from_fn(dims, |_, _, _| rng.gen_range(-1.0..1.0))
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    /// Independent loop oracle: explicit bounds checks instead of padding.
    fn oracle_conv3d(v: &Volume, k: &Kernel3D, padding: Padding) -> Volume {
        let [nx, ny, nt] = v.dims();
        let [mx, my, mt] = k.dims();
        let (c, out) = match padding {
            Padding::Same => ([mx / 2, my / 2, mt / 2], [nx, ny, nt]),
            Padding::Valid => ([0, 0, 0], [nx - mx + 1, ny - my + 1, nt - mt + 1]),
        };
        Volume::from_fn(out, |x, y, t| {
            let mut s = 0.0;
            for i in 0..mx {
                for j in 0..my {
                    for l in 0..mt {
                        let (sx, sy, st) = (
                            x as isize + i as isize - c[0] as isize,
                            y as isize + j as isize - c[1] as isize,
                            t as isize + l as isize - c[2] as isize,
                        );
                        if sx >= 0
                            && sy >= 0
                            && st >= 0
                            && (sx as usize) < nx
                            && (sy as usize) < ny
                            && (st as usize) < nt
                        {
                            s += v.get(sx as usize, sy as usize, st as usize) * k.get(i, j, l);
                        }
                    }
                }
            }
            s
        })
    }

    #[test]
    fn delta_kernel_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let v = random_volume(&mut rng, [4, 4, 4]);
        let c = OpCounter::new();
        let out = conv3d_full(&v, &Kernel3D::delta([3, 3, 3]), Padding::Same, &c).unwrap();
        assert_eq!(out, v);
        let out = conv_spatial(&v, &Kernel2D::delta(3, 3), Padding::Same, &c).unwrap();
        assert_eq!(out, v);
        let sep = SeparableKernel::new(Kernel2D::delta(3, 3), vec![0.0, 1.0, 0.0]).unwrap();
        assert_eq!(conv_factored(&v, &sep, Padding::Same, &c).unwrap(), v);
        assert_eq!(conv_temporal(&v, &[1.0], Padding::Same, &c).unwrap(), v);
    }

    #[test]
    fn all_ones_valid_sums_to_27() {
        let v = Volume::from_fn([3, 3, 3], |_, _, _| 1.0);
        let k = Kernel3D::new([3, 3, 3], vec![1.0; 27]).unwrap();
        let out = conv3d_full(&v, &k, Padding::Valid, &OpCounter::new()).unwrap();
        assert_eq!(out.dims(), [1, 1, 1]);
        assert_eq!(out.data(), &[27.0]);
    }

    #[test]
    fn full_matches_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let v = random_volume(&mut rng, [6, 6, 6]);
        let k = Kernel3D::new([3, 3, 3], random_vec(&mut rng, 27)).unwrap();
        for padding in [Padding::Same, Padding::Valid] {
            let got = conv3d_full(&v, &k, padding, &OpCounter::new()).unwrap();
            let want = oracle_conv3d(&v, &k, padding);
            assert_eq!(got.dims(), want.dims());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn kron_definition() {
        let k = kron_kernel(
            &SeparableKernel::new(Kernel2D::new(1, 1, vec![1.0]).unwrap(), vec![1.0]).unwrap(),
        );
        assert_eq!(k.dims(), [1, 1, 1]);
        assert_eq!(k.data(), &[1.0]);

        let sep = SeparableKernel::new(
            Kernel2D::new(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
            vec![10.0, 20.0],
        )
        .unwrap();
        let k = kron_kernel(&sep);
        let slice = |t| [k.get(0, 0, t), k.get(0, 1, t), k.get(1, 0, t), k.get(1, 1, t)];
        assert_eq!(slice(0), [10.0, 20.0, 30.0, 40.0]);
        assert_eq!(slice(1), [20.0, 40.0, 60.0, 80.0]);
    }

    #[test]
    fn kron_sum_is_product_of_sums() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ks = Kernel2D::new(3, 3, random_vec(&mut rng, 9)).unwrap();
        let kt = random_vec(&mut rng, 3);
        let want = ks.data.iter().sum::<f64>() * kt.iter().sum::<f64>();
        let k = kron_kernel(&SeparableKernel::new(ks, kt).unwrap());
        assert!((k.data().iter().sum::<f64>() - want).abs() < 1e-12);
    }

    #[test]
    fn single_frame_spatial_equals_full() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let v = random_volume(&mut rng, [5, 6, 1]);
        let ks = Kernel2D::new(3, 3, random_vec(&mut rng, 9)).unwrap();
        let k = kron_kernel(&SeparableKernel::new(ks.clone(), vec![1.0]).unwrap());
        let c = OpCounter::new();
        let a = conv_spatial(&v, &ks, Padding::Same, &c).unwrap();
        let b = conv3d_full(&v, &k, Padding::Same, &c).unwrap();
        assert!(a.rel_diff(&b).unwrap() < 1e-14);
    }

    #[test]
    fn spatial_frame_matches_2d_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let v = random_volume(&mut rng, [5, 5, 4]);
        let ks = Kernel2D::new(3, 3, random_vec(&mut rng, 9)).unwrap();
        let out = conv_spatial(&v, &ks, Padding::Same, &OpCounter::new()).unwrap();
        let frame = v.frame(2);
        for x in 0..5 {
            for y in 0..5 {
                let mut s = 0.0;
                for i in 0..3 {
                    for j in 0..3 {
                        let (sx, sy) = (x + i, y + j);
                        if (1..=5).contains(&sx) && (1..=5).contains(&sy) {
                            s += frame[(sx - 1) * 5 + sy - 1] * ks.get(i, j);
                        }
                    }
                }
                assert!((out.get(x, y, 2) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn temporal_cases() {
        let c = OpCounter::new();
        let v = Volume::from_fn([2, 2, 5], |x, y, _| (x + 2 * y) as f64 + 0.5);
        let out = conv_temporal(&v, &[0.5, 0.5], Padding::Valid, &c).unwrap();
        assert_eq!(out.dims(), [2, 2, 4]);
        for x in 0..2 {
            for y in 0..2 {
                for t in 0..4 {
                    assert_eq!(out.get(x, y, t), v.get(x, y, 0));
                }
            }
        }

        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let v = random_volume(&mut rng, [3, 4, 9]);
        let kt = random_vec(&mut rng, 3);
        let out = conv_temporal(&v, &kt, Padding::Same, &c).unwrap();
        let series: Vec<f64> = (0..9).map(|t| v.get(1, 2, t)).collect();
        for t in 0..9 {
            let mut s = 0.0;
            for (k, w) in kt.iter().enumerate() {
                let st = t as isize + k as isize - 1;
                if (0..9).contains(&st) {
                    s += series[st as usize] * w;
                }
            }
            assert!((out.get(1, 2, t) - s).abs() < 1e-12);
        }
    }

    #[test]
    fn factored_equals_full_with_kron_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let v = random_volume(&mut rng, [8, 8, 8]);
        let sep = SeparableKernel::new(
            Kernel2D::new(3, 3, random_vec(&mut rng, 9)).unwrap(),
            random_vec(&mut rng, 3),
        )
        .unwrap();
        let c = OpCounter::new();
        for padding in [Padding::Same, Padding::Valid] {
            let a = conv_factored(&v, &sep, padding, &c).unwrap();
            let b = conv3d_full(&v, &kron_kernel(&sep), padding, &c).unwrap();
            assert!(a.rel_diff(&b).unwrap() <= 1e-10);
        }
    }

    #[test]
    fn seven_cubed_count_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let v = random_volume(&mut rng, [9, 9, 9]);
        let sep = SeparableKernel::new(
            Kernel2D::new(7, 7, random_vec(&mut rng, 49)).unwrap(),
            random_vec(&mut rng, 7),
        )
        .unwrap();
        let full = OpCounter::new();
        let fact = OpCounter::new();
        conv3d_full(&v, &kron_kernel(&sep), Padding::Same, &full).unwrap();
        conv_factored(&v, &sep, Padding::Same, &fact).unwrap();
        let n = 9 * 9 * 9;
        assert_eq!(full.multiplies(), 343 * n);
        assert_eq!(fact.multiplies(), 56 * n);
        // 343/56 exactly, compared by cross-multiplication.
        assert_eq!(full.multiplies() * 56, fact.multiplies() * 343);
    }

    #[test]
    fn flop_model_examples() {
        let full = flop_model([64; 3], [7; 3], ConvMode::Full, Padding::Same).unwrap();
        let fact = flop_model([64; 3], [7; 3], ConvMode::Factored, Padding::Same).unwrap();
        assert_eq!(full, 89_915_392);
        assert_eq!(fact, 14_680_064);
        assert_eq!(full * 56, fact * 343);
    }

    #[test]
    fn flop_model_matches_counter_in_both_paddings() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        for (vd, kd) in [([7, 6, 9], [3, 5, 3]), ([5, 5, 5], [1, 1, 5]), ([4, 9, 6], [3, 3, 1])] {
            let v = random_volume(&mut rng, vd);
            let sep = SeparableKernel::new(
                Kernel2D::new(kd[0], kd[1], random_vec(&mut rng, kd[0] * kd[1])).unwrap(),
                random_vec(&mut rng, kd[2]),
            )
            .unwrap();
            for padding in [Padding::Same, Padding::Valid] {
                let full = OpCounter::new();
                let fact = OpCounter::new();
                conv3d_full(&v, &kron_kernel(&sep), padding, &full).unwrap();
                conv_factored(&v, &sep, padding, &fact).unwrap();
                assert_eq!(full.multiplies(), flop_model(vd, kd, ConvMode::Full, padding).unwrap());
                assert_eq!(
                    fact.multiplies(),
                    flop_model(vd, kd, ConvMode::Factored, padding).unwrap()
                );
            }
        }
    }

    #[test]
    fn errors() {
        let v = Volume::zeros([4, 4, 4]);
        let c = OpCounter::new();
        let even = Kernel3D::new([2, 3, 3], vec![0.0; 18]).unwrap();
        assert!(matches!(
            conv3d_full(&v, &even, Padding::Same, &c),
            Err(Error::Config(_))
        ));
        let big = Kernel3D::new([5, 1, 1], vec![0.0; 5]).unwrap();
        assert!(matches!(
            conv3d_full(&v, &big, Padding::Valid, &c),
            Err(Error::Shape(_))
        ));
        assert!(conv_temporal(&v, &[1.0, 1.0], Padding::Same, &c).is_err());
        assert!(conv_temporal(&v, &[1.0; 5], Padding::Valid, &c).is_err());
    }

    #[test]
    fn depthwise_identity_and_channel_sum() {
        let f = ChannelFrame::new(2, 2, 1, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let pw = Pointwise::new(1, 1, vec![1.0]).unwrap();
        let out = depthwise_separable_conv2d(&f, &[Kernel2D::delta(3, 3)], &pw, Padding::Same).unwrap();
        assert_eq!(out, f);

        let f = ChannelFrame::new(2, 1, 2, vec![1.0, 10.0, 2.0, 20.0]).unwrap();
        let pw = Pointwise::new(2, 1, vec![1.0, 1.0]).unwrap();
        let dk = [Kernel2D::delta(3, 3), Kernel2D::delta(3, 3)];
        let out = depthwise_separable_conv2d(&f, &dk, &pw, Padding::Same).unwrap();
        assert_eq!(out.data, vec![11.0, 22.0]);

        assert!(depthwise_separable_conv2d(&f, &dk[..1], &pw, Padding::Same).is_err());
        let bad_pw = Pointwise::new(3, 1, vec![1.0; 3]).unwrap();
        assert!(depthwise_separable_conv2d(&f, &dk, &bad_pw, Padding::Same).is_err());
    }

    #[test]
    fn depthwise_matches_composed_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (nx, ny, c, co) = (6, 6, 3, 4);
        let f = ChannelFrame::new(nx, ny, c, random_vec(&mut rng, nx * ny * c)).unwrap();
        let dk: Vec<_> = (0..c)
            .map(|_| Kernel2D::new(3, 3, random_vec(&mut rng, 9)).unwrap())
            .collect();
        let pw = Pointwise::new(c, co, random_vec(&mut rng, c * co)).unwrap();
        let out = depthwise_separable_conv2d(&f, &dk, &pw, Padding::Same).unwrap();

        // Reference: each channel through conv_spatial as a one-frame video,
        // then an explicit matrix product per pixel.
        let counter = OpCounter::new();
        let spatial: Vec<Volume> = (0..c)
            .map(|ch| {
                let v = Volume::new([nx, ny, 1], f.channel(ch)).unwrap();
                conv_spatial(&v, &dk[ch], Padding::Same, &counter).unwrap()
            })
            .collect();
        for x in 0..nx {
            for y in 0..ny {
                for o in 0..co {
                    let want: f64 = (0..c)
                        .map(|ch| spatial[ch].get(x, y, 0) * pw.weights[ch * co + o])
                        .sum();
                    assert!((out.get(x, y, o) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn nearest_separable_recovers_separable_kernel() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let sep = SeparableKernel::new(
            Kernel2D::new(3, 3, random_vec(&mut rng, 9)).unwrap(),
            random_vec(&mut rng, 3),
        )
        .unwrap();
        let k = kron_kernel(&sep);
        let back = kron_kernel(&nearest_separable(&k));
        for (a, b) in back.data().iter().zip(k.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
