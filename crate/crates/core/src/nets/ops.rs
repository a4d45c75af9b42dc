//! Differentiable primitives that candle lacks or runs slowly on CPU:
//! GEMM-backed 2-D convolution and the decoupled dynamic filter.

use candle_core::{bail, CpuStorage, CustomOp2, CustomOp3, DType, Layout, Shape, Tensor, WithDType};
use num_traits::Float;

use crate::error::{Error, Result};
use crate::imgproc::reflect_index;

/// Element types the CPU kernels support.
pub(crate) trait Elem: WithDType + Float + std::ops::AddAssign {
    /// `c ← a·b + beta·c` on strided row/column matrices.
    #[allow(clippy::too_many_arguments)]
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const Self,
        rsa: isize,
        csa: isize,
        b: *const Self,
        rsb: isize,
        csb: isize,
        beta: Self,
        c: *mut Self,
        rsc: isize,
        csc: isize,
    );
}

impl Elem for f32 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const f32,
        rsa: isize,
        csa: isize,
        b: *const f32,
        rsb: isize,
        csb: isize,
        beta: f32,
        c: *mut f32,
        rsc: isize,
        csc: isize,
    ) {
        unsafe { matrixmultiply::sgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc) }
    }
}

impl Elem for f64 {
    unsafe fn gemm(
        m: usize,
        k: usize,
        n: usize,
        a: *const f64,
        rsa: isize,
        csa: isize,
        b: *const f64,
        rsb: isize,
        csb: isize,
        beta: f64,
        c: *mut f64,
        rsc: isize,
        csc: isize,
    ) {
        unsafe { matrixmultiply::dgemm(m, k, n, 1.0, a, rsa, csa, b, rsb, csb, beta, c, rsc, csc) }
    }
}

fn contiguous<'a, T: WithDType>(s: &'a CpuStorage, l: &Layout) -> candle_core::Result<&'a [T]> {
    let data = s.as_slice::<T>()?;
    match l.contiguous_offsets() {
        Some((a, b)) => Ok(&data[a..b]),
        None => bail!("custom op expects contiguous inputs"),
    }
}

fn to_vec<T: WithDType>(t: &Tensor) -> candle_core::Result<Vec<T>> {
    t.flatten_all()?.to_vec1::<T>()
}

// ---------------------------------------------------------------------------
// Convolution

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn new(x: &[usize], w: &[usize], stride: usize, pad: usize) -> candle_core::Result<Self> {
        if x.len() != 4 || w.len() != 4 {
            bail!("conv2d expects rank-4 input and weight, got {x:?} and {w:?}");
        }
        let k = w[2];
        if w[3] != k || w[1] != x[1] {
            bail!("conv2d weight {w:?} incompatible with input {x:?}");
        }
        if x[2] + 2 * pad < k || x[3] + 2 * pad < k {
            bail!("conv2d input {x:?} smaller than kernel {k}");
        }
        Ok(Self {
            n: x[0],
            cin: x[1],
            h: x[2],
            w: x[3],
            cout: w[0],
            k,
            stride,
            pad,
            ho: (x[2] + 2 * pad - k) / stride + 1,
            wo: (x[3] + 2 * pad - k) / stride + 1,
        })
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    fn rows(&self) -> usize {
        self.cin * self.k * self.k
    }

    fn plane_out(&self) -> usize {
        self.ho * self.wo
    }

    fn plane_in(&self) -> usize {
        self.cin * self.h * self.w
    }
}

fn im2col<T: Elem>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let hw = g.plane_out();
    for c in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    let line = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy as usize >= g.h {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &x[(c * g.h + iy as usize) * g.w..(c * g.h + iy as usize + 1) * g.w];
                    for (ox, d) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        *d = if ix >= 0 && (ix as usize) < g.w {
                            src[ix as usize]
                        } else {
                            T::zero()
                        };
                    }
                }
            }
        }
    }
}

fn col2im<T: Elem>(cols: &[T], g: &ConvGeom, x: &mut [T]) {
    let hw = g.plane_out();
    for c in 0..g.cin {
        for ky in 0..g.k {
            for kx in 0..g.k {
                let row = (c * g.k + ky) * g.k + kx;
                let src = &cols[row * hw..(row + 1) * hw];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.pad as isize;
                    if iy < 0 || iy as usize >= g.h {
                        continue;
                    }
                    let base = (c * g.h + iy as usize) * g.w;
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.pad as isize;
                        if ix >= 0 && (ix as usize) < g.w {
                            x[base + ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

fn conv_forward<T: Elem>(x: &[T], w: &[T], g: &ConvGeom) -> Vec<T> {
    let (hw, kk) = (g.plane_out(), g.rows());
    let mut out = vec![T::zero(); g.n * g.cout * hw];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * hw] };
    for b in 0..g.n {
        let xb = &x[b * g.plane_in()..(b + 1) * g.plane_in()];
        let src = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, g, &mut cols);
            &cols
        };
        let dst = &mut out[b * g.cout * hw..(b + 1) * g.cout * hw];
        // SAFETY: all slices are sized from the geometry above.
        unsafe {
            T::gemm(
                g.cout, kk, hw, w.as_ptr(), kk as isize, 1, src.as_ptr(), hw as isize, 1,
                T::zero(), dst.as_mut_ptr(), hw as isize, 1,
            );
        }
    }
    out
}

fn conv_grad_weight<T: Elem>(x: &[T], gout: &[T], g: &ConvGeom) -> Vec<T> {
    let (hw, kk) = (g.plane_out(), g.rows());
    let mut gw = vec![T::zero(); g.cout * kk];
    let mut cols = if g.is_pointwise() { Vec::new() } else { vec![T::zero(); kk * hw] };
    for b in 0..g.n {
        let xb = &x[b * g.plane_in()..(b + 1) * g.plane_in()];
        let src = if g.is_pointwise() {
            xb
        } else {
            im2col(xb, g, &mut cols);
            &cols
        };
        let gb = &gout[b * g.cout * hw..(b + 1) * g.cout * hw];
        // SAFETY: gw is cout×kk, gb is cout×hw, src is kk×hw (read transposed).
        unsafe {
            T::gemm(
                g.cout, hw, kk, gb.as_ptr(), hw as isize, 1, src.as_ptr(), 1, hw as isize,
                T::one(), gw.as_mut_ptr(), kk as isize, 1,
            );
        }
    }
    gw
}

fn conv_grad_input<T: Elem>(w: &[T], gout: &[T], g: &ConvGeom) -> Vec<T> {
    let (hw, kk) = (g.plane_out(), g.rows());
    let mut gx = vec![T::zero(); g.n * g.plane_in()];
    let mut cols = vec![T::zero(); kk * hw];
    for b in 0..g.n {
        let gb = &gout[b * g.cout * hw..(b + 1) * g.cout * hw];
        let dst = &mut gx[b * g.plane_in()..(b + 1) * g.plane_in()];
        if g.is_pointwise() {
            // SAFETY: dst is kk×hw with kk = cin.
            unsafe {
                T::gemm(
                    kk, g.cout, hw, w.as_ptr(), 1, kk as isize, gb.as_ptr(), hw as isize, 1,
                    T::zero(), dst.as_mut_ptr(), hw as isize, 1,
                );
            }
            continue;
        }
        // SAFETY: cols is kk×hw, w is read transposed as kk×cout.
        unsafe {
            T::gemm(
                kk, g.cout, hw, w.as_ptr(), 1, kk as isize, gb.as_ptr(), hw as isize, 1,
                T::zero(), cols.as_mut_ptr(), hw as isize, 1,
            );
        }
        col2im(&cols, g, dst);
    }
    gx
}

struct Conv2d {
    stride: usize,
    pad: usize,
}

impl CustomOp2 for Conv2d {
    fn name(&self) -> &'static str {
        "conv2d-gemm"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = ConvGeom::new(l1.dims(), l2.dims(), self.stride, self.pad)?;
        let shape = Shape::from((g.n, g.cout, g.ho, g.wo));
        let out = match (s1, s2) {
            (CpuStorage::F32(_), CpuStorage::F32(_)) => {
                CpuStorage::F32(conv_forward(contiguous(s1, l1)?, contiguous(s2, l2)?, &g))
            }
            (CpuStorage::F64(_), CpuStorage::F64(_)) => {
                CpuStorage::F64(conv_forward(contiguous(s1, l1)?, contiguous(s2, l2)?, &g))
            }
            _ => bail!("conv2d supports matching f32 or f64 inputs only"),
        };
        Ok((out, shape))
    }

    fn bwd(
        &self,
        x: &Tensor,
        w: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>)> {
        let g = ConvGeom::new(x.dims(), w.dims(), self.stride, self.pad)?;
        let dev = x.device();
        let (gx, gw) = match x.dtype() {
            DType::F32 => {
                let (xv, wv, gv) = (to_vec::<f32>(x)?, to_vec::<f32>(w)?, to_vec::<f32>(grad)?);
                (
                    Tensor::from_vec(conv_grad_input(&wv, &gv, &g), x.dims(), dev)?,
                    Tensor::from_vec(conv_grad_weight(&xv, &gv, &g), w.dims(), dev)?,
                )
            }
            DType::F64 => {
                let (xv, wv, gv) = (to_vec::<f64>(x)?, to_vec::<f64>(w)?, to_vec::<f64>(grad)?);
                (
                    Tensor::from_vec(conv_grad_input(&wv, &gv, &g), x.dims(), dev)?,
                    Tensor::from_vec(conv_grad_weight(&xv, &gv, &g), w.dims(), dev)?,
                )
            }
            dt => bail!("conv2d backward: unsupported dtype {dt:?}"),
        };
        Ok((Some(gx), Some(gw)))
    }
}

/// Zero-padded cross-correlation of `x: N×Cin×H×W` with `w: Cout×Cin×k×k`.
pub fn conv2d(x: &Tensor, w: &Tensor, stride: usize, pad: usize) -> Result<Tensor> {
    if stride == 0 {
        return Err(Error::param("conv2d stride must be positive"));
    }
    let (x, w) = (x.contiguous()?, w.contiguous()?);
    Ok(x.apply_op2(&w, Conv2d { stride, pad })?)
}

// ---------------------------------------------------------------------------
// Decoupled dynamic filter

struct Ddf {
    k: usize,
}

struct DdfGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
}

impl DdfGeom {
    fn new(x: &[usize], s: &[usize], ch: &[usize], k: usize) -> candle_core::Result<Self> {
        if x.len() != 4 {
            bail!("ddf input must be N×C×H×W, got {x:?}");
        }
        let (n, c, h, w) = (x[0], x[1], x[2], x[3]);
        if s != [n, k * k, h, w] {
            bail!("ddf spatial filters must be {:?}, got {s:?}", [n, k * k, h, w]);
        }
        if ch != [n, c, k * k] {
            bail!("ddf channel filters must be {:?}, got {ch:?}", [n, c, k * k]);
        }
        if h < 2 || w < 2 {
            bail!("ddf needs at least 2×2 spatial extent for reflection, got {h}×{w}");
        }
        Ok(Self { n, c, h, w, k })
    }

    /// Reflected source index for every (offset, position) along one axis.
    fn table(n: usize, k: usize) -> Vec<usize> {
        let r = (k / 2) as isize;
        (0..k)
            .flat_map(|d| (0..n).map(move |p| reflect_index(p as isize + d as isize - r, n)))
            .collect()
    }
}

fn ddf_forward<T: Elem>(x: &[T], s: &[T], ch: &[T], g: &DdfGeom) -> Vec<T> {
    let (h, w, k) = (g.h, g.w, g.k);
    let (ty, tx) = (DdfGeom::table(h, k), DdfGeom::table(w, k));
    let hw = h * w;
    let kk = k * k;
    let mut out = vec![T::zero(); g.n * g.c * hw];
    for b in 0..g.n {
        for c in 0..g.c {
            let xp = &x[(b * g.c + c) * hw..(b * g.c + c + 1) * hw];
            let op = &mut out[(b * g.c + c) * hw..(b * g.c + c + 1) * hw];
            for o in 0..kk {
                let (dy, dx) = (o / k, o % k);
                let cw = ch[(b * g.c + c) * kk + o];
                let sp = &s[(b * kk + o) * hw..(b * kk + o + 1) * hw];
                for y in 0..h {
                    let sy = ty[dy * h + y];
                    for xx in 0..w {
                        let sx = tx[dx * w + xx];
                        op[y * w + xx] += sp[y * w + xx] * cw * xp[sy * w + sx];
                    }
                }
            }
        }
    }
    out
}

fn ddf_backward<T: Elem>(x: &[T], s: &[T], ch: &[T], grad: &[T], g: &DdfGeom) -> (Vec<T>, Vec<T>, Vec<T>) {
    let (h, w, k) = (g.h, g.w, g.k);
    let (ty, tx) = (DdfGeom::table(h, k), DdfGeom::table(w, k));
    let hw = h * w;
    let kk = k * k;
    let mut gx = vec![T::zero(); x.len()];
    let mut gs = vec![T::zero(); s.len()];
    let mut gc = vec![T::zero(); ch.len()];
    for b in 0..g.n {
        for c in 0..g.c {
            let plane = (b * g.c + c) * hw;
            let xp = &x[plane..plane + hw];
            let gp = &grad[plane..plane + hw];
            for o in 0..kk {
                let (dy, dx) = (o / k, o % k);
                let ci = (b * g.c + c) * kk + o;
                let cw = ch[ci];
                let si = (b * kk + o) * hw;
                let mut acc_c = T::zero();
                for y in 0..h {
                    let sy = ty[dy * h + y];
                    for xx in 0..w {
                        let sx = tx[dx * w + xx];
                        let p = y * w + xx;
                        let src = sy * w + sx;
                        let gv = gp[p];
                        let sv = s[si + p];
                        let xv = xp[src];
                        gs[si + p] += gv * cw * xv;
                        acc_c += gv * sv * xv;
                        gx[plane + src] += gv * sv * cw;
                    }
                }
                gc[ci] += acc_c;
            }
        }
    }
    (gx, gs, gc)
}

impl CustomOp3 for Ddf {
    fn name(&self) -> &'static str {
        "ddf"
    }

    fn cpu_fwd(
        &self,
        s1: &CpuStorage,
        l1: &Layout,
        s2: &CpuStorage,
        l2: &Layout,
        s3: &CpuStorage,
        l3: &Layout,
    ) -> candle_core::Result<(CpuStorage, Shape)> {
        let g = DdfGeom::new(l1.dims(), l2.dims(), l3.dims(), self.k)?;
        let shape = Shape::from(l1.dims());
        let out = match (s1, s2, s3) {
            (CpuStorage::F32(_), CpuStorage::F32(_), CpuStorage::F32(_)) => CpuStorage::F32(ddf_forward(
                contiguous(s1, l1)?,
                contiguous(s2, l2)?,
                contiguous(s3, l3)?,
                &g,
            )),
            (CpuStorage::F64(_), CpuStorage::F64(_), CpuStorage::F64(_)) => CpuStorage::F64(ddf_forward(
                contiguous(s1, l1)?,
                contiguous(s2, l2)?,
                contiguous(s3, l3)?,
                &g,
            )),
            _ => bail!("ddf supports matching f32 or f64 inputs only"),
        };
        Ok((out, shape))
    }

    fn bwd(
        &self,
        x: &Tensor,
        s: &Tensor,
        ch: &Tensor,
        _res: &Tensor,
        grad: &Tensor,
    ) -> candle_core::Result<(Option<Tensor>, Option<Tensor>, Option<Tensor>)> {
        let g = DdfGeom::new(x.dims(), s.dims(), ch.dims(), self.k)?;
        let dev = x.device();
        macro_rules! run {
            ($t:ty) => {{
                let (gx, gs, gc) = ddf_backward(
                    &to_vec::<$t>(x)?,
                    &to_vec::<$t>(s)?,
                    &to_vec::<$t>(ch)?,
                    &to_vec::<$t>(grad)?,
                    &g,
                );
                (
                    Tensor::from_vec(gx, x.dims(), dev)?,
                    Tensor::from_vec(gs, s.dims(), dev)?,
                    Tensor::from_vec(gc, ch.dims(), dev)?,
                )
            }};
        }
        let (gx, gs, gc) = match x.dtype() {
            DType::F32 => run!(f32),
            DType::F64 => run!(f64),
            dt => bail!("ddf backward: unsupported dtype {dt:?}"),
        };
        Ok((Some(gx), Some(gs), Some(gc)))
    }
}

/// Decoupled dynamic filtering with reflective boundary:
///
/// `out[n,c,p] = Σ_o spatial[n,o,p] · channel[n,c,o] · x[n,c,p+o]`
///
/// where `o` ranges over the `k×k` taps in row-major order. Shapes:
/// `x: N×C×H×W`, `spatial: N×k²×H×W`, `channel: N×C×k²`.
pub fn ddf_apply(x: &Tensor, spatial: &Tensor, channel: &Tensor, k: usize) -> Result<Tensor> {
    if k.is_multiple_of(2) {
        return Err(Error::param(format!("ddf kernel size must be odd, got {k}")));
    }
    let x_dims = x.dims();
    if x_dims.len() != 4
        || spatial.dims() != [x_dims[0], k * k, x_dims[2], x_dims[3]]
        || channel.dims() != [x_dims[0], x_dims[1], k * k]
    {
        return Err(Error::param(format!(
            "ddf shapes inconsistent: x {:?}, spatial {:?}, channel {:?}, k {k}",
            x_dims,
            spatial.dims(),
            channel.dims()
        )));
    }
    let (x, s, c) = (x.contiguous()?, spatial.contiguous()?, channel.contiguous()?);
    Ok(x.apply_op3(&s, &c, Ddf { k })?)
}

// ---------------------------------------------------------------------------
// Activations built from differentiable candle primitives.

pub fn leaky_relu(x: &Tensor, slope: f64) -> Result<Tensor> {
    Ok(x.maximum(&(x * slope)?)?)
}

pub fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((x.neg()?.exp()? + 1.0)?.recip()?)
}

/// `log(1 + eˣ)` evaluated as `max(x, 0) + log(1 + e^{-|x|})`.
pub fn softplus(x: &Tensor) -> Result<Tensor> {
    Ok((x.relu()? + (x.abs()?.neg()?.exp()? + 1.0)?.log()?)?)
}

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_nearest(x: &Tensor, factor: usize) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    Ok(x.upsample_nearest2d(h * factor, w * factor)?)
}

pub fn global_avg_pool(x: &Tensor) -> Result<Tensor> {
    Ok(x.mean_keepdim(3)?.mean_keepdim(2)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use candle_core::{Device, Var};
    use rand::{Rng, SeedableRng};

    fn rand_tensor(shape: &[usize], seed: u64) -> Tensor {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n: usize = shape.iter().product();
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        Tensor::from_vec(v, shape, &Device::Cpu).unwrap()
    }

    fn max_abs(a: &Tensor, b: &Tensor) -> f64 {
        (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap()
    }

    #[test]
    fn conv_matches_candle_reference() {
        let x = Var::from_tensor(&rand_tensor(&[2, 3, 10, 8], 1)).unwrap();
        let w = Var::from_tensor(&rand_tensor(&[4, 3, 3, 3], 2)).unwrap();
        for (stride, pad) in [(1, 1), (2, 1), (1, 0), (2, 0)] {
            let ours = conv2d(&x, &w, stride, pad).unwrap();
            let reference = x.conv2d(&w, pad, stride, 1, 1).unwrap();
            assert!(max_abs(&ours, &reference) < 1e-12);
            let r = rand_tensor(ours.dims(), 3);
            let g1 = (&ours * &r).unwrap().sum_all().unwrap().backward().unwrap();
            let g2 = (&reference * &r).unwrap().sum_all().unwrap().backward().unwrap();
            assert!(max_abs(g1.get(&x).unwrap(), g2.get(&x).unwrap()) < 1e-12);
            assert!(max_abs(g1.get(&w).unwrap(), g2.get(&w).unwrap()) < 1e-12);
        }
    }

    #[test]
    fn pointwise_conv_matches_reference() {
        let x = Var::from_tensor(&rand_tensor(&[2, 5, 4, 3], 4)).unwrap();
        let w = Var::from_tensor(&rand_tensor(&[6, 5, 1, 1], 5)).unwrap();
        let ours = conv2d(&x, &w, 1, 0).unwrap();
        let reference = x.conv2d(&w, 0, 1, 1, 1).unwrap();
        assert!(max_abs(&ours, &reference) < 1e-12);
        let g1 = ours.sqr().unwrap().sum_all().unwrap().backward().unwrap();
        let g2 = reference.sqr().unwrap().sum_all().unwrap().backward().unwrap();
        assert!(max_abs(g1.get(&x).unwrap(), g2.get(&x).unwrap()) < 1e-12);
        assert!(max_abs(g1.get(&w).unwrap(), g2.get(&w).unwrap()) < 1e-12);
    }

    #[test]
    fn conv_runs_in_f32() {
        let x = rand_tensor(&[1, 2, 6, 6], 1).to_dtype(DType::F32).unwrap();
        let w = rand_tensor(&[3, 2, 3, 3], 2).to_dtype(DType::F32).unwrap();
        let a = conv2d(&x, &w, 2, 1).unwrap();
        let b = x.conv2d(&w, 1, 2, 1, 1).unwrap();
        let d = (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap();
        assert!(d < 1e-5);
    }

    #[test]
    fn ddf_identity_and_scaling() {
        let x = rand_tensor(&[1, 2, 5, 4], 7);
        let k = 3;
        let ones = Tensor::ones((1, 9, 5, 4), DType::F64, &Device::Cpu).unwrap();
        let mut delta = vec![0.0; 2 * 9];
        delta[4] = 1.0;
        delta[9 + 4] = 1.0;
        let center = Tensor::from_vec(delta.clone(), (1, 2, 9), &Device::Cpu).unwrap();
        let out = ddf_apply(&x, &ones, &center, k).unwrap();
        assert_eq!(max_abs(&out, &x), 0.0);

        let mut sp = vec![0.0; 9 * 20];
        sp[4 * 20..5 * 20].iter_mut().for_each(|v| *v = 1.0);
        let sp = Tensor::from_vec(sp, (1, 9, 5, 4), &Device::Cpu).unwrap();
        let twos = Tensor::from_vec(delta.iter().map(|v| 2.0 * v).collect::<Vec<_>>(), (1, 2, 9), &Device::Cpu).unwrap();
        let out = ddf_apply(&x, &sp, &twos, k).unwrap();
        assert!(max_abs(&out, &(&x * 2.0).unwrap()) < 1e-15);
    }

    #[test]
    fn ddf_rejects_bad_shapes() {
        let x = rand_tensor(&[1, 2, 4, 4], 1);
        let s = rand_tensor(&[1, 9, 4, 4], 2);
        let c = rand_tensor(&[1, 3, 9], 3);
        assert!(ddf_apply(&x, &s, &c, 3).is_err());
        assert!(ddf_apply(&x, &s, &rand_tensor(&[1, 2, 4], 3), 2).is_err());
    }

    #[test]
    fn softplus_and_sigmoid_are_stable() {
        let x = Tensor::new(&[-800.0f64, -1.0, 0.0, 1.0, 800.0], &Device::Cpu).unwrap();
        let sp = softplus(&x).unwrap().to_vec1::<f64>().unwrap();
        assert!(sp.iter().all(|v| v.is_finite() && *v >= 0.0));
        assert!((sp[2] - 2f64.ln()).abs() < 1e-15);
        assert!((sp[4] - 800.0).abs() < 1e-12);
        let sg = sigmoid(&x).unwrap().to_vec1::<f64>().unwrap();
        assert_eq!(sg[2], 0.5);
        assert!(sg.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
