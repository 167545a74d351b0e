use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::arch::{ArchConfig, ConvShape};
use super::EmbeddingError;
use crate::Scalar;

/// Weights of one layer. Conv weights are `(kh·kw·cin) × cout`, dense weights `fan_in × fan_out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Layer<T> {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }
}

/// All trainable tensors, conv layers first, then dense layers (output layer last).
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub conv: Vec<Layer<T>>,
    pub dense: Vec<Layer<T>>,
}

impl<T: Scalar> Params<T> {
    pub fn zeros(arch: &ArchConfig) -> Result<Self, EmbeddingError> {
        Ok(Self {
            conv: arch
                .conv_shapes()?
                .iter()
                .map(|s| Layer::zeros(s.patch_len(), s.cout))
                .collect(),
            dense: arch
                .dense_shapes()?
                .into_iter()
                .map(|(i, o)| Layer::zeros(i, o))
                .collect(),
        })
    }

    pub fn layers(&self) -> impl Iterator<Item = &Layer<T>> {
        self.conv.iter().chain(&self.dense)
    }

    /// Flat views of every tensor in a fixed order: weight then bias, layer by layer.
    pub fn tensors(&self) -> Vec<&[T]> {
        self.layers()
            .flat_map(|l| {
                [
                    l.weight.as_slice().expect("standard layout"),
                    l.bias.as_slice().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        self.conv
            .iter_mut()
            .chain(self.dense.iter_mut())
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn len(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (x, y) in a.iter_mut().zip(b) {
                *x = *x + *y;
            }
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Element-wise conversion to another scalar type.
    pub fn cast<U: Scalar>(&self) -> Params<U> {
        let conv = |l: &Layer<T>| Layer {
            weight: l.weight.mapv(|v| U::lit(v.as_f64())),
            bias: l.bias.mapv(|v| U::lit(v.as_f64())),
        };
        Params {
            conv: self.conv.iter().map(conv).collect(),
            dense: self.dense.iter().map(conv).collect(),
        }
    }
}

/// The CNN embedding `f: R^{Q×K} → R^D`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    arch: ArchConfig,
    shapes: Vec<ConvShape>,
    pub params: Params<T>,
}

/// Activations kept by the forward pass for backpropagation.
pub(crate) struct Trace<T> {
    cols: Vec<Array2<T>>,
    relu: Vec<Array2<T>>,
    argmax: Vec<Vec<u32>>,
    dense_in: Vec<Array1<T>>,
    dense_out: Vec<Array1<T>>,
}

impl<T: Scalar> Model<T> {
    /// He-uniform weights (bound √(6 / fan_in)), zero biases.
    pub fn init(arch: ArchConfig, seed: u64) -> Result<Self, EmbeddingError> {
        let mut params = Params::zeros(&arch)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in params.conv.iter_mut().chain(params.dense.iter_mut()) {
            let bound = (6.0 / layer.weight.nrows() as f64).sqrt();
            layer.weight.mapv_inplace(|_| T::lit(rng.gen_range(-bound..bound)));
        }
        Self::from_params(arch, params)
    }

    pub fn zeros(arch: ArchConfig) -> Result<Self, EmbeddingError> {
        let params = Params::zeros(&arch)?;
        Self::from_params(arch, params)
    }

    pub fn from_params(arch: ArchConfig, params: Params<T>) -> Result<Self, EmbeddingError> {
        let expected = Params::<T>::zeros(&arch)?;
        let dims = |p: &Params<T>| -> Vec<(usize, usize)> { p.layers().map(|l| l.weight.dim()).collect() };
        if dims(&expected) != dims(&params) || params.layers().zip(expected.layers()).any(|(a, b)| a.bias.len() != b.bias.len()) {
            return Err(EmbeddingError::ArchMismatch("parameter shapes differ from architecture".into()));
        }
        Ok(Self {
            shapes: arch.conv_shapes()?,
            arch,
            params,
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn dim(&self) -> usize {
        self.arch.dim
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            arch: self.arch.clone(),
            shapes: self.shapes.clone(),
            params: self.params.cast(),
        }
    }

    fn check_input(&self, x: &ArrayView2<'_, T>) -> Result<(), EmbeddingError> {
        if x.dim() != self.arch.input {
            return Err(EmbeddingError::ShapeMismatch {
                expected: self.arch.input,
                actual: x.dim(),
            });
        }
        Ok(())
    }

    fn prepare(&self, x: ArrayView2<'_, T>) -> Vec<T> {
        let mut v: Vec<T> = x.iter().copied().collect();
        if self.arch.normalize_patches {
            let max = v.iter().copied().fold(T::neg_infinity(), T::max);
            if max.is_finite() {
                v.iter_mut().for_each(|e| *e = *e - max);
            }
        }
        v
    }

    /// Embedding of one Q × K patch.
    pub fn forward(&self, x: ArrayView2<'_, T>) -> Result<Array1<T>, EmbeddingError> {
        self.check_input(&x)?;
        Ok(self.run(self.prepare(x), None))
    }

    /// Embeddings of several patches, one row each, computed in parallel.
    pub fn forward_batch(&self, xs: &[ArrayView2<'_, T>]) -> Result<Array2<T>, EmbeddingError> {
        let rows: Vec<Array1<T>> = xs
            .par_iter()
            .map(|x| self.forward(x.view()))
            .collect::<Result<_, _>>()?;
        let mut out = Array2::zeros((xs.len(), self.dim()));
        for (mut dst, row) in out.outer_iter_mut().zip(rows) {
            dst.assign(&row);
        }
        Ok(out)
    }

    pub(crate) fn forward_traced(&self, x: ArrayView2<'_, T>) -> Result<(Array1<T>, Trace<T>), EmbeddingError> {
        self.check_input(&x)?;
        let mut trace = Trace {
            cols: Vec::new(),
            relu: Vec::new(),
            argmax: Vec::new(),
            dense_in: Vec::new(),
            dense_out: Vec::new(),
        };
        let out = self.run(self.prepare(x), Some(&mut trace));
        Ok((out, trace))
    }

    fn run(&self, mut act: Vec<T>, mut trace: Option<&mut Trace<T>>) -> Array1<T> {
        for (s, layer) in self.shapes.iter().zip(&self.params.conv) {
            let cols = im2col(&act, s);
            let mut z = cols.dot(&layer.weight);
            z += &layer.bias;
            z.mapv_inplace(|v| v.max(T::zero()));
            let (pooled, argmax) = if s.pool {
                max_pool(&z, s)
            } else {
                (z.iter().copied().collect(), Vec::new())
            };
            if let Some(t) = trace.as_deref_mut() {
                t.cols.push(cols);
                t.relu.push(z);
                t.argmax.push(argmax);
            }
            act = pooled;
        }
        let mut x = Array1::from(act);
        let last = self.params.dense.len() - 1;
        for (n, layer) in self.params.dense.iter().enumerate() {
            let mut z = x.dot(&layer.weight);
            z += &layer.bias;
            if n < last {
                z.mapv_inplace(|v| v.max(T::zero()));
            }
            if let Some(t) = trace.as_deref_mut() {
                t.dense_in.push(x);
                t.dense_out.push(z.clone());
            }
            x = z;
        }
        x
    }

    /// Accumulates into `grad` the gradient of `⟨d_out, f(x)⟩` given the trace of `f(x)`.
    pub(crate) fn backward(&self, trace: &Trace<T>, d_out: ArrayView1<'_, T>, grad: &mut Params<T>) {
        let mut d = d_out.to_owned();
        let last = self.params.dense.len() - 1;
        for n in (0..=last).rev() {
            if n < last {
                let out = &trace.dense_out[n];
                d.zip_mut_with(out, |g, &o| {
                    if o <= T::zero() {
                        *g = T::zero()
                    }
                });
            }
            let x = &trace.dense_in[n];
            let g = &mut grad.dense[n];
            let xc = x.view().insert_axis(Axis(1));
            let dr = d.view().insert_axis(Axis(0));
            general_mat_mul(T::one(), &xc, &dr, T::one(), &mut g.weight);
            g.bias += &d;
            d = self.params.dense[n].weight.dot(&d);
        }
        let mut d: Vec<T> = d.to_vec();
        for n in (0..self.shapes.len()).rev() {
            let s = &self.shapes[n];
            let relu = &trace.relu[n];
            let mut dz = if s.pool {
                let mut dz = Array2::zeros((s.positions(), s.cout));
                let flat = dz.as_slice_mut().expect("standard layout");
                for (&idx, &g) in trace.argmax[n].iter().zip(&d) {
                    flat[idx as usize] = flat[idx as usize] + g;
                }
                dz
            } else {
                Array2::from_shape_vec((s.positions(), s.cout), d).expect("shape matches layer output")
            };
            dz.zip_mut_with(relu, |g, &a| {
                if a <= T::zero() {
                    *g = T::zero()
                }
            });
            let g = &mut grad.conv[n];
            general_mat_mul(T::one(), &trace.cols[n].t(), &dz, T::one(), &mut g.weight);
            g.bias += &dz.sum_axis(Axis(0));
            if n == 0 {
                break;
            }
            let dcols = dz.dot(&self.params.conv[n].weight.t());
            d = col2im(&dcols, s);
        }
    }
}

/// Patch matrix of an HWC input: one row per output position, columns ordered (dy, dx, channel).
fn im2col<T: Scalar>(x: &[T], s: &ConvShape) -> Array2<T> {
    let mut cols = Array2::zeros((s.positions(), s.patch_len()));
    let run = s.kw * s.cin;
    for (r, mut row) in cols.outer_iter_mut().enumerate() {
        let (oy, ox) = (r / s.out_w, r % s.out_w);
        let row = row.as_slice_mut().expect("standard layout");
        for dy in 0..s.kh {
            let src = ((oy + dy) * s.in_w + ox) * s.cin;
            row[dy * run..(dy + 1) * run].copy_from_slice(&x[src..src + run]);
        }
    }
    cols
}

fn col2im<T: Scalar>(dcols: &Array2<T>, s: &ConvShape) -> Vec<T> {
    let mut dx = vec![T::zero(); s.in_h * s.in_w * s.cin];
    let run = s.kw * s.cin;
    for (r, row) in dcols.outer_iter().enumerate() {
        let (oy, ox) = (r / s.out_w, r % s.out_w);
        let row = row.to_slice().expect("standard layout");
        for dy in 0..s.kh {
            let dst = ((oy + dy) * s.in_w + ox) * s.cin;
            for (o, &v) in dx[dst..dst + run].iter_mut().zip(&row[dy * run..(dy + 1) * run]) {
                *o = *o + v;
            }
        }
    }
    dx
}

/// 2×2 stride-2 max pool over an (H·W) × C activation; returns HWC output and flat argmax indices.
fn max_pool<T: Scalar>(z: &Array2<T>, s: &ConvShape) -> (Vec<T>, Vec<u32>) {
    let (ph, pw) = s.pooled();
    let c = s.cout;
    let flat = z.as_slice().expect("standard layout");
    let mut out = Vec::with_capacity(ph * pw * c);
    let mut arg = Vec::with_capacity(ph * pw * c);
    for py in 0..ph {
        for px in 0..pw {
            for ch in 0..c {
                let mut best = ((2 * py) * s.out_w + 2 * px) * c + ch;
                for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                    let idx = ((2 * py + dy) * s.out_w + 2 * px + dx) * c + ch;
                    if flat[idx] > flat[best] {
                        best = idx;
                    }
                }
                out.push(flat[best]);
                arg.push(best as u32);
            }
        }
    }
    (out, arg)
}
