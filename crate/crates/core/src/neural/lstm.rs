//! Stacked bidirectional LSTM layers and dense heads with exact
//! backpropagation through time.
//!
//! Parameters are plain row-major grids (biases are 1-row grids) so the
//! optimizer, checkpoints, and finite-difference checks can treat every
//! tensor uniformly. Gate order is i, f, g, o.

use crate::grid::Grid;
use crate::scalar::Scalar;

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// out += m . x  (m is rows x cols, x has cols entries, out has rows)
fn add_matvec<T: Scalar>(m: &Grid<T>, x: &[T], out: &mut [T]) {
    debug_assert_eq!(m.cols(), x.len());
    debug_assert_eq!(m.rows(), out.len());
    for (r, o) in out.iter_mut().enumerate() {
        let row = m.row(r);
        let mut acc = T::zero();
        for (a, b) in row.iter().zip(x) {
            acc += *a * *b;
        }
        *o += acc;
    }
}

/// out += m^T . y  (y has rows entries, out has cols entries)
fn add_matvec_t<T: Scalar>(m: &Grid<T>, y: &[T], out: &mut [T]) {
    debug_assert_eq!(m.rows(), y.len());
    debug_assert_eq!(m.cols(), out.len());
    for (r, &yr) in y.iter().enumerate() {
        let row = m.row(r);
        for (o, &mrc) in out.iter_mut().zip(row) {
            *o += mrc * yr;
        }
    }
}

/// acc += y (outer) x
fn add_outer<T: Scalar>(acc: &mut Grid<T>, y: &[T], x: &[T]) {
    debug_assert_eq!(acc.rows(), y.len());
    debug_assert_eq!(acc.cols(), x.len());
    for (r, &yr) in y.iter().enumerate() {
        let row = acc.row_mut(r);
        for (a, &xc) in row.iter_mut().zip(x) {
            *a += yr * xc;
        }
    }
}

// ---------------------------------------------------------------------------
// Single LSTM direction
// ---------------------------------------------------------------------------

/// One direction of a BLSTM layer: input weights (4H x in), recurrent
/// weights (4H x H), bias (1 x 4H).
#[derive(Debug, Clone, PartialEq)]
pub struct LstmDir<T> {
    pub w: Grid<T>,
    pub u: Grid<T>,
    pub b: Grid<T>,
}

impl<T: Scalar> LstmDir<T> {
    pub fn zeros(input_dim: usize, units: usize) -> Self {
        LstmDir {
            w: Grid::from_elem(4 * units, input_dim, T::zero()),
            u: Grid::from_elem(4 * units, units, T::zero()),
            b: Grid::from_elem(1, 4 * units, T::zero()),
        }
    }

    pub fn units(&self) -> usize {
        self.u.cols()
    }
}

/// Post-activation gate values and carried state per timestep, stored at
/// the frame's original index regardless of scan direction.
struct DirCache<T> {
    i: Grid<T>,
    f: Grid<T>,
    g: Grid<T>,
    o: Grid<T>,
    tanh_c: Grid<T>,
    h_prev: Grid<T>,
    c_prev: Grid<T>,
}

fn forward_dir<T: Scalar>(dir: &LstmDir<T>, x: &Grid<T>, reverse: bool) -> (Grid<T>, DirCache<T>) {
    let frames = x.rows();
    let units = dir.units();
    let gate_size = 4 * units;

    let mut h_out = Grid::from_elem(frames, units, T::zero());
    let mut cache = DirCache {
        i: Grid::from_elem(frames, units, T::zero()),
        f: Grid::from_elem(frames, units, T::zero()),
        g: Grid::from_elem(frames, units, T::zero()),
        o: Grid::from_elem(frames, units, T::zero()),
        tanh_c: Grid::from_elem(frames, units, T::zero()),
        h_prev: Grid::from_elem(frames, units, T::zero()),
        c_prev: Grid::from_elem(frames, units, T::zero()),
    };

    let mut h = vec![T::zero(); units];
    let mut c = vec![T::zero(); units];
    let mut pre = vec![T::zero(); gate_size];

    let order: Vec<usize> = if reverse {
        (0..frames).rev().collect()
    } else {
        (0..frames).collect()
    };

    for &t in &order {
        cache.h_prev.row_mut(t).copy_from_slice(&h);
        cache.c_prev.row_mut(t).copy_from_slice(&c);

        pre.copy_from_slice(dir.b.row(0));
        add_matvec(&dir.w, x.row(t), &mut pre);
        add_matvec(&dir.u, &h, &mut pre);

        for k in 0..units {
            let i_g = sigmoid(pre[k]);
            let f_g = sigmoid(pre[units + k]);
            let g_g = pre[2 * units + k].tanh();
            let o_g = sigmoid(pre[3 * units + k]);
            let c_new = f_g * c[k] + i_g * g_g;
            let tc = c_new.tanh();
            h[k] = o_g * tc;
            c[k] = c_new;
            *cache.i.at_mut(t, k) = i_g;
            *cache.f.at_mut(t, k) = f_g;
            *cache.g.at_mut(t, k) = g_g;
            *cache.o.at_mut(t, k) = o_g;
            *cache.tanh_c.at_mut(t, k) = tc;
        }
        h_out.row_mut(t).copy_from_slice(&h);
    }

    (h_out, cache)
}

/// BPTT for one direction. `d_h` is the loss gradient on this direction's
/// output at each frame; returns parameter gradients and the gradient on
/// the layer input.
#[allow(clippy::too_many_arguments)]
fn backward_dir<T: Scalar>(
    dir: &LstmDir<T>,
    x: &Grid<T>,
    cache: &DirCache<T>,
    d_h: &Grid<T>,
    reverse: bool,
    gw: &mut Grid<T>,
    gu: &mut Grid<T>,
    gb: &mut Grid<T>,
) -> Grid<T> {
    let frames = x.rows();
    let units = dir.units();
    let gate_size = 4 * units;

    let mut d_x = Grid::from_elem(frames, x.cols(), T::zero());
    let mut dh_next = vec![T::zero(); units];
    let mut dc_next = vec![T::zero(); units];
    let mut d_gates = vec![T::zero(); gate_size];

    // Unwind in the opposite order of the forward scan.
    let order: Vec<usize> = if reverse {
        (0..frames).collect()
    } else {
        (0..frames).rev().collect()
    };

    for &t in &order {
        for k in 0..units {
            let dh = d_h.at(t, k) + dh_next[k];
            let i_g = cache.i.at(t, k);
            let f_g = cache.f.at(t, k);
            let g_g = cache.g.at(t, k);
            let o_g = cache.o.at(t, k);
            let tc = cache.tanh_c.at(t, k);
            let c_prev = cache.c_prev.at(t, k);

            let dc = dh * o_g * (T::one() - tc * tc) + dc_next[k];
            d_gates[k] = dc * g_g * i_g * (T::one() - i_g);
            d_gates[units + k] = dc * c_prev * f_g * (T::one() - f_g);
            d_gates[2 * units + k] = dc * i_g * (T::one() - g_g * g_g);
            d_gates[3 * units + k] = dh * tc * o_g * (T::one() - o_g);
            dc_next[k] = dc * f_g;
        }

        add_outer(gw, &d_gates, x.row(t));
        add_outer(gu, &d_gates, cache.h_prev.row(t));
        for (acc, &dg) in gb.row_mut(0).iter_mut().zip(&d_gates) {
            *acc += dg;
        }

        dh_next.iter_mut().for_each(|v| *v = T::zero());
        add_matvec_t(&dir.u, &d_gates, &mut dh_next);
        add_matvec_t(&dir.w, &d_gates, d_x.row_mut(t));
    }

    d_x
}

// ---------------------------------------------------------------------------
// Bidirectional layer and stack
// ---------------------------------------------------------------------------

/// Forward and backward scans whose outputs are concatenated per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct BlstmLayer<T> {
    pub fwd: LstmDir<T>,
    pub bwd: LstmDir<T>,
}

impl<T: Scalar> BlstmLayer<T> {
    pub fn zeros(input_dim: usize, units: usize) -> Self {
        BlstmLayer {
            fwd: LstmDir::zeros(input_dim, units),
            bwd: LstmDir::zeros(input_dim, units),
        }
    }

    pub fn units(&self) -> usize {
        self.fwd.units()
    }

    /// Output width (both directions concatenated).
    pub fn output_dim(&self) -> usize {
        2 * self.units()
    }
}

pub struct LayerCache<T> {
    input: Grid<T>,
    fwd: DirCache<T>,
    bwd: DirCache<T>,
}

impl<T: Scalar> BlstmLayer<T> {
    pub fn forward(&self, x: &Grid<T>) -> (Grid<T>, LayerCache<T>) {
        let (h_f, cache_f) = forward_dir(&self.fwd, x, false);
        let (h_b, cache_b) = forward_dir(&self.bwd, x, true);
        let units = self.units();
        let mut out = Grid::from_elem(x.rows(), 2 * units, T::zero());
        for t in 0..x.rows() {
            out.row_mut(t)[..units].copy_from_slice(h_f.row(t));
            out.row_mut(t)[units..].copy_from_slice(h_b.row(t));
        }
        (
            out,
            LayerCache {
                input: x.clone(),
                fwd: cache_f,
                bwd: cache_b,
            },
        )
    }

    pub fn backward(
        &self,
        cache: &LayerCache<T>,
        d_out: &Grid<T>,
        grads: &mut BlstmLayerGrads<T>,
    ) -> Grid<T> {
        let units = self.units();
        let frames = cache.input.rows();
        let mut d_h_f = Grid::from_elem(frames, units, T::zero());
        let mut d_h_b = Grid::from_elem(frames, units, T::zero());
        for t in 0..frames {
            d_h_f.row_mut(t).copy_from_slice(&d_out.row(t)[..units]);
            d_h_b.row_mut(t).copy_from_slice(&d_out.row(t)[units..]);
        }
        let d_x_f = backward_dir(
            &self.fwd,
            &cache.input,
            &cache.fwd,
            &d_h_f,
            false,
            &mut grads.fwd.w,
            &mut grads.fwd.u,
            &mut grads.fwd.b,
        );
        let d_x_b = backward_dir(
            &self.bwd,
            &cache.input,
            &cache.bwd,
            &d_h_b,
            true,
            &mut grads.bwd.w,
            &mut grads.bwd.u,
            &mut grads.bwd.b,
        );
        d_x_f.zip_map(&d_x_b, |a, b| a + b)
    }
}

#[derive(Debug, Clone)]
pub struct BlstmLayerGrads<T> {
    pub fwd: LstmDir<T>,
    pub bwd: LstmDir<T>,
}

impl<T: Scalar> BlstmLayerGrads<T> {
    pub fn zeros_like(layer: &BlstmLayer<T>) -> Self {
        BlstmLayerGrads {
            fwd: LstmDir::zeros(layer.fwd.w.cols(), layer.units()),
            bwd: LstmDir::zeros(layer.bwd.w.cols(), layer.units()),
        }
    }
}

/// Stacked BLSTM: each layer consumes the previous layer's concatenated
/// output.
#[derive(Debug, Clone, PartialEq)]
pub struct BlstmStack<T> {
    pub layers: Vec<BlstmLayer<T>>,
}

pub struct StackCache<T> {
    layers: Vec<LayerCache<T>>,
}

impl<T: Scalar> BlstmStack<T> {
    pub fn zeros(input_dim: usize, units: usize, n_layers: usize) -> Self {
        let mut layers = Vec::with_capacity(n_layers);
        let mut dim = input_dim;
        for _ in 0..n_layers {
            layers.push(BlstmLayer::zeros(dim, units));
            dim = 2 * units;
        }
        BlstmStack { layers }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fwd.w.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.output_dim())
    }

    pub fn forward(&self, x: &Grid<T>) -> (Grid<T>, StackCache<T>) {
        let mut caches = Vec::with_capacity(self.layers.len());
        let mut cur = x.clone();
        for layer in &self.layers {
            let (out, cache) = layer.forward(&cur);
            caches.push(cache);
            cur = out;
        }
        (cur, StackCache { layers: caches })
    }

    pub fn backward(
        &self,
        cache: &StackCache<T>,
        d_out: &Grid<T>,
        grads: &mut [BlstmLayerGrads<T>],
    ) -> Grid<T> {
        debug_assert_eq!(grads.len(), self.layers.len());
        let mut d = d_out.clone();
        for (idx, layer) in self.layers.iter().enumerate().rev() {
            d = layer.backward(&cache.layers[idx], &d, &mut grads[idx]);
        }
        d
    }

    pub fn grads_zeros(&self) -> Vec<BlstmLayerGrads<T>> {
        self.layers.iter().map(BlstmLayerGrads::zeros_like).collect()
    }
}

// ---------------------------------------------------------------------------
// Dense output layer
// ---------------------------------------------------------------------------

/// Per-frame affine map (out x in weights, 1 x out bias).
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub w: Grid<T>,
    pub b: Grid<T>,
}

pub struct DenseCache<T> {
    input: Grid<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(input_dim: usize, output_dim: usize) -> Self {
        Dense {
            w: Grid::from_elem(output_dim, input_dim, T::zero()),
            b: Grid::from_elem(1, output_dim, T::zero()),
        }
    }

    pub fn forward(&self, x: &Grid<T>) -> (Grid<T>, DenseCache<T>) {
        let mut out = Grid::from_elem(x.rows(), self.w.rows(), T::zero());
        for t in 0..x.rows() {
            let row = out.row_mut(t);
            row.copy_from_slice(self.b.row(0));
            add_matvec(&self.w, x.row(t), row);
        }
        (out, DenseCache { input: x.clone() })
    }

    pub fn backward(
        &self,
        cache: &DenseCache<T>,
        d_out: &Grid<T>,
        gw: &mut Grid<T>,
        gb: &mut Grid<T>,
    ) -> Grid<T> {
        let mut d_x = Grid::from_elem(cache.input.rows(), self.w.cols(), T::zero());
        for t in 0..cache.input.rows() {
            add_outer(gw, d_out.row(t), cache.input.row(t));
            for (acc, &d) in gb.row_mut(0).iter_mut().zip(d_out.row(t)) {
                *acc += d;
            }
            add_matvec_t(&self.w, d_out.row(t), d_x.row_mut(t));
        }
        d_x
    }
}

/// Elementwise logistic squashing scaled to (0, scale).
pub fn scaled_sigmoid<T: Scalar>(pre: &Grid<T>, scale: T) -> Grid<T> {
    pre.map(|v| scale * sigmoid(v))
}

/// Gradient through [`scaled_sigmoid`] given its output:
/// d_pre = d_out * out * (1 - out/scale).
pub fn scaled_sigmoid_backward<T: Scalar>(out: &Grid<T>, d_out: &Grid<T>, scale: T) -> Grid<T> {
    out.zip_map(d_out, |o, d| d * o * (T::one() - o / scale))
}
