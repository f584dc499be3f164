//! Dense kernels and the LSTM cell. Matrices are row-major slices.

use super::params::LstmBlocks;

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    // four accumulators so the loop vectorizes without reassociation
    let mut acc = [0.0; 4];
    let chunks = a.len() / 4 * 4;
    for (ca, cb) in a[..chunks].chunks_exact(4).zip(b[..chunks].chunks_exact(4)) {
        for k in 0..4 {
            acc[k] += ca[k] * cb[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in a[chunks..].iter().zip(&b[chunks..]) {
        tail += x * y;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// `out += W x` for `W: rows × x.len()`.
#[inline]
pub fn matvec_add(w: &[f64], x: &[f64], out: &mut [f64]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

/// `out += Wᵀ v` for `W: v.len() × out.len()`.
#[inline]
pub fn matvec_t_add(w: &[f64], v: &[f64], out: &mut [f64]) {
    let cols = out.len();
    for (&s, row) in v.iter().zip(w.chunks_exact(cols)) {
        if s == 0.0 {
            continue;
        }
        for (o, r) in out.iter_mut().zip(row) {
            *o += s * r;
        }
    }
}

/// `dw += v ⊗ x`.
#[inline]
pub fn outer_add(dw: &mut [f64], v: &[f64], x: &[f64]) {
    let cols = x.len();
    for (&s, row) in v.iter().zip(dw.chunks_exact_mut(cols)) {
        if s == 0.0 {
            continue;
        }
        for (d, xi) in row.iter_mut().zip(x) {
            *d += s * xi;
        }
    }
}

#[inline]
pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Borrowed view of one LSTM's tensors.
#[derive(Clone, Copy)]
pub struct Lstm<'a> {
    pub wx: &'a [f64],
    pub wh: &'a [f64],
    pub bias: &'a [f64],
    pub hidden: usize,
}

impl<'a> Lstm<'a> {
    pub fn view(params: &'a [f64], blocks: &LstmBlocks, hidden: usize) -> Self {
        Lstm {
            wx: &params[blocks.wx.range()],
            wh: &params[blocks.wh.range()],
            bias: &params[blocks.bias.range()],
            hidden,
        }
    }

    /// One step; `gates` receives the activated `[i, f, g, o]`.
    pub fn step(&self, x: &[f64], h_prev: &[f64], c_prev: &[f64], gates: &mut [f64], c: &mut [f64], h: &mut [f64]) {
        let n = self.hidden;
        gates.copy_from_slice(self.bias);
        matvec_add(self.wx, x, gates);
        matvec_add(self.wh, h_prev, gates);
        let (ifg, o) = gates.split_at_mut(3 * n);
        let (i_f, g) = ifg.split_at_mut(2 * n);
        let (i, f) = i_f.split_at_mut(n);
        for k in 0..n {
            i[k] = sigmoid(i[k]);
            f[k] = sigmoid(f[k]);
            g[k] = g[k].tanh();
            o[k] = sigmoid(o[k]);
            c[k] = f[k] * c_prev[k] + i[k] * g[k];
            h[k] = o[k] * c[k].tanh();
        }
    }
}

/// Saved activations of one forward step.
#[derive(Clone)]
pub struct StepCache {
    pub h_prev: Vec<f64>,
    pub c_prev: Vec<f64>,
    pub gates: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

impl StepCache {
    pub fn run(lstm: &Lstm<'_>, x: &[f64], h_prev: &[f64], c_prev: &[f64]) -> Self {
        let n = lstm.hidden;
        let mut cache = StepCache {
            h_prev: h_prev.to_vec(),
            c_prev: c_prev.to_vec(),
            gates: vec![0.0; 4 * n],
            c: vec![0.0; n],
            h: vec![0.0; n],
        };
        lstm.step(x, h_prev, c_prev, &mut cache.gates, &mut cache.c, &mut cache.h);
        cache
    }
}

/// Gradient sinks for one LSTM inside a flat gradient buffer.
pub struct LstmGrads<'a> {
    pub wx: &'a mut [f64],
    pub wh: &'a mut [f64],
    pub bias: &'a mut [f64],
}

/// Backward through one step. `dh`/`dc` arrive as the gradients w.r.t. this
/// step's outputs and leave holding the gradients w.r.t. `h_prev`/`c_prev`;
/// `dx` is accumulated into.
#[allow(clippy::too_many_arguments)]
pub fn step_backward(
    lstm: &Lstm<'_>,
    grads: &mut LstmGrads<'_>,
    cache: &StepCache,
    x: &[f64],
    dh: &mut [f64],
    dc: &mut [f64],
    dx: &mut [f64],
    dpre: &mut [f64],
) {
    let n = lstm.hidden;
    let (i, rest) = cache.gates.split_at(n);
    let (f, rest) = rest.split_at(n);
    let (g, o) = rest.split_at(n);
    for k in 0..n {
        let tc = cache.c[k].tanh();
        let d_o = dh[k] * tc;
        let dct = dc[k] + dh[k] * o[k] * (1.0 - tc * tc);
        let di = dct * g[k];
        let dg = dct * i[k];
        let df = dct * cache.c_prev[k];
        dpre[k] = di * i[k] * (1.0 - i[k]);
        dpre[n + k] = df * f[k] * (1.0 - f[k]);
        dpre[2 * n + k] = dg * (1.0 - g[k] * g[k]);
        dpre[3 * n + k] = d_o * o[k] * (1.0 - o[k]);
        dc[k] = dct * f[k];
    }
    outer_add(grads.wx, dpre, x);
    outer_add(grads.wh, dpre, &cache.h_prev);
    axpy(1.0, dpre, grads.bias);
    matvec_t_add(lstm.wx, dpre, dx);
    dh.fill(0.0);
    matvec_t_add(lstm.wh, dpre, dh);
}
