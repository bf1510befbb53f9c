use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Array3, ArrayView2, Axis, Zip};
use rand::Rng;

use super::{sc, sigmoid, Parameter, RngState, Scalar};
use crate::error::{Error, Result};

/// Weights of one LSTM layer. Gate blocks are stacked in the order
/// input, forget, candidate, output along the first axis.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmParams<T> {
    /// Input projection, [4h, d_in].
    pub w: Parameter<T>,
    /// Recurrent projection, [4h, h].
    pub u: Parameter<T>,
    /// Bias, [1, 4h].
    pub b: Parameter<T>,
}

impl<T: Scalar> LstmParams<T> {
    /// Uniform in ±1/sqrt(h) for both matrices, zero bias except the forget
    /// gate slice which starts at 1.
    pub fn init(prefix: &str, input_dim: usize, hidden: usize, rng: &mut RngState) -> Self {
        let k = 1.0 / (hidden as f64).sqrt();
        let r = rng.rng();
        let mut uniform = |rows, cols| Array2::from_shape_simple_fn((rows, cols), || sc::<T>(r.gen_range(-k..k)));
        let w = uniform(4 * hidden, input_dim);
        let u = uniform(4 * hidden, hidden);
        let mut b = Array2::zeros((1, 4 * hidden));
        b.slice_mut(s![.., hidden..2 * hidden]).fill(T::one());
        LstmParams {
            w: Parameter::new(format!("{prefix}.w"), w),
            u: Parameter::new(format!("{prefix}.u"), u),
            b: Parameter::new(format!("{prefix}.b"), b),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.w.value.ncols()
    }

    pub fn hidden_dim(&self) -> usize {
        self.u.value.ncols()
    }

    pub fn is_frozen(&self) -> bool {
        self.w.frozen && self.u.frozen && self.b.frozen
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.w.frozen = frozen;
        self.u.frozen = frozen;
        self.b.frozen = frozen;
    }

    pub fn params(&self) -> [&Parameter<T>; 3] {
        [&self.w, &self.u, &self.b]
    }

    pub fn params_mut(&mut self) -> [&mut Parameter<T>; 3] {
        [&mut self.w, &mut self.u, &mut self.b]
    }

    pub fn cast<U: Scalar>(&self) -> LstmParams<U> {
        LstmParams {
            w: self.w.cast(),
            u: self.u.cast(),
            b: self.b.cast(),
        }
    }
}

/// Hidden and cell state, each [B, h].
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState<T> {
    pub h: Array2<T>,
    pub c: Array2<T>,
}

impl<T: Scalar> LstmState<T> {
    pub fn zeros(batch: usize, hidden: usize) -> Self {
        LstmState {
            h: Array2::zeros((batch, hidden)),
            c: Array2::zeros((batch, hidden)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CellCache<T> {
    pub x: Array2<T>,
    pub h_prev: Array2<T>,
    pub c_prev: Array2<T>,
    /// Activated gates [B, 4h]: sigmoid(i), sigmoid(f), tanh(g), sigmoid(o).
    pub gates: Array2<T>,
    pub tanh_c: Array2<T>,
}

#[derive(Debug, Clone)]
pub struct CellGrads<T> {
    pub dx: Array2<T>,
    pub dh_prev: Array2<T>,
    pub dc_prev: Array2<T>,
    /// Gradient w.r.t. the gate pre-activations, [B, 4h].
    pub dz: Array2<T>,
}

impl<T: Scalar> CellGrads<T> {
    /// (dW, dU, db) for this step.
    pub fn param_grads(&self, cache: &CellCache<T>) -> (Array2<T>, Array2<T>, Array2<T>) {
        let dw = self.dz.t().dot(&cache.x);
        let du = self.dz.t().dot(&cache.h_prev);
        let db = self.dz.sum_axis(Axis(0)).insert_axis(Axis(0));
        (dw, du, db)
    }
}

fn check_cell_shapes<T>(
    x: &ArrayView2<T>,
    h_prev: &ArrayView2<T>,
    c_prev: &ArrayView2<T>,
    w: &Array2<T>,
    u: &Array2<T>,
    b: &Array2<T>,
) -> Result<usize> {
    let h = u.ncols();
    let ok = u.nrows() == 4 * h
        && w.nrows() == 4 * h
        && w.ncols() == x.ncols()
        && b.dim() == (1, 4 * h)
        && h_prev.dim() == (x.nrows(), h)
        && c_prev.dim() == (x.nrows(), h);
    if !ok {
        return Err(Error::Shape(format!(
            "lstm cell: x {:?}, h {:?}, c {:?}, W {:?}, U {:?}, b {:?}",
            x.dim(),
            h_prev.dim(),
            c_prev.dim(),
            w.dim(),
            u.dim(),
            b.dim()
        )));
    }
    Ok(h)
}

pub fn lstm_cell_fwd<T: Scalar>(
    x: ArrayView2<T>,
    h_prev: ArrayView2<T>,
    c_prev: ArrayView2<T>,
    w: &Array2<T>,
    u: &Array2<T>,
    b: &Array2<T>,
) -> Result<(Array2<T>, Array2<T>, CellCache<T>)> {
    let h = check_cell_shapes(&x, &h_prev, &c_prev, w, u, b)?;
    let mut z = x.dot(&w.t()) + b;
    general_mat_mul(T::one(), &h_prev, &u.t(), T::one(), &mut z);

    z.slice_mut(s![.., 0..2 * h]).mapv_inplace(sigmoid);
    z.slice_mut(s![.., 2 * h..3 * h]).mapv_inplace(T::tanh);
    z.slice_mut(s![.., 3 * h..]).mapv_inplace(sigmoid);
    let gates = z;

    let mut c = Array2::zeros(c_prev.raw_dim());
    Zip::from(&mut c)
        .and(&c_prev)
        .and(gates.slice(s![.., 0..h]))
        .and(gates.slice(s![.., h..2 * h]))
        .and(gates.slice(s![.., 2 * h..3 * h]))
        .for_each(|c, &cp, &i, &f, &g| *c = f * cp + i * g);
    let tanh_c = c.mapv(T::tanh);
    let h_new = &gates.slice(s![.., 3 * h..]) * &tanh_c;

    let cache = CellCache {
        x: x.to_owned(),
        h_prev: h_prev.to_owned(),
        c_prev: c_prev.to_owned(),
        gates,
        tanh_c,
    };
    Ok((h_new, c, cache))
}

/// Exact gradients of one cell given upstream `dh` and `dc`.
pub fn lstm_cell_bwd<T: Scalar>(
    cache: &CellCache<T>,
    dh: ArrayView2<T>,
    dc: ArrayView2<T>,
    w: &Array2<T>,
    u: &Array2<T>,
) -> CellGrads<T> {
    let h = cache.tanh_c.ncols();
    let one = T::one();
    let g = &cache.gates;
    let mut dz = Array2::zeros(g.raw_dim());
    let mut dc_prev = Array2::zeros(cache.c_prev.raw_dim());
    for b in 0..g.nrows() {
        for j in 0..h {
            let (i, f, gg, o) = (g[(b, j)], g[(b, h + j)], g[(b, 2 * h + j)], g[(b, 3 * h + j)]);
            let tc = cache.tanh_c[(b, j)];
            let dhv = dh[(b, j)];
            let dct = dc[(b, j)] + dhv * o * (one - tc * tc);
            dz[(b, j)] = dct * gg * i * (one - i);
            dz[(b, h + j)] = dct * cache.c_prev[(b, j)] * f * (one - f);
            dz[(b, 2 * h + j)] = dct * i * (one - gg * gg);
            dz[(b, 3 * h + j)] = dhv * tc * o * (one - o);
            dc_prev[(b, j)] = dct * f;
        }
    }
    CellGrads {
        dx: dz.dot(w),
        dh_prev: dz.dot(u),
        dc_prev,
        dz,
    }
}

#[derive(Debug, Clone)]
pub struct LayerCache<T> {
    pub cells: Vec<CellCache<T>>,
    /// Recurrent matrix actually used (masked and rescaled in training).
    pub u_eff: Array2<T>,
    pub weight_mask: Option<Array2<T>>,
    /// [T, B] of 0/1: steps with 0 carry the previous state through.
    pub step_mask: Option<Array2<T>>,
}

#[derive(Debug, Clone)]
pub struct LayerGrads<T> {
    pub dx: Array3<T>,
    pub d_initial: LstmState<T>,
}

/// Runs the cell over `x` ([T, B, d_in]). `weight_mask`, when given, is a
/// DropConnect mask (already rescaled) multiplied into `U` for the whole
/// sequence. `step_mask` marks which (step, row) pairs are real tokens.
pub fn lstm_layer_fwd<T: Scalar>(
    x: &Array3<T>,
    initial: &LstmState<T>,
    params: &LstmParams<T>,
    weight_mask: Option<&Array2<T>>,
    step_mask: Option<&Array2<T>>,
) -> Result<(Array3<T>, LstmState<T>, LayerCache<T>)> {
    let (steps, batch, _) = x.dim();
    let hidden = params.hidden_dim();
    if let Some(m) = weight_mask {
        if m.dim() != params.u.value.dim() {
            return Err(Error::Shape(format!(
                "weight mask {:?} vs U {:?}",
                m.dim(),
                params.u.value.dim()
            )));
        }
    }
    if let Some(m) = step_mask {
        if m.dim() != (steps, batch) {
            return Err(Error::Shape(format!(
                "step mask {:?} vs input {:?}",
                m.dim(),
                (steps, batch)
            )));
        }
    }
    let u_eff = match weight_mask {
        Some(m) => &params.u.value * m,
        None => params.u.value.clone(),
    };
    let mut out = Array3::zeros((steps, batch, hidden));
    let mut h = initial.h.clone();
    let mut c = initial.c.clone();
    let mut cells = Vec::with_capacity(steps);
    for t in 0..steps {
        let (h_new, c_new, cache) = lstm_cell_fwd(
            x.index_axis(Axis(0), t),
            h.view(),
            c.view(),
            &params.w.value,
            &u_eff,
            &params.b.value,
        )?;
        match step_mask {
            Some(m) => {
                let m = m.index_axis(Axis(0), t);
                for (b, &keep) in m.iter().enumerate() {
                    if keep != T::zero() {
                        h.row_mut(b).assign(&h_new.row(b));
                        c.row_mut(b).assign(&c_new.row(b));
                    }
                }
            }
            None => {
                h = h_new;
                c = c_new;
            }
        }
        out.index_axis_mut(Axis(0), t).assign(&h);
        cells.push(cache);
    }
    let cache = LayerCache {
        cells,
        u_eff,
        weight_mask: weight_mask.cloned(),
        step_mask: step_mask.cloned(),
    };
    Ok((out, LstmState { h, c }, cache))
}

/// Backpropagation through time over a whole layer. Parameter gradients
/// are accumulated into `params` unless the parameter is frozen.
pub fn lstm_layer_bwd<T: Scalar>(
    cache: &LayerCache<T>,
    d_out: &Array3<T>,
    d_final: Option<&LstmState<T>>,
    params: &mut LstmParams<T>,
) -> LayerGrads<T> {
    let (steps, batch, hidden) = d_out.dim();
    let input_dim = params.input_dim();
    let mut dh_next = d_final.map_or_else(|| Array2::zeros((batch, hidden)), |s| s.h.clone());
    let mut dc_next = d_final.map_or_else(|| Array2::zeros((batch, hidden)), |s| s.c.clone());
    let mut dx = Array3::zeros((steps, batch, input_dim));
    let mut dz_all = Array2::zeros((steps * batch, 4 * hidden));

    for t in (0..steps).rev() {
        let dh_total = &d_out.index_axis(Axis(0), t) + &dh_next;
        let cell = &cache.cells[t];
        match &cache.step_mask {
            Some(mask) => {
                let m = mask.index_axis(Axis(0), t);
                let mcol = m.insert_axis(Axis(1));
                let dh_cell = &dh_total * &mcol;
                let dc_cell = &dc_next * &mcol;
                let g = lstm_cell_bwd(cell, dh_cell.view(), dc_cell.view(), &params.w.value, &cache.u_eff);
                let pass = mcol.mapv(|v| T::one() - v);
                dh_next = g.dh_prev + &dh_total * &pass;
                dc_next = g.dc_prev + &dc_next * &pass;
                dx.index_axis_mut(Axis(0), t).assign(&g.dx);
                dz_all.slice_mut(s![t * batch..(t + 1) * batch, ..]).assign(&g.dz);
            }
            None => {
                let g = lstm_cell_bwd(cell, dh_total.view(), dc_next.view(), &params.w.value, &cache.u_eff);
                dh_next = g.dh_prev;
                dc_next = g.dc_prev;
                dx.index_axis_mut(Axis(0), t).assign(&g.dx);
                dz_all.slice_mut(s![t * batch..(t + 1) * batch, ..]).assign(&g.dz);
            }
        }
    }

    if !params.w.frozen || !params.u.frozen {
        let mut xs = Array2::zeros((steps * batch, input_dim));
        let mut hs = Array2::zeros((steps * batch, hidden));
        for (t, cell) in cache.cells.iter().enumerate() {
            xs.slice_mut(s![t * batch..(t + 1) * batch, ..]).assign(&cell.x);
            hs.slice_mut(s![t * batch..(t + 1) * batch, ..]).assign(&cell.h_prev);
        }
        if !params.w.frozen {
            general_mat_mul(T::one(), &dz_all.t(), &xs, T::one(), &mut params.w.grad);
        }
        if !params.u.frozen {
            let mut du = dz_all.t().dot(&hs);
            if let Some(m) = &cache.weight_mask {
                du *= m;
            }
            params.u.grad += &du;
        }
    }
    if !params.b.frozen {
        params.b.grad += &dz_all.sum_axis(Axis(0)).insert_axis(Axis(0));
    }

    LayerGrads {
        dx,
        d_initial: LstmState { h: dh_next, c: dc_next },
    }
}
