//! Reverse-mode differentiation over a linear record of operations.
//!
//! A [`Tape`] is built fresh for every forward pass. Nodes are appended in
//! evaluation order, so walking the record backwards from the loss visits
//! every consumer before its producers. Only static feed-forward graphs are
//! supported; there is no control flow on the tape.

use rand::Rng;

use crate::conv::{col2im, im2col, ConvGeometry};
use crate::{NnError, Real, Result, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geometry: ConvGeometry,
    },
    ConvTranspose2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geometry: ConvGeometry,
    },
    Linear {
        input: Var,
        weight: Var,
        bias: Option<Var>,
    },
    LeakyRelu {
        input: Var,
        slope: T,
    },
    Tanh {
        input: Var,
    },
    Sigmoid {
        input: Var,
    },
    BatchNorm {
        input: Var,
        gamma: Var,
        beta: Var,
        normalized: Vec<T>,
        inv_std: Vec<T>,
    },
    Dropout {
        input: Var,
        mask: Vec<T>,
    },
    Concat {
        a: Var,
        b: Var,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Scale {
        input: Var,
        factor: T,
    },
    Mean {
        input: Var,
    },
    MeanAbsDiff {
        a: Var,
        b: Var,
    },
    BceWithLogits {
        logits: Var,
        target: T,
    },
    WeightedSum {
        input: Var,
        weights: Tensor<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Tensor<T>>>,
}

fn mismatch(msg: String) -> NnError {
    NnError::ShapeMismatch(msg)
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Differentiable input (parameters, or inputs under gradient check).
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Copy of `v` cut off from the graph.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    /// Gradient accumulated by the last [`backward`](Self::backward), if `v`
    /// was reached.
    pub fn grad(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take_grad(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0].take()
    }

    fn shape(&self, v: Var) -> [usize; 4] {
        self.nodes[v.0].value.shape()
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let [n, ci, h, w] = self.shape(input);
        let [co, wci, kh, kw] = self.shape(weight);
        if wci != ci {
            return Err(mismatch(format!(
                "conv2d input has {ci} channels, weight expects {wci}"
            )));
        }
        self.check_bias(bias, co)?;
        if stride == 0 {
            return Err(mismatch("conv2d stride must be positive".into()));
        }
        let g = ConvGeometry::forward(ci, h, w, kh, kw, stride, padding).ok_or_else(|| {
            mismatch(format!("conv2d kernel {kh}x{kw} larger than padded input {h}x{w}"))
        })?;
        let mut out = Tensor::zeros([n, co, g.out_h, g.out_w]);
        let mut cols = vec![T::zero(); g.col_rows() * g.col_cols()];
        let x = self.value(input).data();
        let wt = self.value(weight).data();
        let in_len = ci * h * w;
        let out_len = co * g.col_cols();
        for b in 0..n {
            im2col(&g, &x[b * in_len..(b + 1) * in_len], &mut cols);
            let dst = &mut out.data_mut()[b * out_len..(b + 1) * out_len];
            T::gemm(co, g.col_rows(), g.col_cols(), T::one(), wt, false, &cols, false, T::zero(), dst);
        }
        if let Some(bias) = bias {
            add_channel_bias(&mut out, self.value(bias).data());
        }
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.needs(&deps);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                weight,
                bias,
                geometry: g,
            },
            rg,
        ))
    }

    /// Transposed convolution; `weight` is laid out `(in, out, kh, kw)`.
    pub fn conv_transpose2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        let [n, ci, h, w] = self.shape(input);
        let [wci, co, kh, kw] = self.shape(weight);
        if wci != ci {
            return Err(mismatch(format!(
                "conv_transpose2d input has {ci} channels, weight expects {wci}"
            )));
        }
        self.check_bias(bias, co)?;
        if stride == 0 || h == 0 || w == 0 {
            return Err(mismatch("conv_transpose2d needs positive stride and input size".into()));
        }
        let out_size = |size: usize, k: usize| ((size - 1) * stride + k).checked_sub(2 * padding);
        let (oh, ow) = match (out_size(h, kh), out_size(w, kw)) {
            (Some(oh), Some(ow)) if oh > 0 && ow > 0 => (oh, ow),
            _ => return Err(mismatch("conv_transpose2d padding exceeds output".into())),
        };
        // The adjoint convolution reads the (oh, ow) output and produces (h, w).
        let g = ConvGeometry::forward(co, oh, ow, kh, kw, stride, padding)
            .filter(|g| g.out_h == h && g.out_w == w)
            .ok_or_else(|| mismatch("conv_transpose2d geometry is not invertible".into()))?;
        let mut out = Tensor::zeros([n, co, oh, ow]);
        let mut cols = vec![T::zero(); g.col_rows() * g.col_cols()];
        let x = self.value(input).data();
        let wt = self.value(weight).data();
        let in_len = ci * h * w;
        let out_len = co * oh * ow;
        for b in 0..n {
            T::gemm(
                g.col_rows(),
                ci,
                h * w,
                T::one(),
                wt,
                true,
                &x[b * in_len..(b + 1) * in_len],
                false,
                T::zero(),
                &mut cols,
            );
            col2im(&g, &cols, &mut out.data_mut()[b * out_len..(b + 1) * out_len]);
        }
        if let Some(bias) = bias {
            add_channel_bias(&mut out, self.value(bias).data());
        }
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.needs(&deps);
        Ok(self.push(
            out,
            Op::ConvTranspose2d {
                input,
                weight,
                bias,
                geometry: g,
            },
            rg,
        ))
    }

    /// Fully connected layer over the flattened `(c, h, w)` features;
    /// `weight` is `(out, in, 1, 1)`.
    pub fn linear(&mut self, input: Var, weight: Var, bias: Option<Var>) -> Result<Var> {
        let [n, c, h, w] = self.shape(input);
        let [out_f, in_f, wh, ww] = self.shape(weight);
        if in_f != c * h * w || wh != 1 || ww != 1 {
            return Err(mismatch(format!(
                "linear weight {:?} does not accept {} features",
                self.shape(weight),
                c * h * w
            )));
        }
        self.check_bias(bias, out_f)?;
        let mut out = Tensor::zeros([n, out_f, 1, 1]);
        T::gemm(
            n,
            in_f,
            out_f,
            T::one(),
            self.value(input).data(),
            false,
            self.value(weight).data(),
            true,
            T::zero(),
            out.data_mut(),
        );
        if let Some(bias) = bias {
            add_channel_bias(&mut out, self.value(bias).data());
        }
        let mut deps = vec![input, weight];
        deps.extend(bias);
        let rg = self.needs(&deps);
        Ok(self.push(out, Op::Linear { input, weight, bias }, rg))
    }

    fn check_bias(&self, bias: Option<Var>, channels: usize) -> Result<()> {
        match bias {
            Some(b) if self.value(b).len() != channels => Err(mismatch(format!(
                "bias has {} values for {channels} channels",
                self.value(b).len()
            ))),
            _ => Ok(()),
        }
    }

    pub fn leaky_relu(&mut self, input: Var, slope: T) -> Var {
        let out = self
            .value(input)
            .map(|x| if x > T::zero() { x } else { x * slope });
        let rg = self.needs(&[input]);
        self.push(out, Op::LeakyRelu { input, slope }, rg)
    }

    pub fn relu(&mut self, input: Var) -> Var {
        self.leaky_relu(input, T::zero())
    }

    pub fn tanh(&mut self, input: Var) -> Var {
        let out = self.value(input).map(|x| x.tanh());
        let rg = self.needs(&[input]);
        self.push(out, Op::Tanh { input }, rg)
    }

    pub fn sigmoid(&mut self, input: Var) -> Var {
        let out = self.value(input).map(sigmoid);
        let rg = self.needs(&[input]);
        self.push(out, Op::Sigmoid { input }, rg)
    }

    /// Per-channel normalization with statistics of the current batch.
    /// `gamma` and `beta` hold one value per channel.
    pub fn batch_norm(&mut self, input: Var, gamma: Var, beta: Var, epsilon: T) -> Result<Var> {
        let [n, c, h, w] = self.shape(input);
        if self.value(gamma).len() != c || self.value(beta).len() != c {
            return Err(mismatch(format!("batch_norm affine parameters must have {c} values")));
        }
        let count = n * h * w;
        let plane = h * w;
        let x = self.value(input).data();
        let mut normalized = vec![T::zero(); x.len()];
        let mut inv_std = vec![T::zero(); c];
        let mut out = Tensor::zeros([n, c, h, w]);
        let m = T::from_usize(count).unwrap();
        for ch in 0..c {
            if count < 2 {
                return Err(NnError::DegenerateChannel { channel: ch });
            }
            let values = || (0..n).flat_map(move |b| x[(b * c + ch) * plane..(b * c + ch + 1) * plane].iter().copied());
            let mean = values().sum::<T>() / m;
            let var = values().map(|v| (v - mean) * (v - mean)).sum::<T>() / m;
            let denom = (var + epsilon).sqrt();
            if !(denom > T::zero()) || !denom.is_finite() {
                return Err(NnError::DegenerateChannel { channel: ch });
            }
            let istd = T::one() / denom;
            inv_std[ch] = istd;
            let g = self.value(gamma).data()[ch];
            let bt = self.value(beta).data()[ch];
            for b in 0..n {
                let off = (b * c + ch) * plane;
                for i in off..off + plane {
                    let xh = (x[i] - mean) * istd;
                    normalized[i] = xh;
                    out.data_mut()[i] = g * xh + bt;
                }
            }
        }
        let rg = self.needs(&[input, gamma, beta]);
        Ok(self.push(
            out,
            Op::BatchNorm {
                input,
                gamma,
                beta,
                normalized,
                inv_std,
            },
            rg,
        ))
    }

    /// Inverted dropout: kept activations are scaled by `1 / (1 - rate)`.
    pub fn dropout<R: Rng + ?Sized>(&mut self, input: Var, rate: f64, rng: &mut R) -> Var {
        if rate <= 0.0 {
            return input;
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let mask: Vec<T> = (0..self.value(input).len())
            .map(|_| {
                if rng.random::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            })
            .collect();
        let x = self.value(input);
        let data = x.data().iter().zip(&mask).map(|(&v, &k)| v * k).collect();
        let out = Tensor::from_vec(x.shape(), data).expect("same shape");
        let rg = self.needs(&[input]);
        self.push(out, Op::Dropout { input, mask }, rg)
    }

    /// Concatenate along the channel axis.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let [na, ca, ha, wa] = self.shape(a);
        let [nb, cb, hb, wb] = self.shape(b);
        if (na, ha, wa) != (nb, hb, wb) {
            return Err(mismatch(format!(
                "concat of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let plane = ha * wa;
        let mut data = Vec::with_capacity(na * (ca + cb) * plane);
        for n in 0..na {
            data.extend_from_slice(&self.value(a).data()[n * ca * plane..(n + 1) * ca * plane]);
            data.extend_from_slice(&self.value(b).data()[n * cb * plane..(n + 1) * cb * plane]);
        }
        let out = Tensor::from_vec([na, ca + cb, ha, wa], data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Concat { a, b }, rg))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(mismatch(format!(
                "{what} of {:?} and {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Add { a, b }, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let data = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| x - y)
            .collect();
        let out = Tensor::from_vec(self.shape(a), data)?;
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::Sub { a, b }, rg))
    }

    pub fn scale(&mut self, input: Var, factor: T) -> Var {
        let out = self.value(input).map(|x| x * factor);
        let rg = self.needs(&[input]);
        self.push(out, Op::Scale { input, factor }, rg)
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let out = Tensor::scalar(x.data().iter().copied().sum::<T>() / len_of(x));
        let rg = self.needs(&[input]);
        self.push(out, Op::Mean { input }, rg)
    }

    /// `mean(|a - b|)`.
    pub fn mean_abs_diff(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "mean_abs_diff")?;
        let total: T = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| (x - y).abs())
            .sum();
        let out = Tensor::scalar(total / len_of(self.value(a)));
        let rg = self.needs(&[a, b]);
        Ok(self.push(out, Op::MeanAbsDiff { a, b }, rg))
    }

    /// Mean sigmoid cross-entropy of `logits` against a constant label.
    pub fn bce_with_logits(&mut self, logits: Var, target: T) -> Var {
        let x = self.value(logits);
        let total: T = x
            .data()
            .iter()
            .map(|&z| z.max(T::zero()) - z * target + (-z.abs()).exp().ln_1p())
            .sum();
        let out = Tensor::scalar(total / len_of(x));
        let rg = self.needs(&[logits]);
        self.push(out, Op::BceWithLogits { logits, target }, rg)
    }

    /// `sum(input * weights)` against a constant weight tensor.
    pub fn weighted_sum(&mut self, input: Var, weights: &Tensor<T>) -> Result<Var> {
        if self.shape(input) != weights.shape() {
            return Err(mismatch("weighted_sum weights must match input".into()));
        }
        let out = Tensor::scalar(self.value(input).dot(weights));
        let rg = self.needs(&[input]);
        Ok(self.push(
            out,
            Op::WeightedSum {
                input,
                weights: weights.clone(),
            },
            rg,
        ))
    }

    /// Accumulate d`root`/d`v` for every node `root` depends on. Gradients
    /// from a previous call are discarded first.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.nodes[root.0].value.len() != 1 {
            return Err(NnError::NotScalar(self.shape(root)));
        }
        self.grads.iter_mut().for_each(|g| *g = None);
        self.grads[root.0] = Some(Tensor::scalar(T::one()));
        let Tape { nodes, grads } = self;
        let nodes = &*nodes;
        for i in (0..=root.0).rev() {
            if !nodes[i].requires_grad || matches!(nodes[i].op, Op::Leaf) {
                continue;
            }
            let Some(gout) = grads[i].take() else {
                continue;
            };
            backprop_node(nodes, grads, &nodes[i], &gout);
            grads[i] = Some(gout);
        }
        Ok(())
    }
}

fn len_of<T: Real>(t: &Tensor<T>) -> T {
    T::from_usize(t.len().max(1)).unwrap()
}

fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

fn add_channel_bias<T: Real>(out: &mut Tensor<T>, bias: &[T]) {
    let [n, c, h, w] = out.shape();
    let plane = h * w;
    let data = out.data_mut();
    for b in 0..n {
        for (ch, &bv) in bias.iter().enumerate().take(c) {
            let off = (b * c + ch) * plane;
            data[off..off + plane].iter_mut().for_each(|v| *v += bv);
        }
    }
}

fn channel_sums<T: Real>(g: &Tensor<T>) -> Vec<T> {
    let [n, c, h, w] = g.shape();
    let plane = h * w;
    let mut sums = vec![T::zero(); c];
    for b in 0..n {
        for (ch, s) in sums.iter_mut().enumerate() {
            let off = (b * c + ch) * plane;
            *s += g.data()[off..off + plane].iter().copied().sum::<T>();
        }
    }
    sums
}

/// Grad buffer for `v`, created zeroed on first touch. Returns `None` when
/// `v` does not require a gradient.
fn slot<'a, T: Real>(
    nodes: &[Node<T>],
    grads: &'a mut [Option<Tensor<T>>],
    v: Var,
) -> Option<&'a mut Tensor<T>> {
    if !nodes[v.0].requires_grad {
        return None;
    }
    Some(grads[v.0].get_or_insert_with(|| Tensor::zeros(nodes[v.0].value.shape())))
}

fn accumulate_elementwise<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Tensor<T>>],
    v: Var,
    f: impl Fn(usize) -> T,
) {
    if let Some(g) = slot(nodes, grads, v) {
        g.data_mut().iter_mut().enumerate().for_each(|(i, x)| *x += f(i));
    }
}

fn backprop_node<T: Real>(
    nodes: &[Node<T>],
    grads: &mut [Option<Tensor<T>>],
    node: &Node<T>,
    gout: &Tensor<T>,
) {
    let value = |v: Var| &nodes[v.0].value;
    let go = gout.data();
    match &node.op {
        Op::Leaf => {}
        Op::Conv2d {
            input,
            weight,
            bias,
            geometry: g,
        } => {
            let x = value(*input);
            let wt = value(*weight).data();
            let n = x.batch();
            let co = gout.channels();
            let in_len = g.channels * g.in_h * g.in_w;
            let out_len = co * g.col_cols();
            let mut cols = vec![T::zero(); g.col_rows() * g.col_cols()];
            if let Some(dw) = slot(nodes, grads, *weight) {
                for b in 0..n {
                    im2col(g, &x.data()[b * in_len..(b + 1) * in_len], &mut cols);
                    T::gemm(
                        co,
                        g.col_cols(),
                        g.col_rows(),
                        T::one(),
                        &go[b * out_len..(b + 1) * out_len],
                        false,
                        &cols,
                        true,
                        T::one(),
                        dw.data_mut(),
                    );
                }
            }
            if let Some(dx) = slot(nodes, grads, *input) {
                for b in 0..n {
                    T::gemm(
                        g.col_rows(),
                        co,
                        g.col_cols(),
                        T::one(),
                        wt,
                        true,
                        &go[b * out_len..(b + 1) * out_len],
                        false,
                        T::zero(),
                        &mut cols,
                    );
                    col2im(g, &cols, &mut dx.data_mut()[b * in_len..(b + 1) * in_len]);
                }
            }
            if let Some(db) = bias.and_then(|b| slot(nodes, grads, b)) {
                db.add_assign(&Tensor::from_vec(db.shape(), channel_sums(gout)).unwrap());
            }
        }
        Op::ConvTranspose2d {
            input,
            weight,
            bias,
            geometry: g,
        } => {
            let x = value(*input);
            let wt = value(*weight).data();
            let n = x.batch();
            let ci = x.channels();
            let hw = g.col_cols();
            let in_len = ci * hw;
            let out_len = g.channels * g.in_h * g.in_w;
            let need_w = nodes[weight.0].requires_grad;
            let need_x = nodes[input.0].requires_grad;
            let mut cols = vec![T::zero(); g.col_rows() * hw];
            for b in 0..n {
                if !(need_w || need_x) {
                    break;
                }
                im2col(g, &go[b * out_len..(b + 1) * out_len], &mut cols);
                if let Some(dx) = slot(nodes, grads, *input) {
                    T::gemm(
                        ci,
                        g.col_rows(),
                        hw,
                        T::one(),
                        wt,
                        false,
                        &cols,
                        false,
                        T::one(),
                        &mut dx.data_mut()[b * in_len..(b + 1) * in_len],
                    );
                }
                if let Some(dw) = slot(nodes, grads, *weight) {
                    T::gemm(
                        ci,
                        hw,
                        g.col_rows(),
                        T::one(),
                        &x.data()[b * in_len..(b + 1) * in_len],
                        false,
                        &cols,
                        true,
                        T::one(),
                        dw.data_mut(),
                    );
                }
            }
            if let Some(db) = bias.and_then(|b| slot(nodes, grads, b)) {
                db.add_assign(&Tensor::from_vec(db.shape(), channel_sums(gout)).unwrap());
            }
        }
        Op::Linear {
            input,
            weight,
            bias,
        } => {
            let x = value(*input);
            let w = value(*weight);
            let n = x.batch();
            let out_f = w.batch();
            let in_f = w.channels();
            if let Some(dw) = slot(nodes, grads, *weight) {
                T::gemm(out_f, n, in_f, T::one(), go, true, x.data(), false, T::one(), dw.data_mut());
            }
            if let Some(dx) = slot(nodes, grads, *input) {
                T::gemm(n, out_f, in_f, T::one(), go, false, w.data(), false, T::one(), dx.data_mut());
            }
            if let Some(db) = bias.and_then(|b| slot(nodes, grads, b)) {
                db.add_assign(&Tensor::from_vec(db.shape(), channel_sums(gout)).unwrap());
            }
        }
        Op::LeakyRelu { input, slope } => {
            let x = value(*input).data();
            accumulate_elementwise(nodes, grads, *input, |i| {
                if x[i] > T::zero() {
                    go[i]
                } else {
                    go[i] * *slope
                }
            });
        }
        Op::Tanh { input } => {
            let y = node.value.data();
            accumulate_elementwise(nodes, grads, *input, |i| go[i] * (T::one() - y[i] * y[i]));
        }
        Op::Sigmoid { input } => {
            let y = node.value.data();
            accumulate_elementwise(nodes, grads, *input, |i| go[i] * y[i] * (T::one() - y[i]));
        }
        Op::BatchNorm {
            input,
            gamma,
            beta,
            normalized,
            inv_std,
        } => {
            let [n, c, h, w] = gout.shape();
            let plane = h * w;
            let m = T::from_usize(n * plane).unwrap();
            let gam = value(*gamma).data();
            let mut sum_dy = vec![T::zero(); c];
            let mut sum_dy_xhat = vec![T::zero(); c];
            for b in 0..n {
                for ch in 0..c {
                    let off = (b * c + ch) * plane;
                    for i in off..off + plane {
                        sum_dy[ch] += go[i];
                        sum_dy_xhat[ch] += go[i] * normalized[i];
                    }
                }
            }
            if let Some(dx) = slot(nodes, grads, *input) {
                let d = dx.data_mut();
                for b in 0..n {
                    for ch in 0..c {
                        let off = (b * c + ch) * plane;
                        let k = gam[ch] * inv_std[ch] / m;
                        for i in off..off + plane {
                            d[i] += k * (m * go[i] - sum_dy[ch] - normalized[i] * sum_dy_xhat[ch]);
                        }
                    }
                }
            }
            if let Some(dg) = slot(nodes, grads, *gamma) {
                dg.data_mut().iter_mut().zip(&sum_dy_xhat).for_each(|(a, &s)| *a += s);
            }
            if let Some(db) = slot(nodes, grads, *beta) {
                db.data_mut().iter_mut().zip(&sum_dy).for_each(|(a, &s)| *a += s);
            }
        }
        Op::Dropout { input, mask } => {
            accumulate_elementwise(nodes, grads, *input, |i| go[i] * mask[i]);
        }
        Op::Concat { a, b } => {
            let [n, ca, h, w] = value(*a).shape();
            let cb = value(*b).channels();
            let plane = h * w;
            let ct = ca + cb;
            accumulate_elementwise(nodes, grads, *a, |i| {
                let (bn, rest) = (i / (ca * plane), i % (ca * plane));
                go[bn * ct * plane + rest]
            });
            accumulate_elementwise(nodes, grads, *b, |i| {
                let (bn, rest) = (i / (cb * plane), i % (cb * plane));
                go[bn * ct * plane + ca * plane + rest]
            });
            let _ = n;
        }
        Op::Add { a, b } => {
            accumulate_elementwise(nodes, grads, *a, |i| go[i]);
            accumulate_elementwise(nodes, grads, *b, |i| go[i]);
        }
        Op::Sub { a, b } => {
            accumulate_elementwise(nodes, grads, *a, |i| go[i]);
            accumulate_elementwise(nodes, grads, *b, |i| -go[i]);
        }
        Op::Scale { input, factor } => {
            accumulate_elementwise(nodes, grads, *input, |i| go[i] * *factor);
        }
        Op::Mean { input } => {
            let k = go[0] / len_of(value(*input));
            accumulate_elementwise(nodes, grads, *input, |_| k);
        }
        Op::MeanAbsDiff { a, b } => {
            let k = go[0] / len_of(value(*a));
            let xa = value(*a).data();
            let xb = value(*b).data();
            let sign = |i: usize| {
                let d = xa[i] - xb[i];
                if d > T::zero() {
                    T::one()
                } else if d < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            };
            accumulate_elementwise(nodes, grads, *a, |i| k * sign(i));
            accumulate_elementwise(nodes, grads, *b, |i| -k * sign(i));
        }
        Op::BceWithLogits { logits, target } => {
            let x = value(*logits).data();
            let k = go[0] / len_of(value(*logits));
            accumulate_elementwise(nodes, grads, *logits, |i| k * (sigmoid(x[i]) - *target));
        }
        Op::WeightedSum { input, weights } => {
            let wd = weights.data();
            accumulate_elementwise(nodes, grads, *input, |i| go[0] * wd[i]);
        }
    }
}
