//! Reverse-mode automatic differentiation over a flat tape.
//!
//! The tape records the operators the steering networks need — valid-padding
//! cross-correlation, fully-connected, unidirectional RNN with ReLU on the
//! recurrent path, ReLU, softmax, cross-entropy and half-squared-L2 — and
//! nothing else. Nodes are appended in topological order, so backward is a
//! single reverse walk.

use crate::error::{Error, Result};
use crate::kernels;
use crate::real::Real;
use crate::tensor::Tensor;

pub type NodeId = usize;

#[derive(Debug)]
enum Op<T: Real> {
    Leaf,
    Conv2d {
        input: NodeId,
        kernels: NodeId,
        bias: NodeId,
        stride: usize,
    },
    FullyConnected {
        input: NodeId,
        w: NodeId,
        b: NodeId,
    },
    RnnSequence {
        inputs: Vec<NodeId>,
        wx: NodeId,
        wh: NodeId,
        b: NodeId,
        /// h_1..h_L saved for backpropagation through time.
        hiddens: Vec<Vec<T>>,
        h0: Vec<T>,
    },
    Relu {
        input: NodeId,
    },
    Softmax {
        input: NodeId,
    },
    CrossEntropy {
        probs: NodeId,
        label: usize,
    },
    HalfL2 {
        pred: NodeId,
        target: NodeId,
    },
    Flatten {
        input: NodeId,
    },
    Concat {
        a: NodeId,
        b: NodeId,
    },
    Add {
        a: NodeId,
        b: NodeId,
    },
    Scale {
        input: NodeId,
        factor: T,
    },
}

struct Node<T: Real> {
    value: Tensor<T>,
    op: Op<T>,
    /// True when this node is a `requires_grad` leaf or depends on one.
    needs_grad: bool,
}

/// Records a forward pass; consumed by a single `backward` call.
pub struct ComputeGraph<T: Real> {
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Vec<T>>>,
    consumed: bool,
}

impl<T: Real> Default for ComputeGraph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> ComputeGraph<T> {
    pub fn new() -> Self {
        ComputeGraph {
            nodes: Vec::new(),
            grads: Vec::new(),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id].value
    }

    /// Gradient of the loss w.r.t. node `id`, if backward has populated it.
    pub fn grad(&self, id: NodeId) -> Option<&[T]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, needs_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        self.nodes.len() - 1
    }

    fn needs(&self, id: NodeId) -> bool {
        self.nodes[id].needs_grad
    }

    /// Insert a leaf tensor. `requires_grad` marks trainable parameters.
    pub fn leaf(&mut self, mut tensor: Tensor<T>, requires_grad: bool) -> NodeId {
        tensor.requires_grad = requires_grad;
        self.push(tensor, Op::Leaf, requires_grad)
    }

    pub fn conv2d(
        &mut self,
        input: NodeId,
        kernels: NodeId,
        bias: NodeId,
        stride: usize,
    ) -> Result<NodeId> {
        if stride < 1 {
            return Err(Error::parameter("conv2d stride must be >= 1"));
        }
        let xs = self.nodes[input].value.shape();
        let ks = self.nodes[kernels].value.shape();
        let bs = self.nodes[bias].value.shape();
        if xs.len() != 3 || ks.len() != 4 {
            return Err(Error::dimension(format!(
                "conv2d expects input [C,H,W] and kernels [D,C,k,k], got {:?} and {:?}",
                xs, ks
            )));
        }
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let (d, kc, km, kn) = (ks[0], ks[1], ks[2], ks[3]);
        if kc != c {
            return Err(Error::dimension(format!(
                "conv2d channel mismatch: input has {}, kernels expect {}",
                c, kc
            )));
        }
        if km != kn {
            return Err(Error::dimension("conv2d kernels must be square"));
        }
        if km > h || km > w {
            return Err(Error::dimension(format!(
                "conv2d kernel {} exceeds input {}x{}",
                km, h, w
            )));
        }
        if bs != [d] {
            return Err(Error::dimension(format!(
                "conv2d bias shape {:?}, expected [{}]",
                bs, d
            )));
        }
        let oh = kernels::conv_out_extent(h, km, stride);
        let ow = kernels::conv_out_extent(w, km, stride);
        let mut out = Tensor::zeros(vec![d, oh, ow]);
        kernels::conv2d_forward(
            self.nodes[input].value.data(),
            self.nodes[kernels].value.data(),
            self.nodes[bias].value.data(),
            c,
            h,
            w,
            d,
            km,
            stride,
            out.data_mut(),
        );
        let needs = self.needs(input) || self.needs(kernels) || self.needs(bias);
        Ok(self.push(
            out,
            Op::Conv2d {
                input,
                kernels,
                bias,
                stride,
            },
            needs,
        ))
    }

    pub fn fully_connected(&mut self, input: NodeId, w: NodeId, b: NodeId) -> Result<NodeId> {
        let xs = self.nodes[input].value.shape();
        let ws = self.nodes[w].value.shape();
        let bs = self.nodes[b].value.shape();
        if xs.len() != 1 || ws.len() != 2 {
            return Err(Error::dimension(format!(
                "fully_connected expects input [N] and W [M,N], got {:?} and {:?}",
                xs, ws
            )));
        }
        let (m, n) = (ws[0], ws[1]);
        if xs[0] != n || bs != [m] {
            return Err(Error::dimension(format!(
                "fully_connected shapes do not conform: x {:?}, W {:?}, b {:?}",
                xs, ws, bs
            )));
        }
        let mut out = Tensor::zeros(vec![m]);
        kernels::fc_forward(
            self.nodes[input].value.data(),
            self.nodes[w].value.data(),
            self.nodes[b].value.data(),
            m,
            n,
            out.data_mut(),
        );
        let needs = self.needs(input) || self.needs(w) || self.needs(b);
        Ok(self.push(out, Op::FullyConnected { input, w, b }, needs))
    }

    /// Unidirectional recurrence h_t = Wx·x_t + Whᵀ·relu(h_{t−1}) + b over
    /// the whole window; returns the final hidden state h_L.
    pub fn rnn_sequence(
        &mut self,
        inputs: &[NodeId],
        wx: NodeId,
        wh: NodeId,
        b: NodeId,
        h0: Option<Vec<T>>,
    ) -> Result<NodeId> {
        if inputs.is_empty() {
            return Err(Error::parameter("rnn_sequence needs at least one input"));
        }
        let ws = self.nodes[wx].value.shape();
        if ws.len() != 2 {
            return Err(Error::dimension("rnn Wx must be [M,N]"));
        }
        let (m, n) = (ws[0], ws[1]);
        if self.nodes[wh].value.shape() != [m, m] {
            return Err(Error::dimension(format!(
                "rnn Wh shape {:?}, expected [{m},{m}]",
                self.nodes[wh].value.shape()
            )));
        }
        if self.nodes[b].value.shape() != [m] {
            return Err(Error::dimension("rnn bias shape mismatch"));
        }
        for &id in inputs {
            if self.nodes[id].value.shape() != [n] {
                return Err(Error::dimension(format!(
                    "rnn input shape {:?}, expected [{n}]",
                    self.nodes[id].value.shape()
                )));
            }
        }
        let h0 = h0.unwrap_or_else(|| vec![T::ZERO; m]);
        if h0.len() != m {
            return Err(Error::dimension("rnn h0 length mismatch"));
        }

        let mut hiddens: Vec<Vec<T>> = Vec::with_capacity(inputs.len());
        let mut u = vec![T::ZERO; m];
        let mut h_prev = h0.clone();
        for &id in inputs {
            // u = Wx·x (bias is added inside the step)
            kernels::matvec(
                self.nodes[wx].value.data(),
                self.nodes[id].value.data(),
                m,
                n,
                &mut u,
            );
            let mut h = vec![T::ZERO; m];
            kernels::rnn_step(
                &u,
                self.nodes[wh].value.data(),
                self.nodes[b].value.data(),
                &h_prev,
                m,
                &mut h,
            );
            h_prev.clone_from(&h);
            hiddens.push(h);
        }

        let value = Tensor::new(vec![m], hiddens.last().unwrap().clone())?;
        let needs = self.needs(wx)
            || self.needs(wh)
            || self.needs(b)
            || inputs.iter().any(|&id| self.needs(id));
        Ok(self.push(
            value,
            Op::RnnSequence {
                inputs: inputs.to_vec(),
                wx,
                wh,
                b,
                hiddens,
                h0,
            },
            needs,
        ))
    }

    pub fn relu(&mut self, input: NodeId) -> NodeId {
        let x = &self.nodes[input].value;
        let mut out = Tensor::zeros(x.shape().to_vec());
        kernels::relu_forward(x.data(), out.data_mut());
        let needs = self.needs(input);
        self.push(out, Op::Relu { input }, needs)
    }

    pub fn softmax(&mut self, input: NodeId) -> Result<NodeId> {
        let x = &self.nodes[input].value;
        if x.shape().len() != 1 {
            return Err(Error::dimension("softmax expects a vector"));
        }
        let mut out = Tensor::zeros(x.shape().to_vec());
        kernels::softmax(x.data(), out.data_mut());
        let needs = self.needs(input);
        Ok(self.push(out, Op::Softmax { input }, needs))
    }

    pub fn cross_entropy(&mut self, probs: NodeId, label: usize) -> Result<NodeId> {
        let p = &self.nodes[probs].value;
        if label >= p.numel() {
            return Err(Error::parameter(format!(
                "label {} out of range for {} classes",
                label,
                p.numel()
            )));
        }
        let loss = kernels::cross_entropy(p.data(), label);
        let needs = self.needs(probs);
        Ok(self.push(Tensor::scalar(loss), Op::CrossEntropy { probs, label }, needs))
    }

    pub fn half_l2(&mut self, pred: NodeId, target: NodeId) -> Result<NodeId> {
        let p = &self.nodes[pred].value;
        let t = &self.nodes[target].value;
        if p.shape() != t.shape() {
            return Err(Error::dimension(format!(
                "half_l2 shapes differ: {:?} vs {:?}",
                p.shape(),
                t.shape()
            )));
        }
        let loss = kernels::half_l2(p.data(), t.data());
        let needs = self.needs(pred) || self.needs(target);
        Ok(self.push(Tensor::scalar(loss), Op::HalfL2 { pred, target }, needs))
    }

    pub fn flatten(&mut self, input: NodeId) -> NodeId {
        let x = &self.nodes[input].value;
        let out = Tensor::new(vec![x.numel()], x.data().to_vec()).expect("flatten");
        let needs = self.needs(input);
        self.push(out, Op::Flatten { input }, needs)
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        if va.shape().len() != 1 || vb.shape().len() != 1 {
            return Err(Error::dimension("concat expects vectors"));
        }
        let mut data = va.data().to_vec();
        data.extend_from_slice(vb.data());
        let out = Tensor::vector(data);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Concat { a, b }, needs))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (va, vb) = (&self.nodes[a].value, &self.nodes[b].value);
        if va.shape() != vb.shape() {
            return Err(Error::dimension("add shapes differ"));
        }
        let data = va
            .data()
            .iter()
            .zip(vb.data())
            .map(|(&x, &y)| x + y)
            .collect();
        let out = Tensor::new(va.shape().to_vec(), data)?;
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add { a, b }, needs))
    }

    pub fn scale(&mut self, input: NodeId, factor: T) -> NodeId {
        let x = &self.nodes[input].value;
        let data = x.data().iter().map(|&v| v * factor).collect();
        let out = Tensor::new(x.shape().to_vec(), data).expect("scale");
        let needs = self.needs(input);
        self.push(out, Op::Scale { input, factor }, needs)
    }

    fn grad_buf(&mut self, id: NodeId) -> &mut Vec<T> {
        let numel = self.nodes[id].value.numel();
        self.grads[id].get_or_insert_with(|| vec![T::ZERO; numel])
    }

    /// Reverse pass from a scalar loss node. Populates gradients for every
    /// node the loss depends on. A graph can be walked backward once;
    /// a second call is an error rather than silent accumulation.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.consumed {
            return Err(Error::State(
                "backward already called on this graph".into(),
            ));
        }
        if !self.nodes[loss].value.is_scalar() {
            return Err(Error::parameter(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[loss].value.shape()
            )));
        }
        self.consumed = true;
        self.grads = (0..self.nodes.len()).map(|_| None).collect();
        self.grads[loss] = Some(vec![T::ONE]);

        for id in (0..=loss).rev() {
            if self.grads[id].is_none() || !self.nodes[id].needs_grad {
                continue;
            }
            let gout = self.grads[id].take().unwrap();
            self.backprop_node(id, &gout);
            self.grads[id] = Some(gout);
        }
        Ok(())
    }

    fn backprop_node(&mut self, id: NodeId, gout: &[T]) {
        // Take the op out of the node so gradient buffers can be borrowed
        // mutably while input values are read; restored before returning.
        let op = std::mem::replace(&mut self.nodes[id].op, Op::Leaf);
        match &op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                kernels: kern,
                bias,
                stride,
            } => {
                let (input, kern_id, bias, stride) = (*input, *kern, *bias, *stride);
                let xs = self.nodes[input].value.shape().to_vec();
                let ks = self.nodes[kern_id].value.shape().to_vec();
                let (c, h, w) = (xs[0], xs[1], xs[2]);
                let (d, k) = (ks[0], ks[2]);

                // Skip the input-gradient matmuls when the input is a frame
                // leaf; that is a third of the backward cost of first layers.
                let want_dinput = self.needs(input);
                let mut dinput = vec![T::ZERO; if want_dinput { c * h * w } else { 0 }];
                let mut dkern = vec![T::ZERO; self.nodes[kern_id].value.numel()];
                let mut dbias = vec![T::ZERO; d];
                kernels::conv2d_backward(
                    self.nodes[input].value.data(),
                    self.nodes[kern_id].value.data(),
                    c,
                    h,
                    w,
                    d,
                    k,
                    stride,
                    gout,
                    want_dinput.then_some(&mut dinput),
                    &mut dkern,
                    &mut dbias,
                );
                if want_dinput {
                    kernels::axpy(T::ONE, &dinput, self.grad_buf(input));
                }
                if self.needs(kern_id) {
                    kernels::axpy(T::ONE, &dkern, self.grad_buf(kern_id));
                }
                if self.needs(bias) {
                    kernels::axpy(T::ONE, &dbias, self.grad_buf(bias));
                }
            }
            Op::FullyConnected { input, w, b } => {
                let (input, w_id, b_id) = (*input, *w, *b);
                let ws = self.nodes[w_id].value.shape().to_vec();
                let (m, n) = (ws[0], ws[1]);
                let mut dx = vec![T::ZERO; n];
                let mut dw = vec![T::ZERO; m * n];
                let mut db = vec![T::ZERO; m];
                kernels::fc_backward(
                    self.nodes[input].value.data(),
                    self.nodes[w_id].value.data(),
                    m,
                    n,
                    gout,
                    &mut dx,
                    &mut dw,
                    &mut db,
                );
                if self.needs(input) {
                    kernels::axpy(T::ONE, &dx, self.grad_buf(input));
                }
                if self.needs(w_id) {
                    kernels::axpy(T::ONE, &dw, self.grad_buf(w_id));
                }
                if self.needs(b_id) {
                    kernels::axpy(T::ONE, &db, self.grad_buf(b_id));
                }
            }
            Op::RnnSequence {
                inputs,
                wx,
                wh,
                b,
                hiddens,
                h0,
            } => {
                let (wx_id, wh_id, b_id) = (*wx, *wh, *b);
                let steps = inputs.len();
                let ws = self.nodes[wx_id].value.shape().to_vec();
                let (m, n) = (ws[0], ws[1]);

                // Backpropagation through time over the full window.
                let mut dwx = vec![T::ZERO; m * n];
                let mut dwh = vec![T::ZERO; m * m];
                let mut db = vec![T::ZERO; m];
                let mut dxs: Vec<Option<Vec<T>>> = inputs
                    .iter()
                    .map(|&id| self.needs(id).then(|| vec![T::ZERO; n]))
                    .collect();

                {
                    let wx_data = self.nodes[wx_id].value.data();
                    let wh_data = self.nodes[wh_id].value.data();
                    let mut dh = gout.to_vec();
                    for t in (0..steps).rev() {
                        let h_prev: &[T] = if t == 0 { h0 } else { &hiddens[t - 1] };
                        let x = self.nodes[inputs[t]].value.data();

                        for i in 0..m {
                            let g = dh[i];
                            if g != T::ZERO {
                                db[i] += g;
                                kernels::axpy(g, x, &mut dwx[i * n..(i + 1) * n]);
                            }
                        }
                        if let Some(dx) = dxs[t].as_mut() {
                            for i in 0..m {
                                kernels::axpy(dh[i], &wx_data[i * n..(i + 1) * n], dx);
                            }
                        }
                        // h_t = u_t + Whᵀ·s + b with s = relu(h_{t−1}):
                        //   dWh[j,i] += s[j]·dh[i];  ds[j] = Σ_i Wh[j,i]·dh[i]
                        let mut dh_prev = vec![T::ZERO; m];
                        for j in 0..m {
                            let s = if h_prev[j] > T::ZERO { h_prev[j] } else { T::ZERO };
                            let wh_row = &wh_data[j * m..(j + 1) * m];
                            if s != T::ZERO {
                                kernels::axpy(s, &dh, &mut dwh[j * m..(j + 1) * m]);
                            }
                            if h_prev[j] > T::ZERO {
                                let mut acc = T::ZERO;
                                for (&wv, &g) in wh_row.iter().zip(&dh) {
                                    acc += wv * g;
                                }
                                dh_prev[j] = acc;
                            }
                        }
                        dh = dh_prev;
                    }
                }

                if self.needs(wx_id) {
                    kernels::axpy(T::ONE, &dwx, self.grad_buf(wx_id));
                }
                if self.needs(wh_id) {
                    kernels::axpy(T::ONE, &dwh, self.grad_buf(wh_id));
                }
                if self.needs(b_id) {
                    kernels::axpy(T::ONE, &db, self.grad_buf(b_id));
                }
                for (t, dx) in dxs.iter_mut().enumerate() {
                    if let Some(dx) = dx.take() {
                        kernels::axpy(T::ONE, &dx, self.grad_buf(inputs[t]));
                    }
                }
            }
            Op::Relu { input } => {
                let input = *input;
                if self.needs(input) {
                    let mut dx = vec![T::ZERO; self.nodes[input].value.numel()];
                    kernels::relu_backward(self.nodes[input].value.data(), gout, &mut dx);
                    kernels::axpy(T::ONE, &dx, self.grad_buf(input));
                }
            }
            Op::Softmax { input } => {
                let input = *input;
                if self.needs(input) {
                    let mut dx = vec![T::ZERO; self.nodes[id].value.numel()];
                    kernels::softmax_backward(self.nodes[id].value.data(), gout, &mut dx);
                    kernels::axpy(T::ONE, &dx, self.grad_buf(input));
                }
            }
            Op::CrossEntropy { probs, label } => {
                let (probs, label) = (*probs, *label);
                if self.needs(probs) {
                    let mut dp = vec![T::ZERO; self.nodes[probs].value.numel()];
                    kernels::cross_entropy_backward(
                        self.nodes[probs].value.data(),
                        label,
                        gout[0],
                        &mut dp,
                    );
                    kernels::axpy(T::ONE, &dp, self.grad_buf(probs));
                }
            }
            Op::HalfL2 { pred, target } => {
                let (pred, target) = (*pred, *target);
                if self.needs(pred) {
                    let mut dp = vec![T::ZERO; self.nodes[pred].value.numel()];
                    kernels::half_l2_backward(
                        self.nodes[pred].value.data(),
                        self.nodes[target].value.data(),
                        gout[0],
                        &mut dp,
                    );
                    kernels::axpy(T::ONE, &dp, self.grad_buf(pred));
                }
                if self.needs(target) {
                    // d/dtarget = −(pred − target)
                    let mut dt = vec![T::ZERO; self.nodes[target].value.numel()];
                    kernels::half_l2_backward(
                        self.nodes[target].value.data(),
                        self.nodes[pred].value.data(),
                        gout[0],
                        &mut dt,
                    );
                    kernels::axpy(T::ONE, &dt, self.grad_buf(target));
                }
            }
            Op::Flatten { input } => {
                let input = *input;
                if self.needs(input) {
                    kernels::axpy(T::ONE, gout, self.grad_buf(input));
                }
            }
            Op::Concat { a, b } => {
                let (a, b) = (*a, *b);
                let na = self.nodes[a].value.numel();
                if self.needs(a) {
                    kernels::axpy(T::ONE, &gout[..na], self.grad_buf(a));
                }
                if self.needs(b) {
                    kernels::axpy(T::ONE, &gout[na..], self.grad_buf(b));
                }
            }
            Op::Add { a, b } => {
                let (a, b) = (*a, *b);
                if self.needs(a) {
                    kernels::axpy(T::ONE, gout, self.grad_buf(a));
                }
                if self.needs(b) {
                    kernels::axpy(T::ONE, gout, self.grad_buf(b));
                }
            }
            Op::Scale { input, factor } => {
                let (input, factor) = (*input, *factor);
                if self.needs(input) {
                    kernels::axpy(factor, gout, self.grad_buf(input));
                }
            }
        }
        self.nodes[id].op = op;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t64(shape: Vec<usize>, data: Vec<f64>) -> Tensor<f64> {
        Tensor::new(shape, data).unwrap()
    }

    #[test]
    fn conv2d_known_2x2_kernel() {
        // 3x3 ramp, all-ones 2x2 kernel -> window sums
        let mut g = ComputeGraph::<f64>::new();
        let x = g.leaf(
            t64(vec![1, 3, 3], vec![1., 2., 3., 4., 5., 6., 7., 8., 9.]),
            false,
        );
        let k = g.leaf(t64(vec![1, 1, 2, 2], vec![1.0; 4]), false);
        let b = g.leaf(t64(vec![1], vec![0.0]), false);
        let y = g.conv2d(x, k, b, 1).unwrap();
        assert_eq!(g.value(y).shape(), &[1, 2, 2]);
        assert_eq!(g.value(y).data(), &[12.0, 16.0, 24.0, 28.0]);
    }

    #[test]
    fn conv2d_identity_kernel() {
        let mut g = ComputeGraph::<f64>::new();
        let data: Vec<f64> = (0..12).map(|i| i as f64 - 3.0).collect();
        let x = g.leaf(t64(vec![1, 3, 4], data.clone()), false);
        let k = g.leaf(t64(vec![1, 1, 1, 1], vec![1.0]), false);
        let b = g.leaf(t64(vec![1], vec![0.0]), false);
        let y = g.conv2d(x, k, b, 1).unwrap();
        assert_eq!(g.value(y).data(), &data[..]);
    }

    #[test]
    fn conv2d_output_shape_at_desk_resolution() {
        let mut g = ComputeGraph::<f64>::new();
        let x = g.leaf(Tensor::zeros(vec![6, 94, 168]), false);
        let k = g.leaf(Tensor::zeros(vec![24, 6, 5, 5]), false);
        let b = g.leaf(Tensor::zeros(vec![24]), false);
        let y = g.conv2d(x, k, b, 2).unwrap();
        assert_eq!(g.value(y).shape(), &[24, 45, 82]);
    }

    #[test]
    fn conv2d_rejects_bad_shapes_and_stride() {
        let mut g = ComputeGraph::<f64>::new();
        let x = g.leaf(Tensor::zeros(vec![2, 4, 4]), false);
        let k = g.leaf(Tensor::zeros(vec![3, 1, 2, 2]), false); // wrong channels
        let b = g.leaf(Tensor::zeros(vec![3]), false);
        assert!(matches!(g.conv2d(x, k, b, 1), Err(Error::Dimension(_))));

        let k2 = g.leaf(Tensor::zeros(vec![3, 2, 2, 2]), false);
        assert!(matches!(g.conv2d(x, k2, b, 0), Err(Error::Parameter(_))));
    }

    #[test]
    fn fully_connected_identity_and_affine() {
        let mut g = ComputeGraph::<f64>::new();
        let x = g.leaf(t64(vec![2], vec![3.0, -1.0]), false);
        let w = g.leaf(t64(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]), false);
        let b = g.leaf(t64(vec![2], vec![0.0, 0.0]), false);
        let y = g.fully_connected(x, w, b).unwrap();
        assert_eq!(g.value(y).data(), &[3.0, -1.0]);

        let x2 = g.leaf(t64(vec![2], vec![1.0, 1.0]), false);
        let w2 = g.leaf(t64(vec![2, 2], vec![1.0, 2.0, 0.0, 1.0]), false);
        let b2 = g.leaf(t64(vec![2], vec![1.0, 1.0]), false);
        let y2 = g.fully_connected(x2, w2, b2).unwrap();
        assert_eq!(g.value(y2).data(), &[4.0, 2.0]);
    }

    #[test]
    fn rnn_zero_recurrent_weights_reduce_to_fc() {
        let mut g = ComputeGraph::<f64>::new();
        let xs: Vec<NodeId> = [[0.5, 1.0], [-1.0, 2.0], [3.0, -0.5]]
            .iter()
            .map(|v| g.leaf(t64(vec![2], v.to_vec()), false))
            .collect();
        let wx = g.leaf(t64(vec![2, 2], vec![1.0, 2.0, -1.0, 0.5]), false);
        let wh = g.leaf(Tensor::zeros(vec![2, 2]), false);
        let b = g.leaf(t64(vec![2], vec![0.1, -0.2]), false);
        let h = g.rnn_sequence(&xs, wx, wh, b, None).unwrap();

        // With Wh = 0, h_L = Wx·x_L + b exactly.
        let x_last = [3.0, -0.5];
        let expect = [
            1.0 * x_last[0] + 2.0 * x_last[1] + 0.1,
            -1.0 * x_last[0] + 0.5 * x_last[1] - 0.2,
        ];
        assert_eq!(g.value(h).data(), &expect);
    }

    #[test]
    fn rnn_zero_inputs_propagate_zero() {
        let mut g = ComputeGraph::<f64>::new();
        let xs: Vec<NodeId> = (0..4).map(|_| g.leaf(Tensor::zeros(vec![3]), false)).collect();
        let wx = g.leaf(Tensor::filled(vec![2, 3], 0.7), false);
        let wh = g.leaf(Tensor::filled(vec![2, 2], 0.3), false);
        let b = g.leaf(Tensor::zeros(vec![2]), false);
        let h = g.rnn_sequence(&xs, wx, wh, b, None).unwrap();
        assert_eq!(g.value(h).data(), &[0.0, 0.0]);
    }

    #[test]
    fn rnn_scalar_counts_up() {
        // M=N=1, W=1, Wh=1, b=0, h0=0, inputs (1,1,1): h = 1, 2, 3
        let mut g = ComputeGraph::<f64>::new();
        let xs: Vec<NodeId> = (0..3)
            .map(|_| g.leaf(t64(vec![1], vec![1.0]), false))
            .collect();
        let wx = g.leaf(t64(vec![1, 1], vec![1.0]), false);
        let wh = g.leaf(t64(vec![1, 1], vec![1.0]), false);
        let b = g.leaf(t64(vec![1], vec![0.0]), false);
        let h = g.rnn_sequence(&xs, wx, wh, b, None).unwrap();
        assert_eq!(g.value(h).data(), &[3.0]);
    }

    #[test]
    fn rnn_rejects_empty_sequence() {
        let mut g = ComputeGraph::<f64>::new();
        let wx = g.leaf(Tensor::zeros(vec![2, 2]), false);
        let wh = g.leaf(Tensor::zeros(vec![2, 2]), false);
        let b = g.leaf(Tensor::zeros(vec![2]), false);
        assert!(matches!(
            g.rnn_sequence(&[], wx, wh, b, None),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn relu_clamps_negatives() {
        let mut g = ComputeGraph::<f64>::new();
        let x = g.leaf(t64(vec![3], vec![-1.0, 0.0, 2.0]), false);
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);

        let nonneg = g.leaf(t64(vec![3], vec![0.5, 0.0, 7.0]), false);
        let y2 = g.relu(nonneg);
        assert_eq!(g.value(y2).data(), g.value(nonneg).data());
    }

    #[test]
    fn softmax_analytic_cases() {
        let mut g = ComputeGraph::<f64>::new();
        let x = g.leaf(t64(vec![2], vec![0.0, (2.0f64).ln()]), false);
        let p = g.softmax(x).unwrap();
        let d = g.value(p).data();
        assert!((d[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((d[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_shift_invariance() {
        let logits = vec![0.3, -1.2, 4.0, 0.0, 2.2];
        let mut g = ComputeGraph::<f64>::new();
        let a = g.leaf(t64(vec![5], logits.clone()), false);
        let pa = g.softmax(a).unwrap();
        let shifted: Vec<f64> = logits.iter().map(|v| v + 1000.0).collect();
        let b = g.leaf(t64(vec![5], shifted), false);
        let pb = g.softmax(b).unwrap();
        for (x, y) in g.value(pa).data().iter().zip(g.value(pb).data()) {
            assert!((x - y).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_analytic_cases() {
        let mut g = ComputeGraph::<f64>::new();
        let perfect = g.leaf(t64(vec![3], vec![0.0, 1.0, 0.0]), false);
        let l = g.cross_entropy(perfect, 1).unwrap();
        assert_eq!(g.value(l).data(), &[0.0]);

        let uniform = g.leaf(t64(vec![5], vec![0.2; 5]), false);
        let l2 = g.cross_entropy(uniform, 3).unwrap();
        assert!((g.value(l2).item().unwrap() - 5.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn half_l2_analytic_cases() {
        let mut g = ComputeGraph::<f64>::new();
        let p = g.leaf(t64(vec![2], vec![3.0, 4.0]), false);
        let same = g.leaf(t64(vec![2], vec![3.0, 4.0]), false);
        let zero = g.half_l2(p, same).unwrap();
        assert_eq!(g.value(zero).data(), &[0.0]);

        let t = g.leaf(t64(vec![2], vec![2.0, 2.0]), false);
        let loss = g.half_l2(p, t).unwrap();
        // residual (1,2) -> 0.5·(1+4) = 2.5
        assert_eq!(g.value(loss).data(), &[2.5]);

        let bad = g.leaf(Tensor::zeros(vec![3]), false);
        assert!(g.half_l2(p, bad).is_err());
    }

    #[test]
    fn backward_rejects_nonscalar_and_double_call() {
        let mut g = ComputeGraph::<f64>::new();
        let x = g.leaf(t64(vec![2], vec![1.0, 2.0]), true);
        let y = g.relu(x);
        assert!(matches!(g.backward(y), Err(Error::Parameter(_))));

        let w = g.leaf(t64(vec![1, 2], vec![1.0, 1.0]), true);
        let b = g.leaf(t64(vec![1], vec![0.0]), true);
        let out = g.fully_connected(x, w, b).unwrap();
        let t = g.leaf(t64(vec![1], vec![0.0]), false);
        let loss = g.half_l2(out, t).unwrap();
        g.backward(loss).unwrap();
        assert!(matches!(g.backward(loss), Err(Error::State(_))));
    }

    #[test]
    fn backward_on_constant_loss_leaves_grads_zero() {
        let mut g = ComputeGraph::<f64>::new();
        let w = g.leaf(t64(vec![2], vec![1.0, 2.0]), true);
        let c = g.leaf(Tensor::scalar(5.0), false);
        let loss = g.scale(c, 2.0);
        g.backward(loss).unwrap();
        assert!(g.grad(w).is_none());
        let _ = w;
    }

    #[test]
    fn relu_gradient_is_step_function() {
        let mut g = ComputeGraph::<f64>::new();
        let x = g.leaf(t64(vec![2], vec![-1.0, 2.0]), true);
        let y = g.relu(x);
        // loss = sum(relu(x)) via fc with ones weight
        let w = g.leaf(t64(vec![1, 2], vec![1.0, 1.0]), false);
        let b = g.leaf(t64(vec![1], vec![0.0]), false);
        let s = g.fully_connected(y, w, b).unwrap();
        let t = g.leaf(t64(vec![1], vec![0.0]), false);
        // loss = ½(s−0)²; ds = s = 2. Scale so dL/ds = 1: use s directly.
        let _ = t;
        g.backward(s).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[0.0, 1.0]);
    }

    #[test]
    fn softmax_cross_entropy_grad_is_p_minus_y() {
        let logits = vec![0.4, -0.3, 1.2, 0.0, -2.0];
        let label = 2usize;
        let mut g = ComputeGraph::<f64>::new();
        let x = g.leaf(t64(vec![5], logits.clone()), true);
        let p = g.softmax(x).unwrap();
        let loss = g.cross_entropy(p, label).unwrap();
        let probs = g.value(p).data().to_vec();
        g.backward(loss).unwrap();
        let grad = g.grad(x).unwrap();
        for i in 0..5 {
            let y = if i == label { 1.0 } else { 0.0 };
            assert!(
                (grad[i] - (probs[i] - y)).abs() < 1e-10,
                "grad[{i}] = {}, p - y = {}",
                grad[i],
                probs[i] - y
            );
        }
    }

    #[test]
    fn half_l2_grad_is_residual() {
        let mut g = ComputeGraph::<f64>::new();
        let p = g.leaf(t64(vec![3], vec![1.0, -2.0, 0.5]), true);
        let t = g.leaf(t64(vec![3], vec![0.0, 1.0, 0.5]), false);
        let loss = g.half_l2(p, t).unwrap();
        g.backward(loss).unwrap();
        assert_eq!(g.grad(p).unwrap(), &[1.0, -3.0, 0.0]);
    }

    #[test]
    fn forward_is_deterministic() {
        let run = || {
            let mut g = ComputeGraph::<f64>::new();
            let x = g.leaf(t64(vec![4], vec![0.1, 0.9, -0.4, 0.7]), false);
            let w = g.leaf(
                t64(vec![3, 4], (0..12).map(|i| (i as f64).cos()).collect()),
                false,
            );
            let b = g.leaf(t64(vec![3], vec![0.01, 0.02, 0.03]), false);
            let y = g.fully_connected(x, w, b).unwrap();
            let r = g.relu(y);
            g.value(r).data().to_vec()
        };
        let a = run();
        let b = run();
        assert_eq!(a, b, "identical weights and input must be bit-identical");
    }
}
