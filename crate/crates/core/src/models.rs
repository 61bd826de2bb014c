//! Declarative model specs for the master classifier (MCN), the five
//! task-specialized regression networks (SRNs) and the single-model
//! baseline, plus construction, parameter init and forward passes.

use crate::autodiff::{ComputeGraph, NodeId};
use crate::error::{Error, Result};
use crate::kernels;
use crate::real::Real;
use crate::rng::{ContentHasher, SeedSplitter};
use crate::tensor::Tensor;

/// One layer of a model stack. `Split` evaluates both branches on the same
/// input and concatenates their outputs (the chicane model's two-scale path).
#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    Conv { depth: usize, k: usize, stride: usize },
    Relu,
    Flatten,
    Rnn { hidden: usize, seq_len: usize },
    Fc { out: usize },
    Split { a: Vec<Layer>, b: Vec<Layer> },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Classifier,
    Regressor,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub name: String,
    pub kind: ModelKind,
    pub layers: Vec<Layer>,
    /// `[6, H, W]`: stereo pair concatenated into a six-channel frame.
    pub input_shape: [usize; 3],
    pub output_dim: usize,
}

pub const ZONE_COUNT: usize = 5;

/// Steering command range endpoints.
pub const STEERING_MIN: f32 = -100.0;
pub const STEERING_MAX: f32 = 100.0;

impl ModelSpec {
    /// Longest RNN window in the stack; 0 for feed-forward models.
    pub fn seq_len(&self) -> usize {
        fn walk(layers: &[Layer]) -> usize {
            layers
                .iter()
                .map(|l| match l {
                    Layer::Rnn { seq_len, .. } => *seq_len,
                    Layer::Split { a, b } => walk(a).max(walk(b)),
                    _ => 0,
                })
                .max()
                .unwrap_or(0)
        }
        walk(&self.layers)
    }

    pub fn is_recurrent(&self) -> bool {
        self.seq_len() > 0
    }

    pub fn rnn_count(&self) -> usize {
        fn walk(layers: &[Layer]) -> usize {
            layers
                .iter()
                .map(|l| match l {
                    Layer::Rnn { .. } => 1,
                    Layer::Split { a, b } => walk(a) + walk(b),
                    _ => 0,
                })
                .sum()
        }
        walk(&self.layers)
    }

    /// Stable content hash; checkpoints store it so a load under a
    /// mismatched spec fails.
    pub fn content_hash(&self) -> u64 {
        fn hash_layers(h: &mut ContentHasher, layers: &[Layer]) {
            h.update_u64(layers.len() as u64);
            for l in layers {
                match l {
                    Layer::Conv { depth, k, stride } => {
                        h.update_str("conv");
                        h.update_u64(*depth as u64);
                        h.update_u64(*k as u64);
                        h.update_u64(*stride as u64);
                    }
                    Layer::Relu => h.update_str("relu"),
                    Layer::Flatten => h.update_str("flatten"),
                    Layer::Rnn { hidden, seq_len } => {
                        h.update_str("rnn");
                        h.update_u64(*hidden as u64);
                        h.update_u64(*seq_len as u64);
                    }
                    Layer::Fc { out } => {
                        h.update_str("fc");
                        h.update_u64(*out as u64);
                    }
                    Layer::Split { a, b } => {
                        h.update_str("split");
                        hash_layers(h, a);
                        hash_layers(h, b);
                    }
                }
            }
        }
        let mut h = ContentHasher::new();
        h.update_str(&self.name);
        h.update_str(match self.kind {
            ModelKind::Classifier => "classifier",
            ModelKind::Regressor => "regressor",
        });
        for d in self.input_shape {
            h.update_u64(d as u64);
        }
        h.update_u64(self.output_dim as u64);
        hash_layers(&mut h, &self.layers);
        h.finish()
    }
}

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

fn check_input_shape(input_shape: [usize; 3]) -> Result<()> {
    if input_shape[0] != 6 {
        return Err(Error::dimension(format!(
            "models take six-channel stereo frames, got {} channels",
            input_shape[0]
        )));
    }
    Ok(())
}

/// Master classifier: two small convolutions into a five-way logit head.
/// Softmax is applied at the loss / decision boundary, not here.
pub fn build_mcn(input_shape: [usize; 3]) -> Result<ModelSpec> {
    check_input_shape(input_shape)?;
    let spec = ModelSpec {
        name: "mcn".into(),
        kind: ModelKind::Classifier,
        layers: vec![
            Layer::Conv {
                depth: 16,
                k: 5,
                stride: 2,
            },
            Layer::Relu,
            Layer::Conv {
                depth: 24,
                k: 5,
                stride: 2,
            },
            Layer::Relu,
            Layer::Flatten,
            Layer::Fc { out: 5 },
        ],
        input_shape,
        output_dim: 5,
    };
    compile(&spec)?;
    Ok(spec)
}

/// Zone-specialized regression networks.
///
/// Zone 1 (straightaways) is a plain conv + linear head. Zones 2-4 attach a
/// recurrent window (20 / 30 / 35 frames) behind the conv trunk; zone 3 adds
/// a second convolution over the zone-2 trunk, zone 4 uses the deepest first
/// convolution of any model. Zone 5 (chicane) splits the first conv output
/// into a direct recurrent path and a deeper second-conv recurrent path, and
/// merges the two memories through a 100-node layer.
pub fn build_srn(zone: usize, input_shape: [usize; 3]) -> Result<ModelSpec> {
    check_input_shape(input_shape)?;
    let hidden = 64;
    let layers = match zone {
        1 => vec![
            Layer::Conv {
                depth: 16,
                k: 5,
                stride: 2,
            },
            Layer::Relu,
            Layer::Flatten,
            Layer::Fc { out: 1 },
        ],
        2 => vec![
            Layer::Conv {
                depth: 24,
                k: 5,
                stride: 3,
            },
            Layer::Relu,
            Layer::Flatten,
            Layer::Rnn {
                hidden,
                seq_len: 20,
            },
            Layer::Fc { out: 1 },
        ],
        3 => vec![
            Layer::Conv {
                depth: 24,
                k: 5,
                stride: 3,
            },
            Layer::Relu,
            Layer::Conv {
                depth: 32,
                k: 3,
                stride: 2,
            },
            Layer::Relu,
            Layer::Flatten,
            Layer::Rnn {
                hidden,
                seq_len: 30,
            },
            Layer::Fc { out: 1 },
        ],
        4 => vec![
            Layer::Conv {
                depth: 48,
                k: 5,
                stride: 4,
            },
            Layer::Relu,
            Layer::Flatten,
            Layer::Rnn {
                hidden,
                seq_len: 35,
            },
            Layer::Fc { out: 1 },
        ],
        5 => vec![
            Layer::Conv {
                depth: 24,
                k: 5,
                stride: 3,
            },
            Layer::Relu,
            Layer::Split {
                a: vec![
                    Layer::Flatten,
                    Layer::Rnn {
                        hidden,
                        seq_len: 40,
                    },
                ],
                b: vec![
                    Layer::Conv {
                        depth: 36,
                        k: 3,
                        stride: 2,
                    },
                    Layer::Relu,
                    Layer::Flatten,
                    Layer::Rnn {
                        hidden,
                        seq_len: 40,
                    },
                ],
            },
            Layer::Fc { out: 100 },
            Layer::Relu,
            Layer::Fc { out: 1 },
        ],
        z => return Err(Error::parameter(format!("zone must be 1..=5, got {z}"))),
    };
    let spec = ModelSpec {
        name: format!("srn_zone{zone}"),
        kind: ModelKind::Regressor,
        layers,
        input_shape,
        output_dim: 1,
    };
    compile(&spec)?;
    Ok(spec)
}

/// Single-model reference: a feed-forward five-conv / three-FC stack sized
/// for the desk input, trained on the same frames as the MCN but against
/// steering targets.
pub fn build_baseline(input_shape: [usize; 3]) -> Result<ModelSpec> {
    check_input_shape(input_shape)?;
    let conv = |depth, k, stride| Layer::Conv { depth, k, stride };
    let spec = ModelSpec {
        name: "baseline".into(),
        kind: ModelKind::Regressor,
        layers: vec![
            conv(24, 5, 2),
            Layer::Relu,
            conv(36, 5, 2),
            Layer::Relu,
            conv(48, 3, 1),
            Layer::Relu,
            conv(64, 3, 1),
            Layer::Relu,
            conv(64, 3, 1),
            Layer::Relu,
            Layer::Flatten,
            Layer::Fc { out: 500 },
            Layer::Relu,
            Layer::Fc { out: 100 },
            Layer::Relu,
            Layer::Fc { out: 1 },
        ],
        input_shape,
        output_dim: 1,
    };
    compile(&spec)?;
    Ok(spec)
}

// ---------------------------------------------------------------------------
// Compilation: shape checking, parameter layout, trunk/path/head split
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct ParamDef {
    pub name: String,
    pub shape: Vec<usize>,
    /// Fan-in used for init scaling.
    pub fan_in: usize,
    pub is_bias: bool,
    pub is_recurrent: bool,
}

#[derive(Clone, Debug)]
pub enum CompiledLayer {
    Conv {
        w: usize,
        b: usize,
        stride: usize,
        in_shape: [usize; 3],
        out_shape: [usize; 3],
    },
    Relu,
    Flatten,
    Fc {
        w: usize,
        b: usize,
        m: usize,
        n: usize,
    },
}

#[derive(Clone, Debug)]
pub struct RnnPath {
    /// Per-frame layers applied after the shared trunk.
    pub per_frame: Vec<CompiledLayer>,
    pub wx: usize,
    pub wh: usize,
    pub b: usize,
    pub hidden: usize,
    pub seq_len: usize,
    pub in_dim: usize,
}

/// Spec lowered to parameter indices and a trunk / recurrent-path / head
/// split that forward passes evaluate.
#[derive(Clone, Debug)]
pub struct CompiledModel {
    pub spec_hash: u64,
    pub params: Vec<ParamDef>,
    /// Per-frame layers shared by every path (empty for feed-forward nets).
    pub trunk: Vec<CompiledLayer>,
    /// Recurrent paths in branch order; empty for feed-forward nets.
    pub paths: Vec<RnnPath>,
    /// Post-temporal layers. For feed-forward nets this is the whole stack
    /// and consumes the frame directly.
    pub head: Vec<CompiledLayer>,
    pub input_shape: [usize; 3],
    pub output_dim: usize,
    pub seq_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
enum Carried {
    Map([usize; 3]),
    Vec(usize),
}

struct Compiler {
    params: Vec<ParamDef>,
    conv_idx: usize,
    rnn_idx: usize,
    fc_idx: usize,
}

impl Compiler {
    fn add_param(
        &mut self,
        name: String,
        shape: Vec<usize>,
        fan_in: usize,
        is_bias: bool,
        is_recurrent: bool,
    ) -> usize {
        self.params.push(ParamDef {
            name,
            shape,
            fan_in,
            is_bias,
            is_recurrent,
        });
        self.params.len() - 1
    }

    /// Lower a run of non-recurrent layers, advancing the carried shape.
    fn lower_plain(
        &mut self,
        layers: &[Layer],
        mut state: Carried,
        out: &mut Vec<CompiledLayer>,
    ) -> Result<Carried> {
        for layer in layers {
            state = match (layer, state) {
                (Layer::Conv { depth, k, stride }, Carried::Map([c, h, w])) => {
                    if *stride < 1 {
                        return Err(Error::parameter("conv stride must be >= 1"));
                    }
                    if *k > h || *k > w {
                        return Err(Error::dimension(format!(
                            "conv kernel {k} does not fit input {h}x{w}"
                        )));
                    }
                    let oh = kernels::conv_out_extent(h, *k, *stride);
                    let ow = kernels::conv_out_extent(w, *k, *stride);
                    let idx = self.conv_idx;
                    self.conv_idx += 1;
                    let fan_in = c * k * k;
                    let wp = self.add_param(
                        format!("conv{idx}.w"),
                        vec![*depth, c, *k, *k],
                        fan_in,
                        false,
                        false,
                    );
                    let bp =
                        self.add_param(format!("conv{idx}.b"), vec![*depth], fan_in, true, false);
                    out.push(CompiledLayer::Conv {
                        w: wp,
                        b: bp,
                        stride: *stride,
                        in_shape: [c, h, w],
                        out_shape: [*depth, oh, ow],
                    });
                    Carried::Map([*depth, oh, ow])
                }
                (Layer::Relu, s) => {
                    out.push(CompiledLayer::Relu);
                    s
                }
                (Layer::Flatten, Carried::Map([c, h, w])) => {
                    out.push(CompiledLayer::Flatten);
                    Carried::Vec(c * h * w)
                }
                (Layer::Flatten, Carried::Vec(n)) => Carried::Vec(n),
                (Layer::Fc { out: m }, Carried::Vec(n)) => {
                    let idx = self.fc_idx;
                    self.fc_idx += 1;
                    let wp = self.add_param(format!("fc{idx}.w"), vec![*m, n], n, false, false);
                    let bp = self.add_param(format!("fc{idx}.b"), vec![*m], n, true, false);
                    out.push(CompiledLayer::Fc {
                        w: wp,
                        b: bp,
                        m: *m,
                        n,
                    });
                    Carried::Vec(*m)
                }
                (l, s) => {
                    return Err(Error::dimension(format!(
                        "layer {l:?} cannot follow state {s:?} here"
                    )))
                }
            };
        }
        Ok(state)
    }

    fn lower_rnn(&mut self, hidden: usize, in_dim: usize) -> (usize, usize, usize) {
        let idx = self.rnn_idx;
        self.rnn_idx += 1;
        let wx = self.add_param(
            format!("rnn{idx}.wx"),
            vec![hidden, in_dim],
            in_dim,
            false,
            false,
        );
        let wh = self.add_param(
            format!("rnn{idx}.wh"),
            vec![hidden, hidden],
            hidden,
            false,
            true,
        );
        let b = self.add_param(format!("rnn{idx}.b"), vec![hidden], in_dim, true, false);
        (wx, wh, b)
    }
}

/// Lower a spec, validating that consecutive layer shapes conform and the
/// stack ends in exactly one output head of the right width.
pub fn compile(spec: &ModelSpec) -> Result<CompiledModel> {
    let mut c = Compiler {
        params: Vec::new(),
        conv_idx: 0,
        rnn_idx: 0,
        fc_idx: 0,
    };
    let [ch, h, w] = spec.input_shape;
    let input = Carried::Map([ch, h, w]);

    // Split the flat stack at the temporal boundary.
    let rnn_pos = spec
        .layers
        .iter()
        .position(|l| matches!(l, Layer::Rnn { .. } | Layer::Split { .. }));

    let Some(pos) = rnn_pos else {
        // Feed-forward: the whole stack is the head and consumes the frame.
        let mut head = Vec::new();
        let out = c.lower_plain(&spec.layers, input, &mut head)?;
        return finish(spec, c, Vec::new(), Vec::new(), head, out);
    };

    let mut trunk = Vec::new();
    let trunk_out = c.lower_plain(&spec.layers[..pos], input, &mut trunk)?;
    let mut paths = Vec::new();
    let merged: Carried = match &spec.layers[pos] {
        Layer::Rnn { hidden, seq_len } => {
            let in_dim = match trunk_out {
                Carried::Vec(n) => n,
                Carried::Map(_) => {
                    return Err(Error::dimension("rnn input must be flattened per frame"))
                }
            };
            let (wx, wh, b) = c.lower_rnn(*hidden, in_dim);
            paths.push(RnnPath {
                per_frame: Vec::new(),
                wx,
                wh,
                b,
                hidden: *hidden,
                seq_len: *seq_len,
                in_dim,
            });
            Carried::Vec(*hidden)
        }
        Layer::Split { a, b } => {
            let mut total = 0usize;
            for branch in [a, b] {
                if branch.is_empty() {
                    return Err(Error::dimension("empty split branch"));
                }
                let (rnn, prefix) = match branch.last().unwrap() {
                    Layer::Rnn { hidden, seq_len } => {
                        ((*hidden, *seq_len), &branch[..branch.len() - 1])
                    }
                    _ => {
                        return Err(Error::dimension(
                            "split branches must end in an rnn layer",
                        ))
                    }
                };
                if prefix
                    .iter()
                    .any(|l| matches!(l, Layer::Rnn { .. } | Layer::Split { .. }))
                {
                    return Err(Error::dimension("nested temporal layers in split branch"));
                }
                let mut per_frame = Vec::new();
                let branch_out = c.lower_plain(prefix, trunk_out.clone(), &mut per_frame)?;
                let in_dim = match branch_out {
                    Carried::Vec(n) => n,
                    Carried::Map(_) => {
                        return Err(Error::dimension("rnn input must be flattened per frame"))
                    }
                };
                let (wx, wh, bb) = c.lower_rnn(rnn.0, in_dim);
                paths.push(RnnPath {
                    per_frame,
                    wx,
                    wh,
                    b: bb,
                    hidden: rnn.0,
                    seq_len: rnn.1,
                    in_dim,
                });
                total += rnn.0;
            }
            Carried::Vec(total)
        }
        _ => unreachable!(),
    };

    // Nothing temporal may appear after the merge.
    let rest = &spec.layers[pos + 1..];
    if rest
        .iter()
        .any(|l| matches!(l, Layer::Rnn { .. } | Layer::Split { .. }))
    {
        return Err(Error::dimension(
            "only one temporal stage (rnn or split) is supported",
        ));
    }

    let mut head = Vec::new();
    let out = c.lower_plain(rest, merged, &mut head)?;
    finish(spec, c, trunk, paths, head, out)
}

fn finish(
    spec: &ModelSpec,
    c: Compiler,
    trunk: Vec<CompiledLayer>,
    paths: Vec<RnnPath>,
    head: Vec<CompiledLayer>,
    out: Carried,
) -> Result<CompiledModel> {
    let out_dim = match out {
        Carried::Vec(n) => n,
        Carried::Map(s) => {
            return Err(Error::dimension(format!(
                "model must end in a vector head, got feature map {s:?}"
            )))
        }
    };
    if out_dim != spec.output_dim {
        return Err(Error::dimension(format!(
            "output head emits {} values, spec says {}",
            out_dim, spec.output_dim
        )));
    }
    let expected = match spec.kind {
        ModelKind::Classifier => 5,
        ModelKind::Regressor => 1,
    };
    if spec.output_dim != expected {
        return Err(Error::dimension(format!(
            "{:?} output_dim must be {expected}",
            spec.kind
        )));
    }
    match head.last() {
        Some(CompiledLayer::Fc { .. }) => {}
        _ => return Err(Error::dimension("model must end in a fully-connected head")),
    }
    Ok(CompiledModel {
        spec_hash: spec.content_hash(),
        params: c.params,
        trunk,
        paths,
        head,
        input_shape: spec.input_shape,
        output_dim: spec.output_dim,
        seq_len: spec.seq_len(),
    })
}

/// Exact trainable parameter count.
pub fn param_count(spec: &ModelSpec) -> Result<usize> {
    let cm = compile(spec)?;
    Ok(cm
        .params
        .iter()
        .map(|p| p.shape.iter().product::<usize>())
        .sum())
}

// ---------------------------------------------------------------------------
// Weights
// ---------------------------------------------------------------------------

/// Learned parameters backing a spec, stored single-precision, plus the
/// provenance metadata carried through checkpoints.
#[derive(Clone, Debug)]
pub struct ModelWeights {
    pub spec_hash: u64,
    pub epochs: u32,
    pub seed: u64,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl ModelWeights {
    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }

    /// Math-precision view of the parameter tensors, ordered as compiled.
    pub fn as_params<T: Real>(&self) -> Vec<Tensor<T>> {
        self.tensors.iter().map(|(_, t)| t.cast()).collect()
    }

    /// Replace tensor data from a math-precision parameter set.
    pub fn store_params<T: Real>(&mut self, params: &[Tensor<T>]) {
        assert_eq!(params.len(), self.tensors.len());
        for ((_, dst), src) in self.tensors.iter_mut().zip(params) {
            *dst = src.cast();
        }
    }
}

/// Seeded uniform fan-in init: weights ~ U(−√(6/fan_in), +√(6/fan_in)),
/// recurrent matrices at half that bound, biases zero.
pub fn init_weights(spec: &ModelSpec, seed: u64) -> Result<ModelWeights> {
    use rand::Rng;
    let cm = compile(spec)?;
    let splitter = SeedSplitter::new(seed);
    let mut tensors = Vec::with_capacity(cm.params.len());
    for def in &cm.params {
        let numel: usize = def.shape.iter().product();
        let data = if def.is_bias {
            vec![0.0f32; numel]
        } else {
            let bound = if def.is_recurrent {
                0.5 * (3.0 / def.fan_in as f64).sqrt()
            } else {
                (6.0 / def.fan_in as f64).sqrt()
            };
            let mut rng = splitter.rng(&format!("init/{}/{}", spec.name, def.name), 0);
            (0..numel)
                .map(|_| ((rng.gen::<f64>() * 2.0 - 1.0) * bound) as f32)
                .collect()
        };
        tensors.push((def.name.clone(), Tensor::new(def.shape.clone(), data)?));
    }
    Ok(ModelWeights {
        spec_hash: cm.spec_hash,
        epochs: 0,
        seed,
        tensors,
    })
}

// ---------------------------------------------------------------------------
// Forward passes
// ---------------------------------------------------------------------------

fn eval_plain<T: Real>(
    layers: &[CompiledLayer],
    params: &[Tensor<T>],
    input: Tensor<T>,
) -> Tensor<T> {
    let mut cur = input;
    for layer in layers {
        cur = match layer {
            CompiledLayer::Conv {
                w,
                b,
                stride,
                in_shape,
                out_shape,
            } => {
                let mut out = Tensor::zeros(out_shape.to_vec());
                kernels::conv2d_forward(
                    cur.data(),
                    params[*w].data(),
                    params[*b].data(),
                    in_shape[0],
                    in_shape[1],
                    in_shape[2],
                    out_shape[0],
                    params[*w].shape()[2],
                    *stride,
                    out.data_mut(),
                );
                out
            }
            CompiledLayer::Relu => {
                let mut out = Tensor::zeros(cur.shape().to_vec());
                kernels::relu_forward(cur.data(), out.data_mut());
                out
            }
            CompiledLayer::Flatten => {
                let n = cur.numel();
                cur.reshape(vec![n]).expect("flatten")
            }
            CompiledLayer::Fc { w, b, m, n } => {
                let mut out = Tensor::zeros(vec![*m]);
                kernels::fc_forward(
                    cur.data(),
                    params[*w].data(),
                    params[*b].data(),
                    *m,
                    *n,
                    out.data_mut(),
                );
                out
            }
        };
    }
    cur
}

/// Per-frame recurrent-input projections u = Wx·φ(frame), one per path.
/// These depend only on the frame and the frozen weights, so inference can
/// cache them per frame and replay windows with just the recurrences.
pub fn frame_projections<T: Real>(
    cm: &CompiledModel,
    params: &[Tensor<T>],
    frame: &Tensor<T>,
) -> Vec<Vec<T>> {
    debug_assert!(!cm.paths.is_empty());
    let trunk_out = eval_plain(&cm.trunk, params, frame.clone());
    cm.paths
        .iter()
        .map(|path| {
            let feat = eval_plain(&path.per_frame, params, trunk_out.clone());
            let wx = &params[path.wx];
            let mut u = vec![T::ZERO; path.hidden];
            kernels::matvec(wx.data(), feat.data(), path.hidden, path.in_dim, &mut u);
            u
        })
        .collect()
}

/// Run each path's recurrence over its projection window and evaluate the
/// head on the concatenated final hidden states.
///
/// `windows[p]` holds path `p`'s projections in time order; the recurrence
/// consumes the last `seq_len` entries (the window itself when equal).
pub fn reduce_windows<T: Real>(
    cm: &CompiledModel,
    params: &[Tensor<T>],
    windows: &[&[Vec<T>]],
) -> Result<Tensor<T>> {
    debug_assert_eq!(windows.len(), cm.paths.len());
    let mut merged = Vec::new();
    for (path, window) in cm.paths.iter().zip(windows) {
        if window.is_empty() {
            return Err(Error::parameter("empty rnn window"));
        }
        let take = path.seq_len.min(window.len());
        let window = &window[window.len() - take..];
        let m = path.hidden;
        let mut h = vec![T::ZERO; m];
        let mut h_next = vec![T::ZERO; m];
        for u in window {
            kernels::rnn_step(u, params[path.wh].data(), params[path.b].data(), &h, m, &mut h_next);
            std::mem::swap(&mut h, &mut h_next);
        }
        merged.extend_from_slice(&h);
    }
    Ok(eval_plain(&cm.head, params, Tensor::vector(merged)))
}

/// Forward pass over a frame (feed-forward specs) or frame window
/// (recurrent specs; `frames.len()` must be at least 1, short windows are
/// the caller's padding responsibility). Returns raw logits or the raw
/// steering scalar; clamping happens at the router boundary.
pub fn forward<T: Real>(
    cm: &CompiledModel,
    params: &[Tensor<T>],
    frames: &[Tensor<T>],
) -> Result<Tensor<T>> {
    if frames.is_empty() {
        return Err(Error::parameter("forward needs at least one frame"));
    }
    for f in frames {
        if f.shape() != cm.input_shape {
            return Err(Error::dimension(format!(
                "frame shape {:?} does not match model input {:?}",
                f.shape(),
                cm.input_shape
            )));
        }
    }
    if cm.paths.is_empty() {
        return Ok(eval_plain(&cm.head, params, frames[frames.len() - 1].clone()));
    }
    let needed = cm.seq_len.min(frames.len());
    let window = &frames[frames.len() - needed..];
    let mut per_path: Vec<Vec<Vec<T>>> = vec![Vec::with_capacity(window.len()); cm.paths.len()];
    for frame in window {
        for (p, u) in frame_projections(cm, params, frame).into_iter().enumerate() {
            per_path[p].push(u);
        }
    }
    let windows: Vec<&[Vec<T>]> = per_path.iter().map(|v| v.as_slice()).collect();
    reduce_windows(cm, params, &windows)
}

// ---------------------------------------------------------------------------
// Tape forward (training path)
// ---------------------------------------------------------------------------

/// Node ids of the parameter leaves, ordered as `CompiledModel::params`.
pub struct TapeModel {
    pub param_nodes: Vec<NodeId>,
    pub output: NodeId,
}

fn tape_plain<T: Real>(
    graph: &mut ComputeGraph<T>,
    layers: &[CompiledLayer],
    param_nodes: &[NodeId],
    mut cur: NodeId,
) -> Result<NodeId> {
    for layer in layers {
        cur = match layer {
            CompiledLayer::Conv { w, b, stride, .. } => {
                graph.conv2d(cur, param_nodes[*w], param_nodes[*b], *stride)?
            }
            CompiledLayer::Relu => graph.relu(cur),
            CompiledLayer::Flatten => graph.flatten(cur),
            CompiledLayer::Fc { w, b, .. } => {
                graph.fully_connected(cur, param_nodes[*w], param_nodes[*b])?
            }
        };
    }
    Ok(cur)
}

/// Record the model's forward pass for one sample on the tape, so backward
/// yields parameter gradients. Feed-forward specs take the last frame;
/// recurrent specs consume the final `seq_len` frames through BPTT.
pub fn tape_forward<T: Real>(
    graph: &mut ComputeGraph<T>,
    cm: &CompiledModel,
    params: &[Tensor<T>],
    frames: &[Tensor<T>],
) -> Result<TapeModel> {
    let param_nodes: Vec<NodeId> = params
        .iter()
        .map(|t| graph.leaf(t.clone(), true))
        .collect();
    let output = tape_forward_with(graph, cm, &param_nodes, frames)?;
    Ok(TapeModel {
        param_nodes,
        output,
    })
}

/// Like `tape_forward` but reusing existing parameter leaves, so several
/// samples can share one graph and accumulate gradients in one backward.
pub fn tape_forward_with<T: Real>(
    graph: &mut ComputeGraph<T>,
    cm: &CompiledModel,
    param_nodes: &[NodeId],
    frames: &[Tensor<T>],
) -> Result<NodeId> {
    if frames.is_empty() {
        return Err(Error::parameter("tape_forward needs at least one frame"));
    }
    let output = if cm.paths.is_empty() {
        let x = graph.leaf(frames[frames.len() - 1].clone(), false);
        tape_plain(graph, &cm.head, param_nodes, x)?
    } else {
        let needed = cm.seq_len.min(frames.len());
        let window = &frames[frames.len() - needed..];
        let frame_nodes: Vec<NodeId> = window
            .iter()
            .map(|f| graph.leaf(f.clone(), false))
            .collect();
        let trunk_outs: Vec<NodeId> = frame_nodes
            .iter()
            .map(|&f| tape_plain(graph, &cm.trunk, param_nodes, f))
            .collect::<Result<_>>()?;

        let mut path_hidden: Vec<NodeId> = Vec::with_capacity(cm.paths.len());
        for path in &cm.paths {
            let take = path.seq_len.min(trunk_outs.len());
            let feats: Vec<NodeId> = trunk_outs[trunk_outs.len() - take..]
                .iter()
                .map(|&t| tape_plain(graph, &path.per_frame, param_nodes, t))
                .collect::<Result<_>>()?;
            let h = graph.rnn_sequence(
                &feats,
                param_nodes[path.wx],
                param_nodes[path.wh],
                param_nodes[path.b],
                None,
            )?;
            path_hidden.push(h);
        }
        let mut merged = path_hidden[0];
        for &h in &path_hidden[1..] {
            merged = graph.concat(merged, h)?;
        }
        tape_plain(graph, &cm.head, param_nodes, merged)?
    };

    Ok(output)
}
