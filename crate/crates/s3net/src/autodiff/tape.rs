use crate::autodiff::params::{ParamId, ParamStore};
use crate::error::{Error, Result};
use crate::loss::{log_sum_exp_rows, softmax};
use crate::ops::conv as conv_ops;
use crate::ops::pointwise as pw;
use crate::ops::pool::{self, BatchGroups};
use crate::ops::{BnCtx, BnStats};
use crate::scalar::Scalar;
use crate::sparse::KernelMap;
use ndarray::{Array1, Array2, Axis};
use std::sync::Arc;

/// Index of a value recorded on a [`Tape`].
pub type ValueId = usize;

pub(crate) struct WceCtx<T: Scalar> {
    probs: Array2<T>,
    labels: Arc<Vec<Option<usize>>>,
    alpha: Vec<T>,
    supervised: usize,
}

pub(crate) struct GeoCtx<T: Scalar> {
    probs: Array2<T>,
    labels: Arc<Vec<Option<usize>>>,
    weights: Vec<T>,
    occupied: usize,
}

enum Node<T: Scalar> {
    Leaf {
        param: Option<ParamId>,
    },
    SparseConv {
        x: ValueId,
        w: ValueId,
        bias: Option<ValueId>,
        in_channels: usize,
        kmap: Arc<KernelMap>,
    },
    ConvTranspose {
        x: ValueId,
        w: ValueId,
        in_channels: usize,
        kmap: Arc<KernelMap>,
    },
    Linear {
        x: ValueId,
        w: ValueId,
        bias: Option<ValueId>,
    },
    Relu {
        x: ValueId,
    },
    Sigmoid {
        x: ValueId,
    },
    BatchNorm {
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        ctx: BnCtx<T>,
        training: bool,
    },
    Add {
        a: ValueId,
        b: ValueId,
    },
    Mul {
        a: ValueId,
        b: ValueId,
    },
    Scale {
        x: ValueId,
        factor: T,
    },
    GlobalAvgPool {
        x: ValueId,
        groups: Arc<BatchGroups>,
        n_rows: usize,
    },
    BroadcastMul {
        x: ValueId,
        scales: ValueId,
        groups: Arc<BatchGroups>,
    },
    SumAll {
        x: ValueId,
    },
    Wce {
        logits: ValueId,
        ctx: WceCtx<T>,
    },
    Geo {
        logits: ValueId,
        ctx: GeoCtx<T>,
    },
}

/// Recorded computation graph for one training step.
///
/// Values are computed eagerly as operations are recorded; node `i` produces
/// value `i`, so the record order is already a topological order and
/// [`Tape::backward`] visits each node exactly once in reverse.
pub struct Tape<T: Scalar> {
    values: Vec<Array2<T>>,
    nodes: Vec<Node<T>>,
    grads: Vec<Option<Array2<T>>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            values: Vec::new(),
            nodes: Vec::new(),
            grads: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn value(&self, id: ValueId) -> &Array2<T> {
        &self.values[id]
    }

    /// Gradient of the last backward pass with respect to value `id`; `None`
    /// when the value does not influence the loss.
    pub fn grad(&self, id: ValueId) -> Option<&Array2<T>> {
        self.grads.get(id).and_then(|g| g.as_ref())
    }

    /// Scalar convenience accessor for 1x1 values.
    pub fn scalar(&self, id: ValueId) -> T {
        self.values[id][[0, 0]]
    }

    fn push(&mut self, node: Node<T>, value: Array2<T>) -> ValueId {
        debug_assert!(value.iter().all(|v| v.is_finite()), "non-finite tape value");
        let id = self.values.len();
        self.values.push(value);
        self.nodes.push(node);
        id
    }

    /// Records a non-parameter input. Gradients with respect to it are
    /// still accumulated and can be read back with [`Tape::grad`].
    pub fn input(&mut self, value: Array2<T>) -> ValueId {
        self.push(Node::Leaf { param: None }, value)
    }

    /// Binds a stored parameter onto the tape; its gradient lands in the
    /// store during [`Tape::backward`].
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> ValueId {
        self.push(
            Node::Leaf { param: Some(id) },
            store.value(id).clone(),
        )
    }

    pub fn sparse_conv(
        &mut self,
        x: ValueId,
        w: ValueId,
        bias: Option<ValueId>,
        kmap: Arc<KernelMap>,
    ) -> Result<ValueId> {
        let in_channels = self.values[x].ncols();
        let wv = &self.values[w];
        if wv.nrows() != kmap.lists().len() * in_channels {
            return Err(Error::ShapeMismatch {
                context: "tape sparse_conv weights",
                expected: format!("{} rows", kmap.lists().len() * in_channels),
                got: wv.nrows().to_string(),
            });
        }
        if kmap.input_count() != self.values[x].nrows() {
            return Err(Error::KernelMapOutOfRange {
                side: "input",
                row: kmap.input_count(),
                count: self.values[x].nrows(),
            });
        }
        let bias_view = bias.map(|b| self.values[b].row(0));
        let out = conv_ops::forward_features(&self.values[x], wv, in_channels, bias_view, &kmap);
        Ok(self.push(
            Node::SparseConv {
                x,
                w,
                bias,
                in_channels,
                kmap,
            },
            out,
        ))
    }

    /// Adjoint convolution onto the kernel map's input side; `in_channels`
    /// is the channel count of the produced (target-side) value.
    pub fn conv_transpose(
        &mut self,
        x: ValueId,
        w: ValueId,
        in_channels: usize,
        kmap: Arc<KernelMap>,
    ) -> Result<ValueId> {
        let wv = &self.values[w];
        if wv.nrows() != kmap.lists().len() * in_channels {
            return Err(Error::ShapeMismatch {
                context: "tape conv_transpose weights",
                expected: format!("{} rows", kmap.lists().len() * in_channels),
                got: wv.nrows().to_string(),
            });
        }
        if wv.ncols() != self.values[x].ncols() {
            return Err(Error::ChannelMismatch {
                context: "tape conv_transpose",
                expected: wv.ncols(),
                got: self.values[x].ncols(),
            });
        }
        if kmap.output_count() != self.values[x].nrows() {
            return Err(Error::KernelMapOutOfRange {
                side: "output",
                row: kmap.output_count(),
                count: self.values[x].nrows(),
            });
        }
        let out = conv_ops::transpose_features(&self.values[x], wv, in_channels, &kmap);
        Ok(self.push(
            Node::ConvTranspose {
                x,
                w,
                in_channels,
                kmap,
            },
            out,
        ))
    }

    pub fn linear(&mut self, x: ValueId, w: ValueId, bias: Option<ValueId>) -> Result<ValueId> {
        let bias_view = bias.map(|b| self.values[b].row(0));
        let out = pw::linear(&self.values[x], &self.values[w], bias_view)?;
        Ok(self.push(Node::Linear { x, w, bias }, out))
    }

    pub fn relu(&mut self, x: ValueId) -> ValueId {
        let out = pw::relu(&self.values[x]);
        self.push(Node::Relu { x }, out)
    }

    pub fn sigmoid(&mut self, x: ValueId) -> ValueId {
        let out = pw::sigmoid(&self.values[x]);
        self.push(Node::Sigmoid { x }, out)
    }

    /// Batch normalization. In training mode batch statistics are used and
    /// folded into `running`; in eval mode `running` is read only.
    pub fn batch_norm(
        &mut self,
        x: ValueId,
        gamma: ValueId,
        beta: ValueId,
        running: &mut BnStats<T>,
        momentum: f64,
        eps: f64,
        training: bool,
    ) -> ValueId {
        let g = self.values[gamma].row(0).to_owned();
        let b = self.values[beta].row(0).to_owned();
        let (out, ctx) = if training {
            pw::batch_norm_train(
                &self.values[x],
                g.view(),
                b.view(),
                running,
                T::from_f64(momentum),
                T::from_f64(eps),
            )
        } else {
            let (out, inv_std) = pw::batch_norm_eval(
                &self.values[x],
                g.view(),
                b.view(),
                running,
                T::from_f64(eps),
            );
            let mut xhat = self.values[x].clone();
            xhat -= &running.mean.broadcast(xhat.raw_dim()).unwrap();
            xhat *= &inv_std.broadcast(xhat.raw_dim()).unwrap();
            (out, BnCtx { xhat, inv_std })
        };
        self.push(
            Node::BatchNorm {
                x,
                gamma,
                beta,
                ctx,
                training,
            },
            out,
        )
    }

    pub fn add(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        if self.values[a].raw_dim() != self.values[b].raw_dim() {
            return Err(Error::ShapeMismatch {
                context: "tape add",
                expected: format!("{:?}", self.values[a].raw_dim()),
                got: format!("{:?}", self.values[b].raw_dim()),
            });
        }
        let out = &self.values[a] + &self.values[b];
        Ok(self.push(Node::Add { a, b }, out))
    }

    pub fn mul(&mut self, a: ValueId, b: ValueId) -> Result<ValueId> {
        if self.values[a].raw_dim() != self.values[b].raw_dim() {
            return Err(Error::ShapeMismatch {
                context: "tape mul",
                expected: format!("{:?}", self.values[a].raw_dim()),
                got: format!("{:?}", self.values[b].raw_dim()),
            });
        }
        let out = &self.values[a] * &self.values[b];
        Ok(self.push(Node::Mul { a, b }, out))
    }

    pub fn scale(&mut self, x: ValueId, factor: f64) -> ValueId {
        let f = T::from_f64(factor);
        let out = self.values[x].mapv(|v| v * f);
        self.push(Node::Scale { x, factor: f }, out)
    }

    pub fn global_avg_pool(&mut self, x: ValueId, groups: Arc<BatchGroups>) -> ValueId {
        let n_rows = self.values[x].nrows();
        let out = pool::global_avg_pool(&self.values[x], &groups);
        self.push(Node::GlobalAvgPool { x, groups, n_rows }, out)
    }

    pub fn broadcast_mul(
        &mut self,
        x: ValueId,
        scales: ValueId,
        groups: Arc<BatchGroups>,
    ) -> Result<ValueId> {
        if self.values[scales].nrows() != groups.group_count() {
            return Err(Error::ShapeMismatch {
                context: "tape broadcast_mul",
                expected: groups.group_count().to_string(),
                got: self.values[scales].nrows().to_string(),
            });
        }
        let out = pool::broadcast_mul(&self.values[x], &self.values[scales], &groups);
        Ok(self.push(Node::BroadcastMul { x, scales, groups }, out))
    }

    pub fn sum_all(&mut self, x: ValueId) -> ValueId {
        let s = self.values[x].sum();
        self.push(Node::SumAll { x }, Array2::from_elem((1, 1), s))
    }

    /// Weighted cross-entropy over logits: softmax per row, `-alpha[label] *
    /// log p[label]` averaged over supervised rows. Rows with `None` labels
    /// are ignored.
    pub fn wce_loss(
        &mut self,
        logits: ValueId,
        labels: Arc<Vec<Option<usize>>>,
        alpha: &[f64],
    ) -> Result<ValueId> {
        let lv = &self.values[logits];
        if labels.len() != lv.nrows() {
            return Err(Error::ShapeMismatch {
                context: "wce labels",
                expected: lv.nrows().to_string(),
                got: labels.len().to_string(),
            });
        }
        let supervised = labels.iter().filter(|l| l.is_some()).count();
        if supervised == 0 {
            return Err(Error::NoSupervisedPoints);
        }
        let lse = log_sum_exp_rows(lv);
        let mut total = T::zero();
        for (r, label) in labels.iter().enumerate() {
            if let Some(y) = *label {
                let a = T::from_f64(alpha[y]);
                total = total + a * (lse[r] - lv[[r, y]]);
            }
        }
        let loss = total / T::from_f64(supervised as f64);
        let ctx = WceCtx {
            probs: softmax(lv),
            labels,
            alpha: alpha.iter().map(|&a| T::from_f64(a)).collect(),
            supervised,
        };
        Ok(self.push(
            Node::Wce { logits, ctx },
            Array2::from_elem((1, 1), loss),
        ))
    }

    /// Geometry-weighted cross-entropy: per-row weights (normalized local
    /// anisotropy) scale the per-voxel negative log-likelihood; mean over
    /// occupied supervised rows.
    pub fn geo_loss(
        &mut self,
        logits: ValueId,
        labels: Arc<Vec<Option<usize>>>,
        weights: &[f64],
    ) -> Result<ValueId> {
        let lv = &self.values[logits];
        if labels.len() != lv.nrows() || weights.len() != lv.nrows() {
            return Err(Error::ShapeMismatch {
                context: "geo labels/weights",
                expected: lv.nrows().to_string(),
                got: format!("{}/{}", labels.len(), weights.len()),
            });
        }
        let occupied = labels.iter().filter(|l| l.is_some()).count();
        let denom = T::from_f64(occupied.max(1) as f64);
        let lse = log_sum_exp_rows(lv);
        let mut total = T::zero();
        for (r, label) in labels.iter().enumerate() {
            if let Some(y) = *label {
                total = total + T::from_f64(weights[r]) * (lse[r] - lv[[r, y]]);
            }
        }
        let loss = total / denom;
        let ctx = GeoCtx {
            probs: softmax(lv),
            labels,
            weights: weights.iter().map(|&w| T::from_f64(w)).collect(),
            occupied,
        };
        Ok(self.push(
            Node::Geo { logits, ctx },
            Array2::from_elem((1, 1), loss),
        ))
    }

    /// Reverse pass from a scalar loss. Parameter gradients are accumulated
    /// into `store`; gradients of every intermediate value stay queryable via
    /// [`Tape::grad`].
    pub fn backward(&mut self, loss: ValueId, store: &mut ParamStore<T>) -> Result<()> {
        let (rows, cols) = self.values[loss].dim();
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarLoss { rows, cols });
        }
        self.grads = vec![None; self.values.len()];
        self.grads[loss] = Some(Array2::from_elem((1, 1), T::one()));

        for i in (0..=loss).rev() {
            let Some(g) = self.grads[i].clone() else {
                continue;
            };
            match &self.nodes[i] {
                Node::Leaf { param } => {
                    if let Some(pid) = param {
                        store.accumulate_grad(*pid, &g);
                    }
                }
                Node::SparseConv {
                    x,
                    w,
                    bias,
                    in_channels,
                    kmap,
                } => {
                    let (gx, gw, gb) = conv_ops::backward_features(
                        &g,
                        &self.values[*x],
                        &self.values[*w],
                        *in_channels,
                        kmap,
                    );
                    let (x, w, bias) = (*x, *w, *bias);
                    self.accum(x, gx);
                    self.accum(w, gw);
                    if let Some(b) = bias {
                        self.accum(b, row_matrix(gb));
                    }
                }
                Node::ConvTranspose {
                    x,
                    w,
                    in_channels,
                    kmap,
                } => {
                    let (gx, gw) = conv_ops::transpose_backward_features(
                        &g,
                        &self.values[*x],
                        &self.values[*w],
                        *in_channels,
                        kmap,
                    );
                    let (x, w) = (*x, *w);
                    self.accum(x, gx);
                    self.accum(w, gw);
                }
                Node::Linear { x, w, bias } => {
                    let (gx, gw, gb) =
                        pw::linear_backward(&g, &self.values[*x], &self.values[*w]);
                    let (x, w, bias) = (*x, *w, *bias);
                    self.accum(x, gx);
                    self.accum(w, gw);
                    if let Some(b) = bias {
                        self.accum(b, row_matrix(gb));
                    }
                }
                Node::Relu { x } => {
                    let gx = pw::relu_backward(&g, &self.values[*x]);
                    let x = *x;
                    self.accum(x, gx);
                }
                Node::Sigmoid { x } => {
                    let gx = pw::sigmoid_backward(&g, &self.values[i]);
                    let x = *x;
                    self.accum(x, gx);
                }
                Node::BatchNorm {
                    x,
                    gamma,
                    beta,
                    ctx,
                    training,
                } => {
                    let gamma_row = self.values[*gamma].row(0).to_owned();
                    let (gx, gg, gb) = if *training {
                        pw::batch_norm_train_backward(&g, gamma_row.view(), ctx)
                    } else {
                        let mut gx = g.clone();
                        gx *= &gamma_row.broadcast(g.raw_dim()).unwrap();
                        gx *= &ctx.inv_std.broadcast(g.raw_dim()).unwrap();
                        let gg = (&g * &ctx.xhat).sum_axis(Axis(0));
                        let gb = g.sum_axis(Axis(0));
                        (gx, gg, gb)
                    };
                    let (x, gamma, beta) = (*x, *gamma, *beta);
                    self.accum(x, gx);
                    self.accum(gamma, row_matrix(gg));
                    self.accum(beta, row_matrix(gb));
                }
                Node::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    self.accum(a, g.clone());
                    self.accum(b, g);
                }
                Node::Mul { a, b } => {
                    let ga = &g * &self.values[*b];
                    let gb = &g * &self.values[*a];
                    let (a, b) = (*a, *b);
                    self.accum(a, ga);
                    self.accum(b, gb);
                }
                Node::Scale { x, factor } => {
                    let f = *factor;
                    let x = *x;
                    self.accum(x, g.mapv(|v| v * f));
                }
                Node::GlobalAvgPool { x, groups, n_rows } => {
                    let gx = pool::global_avg_pool_backward(&g, groups, *n_rows);
                    let x = *x;
                    self.accum(x, gx);
                }
                Node::BroadcastMul { x, scales, groups } => {
                    let (gx, gs) = pool::broadcast_mul_backward(
                        &g,
                        &self.values[*x],
                        &self.values[*scales],
                        groups,
                    );
                    let (x, scales) = (*x, *scales);
                    self.accum(x, gx);
                    self.accum(scales, gs);
                }
                Node::SumAll { x } => {
                    let g0 = g[[0, 0]];
                    let gx = Array2::from_elem(self.values[*x].raw_dim(), g0);
                    let x = *x;
                    self.accum(x, gx);
                }
                Node::Wce { logits, ctx } => {
                    let g0 = g[[0, 0]];
                    let scale = g0 / T::from_f64(ctx.supervised as f64);
                    let mut gl = Array2::<T>::zeros(ctx.probs.raw_dim());
                    for (r, label) in ctx.labels.iter().enumerate() {
                        if let Some(y) = *label {
                            let a = ctx.alpha[y] * scale;
                            for c in 0..ctx.probs.ncols() {
                                let delta = if c == y { T::one() } else { T::zero() };
                                gl[[r, c]] = a * (ctx.probs[[r, c]] - delta);
                            }
                        }
                    }
                    let logits = *logits;
                    self.accum(logits, gl);
                }
                Node::Geo { logits, ctx } => {
                    let g0 = g[[0, 0]];
                    let scale = g0 / T::from_f64(ctx.occupied.max(1) as f64);
                    let mut gl = Array2::<T>::zeros(ctx.probs.raw_dim());
                    for (r, label) in ctx.labels.iter().enumerate() {
                        if let Some(y) = *label {
                            let wr = ctx.weights[r] * scale;
                            for c in 0..ctx.probs.ncols() {
                                let delta = if c == y { T::one() } else { T::zero() };
                                gl[[r, c]] = wr * (ctx.probs[[r, c]] - delta);
                            }
                        }
                    }
                    let logits = *logits;
                    self.accum(logits, gl);
                }
            }
        }
        Ok(())
    }

    fn accum(&mut self, id: ValueId, delta: Array2<T>) {
        match &mut self.grads[id] {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }
}

fn row_matrix<T: Scalar>(v: Array1<T>) -> Array2<T> {
    let n = v.len();
    v.into_shape_with_order((1, n)).unwrap()
}
