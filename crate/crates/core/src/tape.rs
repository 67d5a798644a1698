//! Reverse-mode differentiation over an explicit op tape.
//!
//! A [`Tape`] owns every intermediate value of a forward pass. Ops append a
//! record naming their operands; [`Tape::backward`] replays the records in
//! reverse, accumulating vector-Jacobian products. The tape is generic over
//! [`Scalar`]: training runs it at f32, gradient checks at f64.

use crate::error::TensorError;
use crate::kernels::conv::{ConvGeom, ConvTransposeGeom};
use crate::kernels::elem::{self, Activation, LossKind};
use crate::kernels::norm;
use crate::kernels::{self, Exec, Scalar};
use crate::tensor::{Shape, Tensor};

/// Handle to a tape node.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

struct Node<T> {
    shape: Shape,
    values: Vec<T>,
    op: &'static str,
}

enum Record<T> {
    Conv2d {
        x: Var,
        w: Var,
        b: Var,
        y: Var,
        geom: ConvGeom,
    },
    ConvTranspose2d {
        x: Var,
        w: Var,
        b: Var,
        y: Var,
        geom: ConvTransposeGeom,
    },
    InstanceNorm {
        x: Var,
        gain: Var,
        shift: Var,
        y: Var,
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    Pointwise {
        x: Var,
        y: Var,
        kind: Activation,
    },
    Concat {
        xs: Vec<Var>,
        y: Var,
    },
    Add {
        a: Var,
        b: Var,
        y: Var,
    },
    Sub {
        a: Var,
        b: Var,
        y: Var,
    },
    Scale {
        x: Var,
        y: Var,
        factor: T,
    },
    Reduce {
        x: Var,
        y: Var,
        kind: LossKind,
    },
    MeanSpatial {
        x: Var,
        y: Var,
    },
    SoftmaxCrossEntropy {
        logits: Var,
        y: Var,
        labels: Vec<usize>,
        probs: Vec<T>,
    },
}

/// Tape handles for a [`LayerStack`](crate::stack::LayerStack)'s
/// parameters, in slot order.
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    pub(crate) fn new(vars: impl Iterator<Item = Var>) -> Self {
        Binding {
            vars: vars.collect(),
        }
    }

    pub fn var(&self, idx: usize) -> Var {
        self.vars[idx]
    }
}

/// Gradients produced by a backward pass, indexed by [`Var`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads[var.0].as_deref()
    }

    pub fn take(&mut self, var: Var) -> Option<Vec<T>> {
        self.grads[var.0].take()
    }
}

pub struct Tape<T: Scalar> {
    exec: Exec,
    nodes: Vec<Node<T>>,
    records: Vec<Record<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self::with_exec(Exec::default())
    }

    pub fn with_exec(exec: Exec) -> Self {
        Tape {
            exec,
            nodes: Vec::new(),
            records: Vec::new(),
        }
    }

    fn push(&mut self, shape: Shape, values: Vec<T>, op: &'static str) -> Var {
        debug_assert_eq!(values.len(), shape.len());
        self.nodes.push(Node { shape, values, op });
        Var(self.nodes.len() - 1)
    }

    /// Inserts a constant/input node.
    pub fn leaf(&mut self, shape: Shape, values: Vec<T>) -> Result<Var, TensorError> {
        if values.len() != shape.len() {
            return Err(TensorError::bad_config(
                "leaf",
                format!("{} values for shape {}", values.len(), shape),
            ));
        }
        Ok(self.push(shape, values, "leaf"))
    }

    /// Inserts an f32 tensor, widening to the tape's element type.
    pub fn leaf_tensor(&mut self, tensor: &Tensor) -> Var {
        let values = tensor.values().iter().map(|&v| T::from_f32(v)).collect();
        self.push(tensor.shape(), values, "leaf")
    }

    pub fn shape(&self, var: Var) -> Shape {
        self.nodes[var.0].shape
    }

    pub fn values(&self, var: Var) -> &[T] {
        &self.nodes[var.0].values
    }

    /// Value of a single-element node.
    pub fn scalar(&self, var: Var) -> T {
        debug_assert_eq!(self.nodes[var.0].values.len(), 1);
        self.nodes[var.0].values[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// First node containing a non-finite value, with the op that made it.
    pub fn first_non_finite(&self) -> Option<(usize, &'static str)> {
        self.nodes
            .iter()
            .enumerate()
            .find(|(_, n)| n.values.iter().any(|v| !v.is_finite()))
            .map(|(i, n)| (i, n.op))
    }

    /// 2-D convolution. Weight shape (C_out, C_in, k, k), bias (1, C_out, 1, 1).
    pub fn conv2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
    ) -> Result<Var, TensorError> {
        let geom = ConvGeom::resolve(self.shape(x), self.shape(w), stride, pad)?;
        if self.shape(b).len() != geom.c_out {
            return Err(TensorError::DimMismatch {
                op: "conv2d",
                what: "bias length",
                lhs: self.shape(b),
                rhs: self.shape(w),
            });
        }
        let out = geom.out_shape();
        let mut y = vec![T::zero(); out.len()];
        kernels::conv::conv2d_forward(
            self.exec,
            self.values(x),
            self.values(w),
            self.values(b),
            &geom,
            &mut y,
        );
        let yv = self.push(out, y, "conv2d");
        self.records.push(Record::Conv2d {
            x,
            w,
            b,
            y: yv,
            geom,
        });
        Ok(yv)
    }

    /// Transposed 2-D convolution. Weight shape (C_in, C_out, k, k).
    pub fn conv_transpose2d(
        &mut self,
        x: Var,
        w: Var,
        b: Var,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Result<Var, TensorError> {
        let geom =
            ConvTransposeGeom::resolve(self.shape(x), self.shape(w), stride, pad, out_pad)?;
        if self.shape(b).len() != geom.c_out {
            return Err(TensorError::DimMismatch {
                op: "conv_transpose2d",
                what: "bias length",
                lhs: self.shape(b),
                rhs: self.shape(w),
            });
        }
        let out = geom.out_shape();
        let mut y = vec![T::zero(); out.len()];
        kernels::conv::conv_transpose2d_forward(
            self.exec,
            self.values(x),
            self.values(w),
            self.values(b),
            &geom,
            &mut y,
        );
        let yv = self.push(out, y, "conv_transpose2d");
        self.records.push(Record::ConvTranspose2d {
            x,
            w,
            b,
            y: yv,
            geom,
        });
        Ok(yv)
    }

    /// Instance normalization with per-channel gain and shift.
    pub fn instance_norm(
        &mut self,
        x: Var,
        gain: Var,
        shift: Var,
        eps: f64,
    ) -> Result<Var, TensorError> {
        let shape = self.shape(x);
        for (name, v) in [("gain", gain), ("shift", shift)] {
            if self.shape(v).len() != shape.c {
                let _ = name;
                return Err(TensorError::DimMismatch {
                    op: "instance_norm",
                    what: "channel count",
                    lhs: shape,
                    rhs: self.shape(v),
                });
            }
        }
        if eps <= 0.0 {
            return Err(TensorError::bad_config("instance_norm", "eps must be > 0"));
        }
        let mut y = vec![T::zero(); shape.len()];
        let (mean, inv_std) = norm::instance_norm_forward(
            self.exec,
            self.values(x),
            self.values(gain),
            self.values(shift),
            shape,
            eps,
            &mut y,
        );
        let yv = self.push(shape, y, "instance_norm");
        self.records.push(Record::InstanceNorm {
            x,
            gain,
            shift,
            y: yv,
            mean,
            inv_std,
        });
        Ok(yv)
    }

    /// Elementwise activation.
    pub fn pointwise(&mut self, x: Var, kind: Activation) -> Var {
        let shape = self.shape(x);
        let mut y = vec![T::zero(); shape.len()];
        elem::pointwise_forward(self.exec, self.values(x), kind, &mut y);
        let yv = self.push(shape, y, kind.name());
        self.records.push(Record::Pointwise { x, y: yv, kind });
        yv
    }

    /// Concatenation along the channel axis.
    pub fn concat_channels(&mut self, xs: &[Var]) -> Result<Var, TensorError> {
        let first = self.shape(
            *xs.first()
                .ok_or_else(|| TensorError::bad_config("concat_channels", "no inputs"))?,
        );
        let mut c_total = 0;
        for &v in xs {
            let s = self.shape(v);
            if (s.n, s.h, s.w) != (first.n, first.h, first.w) {
                return Err(TensorError::DimMismatch {
                    op: "concat_channels",
                    what: "spatial extents",
                    lhs: first,
                    rhs: s,
                });
            }
            c_total += s.c;
        }
        let out = Shape::new(first.n, c_total, first.h, first.w);
        let mut y = vec![T::zero(); out.len()];
        let plane = first.h * first.w;
        for n in 0..first.n {
            let mut dst = n * c_total * plane;
            for &v in xs {
                let s = self.shape(v);
                let len = s.c * plane;
                let src = &self.nodes[v.0].values[n * len..(n + 1) * len];
                y[dst..dst + len].copy_from_slice(src);
                dst += len;
            }
        }
        let yv = self.push(out, y, "concat_channels");
        self.records.push(Record::Concat { xs: xs.to_vec(), y: yv });
        Ok(yv)
    }

    fn binary_shapes(&self, op: &'static str, a: Var, b: Var) -> Result<Shape, TensorError> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TensorError::DimMismatch {
                op,
                what: "operand shapes",
                lhs: sa,
                rhs: sb,
            });
        }
        Ok(sa)
    }

    /// Elementwise sum; gradient passes unchanged to both operands.
    pub fn residual_add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let shape = self.binary_shapes("residual_add", a, b)?;
        let y: Vec<T> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, z)| *x + *z)
            .collect();
        let yv = self.push(shape, y, "residual_add");
        self.records.push(Record::Add { a, b, y: yv });
        Ok(yv)
    }

    /// Elementwise difference a - b.
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let shape = self.binary_shapes("sub", a, b)?;
        let y: Vec<T> = self.nodes[a.0]
            .values
            .iter()
            .zip(&self.nodes[b.0].values)
            .map(|(x, z)| *x - *z)
            .collect();
        let yv = self.push(shape, y, "sub");
        self.records.push(Record::Sub { a, b, y: yv });
        Ok(yv)
    }

    /// Multiplication by a constant.
    pub fn scale(&mut self, x: Var, factor: T) -> Var {
        let shape = self.shape(x);
        let y: Vec<T> = self.nodes[x.0].values.iter().map(|v| *v * factor).collect();
        let yv = self.push(shape, y, "scale");
        self.records.push(Record::Scale { x, y: yv, factor });
        yv
    }

    /// Full reduction to a scalar node.
    pub fn reduce_loss(&mut self, x: Var, kind: LossKind) -> Var {
        let loss = elem::reduce_forward(self.values(x), kind);
        let yv = self.push(Shape::scalar(), vec![loss], kind.name());
        self.records.push(Record::Reduce { x, y: yv, kind });
        yv
    }

    /// (N, C, H, W) -> (N, C, 1, 1) spatial mean.
    pub fn mean_spatial(&mut self, x: Var) -> Var {
        let shape = self.shape(x);
        let out = Shape::new(shape.n, shape.c, 1, 1);
        let mut y = vec![T::zero(); out.len()];
        norm::mean_spatial_forward(self.exec, self.values(x), shape, &mut y);
        let yv = self.push(out, y, "mean_spatial");
        self.records.push(Record::MeanSpatial { x, y: yv });
        yv
    }

    /// Mean cross-entropy of (N, K, 1, 1) logits against integer labels.
    pub fn softmax_cross_entropy(
        &mut self,
        logits: Var,
        labels: &[usize],
    ) -> Result<Var, TensorError> {
        let shape = self.shape(logits);
        let classes = shape.c;
        if shape.h != 1 || shape.w != 1 || shape.n != labels.len() {
            return Err(TensorError::bad_config(
                "softmax_cross_entropy",
                format!("logits {} against {} labels", shape, labels.len()),
            ));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(TensorError::bad_config(
                "softmax_cross_entropy",
                format!("label {} out of range for {} classes", bad, classes),
            ));
        }
        let (loss, probs) =
            elem::softmax_cross_entropy_forward(self.values(logits), classes, labels);
        let yv = self.push(Shape::scalar(), vec![loss], "softmax_cross_entropy");
        self.records.push(Record::SoftmaxCrossEntropy {
            logits,
            y: yv,
            labels: labels.to_vec(),
            probs,
        });
        Ok(yv)
    }

    /// Backward pass seeded with ones (the usual call for a scalar loss).
    pub fn backward(&self, root: Var) -> Gradients<T> {
        self.backward_seeded(root, vec![T::one(); self.shape(root).len()])
    }

    /// Backward pass from `root` with an explicit output cotangent.
    ///
    /// Non-leaf gradients are consumed as the walk passes their producing
    /// record, so the returned [`Gradients`] holds leaf gradients only.
    pub fn backward_seeded(&self, root: Var, seed: Vec<T>) -> Gradients<T> {
        assert_eq!(seed.len(), self.shape(root).len(), "seed length mismatch");
        let mut grads: Vec<Option<Vec<T>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(seed);
        for record in self.records.iter().rev() {
            self.replay(record, &mut grads);
        }
        Gradients { grads }
    }

    fn grad_buf<'a>(
        &self,
        grads: &'a mut [Option<Vec<T>>],
        var: Var,
    ) -> &'a mut Vec<T> {
        let len = self.nodes[var.0].shape.len();
        grads[var.0].get_or_insert_with(|| vec![T::zero(); len])
    }

    fn replay(&self, record: &Record<T>, grads: &mut [Option<Vec<T>>]) {
        match record {
            Record::Conv2d { x, w, b, y, geom } => {
                let Some(gy) = grads[y.0].take() else { return };
                let mut dw = std::mem::take(self.grad_buf(grads, *w));
                let mut db = std::mem::take(self.grad_buf(grads, *b));
                kernels::conv::conv2d_backward_weight(
                    self.exec,
                    self.values(*x),
                    &gy,
                    geom,
                    &mut dw,
                    &mut db,
                );
                grads[w.0] = Some(dw);
                grads[b.0] = Some(db);
                kernels::conv::conv2d_backward_input(
                    self.exec,
                    &gy,
                    self.values(*w),
                    geom,
                    self.grad_buf(grads, *x),
                );
            }
            Record::ConvTranspose2d { x, w, b, y, geom } => {
                let Some(gy) = grads[y.0].take() else { return };
                let mut dx = std::mem::take(self.grad_buf(grads, *x));
                let mut dw = std::mem::take(self.grad_buf(grads, *w));
                let mut db = std::mem::take(self.grad_buf(grads, *b));
                kernels::conv::conv_transpose2d_backward(
                    self.exec,
                    self.values(*x),
                    self.values(*w),
                    &gy,
                    geom,
                    &mut dx,
                    &mut dw,
                    &mut db,
                );
                grads[x.0] = Some(dx);
                grads[w.0] = Some(dw);
                grads[b.0] = Some(db);
            }
            Record::InstanceNorm {
                x,
                gain,
                shift,
                y,
                mean,
                inv_std,
            } => {
                let Some(gy) = grads[y.0].take() else { return };
                let shape = self.shape(*x);
                let mut dx = std::mem::take(self.grad_buf(grads, *x));
                let mut dgain = std::mem::take(self.grad_buf(grads, *gain));
                let mut dshift = std::mem::take(self.grad_buf(grads, *shift));
                norm::instance_norm_backward(
                    self.exec,
                    self.values(*x),
                    self.values(*gain),
                    shape,
                    mean,
                    inv_std,
                    &gy,
                    &mut dx,
                    &mut dgain,
                    &mut dshift,
                );
                grads[x.0] = Some(dx);
                grads[gain.0] = Some(dgain);
                grads[shift.0] = Some(dshift);
            }
            Record::Pointwise { x, y, kind } => {
                let Some(gy) = grads[y.0].take() else { return };
                elem::pointwise_backward(
                    self.exec,
                    self.values(*x),
                    self.values(*y),
                    &gy,
                    *kind,
                    self.grad_buf(grads, *x),
                );
            }
            Record::Concat { xs, y } => {
                let Some(gy) = grads[y.0].take() else { return };
                let out = self.shape(*y);
                let plane = out.h * out.w;
                for n in 0..out.n {
                    let mut src = n * out.c * plane;
                    for &v in xs {
                        let s = self.shape(v);
                        let len = s.c * plane;
                        let dx = self.grad_buf(grads, v);
                        for (d, g) in dx[n * len..(n + 1) * len]
                            .iter_mut()
                            .zip(&gy[src..src + len])
                        {
                            *d = *d + *g;
                        }
                        src += len;
                    }
                }
            }
            Record::Add { a, b, y } => {
                let Some(gy) = grads[y.0].take() else { return };
                for v in [*a, *b] {
                    let d = self.grad_buf(grads, v);
                    for (di, gi) in d.iter_mut().zip(&gy) {
                        *di = *di + *gi;
                    }
                }
            }
            Record::Sub { a, b, y } => {
                let Some(gy) = grads[y.0].take() else { return };
                {
                    let da = self.grad_buf(grads, *a);
                    for (di, gi) in da.iter_mut().zip(&gy) {
                        *di = *di + *gi;
                    }
                }
                let db = self.grad_buf(grads, *b);
                for (di, gi) in db.iter_mut().zip(&gy) {
                    *di = *di - *gi;
                }
            }
            Record::Scale { x, y, factor } => {
                let Some(gy) = grads[y.0].take() else { return };
                let d = self.grad_buf(grads, *x);
                for (di, gi) in d.iter_mut().zip(&gy) {
                    *di = *di + *gi * *factor;
                }
            }
            Record::Reduce { x, y, kind } => {
                let Some(gy) = grads[y.0].take() else { return };
                elem::reduce_backward(self.values(*x), *kind, gy[0], self.grad_buf(grads, *x));
            }
            Record::MeanSpatial { x, y } => {
                let Some(gy) = grads[y.0].take() else { return };
                norm::mean_spatial_backward(
                    self.exec,
                    &gy,
                    self.shape(*x),
                    self.grad_buf(grads, *x),
                );
            }
            Record::SoftmaxCrossEntropy {
                logits,
                y,
                labels,
                probs,
            } => {
                let Some(gy) = grads[y.0].take() else { return };
                let classes = self.shape(*logits).c;
                elem::softmax_cross_entropy_backward(
                    probs,
                    classes,
                    labels,
                    gy[0],
                    self.grad_buf(grads, *logits),
                );
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn leaf4(tape: &mut Tape<f32>, vals: &[f32]) -> Var {
        tape.leaf(Shape::new(1, 1, 2, 2), vals.to_vec()).unwrap()
    }

    #[test]
    fn residual_add_hand_sum() {
        let mut tape = Tape::<f32>::new();
        let a = leaf4(&mut tape, &[1.0, 2.0, 3.0, 4.0]);
        let b = leaf4(&mut tape, &[4.0, 3.0, 2.0, 1.0]);
        let y = tape.residual_add(a, b).unwrap();
        assert_eq!(tape.values(y), &[5.0; 4]);
    }

    #[test]
    fn residual_add_passes_gradient_to_both() {
        let mut tape = Tape::<f32>::new();
        let a = leaf4(&mut tape, &[1.0, 2.0, 3.0, 4.0]);
        let b = leaf4(&mut tape, &[4.0, 3.0, 2.0, 1.0]);
        let y = tape.residual_add(a, b).unwrap();
        let mut g = tape.backward_seeded(y, vec![0.5, 1.0, 1.5, 2.0]);
        assert_eq!(g.take(a).unwrap(), vec![0.5, 1.0, 1.5, 2.0]);
        assert_eq!(g.take(b).unwrap(), vec![0.5, 1.0, 1.5, 2.0]);
    }

    #[test]
    fn adding_zero_is_identity() {
        let mut tape = Tape::<f32>::new();
        let a = leaf4(&mut tape, &[1.0, -2.0, 3.5, 0.0]);
        let z = leaf4(&mut tape, &[0.0; 4]);
        let y = tape.residual_add(a, z).unwrap();
        assert_eq!(tape.values(y), tape.values(a));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut tape = Tape::<f32>::new();
        let a = leaf4(&mut tape, &[0.0; 4]);
        let b = tape.leaf(Shape::new(1, 1, 1, 2), vec![0.0; 2]).unwrap();
        assert!(tape.residual_add(a, b).is_err());
    }

    #[test]
    fn concat_shapes_and_identity() {
        let mut tape = Tape::<f32>::new();
        let a = tape
            .leaf(Shape::new(1, 2, 4, 4), (0..32).map(|i| i as f32).collect())
            .unwrap();
        let b = tape
            .leaf(Shape::new(1, 3, 4, 4), vec![1.0; 48])
            .unwrap();
        let y = tape.concat_channels(&[a, b]).unwrap();
        assert_eq!(tape.shape(y), Shape::new(1, 5, 4, 4));
        // Single-input concat is a bitwise copy.
        let single = tape.concat_channels(&[a]).unwrap();
        assert_eq!(tape.values(single), tape.values(a));
    }

    #[test]
    fn concat_spatial_mismatch_rejected() {
        let mut tape = Tape::<f32>::new();
        let a = tape.leaf(Shape::new(1, 1, 4, 4), vec![0.0; 16]).unwrap();
        let b = tape.leaf(Shape::new(1, 1, 3, 4), vec![0.0; 12]).unwrap();
        assert!(tape.concat_channels(&[a, b]).is_err());
    }

    #[test]
    fn concat_gradient_splits_back() {
        // d sum(concat(a, b)) / da == ones of a's shape.
        let mut tape = Tape::<f32>::new();
        let a = tape.leaf(Shape::new(1, 2, 2, 2), vec![0.3; 8]).unwrap();
        let b = tape.leaf(Shape::new(1, 1, 2, 2), vec![0.7; 4]).unwrap();
        let y = tape.concat_channels(&[a, b]).unwrap();
        let mut g = tape.backward_seeded(y, vec![1.0; 12]);
        assert_eq!(g.take(a).unwrap(), vec![1.0; 8]);
        assert_eq!(g.take(b).unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn mean_abs_of_difference_is_zero_on_equal_inputs() {
        let mut tape = Tape::<f32>::new();
        let a = leaf4(&mut tape, &[1.0, 2.0, 3.0, 4.0]);
        let b = leaf4(&mut tape, &[1.0, 2.0, 3.0, 4.0]);
        let d = tape.sub(a, b).unwrap();
        let loss = tape.reduce_loss(d, LossKind::MeanAbs);
        assert_eq!(tape.scalar(loss), 0.0);
    }

    #[test]
    fn nan_guard_names_the_op() {
        let mut tape = Tape::<f32>::new();
        let a = leaf4(&mut tape, &[1.0, 2.0, 3.0, 4.0]);
        assert!(tape.first_non_finite().is_none());
        let bad = leaf4(&mut tape, &[f32::NAN, 0.0, 0.0, 0.0]);
        let _ = tape.residual_add(a, bad);
        let (node, op) = tape.first_non_finite().unwrap();
        assert_eq!(node, bad.0);
        assert_eq!(op, "leaf");
    }
}
