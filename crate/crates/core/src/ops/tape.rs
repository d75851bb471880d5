//! Parameter storage and the reverse-mode tape used for BPTT.
//!
//! A forward pass in train mode pushes one node per executed op, in order,
//! each holding the activations its backward rule needs. Time is unrolled
//! inside the PLIF nodes, so replaying the tape backwards is
//! backpropagation through both layers and time.

use super::conv::{conv1d_backward, conv2d_backward, ConvGeom};
use super::linear::linear_backward;
use super::norm::{batchnorm_backward, BnCache};
use super::pool::{avgpool_time_backward, global_avgpool_backward};
use crate::error::{Error, Result};
use crate::spike::{plif_layer_backward, PlifParams, PlifTrace};
use crate::tensor::DenseTensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named flat parameter blocks with their logical extents.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    values: Vec<Vec<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: impl Into<String>, shape: Vec<usize>, values: Vec<f64>) -> ParamId {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.names.push(name.into());
        self.shapes.push(shape);
        self.values.push(values);
        ParamId(self.values.len() - 1)
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.values[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn shape(&self, id: ParamId) -> &[usize] {
        &self.shapes[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }
}

/// Gradient buffers aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads {
    values: Vec<Vec<f64>>,
}

impl Grads {
    pub fn zeros_like(params: &ParamStore) -> Self {
        Self { values: params.values.iter().map(|v| vec![0.0; v.len()]).collect() }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.values[id.0]
    }

    pub fn accumulate(&mut self, id: ParamId, g: &[f64]) {
        for (a, b) in self.values[id.0].iter_mut().zip(g) {
            *a += b;
        }
    }

    pub fn accumulate_scalar(&mut self, id: ParamId, g: f64) {
        self.values[id.0][0] += g;
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.values.iter().enumerate().map(|(i, v)| (ParamId(i), v.as_slice()))
    }

    pub fn l2_norm(&self) -> f64 {
        self.values.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }
}

pub struct BackwardCtx<'a> {
    pub params: &'a ParamStore,
    pub grads: &'a mut Grads,
    skip: Vec<DenseTensor>,
}

/// One recorded op. `backward` maps dL/doutput to dL/dinput and adds
/// parameter gradients into the context.
pub trait TapeOp: Send {
    fn name(&self) -> &'static str;
    fn backward(&self, ctx: &mut BackwardCtx<'_>, grad_out: DenseTensor) -> Result<DenseTensor>;
}

#[derive(Default)]
pub struct GradientTape {
    ops: Vec<Box<dyn TapeOp>>,
}

impl GradientTape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, op: impl TapeOp + 'static) {
        self.ops.push(Box::new(op));
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn op_names(&self) -> Vec<&'static str> {
        self.ops.iter().map(|o| o.name()).collect()
    }

    /// Replays the tape in reverse from `loss_grad` (dL/d final output).
    pub fn backward(&self, params: &ParamStore, loss_grad: DenseTensor) -> Result<Grads> {
        self.backward_with_input(params, loss_grad).map(|(g, _)| g)
    }

    /// As [`GradientTape::backward`], also returning dL/d(first input).
    pub fn backward_with_input(&self, params: &ParamStore, loss_grad: DenseTensor) -> Result<(Grads, DenseTensor)> {
        if self.ops.is_empty() {
            return Err(Error::EmptyTape);
        }
        let mut grads = Grads::zeros_like(params);
        let mut ctx = BackwardCtx { params, grads: &mut grads, skip: Vec::new() };
        let mut g = loss_grad;
        for op in self.ops.iter().rev() {
            g = op.backward(&mut ctx, g)?;
        }
        if !ctx.skip.is_empty() {
            return Err(Error::Invariant("unmatched residual branch on tape".into()));
        }
        Ok((grads, g))
    }
}

/// Free-function form of [`GradientTape::backward`].
pub fn tape_backward(tape: &GradientTape, params: &ParamStore, loss_grad: DenseTensor) -> Result<Grads> {
    tape.backward(params, loss_grad)
}

pub struct ConvNode {
    pub input: DenseTensor,
    pub geom: ConvGeom,
    pub weight: ParamId,
    pub need_input_grad: bool,
}

impl TapeOp for ConvNode {
    fn name(&self) -> &'static str {
        "conv"
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_>, grad_out: DenseTensor) -> Result<DenseTensor> {
        let w = ctx.params.get(self.weight);
        let (gin, gw) = if self.input.rank() == 3 {
            conv1d_backward(&self.input, w, &self.geom, &grad_out, self.need_input_grad)?
        } else {
            conv2d_backward(&self.input, w, &self.geom, &grad_out, self.need_input_grad)?
        };
        ctx.grads.accumulate(self.weight, &gw);
        Ok(gin.unwrap_or_else(|| DenseTensor::zeros(self.input.shape().to_vec())))
    }
}

pub struct BatchNormNode {
    pub cache: BnCache,
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl TapeOp for BatchNormNode {
    fn name(&self) -> &'static str {
        "batchnorm"
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_>, grad_out: DenseTensor) -> Result<DenseTensor> {
        let (gx, gg, gb) = batchnorm_backward(&self.cache, ctx.params.get(self.gamma), &grad_out)?;
        ctx.grads.accumulate(self.gamma, &gg);
        ctx.grads.accumulate(self.beta, &gb);
        Ok(gx)
    }
}

pub struct AvgPoolNode {
    pub input_shape: Vec<usize>,
    pub window: usize,
}

impl TapeOp for AvgPoolNode {
    fn name(&self) -> &'static str {
        "avgpool"
    }

    fn backward(&self, _ctx: &mut BackwardCtx<'_>, grad_out: DenseTensor) -> Result<DenseTensor> {
        avgpool_time_backward(&self.input_shape, self.window, &grad_out)
    }
}

/// PLIF layer; `w` is a one-element block holding the layer's time-constant logit.
pub struct PlifNode {
    pub params: PlifParams,
    pub w: ParamId,
    pub trace: PlifTrace,
    pub shape: Vec<usize>,
}

impl TapeOp for PlifNode {
    fn name(&self) -> &'static str {
        "plif"
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_>, grad_out: DenseTensor) -> Result<DenseTensor> {
        let (gx, gw) = plif_layer_backward(&self.params, &self.trace, grad_out.data())?;
        ctx.grads.accumulate_scalar(self.w, gw);
        DenseTensor::new(self.shape.clone(), gx)
    }
}

pub struct ReshapeNode {
    pub input_shape: Vec<usize>,
}

impl TapeOp for ReshapeNode {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, _ctx: &mut BackwardCtx<'_>, grad_out: DenseTensor) -> Result<DenseTensor> {
        grad_out.reshape(self.input_shape.clone())
    }
}

/// Marks the tensor that a later [`ResidualAddNode`] adds back.
pub struct ResidualSaveNode;

impl TapeOp for ResidualSaveNode {
    fn name(&self) -> &'static str {
        "residual_save"
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_>, mut grad_out: DenseTensor) -> Result<DenseTensor> {
        let skip = ctx.skip.pop().ok_or_else(|| Error::Invariant("residual save without add".into()))?;
        grad_out.add_assign(&skip)?;
        Ok(grad_out)
    }
}

pub struct ResidualAddNode;

impl TapeOp for ResidualAddNode {
    fn name(&self) -> &'static str {
        "residual_add"
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_>, grad_out: DenseTensor) -> Result<DenseTensor> {
        ctx.skip.push(grad_out.clone());
        Ok(grad_out)
    }
}

pub struct GlobalAvgPoolNode {
    pub input_shape: Vec<usize>,
}

impl TapeOp for GlobalAvgPoolNode {
    fn name(&self) -> &'static str {
        "global_avgpool"
    }

    fn backward(&self, _ctx: &mut BackwardCtx<'_>, grad_out: DenseTensor) -> Result<DenseTensor> {
        global_avgpool_backward(&self.input_shape, &grad_out)
    }
}

pub struct DropoutNode {
    pub mask: Vec<f64>,
}

impl TapeOp for DropoutNode {
    fn name(&self) -> &'static str {
        "dropout"
    }

    fn backward(&self, _ctx: &mut BackwardCtx<'_>, mut grad_out: DenseTensor) -> Result<DenseTensor> {
        for (g, m) in grad_out.data_mut().iter_mut().zip(&self.mask) {
            *g *= m;
        }
        Ok(grad_out)
    }
}

pub struct LinearNode {
    pub input: DenseTensor,
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl TapeOp for LinearNode {
    fn name(&self) -> &'static str {
        "linear"
    }

    fn backward(&self, ctx: &mut BackwardCtx<'_>, grad_out: DenseTensor) -> Result<DenseTensor> {
        let (gx, gw, gb) = linear_backward(&self.input, ctx.params.get(self.weight), &grad_out)?;
        ctx.grads.accumulate(self.weight, &gw);
        if let Some(b) = self.bias {
            ctx.grads.accumulate(b, &gb);
        }
        Ok(gx)
    }
}
