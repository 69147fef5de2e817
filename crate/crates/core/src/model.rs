//! A complete forecaster: IMV cell plus mixture-attention head.

use rand::Rng;

use crate::cell::{unroll_on, CellConfig, CellVars, ImvCellParams};
use crate::error::{ImvError, Result};
use crate::mixture::{forward_head_on, AttentionParams, HeadConfig, HeadVars, MixtureOutput, MixtureVars};
use crate::ndtape::{NdArray, Tape, Var};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct ImvModel<S> {
    pub cell: ImvCellParams<S>,
    pub head: AttentionParams<S>,
}

/// Handles of one recorded forward pass.
#[derive(Clone, Debug)]
pub struct ForwardPass {
    /// Parameter handles, aligned with [`ImvModel::tensors`].
    pub params: Vec<Var>,
    pub hidden: Vec<Var>,
    pub mix: MixtureVars,
}

impl<S: Scalar> ImvModel<S> {
    pub fn init<R: Rng + ?Sized>(cell: CellConfig, head: HeadConfig, rng: &mut R) -> Result<Self> {
        Self::check_configs(&cell, &head)?;
        let cell = ImvCellParams::init(cell, rng);
        let head = AttentionParams::init(head, rng);
        Ok(ImvModel { cell, head })
    }

    fn check_configs(cell: &CellConfig, head: &HeadConfig) -> Result<()> {
        cell.validate()?;
        if head.n_vars != cell.n_vars || head.per_var_dim != cell.per_var_dim {
            return Err(ImvError::Argument(format!(
                "head {head:?} does not match cell {cell:?}"
            )));
        }
        if head.hidden == 0 || !(head.sigma_min > 0.0) {
            return Err(ImvError::Argument(format!("invalid head config {head:?}")));
        }
        Ok(())
    }

    pub fn cell_config(&self) -> CellConfig {
        self.cell.config
    }

    pub fn head_config(&self) -> HeadConfig {
        self.head.config
    }

    pub fn n_vars(&self) -> usize {
        self.cell.config.n_vars
    }

    /// All trainable tensors: cell first, then head.
    pub fn tensors(&self) -> Vec<&NdArray<S>> {
        let cell = self.cell.named_tensors().into_iter().map(|(_, t)| t);
        let head = self.head.named_tensors().into_iter().map(|(_, t)| t);
        cell.chain(head).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut NdArray<S>> {
        let mut out = self.cell.tensors_mut();
        out.extend(self.head.tensors_mut());
        out
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn cast<T: Scalar>(&self) -> ImvModel<T> {
        let mut out = ImvModel {
            cell: ImvCellParams::zeros(self.cell.config),
            head: AttentionParams::zeros(self.head.config),
        };
        for (dst, src) in out.tensors_mut().into_iter().zip(self.tensors()) {
            *dst = src.cast();
        }
        out
    }

    /// Record a forward pass over `window` (row-major `T×N×d₀`).
    pub fn forward(&self, tape: &mut Tape<S>, window: &[S], y: Option<S>, tracked: bool) -> Result<ForwardPass> {
        let cv: CellVars = self.cell.register(tape, tracked);
        let hv: HeadVars = self.head.register(tape, tracked);
        let hidden = unroll_on(tape, &cv, window)?;
        let mix = forward_head_on(tape, &hv, &hidden, y)?;
        let mut params = cv.handles();
        params.extend(hv.handles());
        Ok(ForwardPass { params, hidden, mix })
    }

    /// Head outputs for a window, with the target scored if given.
    pub fn evaluate(&self, window: &[S], y: Option<S>) -> Result<MixtureOutput<S>> {
        let mut tape = Tape::new();
        let fp = self.forward(&mut tape, window, y, false)?;
        Ok(MixtureOutput::read(&tape, &fp.mix))
    }

    /// Point forecast for a window, reusing `tape`'s allocations.
    pub fn predict_with(&self, tape: &mut Tape<S>, window: &[S]) -> Result<S> {
        tape.clear();
        let fp = self.forward(tape, window, None, false)?;
        Ok(crate::mixture::predict(tape.data(fp.mix.prior), tape.data(fp.mix.mu)))
    }
}
