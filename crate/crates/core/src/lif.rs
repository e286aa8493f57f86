//! Discrete leaky integrate-and-fire dynamics.
//!
//! One step of a hidden neuron:
//!
//! ```text
//! u_pre = λ·u_prev·(1 − o_prev) + I + (1 − λ)·u_rest
//! o     = 1 if u_pre ≥ u_th else 0
//! u     = u_rest if o = 1 else u_pre
//! ```
//!
//! Backward replaces `do/du_pre` by the rectangular window
//! `(1/a)·𝟙[|u_pre − u_th| < a/2]`; the reset and the `(1 − o_prev)`
//! factor are treated as constants. The output layer integrates the same
//! way but never fires, and its mean membrane over the window is the
//! readout.
//!
//! The free functions on [`Tensor`] are the value-level reference; the
//! `*_on_tape` variants record the same arithmetic for training.

use crate::autodiff::{rect_surrogate, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LifConfig {
    pub time_steps: usize,
    pub threshold: f64,
    pub leak: f64,
    pub u_rest: f64,
    pub surrogate_width: f64,
}

impl Default for LifConfig {
    fn default() -> Self {
        Self {
            time_steps: 8,
            threshold: 0.25,
            leak: 1.0,
            u_rest: 0.0,
            surrogate_width: 1.0,
        }
    }
}

impl LifConfig {
    pub fn validate(&self) -> Result<()> {
        if self.time_steps == 0 {
            return Err(Error::Config("time_steps must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.leak) {
            return Err(Error::Config(format!("leak {} outside [0, 1]", self.leak)));
        }
        if !(self.threshold > self.u_rest) {
            return Err(Error::Config(format!(
                "threshold {} must exceed u_rest {}",
                self.threshold, self.u_rest
            )));
        }
        if !(self.surrogate_width > 0.0) || !self.surrogate_width.is_finite() {
            return Err(Error::Config("surrogate_width must be positive".into()));
        }
        Ok(())
    }
}

/// Membrane potentials and spikes of a population after a step.
#[derive(Clone, Debug, PartialEq)]
pub struct LifState<S> {
    pub u: Tensor<S>,
    pub o: Tensor<S>,
}

impl<S: Scalar> LifState<S> {
    /// Everything at rest, nothing fired.
    pub fn rest(rows: usize, cols: usize, cfg: &LifConfig) -> Self {
        Self {
            u: Tensor::full(rows, cols, S::of(cfg.u_rest)),
            o: Tensor::zeros(rows, cols),
        }
    }

    pub fn spike_count(&self) -> usize {
        self.o.data().iter().filter(|&&v| v == S::one()).count()
    }
}

pub fn lif_step<S: Scalar>(state: &LifState<S>, input: &Tensor<S>, cfg: &LifConfig) -> Result<LifState<S>> {
    if state.u.shape() != input.shape() || state.o.shape() != input.shape() {
        return Err(Error::Shape(format!(
            "LIF state {:?} vs input {:?}",
            state.u.shape(),
            input.shape()
        )));
    }
    if !input.is_finite() {
        return Err(Error::NonFinite("LIF input current".into()));
    }
    let (leak, rest, th) = (S::of(cfg.leak), S::of(cfg.u_rest), S::of(cfg.threshold));
    let bias = (S::one() - leak) * rest;
    let mut u = Tensor::zeros(input.rows(), input.cols());
    let mut o = Tensor::zeros(input.rows(), input.cols());
    for k in 0..input.len() {
        let pre = leak * state.u.data()[k] * (S::one() - state.o.data()[k]) + input.data()[k] + bias;
        if pre >= th {
            o.data_mut()[k] = S::one();
            u.data_mut()[k] = rest;
        } else {
            u.data_mut()[k] = pre;
        }
    }
    Ok(LifState { u, o })
}

pub fn surrogate_grad<S: Scalar>(u_pre: &Tensor<S>, cfg: &LifConfig) -> Tensor<S> {
    let (th, a) = (S::of(cfg.threshold), S::of(cfg.surrogate_width));
    u_pre.map(|u| rect_surrogate(u, th, a))
}

/// Constant-current encoding: the same features at every step.
pub fn encode_input<S: Scalar>(features: &Tensor<S>, time_steps: usize) -> Vec<Tensor<S>> {
    vec![features.clone(); time_steps]
}

/// Mean of the output layer's membrane over the window.
pub fn readout<S: Scalar>(membranes: &[Tensor<S>]) -> Result<Tensor<S>> {
    let Some(first) = membranes.first() else {
        return Err(Error::Empty("membrane trace"));
    };
    let mut acc = first.clone();
    for m in &membranes[1..] {
        if m.shape() != acc.shape() {
            return Err(Error::Shape("membrane traces disagree in shape".into()));
        }
        acc.add_assign(m);
    }
    let inv = S::one() / S::of(membranes.len() as f64);
    Ok(acc.map(|v| v * inv))
}

/// Tape handles of a population's state between steps. `spikes` is
/// `None` before the first step and for non-spiking integrators.
#[derive(Clone, Copy, Debug)]
pub struct TapeState {
    pub u: Var,
    pub spikes: Option<Var>,
}

impl TapeState {
    pub fn rest<S: Scalar>(tape: &mut Tape<S>, rows: usize, cols: usize, cfg: &LifConfig) -> Self {
        Self {
            u: tape.constant(Tensor::full(rows, cols, S::of(cfg.u_rest))),
            spikes: None,
        }
    }
}

/// Everything one recorded spiking step produces.
#[derive(Clone, Copy, Debug)]
pub struct StepVars {
    pub u_pre: Var,
    pub spikes: Var,
    pub u: Var,
}

impl StepVars {
    pub fn state(&self) -> TapeState {
        TapeState {
            u: self.u,
            spikes: Some(self.spikes),
        }
    }
}

pub fn step_on_tape<S: Scalar>(tape: &mut Tape<S>, prev: TapeState, input: Var, cfg: &LifConfig) -> Result<StepVars> {
    let u_pre = tape.lif_integrate(prev.u, prev.spikes, input, S::of(cfg.leak), S::of(cfg.u_rest))?;
    let spikes = tape.lif_fire(u_pre, S::of(cfg.threshold), S::of(cfg.surrogate_width));
    let u = tape.lif_reset(u_pre, spikes, S::of(cfg.u_rest))?;
    Ok(StepVars { u_pre, spikes, u })
}

/// Non-spiking integration used by the output layer.
pub fn integrate_on_tape<S: Scalar>(tape: &mut Tape<S>, prev_u: Var, input: Var, cfg: &LifConfig) -> Result<Var> {
    tape.lif_integrate(prev_u, None, input, S::of(cfg.leak), S::of(cfg.u_rest))
}

pub fn readout_on_tape<S: Scalar>(tape: &mut Tape<S>, membranes: &[Var]) -> Result<Var> {
    let Some(&first) = membranes.first() else {
        return Err(Error::Empty("membrane trace"));
    };
    let mut acc = first;
    for &m in &membranes[1..] {
        acc = tape.add(acc, m)?;
    }
    if membranes.len() == 1 {
        return Ok(acc);
    }
    Ok(tape.scale(acc, S::one() / S::of(membranes.len() as f64)))
}
