//! Recorded normalized-SGD unrolls and their exact meta-gradients.
//!
//! A [`GradTape`] records the decode procedure step by step:
//!
//! ```text
//! for m in 1..=M (leaf k = schedule[m]):
//!     d_m  = ∇_w L(w_{m-1}; X_k, Y_k)
//!     u_m  = d_m / ‖d_m‖
//!     w_m  = w_{m-1} - η_k u_m
//! s = Σ η_k u_m
//! g = H · s / ‖s‖
//! ```
//!
//! [`GradTape::meta_grad`] runs the reverse sweep for a cotangent `∂ℳ/∂g`.
//! Each reverse step needs the vector-Jacobian product of `∇_w L` w.r.t.
//! `(w, X, Y)`, which the objective provides as a forward-over-reverse
//! directional derivative, so no Hessian is ever materialized.

use std::sync::atomic::{AtomicU64, Ordering};

use super::matrix::{dot, norm, Matrix};
use super::mlp::{self, SecondOrder};
use super::model::ArchDescriptor;
use crate::error::{Error, Result};

/// Norms below this are treated as zero by every normalization.
pub const ZERO_NORM_FLOOR: f64 = 1e-12;

/// A differentiable inner training loss `L(w; X, Y)`.
pub trait InnerObjective: Sync {
    fn param_len(&self) -> usize;

    fn check_batch(&self, x: &Matrix, y: &Matrix) -> Result<()>;

    /// `∇_w L(w; X, Y)`.
    fn grad(&self, w: &[f64], x: &Matrix, y: &Matrix) -> Vec<f64>;

    /// Gradient of `⟨v, ∇_w L(w; X, Y)⟩` w.r.t. `w`, `X` and `Y`.
    fn grad_vjp(&self, w: &[f64], x: &Matrix, y: &Matrix, v: &[f64]) -> SecondOrder;
}

impl InnerObjective for ArchDescriptor {
    fn param_len(&self) -> usize {
        self.param_count()
    }

    fn check_batch(&self, x: &Matrix, y: &Matrix) -> Result<()> {
        mlp::check_labels(self, x, y)
    }

    fn grad(&self, w: &[f64], x: &Matrix, y: &Matrix) -> Vec<f64> {
        mlp::grad_raw(self, w, x, y)
    }

    fn grad_vjp(&self, w: &[f64], x: &Matrix, y: &Matrix, v: &[f64]) -> SecondOrder {
        mlp::second_order_raw(self, w, x, y, v)
    }
}

static NEXT_TAPE: AtomicU64 = AtomicU64::new(1);

/// Handle to a leaf registered on a particular tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LeafId {
    tape: u64,
    index: usize,
}

impl LeafId {
    pub fn index(&self) -> usize {
        self.index
    }
}

struct Leaf<'a> {
    x: &'a Matrix,
    y: &'a Matrix,
    eta: f64,
}

struct Step {
    leaf: usize,
    w_prev: Vec<f64>,
    unit: Vec<f64>,
    norm: f64,
}

struct Finish {
    h: f64,
    sum_norm: f64,
    direction: Vec<f64>,
    update: Vec<f64>,
}

/// Derivatives of a scalar meta-loss w.r.t. every registered leaf.
#[derive(Debug, Clone, PartialEq)]
pub struct LeafGrads {
    pub x: Vec<Matrix>,
    pub y: Vec<Matrix>,
    pub eta: Vec<f64>,
}

pub struct GradTape<'a, O: InnerObjective + ?Sized> {
    id: u64,
    objective: &'a O,
    leaves: Vec<Leaf<'a>>,
    steps: Vec<Step>,
    current: Vec<f64>,
    sum: Vec<f64>,
    finish: Option<Finish>,
    poisoned: bool,
}

impl<'a, O: InnerObjective + ?Sized> GradTape<'a, O> {
    pub fn new(objective: &'a O, w0: &[f64]) -> Result<Self> {
        if w0.len() != objective.param_len() {
            return Err(Error::Shape(format!(
                "initial parameters have {} entries, objective needs {}",
                w0.len(),
                objective.param_len()
            )));
        }
        Ok(Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            objective,
            leaves: Vec::new(),
            steps: Vec::new(),
            current: w0.to_vec(),
            sum: vec![0.0; w0.len()],
            finish: None,
            poisoned: false,
        })
    }

    pub fn leaf(&mut self, x: &'a Matrix, y: &'a Matrix, eta: f64) -> Result<LeafId> {
        self.objective.check_batch(x, y)?;
        if !eta.is_finite() {
            return Err(Error::NonFinite("step size"));
        }
        self.leaves.push(Leaf { x, y, eta });
        Ok(LeafId {
            tape: self.id,
            index: self.leaves.len() - 1,
        })
    }

    fn resolve(&self, leaf: LeafId) -> Result<usize> {
        if leaf.tape != self.id || leaf.index >= self.leaves.len() {
            return Err(Error::Tape("leaf was not registered on this tape".into()));
        }
        Ok(leaf.index)
    }

    fn check_open(&self) -> Result<()> {
        if self.poisoned {
            return Err(Error::Tape("tape was abandoned after a degenerate step".into()));
        }
        if self.finish.is_some() {
            return Err(Error::Tape("tape is already finished".into()));
        }
        Ok(())
    }

    /// Records one normalized gradient step on the given leaf.
    pub fn step(&mut self, leaf: LeafId) -> Result<()> {
        self.check_open()?;
        let k = self.resolve(leaf)?;
        let l = &self.leaves[k];
        let raw = self.objective.grad(&self.current, l.x, l.y);
        let n = norm(&raw);
        if n.is_nan() || n < ZERO_NORM_FLOOR {
            self.poisoned = true;
            return Err(Error::Degenerate(format!(
                "step {} gradient norm {n:e} is below the zero-norm floor",
                self.steps.len() + 1
            )));
        }
        let unit: Vec<f64> = raw.iter().map(|v| v / n).collect();
        let w_prev = self.current.clone();
        for ((w, s), u) in self.current.iter_mut().zip(self.sum.iter_mut()).zip(&unit) {
            let gm = l.eta * u;
            *w -= gm;
            *s += gm;
        }
        self.steps.push(Step {
            leaf: k,
            w_prev,
            unit,
            norm: n,
        });
        Ok(())
    }

    /// Rescales the accumulated update to norm `h` and closes the tape.
    pub fn finish(&mut self, h: f64) -> Result<&[f64]> {
        self.check_open()?;
        if self.steps.is_empty() {
            return Err(Error::Tape("no steps recorded".into()));
        }
        if !(h >= 0.0 && h.is_finite()) {
            return Err(Error::Degenerate(format!("update norm {h} is not a finite non-negative value")));
        }
        let n = norm(&self.sum);
        if n.is_nan() || n < ZERO_NORM_FLOOR {
            self.poisoned = true;
            return Err(Error::Degenerate(format!(
                "summed update norm {n:e} is below the zero-norm floor"
            )));
        }
        let direction: Vec<f64> = self.sum.iter().map(|v| v / n).collect();
        let update = direction.iter().map(|v| h * v).collect();
        self.finish = Some(Finish {
            h,
            sum_norm: n,
            direction,
            update,
        });
        Ok(&self.finish.as_ref().expect("just set").update)
    }

    pub fn update(&self) -> Option<&[f64]> {
        self.finish.as_ref().map(|f| f.update.as_slice())
    }

    /// Parameters after the last recorded step, before final rescaling.
    pub fn current_params(&self) -> &[f64] {
        &self.current
    }

    pub fn num_steps(&self) -> usize {
        self.steps.len()
    }

    /// Derivatives of `ℳ` w.r.t. every leaf, given `cotangent = ∂ℳ/∂g`.
    pub fn meta_grad(&self, cotangent: &[f64]) -> Result<LeafGrads> {
        let fin = match (&self.finish, self.poisoned) {
            (Some(f), false) => f,
            _ => {
                return Err(Error::Tape(
                    "meta_grad requires a finished, non-degenerate recording".into(),
                ))
            }
        };
        if cotangent.len() != self.current.len() {
            return Err(Error::Shape("cotangent length differs from parameter count".into()));
        }
        let mut grads = LeafGrads {
            x: self.leaves.iter().map(|l| Matrix::zeros(l.x.rows(), l.x.cols())).collect(),
            y: self.leaves.iter().map(|l| Matrix::zeros(l.y.rows(), l.y.cols())).collect(),
            eta: vec![0.0; self.leaves.len()],
        };

        // g = H s/‖s‖  =>  s̄ = (H/‖s‖)(I - ŝŝᵀ) ḡ
        let proj = dot(&fin.direction, cotangent);
        let scale = fin.h / fin.sum_norm;
        let sum_bar: Vec<f64> = cotangent
            .iter()
            .zip(&fin.direction)
            .map(|(c, d)| scale * (c - d * proj))
            .collect();

        let mut w_bar = vec![0.0; self.current.len()];
        let mut step_bar = vec![0.0; self.current.len()];
        let mut raw_bar = vec![0.0; self.current.len()];
        for step in self.steps.iter().rev() {
            let leaf = &self.leaves[step.leaf];
            // g_m feeds the running sum directly and w_m = w_{m-1} - g_m
            for ((gb, s), w) in step_bar.iter_mut().zip(&sum_bar).zip(&w_bar) {
                *gb = s - w;
            }
            grads.eta[step.leaf] += dot(&step_bar, &step.unit);
            // u = d/‖d‖  =>  d̄ = (I - uuᵀ) ū / ‖d‖, with ū = η ḡ_m
            let along = dot(&step.unit, &step_bar);
            let k = leaf.eta / step.norm;
            for ((rb, gb), u) in raw_bar.iter_mut().zip(&step_bar).zip(&step.unit) {
                *rb = k * (gb - u * along);
            }
            let so = self
                .objective
                .grad_vjp(&step.w_prev, leaf.x, leaf.y, &raw_bar);
            for (wb, d) in w_bar.iter_mut().zip(&so.w) {
                *wb += d;
            }
            for (xb, d) in grads.x[step.leaf].as_mut_slice().iter_mut().zip(&so.x) {
                *xb += d;
            }
            for (yb, d) in grads.y[step.leaf].as_mut_slice().iter_mut().zip(&so.y) {
                *yb += d;
            }
        }
        Ok(grads)
    }
}
