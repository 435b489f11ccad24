use super::{ActivationMessage, FedError, GradientMessage, Link, Message};
use crate::autodiff::{Adam, AdamConfig, Graph, Var};
use crate::data::PartyMatrix;
use crate::losses::RegForm;
use crate::models::{ActiveModel, Bound, PartyInput, PassiveModel};

/// Optimizer settings shared by both parties.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PartyConfig {
    pub lr: f64,
    pub lambda: f64,
    pub reg: RegForm,
    pub adam: AdamConfig,
}

fn regularized(
    g: &mut Graph,
    loss: Var,
    reg: Option<Var>,
    lambda: f64,
) -> Result<Var, FedError> {
    Ok(match reg {
        Some(r) => {
            let r = g.scale(r, lambda)?;
            g.add(loss, r)?
        }
        None => loss,
    })
}

/// Label owner: holds `e_A`, `f_A`, the top model and the labels.
pub struct ActiveParty<L> {
    pub model: ActiveModel,
    x_a: PartyMatrix,
    labels: Vec<f64>,
    row_ids: Vec<usize>,
    adam: Adam,
    link: L,
    cfg: PartyConfig,
}

impl<L: Link> ActiveParty<L> {
    pub fn new(
        model: ActiveModel,
        x_a: PartyMatrix,
        labels: &[u8],
        row_ids: Vec<usize>,
        link: L,
        cfg: PartyConfig,
    ) -> Self {
        let adam = Adam::new(model.store.values(), cfg.adam);
        Self {
            model,
            x_a,
            labels: labels.iter().map(|&y| f64::from(y)).collect(),
            row_ids,
            adam,
            link,
            cfg,
        }
    }

    /// Receives the step's activations, computes the loss, returns the
    /// activation gradient and, only once that send succeeded, updates its
    /// own parameters.
    pub fn step(&mut self, step: u64, rows: &[usize]) -> Result<f64, FedError> {
        let msg = match self.link.recv(step)? {
            Message::Activation(m) => m,
            Message::Gradient(_) => {
                return Err(FedError::Protocol("active party received a gradient".into()))
            }
        };
        if msg.step != step {
            return Err(FedError::StepMismatch {
                expected: step,
                got: msg.step,
            });
        }
        let ids: Vec<usize> = rows.iter().map(|&r| self.row_ids[r]).collect();
        if msg.row_ids != ids {
            return Err(FedError::Protocol(format!("row ids of step {step} disagree")));
        }
        let width = self.model.top.input_width() - self.model.bottom.output_width();
        let expected = vec![rows.len(), width];
        if msg.h_b.shape() != expected.as_slice() {
            return Err(FedError::Shape {
                expected,
                got: msg.h_b.shape().to_vec(),
            });
        }

        let mut g = Graph::new();
        let p = self.model.store.bind(&mut g, false);
        let h_b = g.variable(msg.h_b);
        let h_a = self.model.hidden(&mut g, &p, PartyInput::new(&self.x_a, rows))?;
        let z = self.model.top_logit(&mut g, &p, h_a, h_b)?;
        let y: Vec<f64> = rows.iter().map(|&r| self.labels[r]).collect();
        let ce = g.bce_with_logits(z, &y)?;
        let reg = self.reg(&mut g, &p)?;
        let loss = regularized(&mut g, ce, reg, self.cfg.lambda)?;
        let grads = g.backward(loss)?;
        let grad_hb = grads.get_or_zeros(&g, h_b);
        let param_grads = p.grads(&g, &grads);

        self.link.send(Message::Gradient(GradientMessage { step, grad: grad_hb }))?;
        self.adam
            .step(self.model.store.values_mut(), &param_grads, self.cfg.lr)?;
        Ok(g.item(ce))
    }

    fn reg(&self, g: &mut Graph, p: &Bound) -> Result<Option<Var>, FedError> {
        if self.cfg.lambda == 0.0 {
            return Ok(None);
        }
        Ok(Some(match self.cfg.reg {
            RegForm::Squared => self.model.emb.l2_sq(g, p)?,
            RegForm::Plain => self.model.emb.l2(g, p)?,
        }))
    }

    pub fn step_count(&self) -> u64 {
        self.adam.step_count()
    }
}

/// Forward state kept by the passive party until the gradient arrives.
pub struct PendingStep {
    step: u64,
    graph: Graph,
    bound: Bound,
    h_b: Var,
}

/// Feature-only party: holds `e_B`, `f_B` and its columns, never labels.
pub struct PassiveParty<L> {
    pub model: PassiveModel,
    x_b: PartyMatrix,
    row_ids: Vec<usize>,
    adam: Adam,
    link: L,
    cfg: PartyConfig,
}

impl<L: Link> PassiveParty<L> {
    pub fn new(model: PassiveModel, x_b: PartyMatrix, row_ids: Vec<usize>, link: L, cfg: PartyConfig) -> Self {
        let adam = Adam::new(model.store.values(), cfg.adam);
        Self {
            model,
            x_b,
            row_ids,
            adam,
            link,
            cfg,
        }
    }

    /// Computes `h_B` for the rows and ships it.
    pub fn begin(&mut self, step: u64, rows: &[usize]) -> Result<PendingStep, FedError> {
        let mut g = Graph::new();
        let p = self.model.store.bind(&mut g, false);
        let h_b = self.model.hidden(&mut g, &p, PartyInput::new(&self.x_b, rows))?;
        let msg = ActivationMessage {
            step,
            row_ids: rows.iter().map(|&r| self.row_ids[r]).collect(),
            h_b: g.value(h_b).clone(),
        };
        self.link.send(Message::Activation(msg))?;
        Ok(PendingStep {
            step,
            graph: g,
            bound: p,
            h_b,
        })
    }

    /// Waits for the matching gradient and backpropagates it. Any failure
    /// discards the pending step without touching parameters.
    pub fn finish(&mut self, pending: PendingStep) -> Result<(), FedError> {
        let PendingStep {
            step,
            mut graph,
            bound,
            h_b,
        } = pending;
        let msg = match self.link.recv(step)? {
            Message::Gradient(m) => m,
            Message::Activation(_) => {
                return Err(FedError::Protocol("passive party received an activation".into()))
            }
        };
        if msg.step != step {
            return Err(FedError::StepMismatch {
                expected: step,
                got: msg.step,
            });
        }
        if msg.grad.shape() != graph.value(h_b).shape() {
            return Err(FedError::Shape {
                expected: graph.value(h_b).shape().to_vec(),
                got: msg.grad.shape().to_vec(),
            });
        }
        // Surrogate whose gradient w.r.t. h_B is exactly the received one.
        let gconst = graph.constant(msg.grad);
        let prod = graph.mul(h_b, gconst)?;
        let mut root = graph.sum(prod)?;
        if self.cfg.lambda != 0.0 {
            let r = match self.cfg.reg {
                RegForm::Squared => self.model.emb.l2_sq(&mut graph, &bound)?,
                RegForm::Plain => self.model.emb.l2(&mut graph, &bound)?,
            };
            root = regularized(&mut graph, root, Some(r), self.cfg.lambda)?;
        }
        let grads = graph.backward(root)?;
        let param_grads = bound.grads(&graph, &grads);
        self.adam
            .step(self.model.store.values_mut(), &param_grads, self.cfg.lr)?;
        Ok(())
    }

    pub fn step_count(&self) -> u64 {
        self.adam.step_count()
    }
}

impl<L> std::fmt::Debug for PassiveParty<L> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PassiveParty")
            .field("params", &self.model.store.names())
            .field("rows", &self.x_b.n_rows())
            .field("fields", &self.x_b.n_fields())
            .finish()
    }
}

