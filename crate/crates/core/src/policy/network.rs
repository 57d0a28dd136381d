use std::marker::PhantomData;
use std::sync::Arc;

use crate::autodiff::{AutodiffError, Graph, NodeId, ParamLayout, Partition, SlotId};
use crate::env::{NUM_ACTIONS, OBS_DIM};
use crate::scalar::Scalar;

use super::{PolicyConfig, PolicyKind};

/// Stack of dense layers; tanh after every layer but the last.
#[derive(Debug, Clone)]
pub(crate) struct Mlp {
    layers: Vec<(SlotId, SlotId)>,
}

impl Mlp {
    fn build(
        layout: &mut ParamLayout,
        prefix: &str,
        sizes: &[usize],
        partition: Partition,
    ) -> Self {
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, io)| {
                let w = layout.add(format!("{prefix}.l{i}.w"), io[1], io[0], partition);
                let b = layout.add(format!("{prefix}.l{i}.b"), io[1], 1, partition);
                (w, b)
            })
            .collect();
        Self { layers }
    }

    /// Hidden trunk: every layer followed by tanh.
    fn trunk<T: Scalar>(&self, g: &mut Graph<'_, T>, x: NodeId) -> Result<NodeId, AutodiffError> {
        let mut h = x;
        for &(w, b) in &self.layers {
            let z = g.dense(h, w, b)?;
            h = g.tanh(z);
        }
        Ok(h)
    }
}

fn head(layout: &mut ParamLayout, name: &str, inputs: usize, outputs: usize, p: Partition) -> (SlotId, SlotId) {
    let w = layout.add(format!("{name}.w"), outputs, inputs, p);
    let b = layout.add(format!("{name}.b"), outputs, 1, p);
    (w, b)
}

#[derive(Debug, Clone)]
pub(crate) struct HierarchicalNet {
    pub high_trunk: Mlp,
    pub high_out: (SlotId, SlotId),
    /// Critic for the separately trained high level of the fixed-interval baseline.
    pub high_value: Option<(SlotId, SlotId)>,
    pub sub_trunk: Mlp,
    pub logits: (SlotId, SlotId),
    pub gate: (SlotId, SlotId),
    pub value: (SlotId, SlotId),
}

#[derive(Debug, Clone)]
pub(crate) struct FlatNet {
    pub trunk: Mlp,
    pub logits: (SlotId, SlotId),
    pub value: (SlotId, SlotId),
}

#[derive(Debug, Clone)]
pub(crate) enum Net {
    Hierarchical(HierarchicalNet),
    Flat(FlatNet),
}

/// Graph nodes produced by one sub-policy step.
#[derive(Debug, Clone, Copy)]
pub struct SubNodes {
    pub logits: NodeId,
    /// Pre-sigmoid gate activation.
    pub gate_logit: NodeId,
    pub gate: NodeId,
    pub value: NodeId,
}

/// Graph nodes of one full hierarchical step.
#[derive(Debug, Clone, Copy)]
pub struct StepNodes {
    pub h_hat: NodeId,
    pub h: NodeId,
    pub sub: SubNodes,
}

/// Network architecture for one policy kind; parameters live in a separate
/// [`ParameterVector`](crate::autodiff::ParameterVector).
#[derive(Debug, Clone)]
pub struct Architecture<T> {
    pub(crate) config: PolicyConfig,
    pub(crate) layout: Arc<ParamLayout>,
    pub(crate) net: Net,
    _scalar: PhantomData<T>,
}

impl<T: Scalar> Architecture<T> {
    pub fn new(config: PolicyConfig) -> Self {
        let mut layout = ParamLayout::new();
        let hidden = config.hidden;
        let net = match config.kind {
            PolicyKind::Temple | PolicyKind::TempleFix => {
                let d = config.skill_dim;
                let high_trunk =
                    Mlp::build(&mut layout, "high", &[OBS_DIM, hidden, hidden], Partition::High);
                let high_out = head(&mut layout, "high.out", hidden, d, Partition::High);
                let high_value = (config.kind == PolicyKind::TempleFix)
                    .then(|| head(&mut layout, "high.value", hidden, 1, Partition::Value));
                let sub_trunk =
                    Mlp::build(&mut layout, "sub", &[OBS_DIM + d, hidden, hidden], Partition::Sub);
                let logits = head(&mut layout, "sub.logits", hidden, NUM_ACTIONS, Partition::Sub);
                let gate = head(&mut layout, "sub.gate", hidden, 1, Partition::Sub);
                let value = head(&mut layout, "sub.value", hidden, 1, Partition::Value);
                Net::Hierarchical(HierarchicalNet {
                    high_trunk,
                    high_out,
                    high_value,
                    sub_trunk,
                    logits,
                    gate,
                    value,
                })
            }
            PolicyKind::Flat => {
                let w = config.flat_hidden;
                let trunk = Mlp::build(&mut layout, "flat", &[OBS_DIM, w, w], Partition::Sub);
                let logits = head(&mut layout, "flat.logits", w, NUM_ACTIONS, Partition::Sub);
                let value = head(&mut layout, "flat.value", w, 1, Partition::Value);
                Net::Flat(FlatNet {
                    trunk,
                    logits,
                    value,
                })
            }
        };
        Self {
            config,
            layout: Arc::new(layout),
            net,
            _scalar: PhantomData,
        }
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    pub fn kind(&self) -> PolicyKind {
        self.config.kind
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.total()
    }

    /// Dimension of the internal action (0 for the flat baseline).
    pub fn skill_dim(&self) -> usize {
        match self.net {
            Net::Hierarchical(_) => self.config.skill_dim,
            Net::Flat(_) => 0,
        }
    }

    pub(crate) fn hier(&self) -> &HierarchicalNet {
        match &self.net {
            Net::Hierarchical(h) => h,
            Net::Flat(_) => panic!("flat policy has no hierarchical heads"),
        }
    }

    fn flat(&self) -> &FlatNet {
        match &self.net {
            Net::Flat(f) => f,
            Net::Hierarchical(_) => panic!("hierarchical policy used as flat"),
        }
    }

    /// High-level trunk features for a batch of observations.
    pub fn high_features(&self, g: &mut Graph<'_, T>, obs: NodeId) -> Result<NodeId, AutodiffError> {
        self.hier().high_trunk.trunk(g, obs)
    }

    /// Unnormalised scores over the `d` skills.
    pub fn high_logits_from(&self, g: &mut Graph<'_, T>, features: NodeId) -> Result<NodeId, AutodiffError> {
        let (w, b) = self.hier().high_out;
        g.dense(features, w, b)
    }

    /// Internal action `ĥ`: a softmax over skills, so each row lies on the simplex.
    pub fn high_forward(&self, g: &mut Graph<'_, T>, obs: NodeId) -> Result<NodeId, AutodiffError> {
        let f = self.high_features(g, obs)?;
        let logits = self.high_logits_from(g, f)?;
        Ok(g.softmax(logits))
    }

    /// Critic of the high level (fixed-interval baseline only).
    pub fn high_value_from(&self, g: &mut Graph<'_, T>, features: NodeId) -> Result<NodeId, AutodiffError> {
        let (w, b) = self
            .hier()
            .high_value
            .expect("high-level critic exists only for the fixed-interval policy");
        g.dense(features, w, b)
    }

    /// Sub-policy on `[obs | h]`: action logits, gate and value.
    pub fn sub_forward(&self, g: &mut Graph<'_, T>, obs: NodeId, h: NodeId) -> Result<SubNodes, AutodiffError> {
        let net = self.hier();
        let input = g.concat(obs, h)?;
        let feat = net.sub_trunk.trunk(g, input)?;
        let logits = g.dense(feat, net.logits.0, net.logits.1)?;
        let gate_logit = g.dense(feat, net.gate.0, net.gate.1)?;
        let gate = g.sigmoid(gate_logit);
        let value = g.dense(feat, net.value.0, net.value.1)?;
        Ok(SubNodes {
            logits,
            gate_logit,
            gate,
            value,
        })
    }

    /// One gated step: `ĥ = π_high(s)`, `h = c_prev·ĥ + (1 − c_prev)·h_prev`, then the sub-policy.
    pub fn temple_step(
        &self,
        g: &mut Graph<'_, T>,
        obs: NodeId,
        h_prev: NodeId,
        c_prev: NodeId,
    ) -> Result<StepNodes, AutodiffError> {
        let h_hat = self.high_forward(g, obs)?;
        let h = switch_node(g, c_prev, h_prev, h_hat)?;
        let sub = self.sub_forward(g, obs, h)?;
        Ok(StepNodes { h_hat, h, sub })
    }

    /// Flat baseline: logits and value.
    pub fn flat_forward(&self, g: &mut Graph<'_, T>, obs: NodeId) -> Result<(NodeId, NodeId), AutodiffError> {
        let net = self.flat();
        let feat = net.trunk.trunk(g, obs)?;
        let logits = g.dense(feat, net.logits.0, net.logits.1)?;
        let value = g.dense(feat, net.value.0, net.value.1)?;
        Ok((logits, value))
    }
}

/// Gate blend on graph nodes; `c_prev` is a `batch × 1` column.
pub fn switch_node<T: Scalar>(
    g: &mut Graph<'_, T>,
    c_prev: NodeId,
    h_prev: NodeId,
    h_hat: NodeId,
) -> Result<NodeId, AutodiffError> {
    let keep = g.affine(c_prev, -T::one(), T::one());
    let fresh = g.mul_col(h_hat, c_prev)?;
    let old = g.mul_col(h_prev, keep)?;
    g.add(fresh, old)
}
