//! Minimal convolutional segmentation networks: graph model, NETSPEC parsing,
//! deterministic weights, a bit-reproducible forward pass and the analytic
//! geometry (sizes, equivariance period, margins, zero-padding contamination).

mod forward;
mod geometry;
mod spec;
mod weights;

pub use geometry::{CleanInterval, NetGeometry, NodeGeometry};
pub use weights::{WeightRecord, WTS1_MAGIC};

use crate::error::{Error, Result};
use crate::rng::SeededStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvParams {
    pub k: usize,
    pub s: usize,
    pub p: usize,
    pub d: usize,
    pub cout: usize,
    pub bias: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Input { channels: usize },
    Conv(ConvParams),
    Relu,
    MaxPool { k: usize, s: usize },
    Upsample { f: usize },
    CropConcat,
    Output,
}

impl LayerKind {
    pub fn keyword(&self) -> &'static str {
        match self {
            LayerKind::Input { .. } => "input",
            LayerKind::Conv(_) => "conv",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool { .. } => "maxpool",
            LayerKind::Upsample { .. } => "upsample",
            LayerKind::CropConcat => "cropconcat",
            LayerKind::Output => "output",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerNode {
    pub name: String,
    pub kind: LayerKind,
    /// Indices of parent nodes; always smaller than this node's index.
    pub parents: Vec<usize>,
    /// Output channel count.
    pub channels: usize,
}

/// Weights of one convolution: `[cout][cin][k][k]` row-major plus optional bias.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeights {
    pub cin: usize,
    pub weights: Vec<f32>,
    pub bias: Option<Vec<f32>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkGraph {
    nodes: Vec<LayerNode>,
    input: usize,
    output: usize,
    /// Parallel to `nodes`; `Some` only for convolutions of a weighted graph.
    weights: Vec<Option<ConvWeights>>,
}

impl NetworkGraph {
    /// Parse and validate a NETSPEC document. The result carries no weights.
    pub fn parse(text: &str) -> Result<Self> {
        spec::parse(text)
    }

    pub fn nodes(&self) -> &[LayerNode] {
        &self.nodes
    }

    pub fn input_index(&self) -> usize {
        self.input
    }

    pub fn output_index(&self) -> usize {
        self.output
    }

    pub fn input_channels(&self) -> usize {
        self.nodes[self.input].channels
    }

    pub fn output_channels(&self) -> usize {
        self.nodes[self.output].channels
    }

    pub fn has_padding(&self) -> bool {
        self.nodes
            .iter()
            .any(|n| matches!(n.kind, LayerKind::Conv(c) if c.p > 0))
    }

    pub fn is_weighted(&self) -> bool {
        self.nodes
            .iter()
            .zip(&self.weights)
            .all(|(n, w)| !matches!(n.kind, LayerKind::Conv(_)) || w.is_some())
    }

    pub fn conv_weights(&self, node: usize) -> Option<&ConvWeights> {
        self.weights.get(node).and_then(Option::as_ref)
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Same graph with weights drawn uniformly from `[-0.1, 0.1)`.
    ///
    /// One SplitMix64 stream seeded with `seed` is consumed in node order;
    /// each convolution draws its `[cout][cin][k][k]` weights and then its bias.
    pub fn init_weights(&self, seed: u64) -> NetworkGraph {
        let mut rng = SeededStream::new(seed);
        let weights = self
            .nodes
            .iter()
            .map(|node| match node.kind {
                LayerKind::Conv(c) => {
                    let cin = self.nodes[node.parents[0]].channels;
                    let w = (0..c.cout * cin * c.k * c.k).map(|_| rng.next_weight()).collect();
                    let bias = c.bias.then(|| (0..c.cout).map(|_| rng.next_weight()).collect());
                    Some(ConvWeights { cin, weights: w, bias })
                }
                _ => None,
            })
            .collect();
        NetworkGraph {
            weights,
            ..self.clone()
        }
    }

    pub fn geometry(&self) -> Result<NetGeometry> {
        NetGeometry::of(self)
    }

    fn require_weights(&self) -> Result<()> {
        if self.is_weighted() {
            Ok(())
        } else {
            Err(Error::Weights(
                "network has no weights; initialise or load them first".into(),
            ))
        }
    }
}
