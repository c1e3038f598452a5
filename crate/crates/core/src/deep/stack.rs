use log::info;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{bernoulli_sample, Matrix, RandomSource};
use crate::rbm::{hidden_probabilities, LayerKind, RbmParams, TrainConfig};
use crate::regularizers::{train_regularized, EpochEvent, RegConfig, Regularizer};

const PROPAGATE: u64 = 0x5052;
const LAYER: u64 = 0x4c41;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackLayer {
    pub kind: LayerKind,
    pub params: RbmParams,
}

/// Greedily stacked RBM layers `J → H¹ → H² → …`.
///
/// Layer `l`'s hidden size equals layer `l+1`'s visible size, and only the
/// first layer may have Gaussian or count visibles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<StackLayer>", into = "Vec<StackLayer>")]
pub struct LayerStack {
    layers: Vec<StackLayer>,
}

impl TryFrom<Vec<StackLayer>> for LayerStack {
    type Error = Error;

    fn try_from(layers: Vec<StackLayer>) -> Result<Self> {
        LayerStack::new(layers)
    }
}

impl From<LayerStack> for Vec<StackLayer> {
    fn from(stack: LayerStack) -> Self {
        stack.layers
    }
}

impl LayerStack {
    pub fn new(layers: Vec<StackLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Contract("a layer stack needs at least one layer".into()));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[0].params.n_hidden() != pair[1].params.n_visible() {
                return Err(Error::ShapeMismatch {
                    op: "layer chain",
                    left: (l, pair[0].params.n_hidden()),
                    right: (l + 1, pair[1].params.n_visible()),
                });
            }
        }
        if let Some(l) = layers.iter().skip(1).position(|x| x.kind != LayerKind::Bernoulli) {
            return Err(Error::Contract(format!(
                "layer {} has {:?} visibles; only the first layer may be non-binary",
                l + 1,
                layers[l + 1].kind
            )));
        }
        Ok(LayerStack { layers })
    }

    pub fn single(kind: LayerKind, params: RbmParams) -> Self {
        LayerStack {
            layers: vec![StackLayer { kind, params }],
        }
    }

    pub fn layers(&self) -> &[StackLayer] {
        &self.layers
    }

    pub fn len(&self) -> usize {
        self.layers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.layers.is_empty()
    }

    pub fn kind(&self) -> LayerKind {
        self.layers[0].kind
    }

    /// `[J, H¹, …, H^L]`.
    pub fn sizes(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].params.n_visible())
            .chain(self.layers.iter().map(|l| l.params.n_hidden()))
            .collect()
    }

    pub fn top(&self) -> &StackLayer {
        self.layers.last().expect("stack is non-empty")
    }

    pub fn push(&mut self, layer: StackLayer) -> Result<()> {
        let mut layers = std::mem::take(&mut self.layers);
        layers.push(layer);
        match LayerStack::new(layers) {
            Ok(s) => {
                *self = s;
                Ok(())
            }
            Err(e) => Err(e),
        }
    }

    /// Stack of the first `depth` layers.
    pub fn truncated(&self, depth: usize) -> Result<LayerStack> {
        if depth == 0 || depth > self.len() {
            return Err(Error::Contract(format!(
                "cannot truncate a {}-layer stack to depth {depth}",
                self.len()
            )));
        }
        Ok(LayerStack {
            layers: self.layers[..depth].to_vec(),
        })
    }

    /// Mean activations `E(h^depth | v)` of the recognition pass through the
    /// first `depth` layers.
    pub fn propagate_to(&self, data: &Matrix, depth: usize) -> Result<Matrix> {
        let mut x = data.clone();
        for layer in &self.layers[..depth.min(self.len())] {
            x = hidden_probabilities(layer.kind, &layer.params, &x)?;
        }
        Ok(x)
    }

    /// Top-layer mean activations.
    pub fn features(&self, data: &Matrix) -> Result<Matrix> {
        self.propagate_to(data, self.len())
    }
}

/// Size and training settings of one greedily trained layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DbnLayerConfig {
    pub n_hidden: usize,
    pub train: TrainConfig,
    #[serde(default)]
    pub reg: RegConfig,
}

/// How layer `l`'s training input is formed from layer `l−1`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Propagation {
    /// Mean activations `E(h|v)`.
    #[default]
    Mean,
    /// One binary sample per example.
    Sample,
}

/// Per-layer epoch callback: `(layer index, event)`.
pub type LayerObserver<'o> = dyn FnMut(usize, &EpochEvent<'_>) -> Result<()> + 'o;

/// Initial parameters [`dbn_pretrain`] gives layer `l`.
pub fn dbn_layer_init(n_visible: usize, n_hidden: usize, rng: &RandomSource, l: usize) -> RbmParams {
    RbmParams::random_init(n_visible, n_hidden, &mut rng.derive(&[LAYER, l as u64]).derive(&[0]))
}

/// Greedy layer-wise DBN pretraining. Each layer is trained under its own
/// regularizer; the stored parameters are the layer's mean network, which
/// also produces the next layer's input.
pub fn dbn_pretrain(
    kind: LayerKind,
    data: &Matrix,
    layers: &[DbnLayerConfig],
    propagation: Propagation,
    rng: &RandomSource,
    observer: &mut LayerObserver<'_>,
) -> Result<LayerStack> {
    if layers.is_empty() {
        return Err(Error::Contract("dbn_pretrain needs at least one layer".into()));
    }
    let mut input = data.clone();
    let mut stack: Vec<StackLayer> = Vec::with_capacity(layers.len());
    for (l, cfg) in layers.iter().enumerate() {
        let layer_kind = if l == 0 { kind } else { LayerKind::Bernoulli };
        let layer_rng = rng.derive(&[LAYER, l as u64]);
        let init = dbn_layer_init(input.cols(), cfg.n_hidden, rng, l);
        info!("pretraining layer {} ({} -> {})", l + 1, input.cols(), cfg.n_hidden);
        let trained = train_regularized(
            layer_kind,
            init,
            &input,
            &cfg.train,
            &cfg.reg,
            &layer_rng,
            &mut |e: &EpochEvent<'_>| observer(l, e),
        )?;
        let params = trained.regularizer.mean_network(&trained.params)?;
        if l + 1 < layers.len() {
            let mean = hidden_probabilities(layer_kind, &params, &input)?;
            input = match propagation {
                Propagation::Mean => mean,
                Propagation::Sample => bernoulli_sample(&mean, &mut rng.derive(&[PROPAGATE, l as u64]))?,
            };
        }
        stack.push(StackLayer {
            kind: layer_kind,
            params,
        });
    }
    LayerStack::new(stack)
}

/// Add layer `L+1` initialized symmetric to layer `L`: `W^{L+1} = (W^L)ᵀ`,
/// with the two bias vectors swapped.
pub fn add_symmetric_layer(stack: &LayerStack) -> Result<LayerStack> {
    let top = stack.top();
    if top.kind != LayerKind::Bernoulli {
        return Err(Error::Contract(
            "symmetric layer addition needs a binary top layer".into(),
        ));
    }
    let mut out = stack.clone();
    out.push(StackLayer {
        kind: LayerKind::Bernoulli,
        params: top.params.transposed(),
    })?;
    Ok(out)
}

/// Add `extra` hidden units to the top layer with zero weights and biases.
pub fn grow_top_layer(stack: &LayerStack, extra: usize) -> Result<LayerStack> {
    let top = &stack.top().params;
    let (i, j) = top.weights.shape();
    let weights = Matrix::from_fn(i + extra, j, |r, c| if r < i { top.weights.get(r, c) } else { 0.0 });
    let mut hidden_bias = top.hidden_bias.clone();
    hidden_bias.resize(i + extra, 0.0);
    let params = RbmParams::new(top.visible_bias.clone(), hidden_bias, weights)?;
    let mut layers = stack.layers().to_vec();
    let kind = layers.last().expect("non-empty").kind;
    *layers.last_mut().expect("non-empty") = StackLayer { kind, params };
    LayerStack::new(layers)
}

/// Continue training the top layer on the recognition-pass activations of
/// the layers below it. Returns the updated stack and the top layer's final
/// regularizer.
pub fn train_top_layer(
    stack: &LayerStack,
    data: &Matrix,
    train: &TrainConfig,
    reg: &RegConfig,
    rng: &RandomSource,
) -> Result<(LayerStack, Regularizer)> {
    let depth = stack.len() - 1;
    let input = stack.propagate_to(data, depth)?;
    let top = stack.top();
    let trained = train_regularized(top.kind, top.params.clone(), &input, train, reg, rng, &mut |_| Ok(()))?;
    let params = trained.regularizer.mean_network(&trained.params)?;
    let mut layers = stack.layers().to_vec();
    layers[depth].params = params;
    Ok((LayerStack::new(layers)?, trained.regularizer))
}
