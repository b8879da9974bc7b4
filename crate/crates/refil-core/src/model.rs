//! Models as ordered layer chains, plus their linearizations.

use crate::error::{Error, Result};
use crate::layer::Layer;
use crate::tensor::Tensor;

/// An ordered layer list with composed shapes. Construction validates that
/// adjacent layers fit, so a `Model` value always evaluates cleanly on an
/// input of `input_shape`.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    layers: Vec<Layer>,
    input_shape: Vec<usize>,
    output_shape: Vec<usize>,
}

impl Model {
    pub fn new(layers: Vec<Layer>, input_shape: Vec<usize>) -> Result<Model> {
        if input_shape.is_empty() || input_shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument(format!(
                "model input shape must be non-empty with positive dims, got {input_shape:?}"
            )));
        }
        let mut shape = input_shape.clone();
        for (index, layer) in layers.iter().enumerate() {
            if matches!(layer, Layer::EmbeddingLookup { .. }) && index != 0 {
                return Err(Error::Layer {
                    index,
                    kind: layer.kind_name(),
                    message: "embedding lookups take raw index inputs and may only appear first"
                        .into(),
                });
            }
            shape = layer.output_shape(&shape).map_err(|message| Error::Layer {
                index,
                kind: layer.kind_name(),
                message,
            })?;
        }
        Ok(Model {
            layers,
            input_shape,
            output_shape: shape,
        })
    }

    /// The identity model: forwards its input unchanged.
    pub fn identity(input_shape: Vec<usize>) -> Result<Model> {
        Model::new(Vec::new(), input_shape)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.output_shape
    }

    pub fn input_dim(&self) -> usize {
        self.input_shape.iter().product()
    }

    pub fn output_dim(&self) -> usize {
        self.output_shape.iter().product()
    }

    /// True when the model's input is real-valued (no leading embedding).
    pub fn differentiable_input(&self) -> bool {
        !matches!(self.layers.first(), Some(Layer::EmbeddingLookup { .. }))
    }

    /// Splits an embedding-led model into its index-consuming prefix and the
    /// real-valued remainder. Models without an embedding return no prefix.
    ///
    /// The remainder is where input-space differentiation (and therefore
    /// leakage measurement) is defined: its input is the embedded
    /// representation.
    pub fn split_embedding_prefix(&self) -> Result<(Option<Model>, Model)> {
        if self.differentiable_input() {
            return Ok((None, self.clone()));
        }
        // Prefix = embedding plus any immediately following reshaping layers.
        let mut cut = 1;
        while cut < self.layers.len()
            && matches!(self.layers[cut], Layer::Concat { .. } | Layer::Flatten)
        {
            cut += 1;
        }
        let prefix = Model::new(self.layers[..cut].to_vec(), self.input_shape.clone())?;
        let rest = Model::new(self.layers[cut..].to_vec(), prefix.output_shape.clone())?;
        Ok((Some(prefix), rest))
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        x.expect_shape(&self.input_shape, "model input")?;
        let mut cur = x.clone();
        for (index, layer) in self.layers.iter().enumerate() {
            cur = layer.forward(&cur).map_err(|e| wrap_layer(e, index, layer))?;
        }
        cur.check_finite("model forward output")?;
        Ok(cur)
    }

    /// Forward pass keeping each layer boundary: result[i] is the input to
    /// layer i, result[last] is the model output.
    pub fn activations(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        x.expect_shape(&self.input_shape, "model input")?;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for (index, layer) in self.layers.iter().enumerate() {
            let next = layer
                .forward(acts.last().expect("non-empty"))
                .map_err(|e| wrap_layer(e, index, layer))?;
            acts.push(next);
        }
        Ok(acts)
    }

    pub fn linearize(&self, x: &Tensor) -> Result<Linearization<'_>> {
        Ok(Linearization {
            model: self,
            acts: self.activations(x)?,
        })
    }

    /// J v at x. One forward is paid per call; use [`Model::linearize`] when
    /// sweeping many tangents at the same point.
    pub fn jvp(&self, x: &Tensor, v: &Tensor) -> Result<Tensor> {
        self.linearize(x)?.jvp(v)
    }

    /// u^T J at x, reshaped to the input shape.
    pub fn vjp(&self, x: &Tensor, u: &Tensor) -> Result<Tensor> {
        self.linearize(x)?.vjp(u)
    }

    /// Full reverse sweep from cotangent `u`: parameter cotangents for every
    /// layer and, when defined, the input cotangent.
    pub fn backward(&self, acts: &[Tensor], u: &Tensor) -> Result<BackwardPass> {
        u.expect_shape(&self.output_shape, "backward cotangent")?;
        let mut param_grads: Vec<Vec<Tensor>> = vec![Vec::new(); self.layers.len()];
        let mut grad = u.clone();
        for (index, layer) in self.layers.iter().enumerate().rev() {
            let x_in = &acts[index];
            if let Some(g) = layer
                .param_vjp(x_in, &grad)
                .map_err(|e| wrap_layer(e, index, layer))?
            {
                param_grads[index] = g;
            }
            if index == 0 && !self.differentiable_input() {
                return Ok(BackwardPass {
                    input_grad: None,
                    param_grads,
                });
            }
            grad = layer
                .input_vjp(x_in, &grad)
                .map_err(|e| wrap_layer(e, index, layer))?;
        }
        Ok(BackwardPass {
            input_grad: Some(grad),
            param_grads,
        })
    }

    /// All trainable parameter tensors, layer by layer.
    pub fn params(&self) -> Vec<Vec<&Tensor>> {
        self.layers.iter().map(|l| l.params()).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers
            .iter()
            .flat_map(|l| l.params())
            .map(|t| t.len())
            .sum()
    }

    /// New model over a prefix of the layer list.
    pub fn prefix(&self, layer_count: usize) -> Result<Model> {
        Model::new(self.layers[..layer_count].to_vec(), self.input_shape.clone())
    }
}

fn wrap_layer(e: Error, index: usize, layer: &Layer) -> Error {
    match e {
        Error::ShapeMismatch { context, expected, actual } => Error::Layer {
            index,
            kind: layer.kind_name(),
            message: format!("{context}: expected {expected:?}, got {actual:?}"),
        },
        other => other,
    }
}

/// Gradients from one reverse sweep.
pub struct BackwardPass {
    /// Cotangent with respect to the model input; `None` when the model
    /// starts with an index-typed (embedding) layer.
    pub input_grad: Option<Tensor>,
    /// Per-layer parameter cotangents, aligned with `Model::layers` and with
    /// each layer's `params()` order. Empty for parameterless layers.
    pub param_grads: Vec<Vec<Tensor>>,
}

/// A model frozen at one evaluation point. Holds the activations so that
/// repeated JVP/VJP sweeps (Jacobian rows, trace probes) skip the forward.
pub struct Linearization<'a> {
    model: &'a Model,
    acts: Vec<Tensor>,
}

impl Linearization<'_> {
    pub fn output(&self) -> &Tensor {
        self.acts.last().expect("activations non-empty")
    }

    pub fn activations(&self) -> &[Tensor] {
        &self.acts
    }

    pub fn jvp(&self, v: &Tensor) -> Result<Tensor> {
        v.expect_shape(self.model.input_shape(), "jvp tangent")?;
        let mut cur = v.clone();
        for (index, layer) in self.model.layers().iter().enumerate() {
            cur = layer
                .input_jvp(&self.acts[index], &cur)
                .map_err(|e| wrap_layer(e, index, layer))?;
        }
        Ok(cur)
    }

    pub fn vjp(&self, u: &Tensor) -> Result<Tensor> {
        u.expect_shape(self.model.output_shape(), "vjp cotangent")?;
        let mut cur = u.clone();
        for (index, layer) in self.model.layers().iter().enumerate().rev() {
            cur = layer
                .input_vjp(&self.acts[index], &cur)
                .map_err(|e| wrap_layer(e, index, layer))?;
        }
        Ok(cur)
    }
}

/// A full model plus the index that separates the client-side prefix from
/// the server-side remainder.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitModel {
    layers: Vec<Layer>,
    input_shape: Vec<usize>,
    split_index: usize,
}

impl SplitModel {
    pub fn new(layers: Vec<Layer>, input_shape: Vec<usize>, split_index: usize) -> Result<SplitModel> {
        if split_index == 0 || split_index >= layers.len() {
            return Err(Error::InvalidArgument(format!(
                "split index {split_index} must satisfy 0 < split < {}",
                layers.len()
            )));
        }
        // Validates shape composition end to end.
        Model::new(layers.clone(), input_shape.clone())?;
        Ok(SplitModel {
            layers,
            input_shape,
            split_index,
        })
    }

    pub fn split_index(&self) -> usize {
        self.split_index
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    /// The client-side prefix as a standalone model.
    pub fn client(&self) -> Model {
        Model::new(
            self.layers[..self.split_index].to_vec(),
            self.input_shape.clone(),
        )
        .expect("validated at construction")
    }

    /// The server-side remainder as a standalone model. Its input shape is
    /// the split-layer activation shape.
    pub fn server(&self) -> Model {
        let client = self.client();
        Model::new(
            self.layers[self.split_index..].to_vec(),
            client.output_shape().to_vec(),
        )
        .expect("validated at construction")
    }

    /// The whole chain as one model.
    pub fn full(&self) -> Model {
        Model::new(self.layers.clone(), self.input_shape.clone()).expect("validated")
    }

    pub fn with_layers(&self, layers: Vec<Layer>, split_index: usize) -> Result<SplitModel> {
        SplitModel::new(layers, self.input_shape.clone(), split_index)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layer::init_dense;
    use crate::rng::SeededRng;

    #[test]
    fn identity_model_forwards_input() {
        let m = Model::identity(vec![2]).unwrap();
        let x = Tensor::from_vec(vec![0.5, 0.5]);
        assert_eq!(m.forward(&x).unwrap().data(), &[0.5, 0.5]);
        // jvp/vjp are identity too
        let v = Tensor::from_vec(vec![1.0, 0.0]);
        assert_eq!(m.jvp(&x, &v).unwrap().data(), &[1.0, 0.0]);
        assert_eq!(m.vjp(&x, &v).unwrap().data(), &[1.0, 0.0]);
    }

    #[test]
    fn shape_errors_name_the_layer() {
        let mut rng = SeededRng::new(0);
        let bad = Model::new(
            vec![init_dense(3, 4, &mut rng), init_dense(3, 5, &mut rng)],
            vec![4],
        );
        let msg = format!("{}", bad.unwrap_err());
        assert!(msg.contains("layer 1"), "got: {msg}");
        assert!(msg.contains("Dense"), "got: {msg}");
    }

    #[test]
    fn forward_rejects_wrong_input_shape() {
        let mut rng = SeededRng::new(0);
        let m = Model::new(vec![init_dense(2, 3, &mut rng)], vec![3]).unwrap();
        assert!(m.forward(&Tensor::from_vec(vec![1.0, 2.0])).is_err());
    }

    #[test]
    fn split_model_composition() {
        let mut rng = SeededRng::new(1);
        let layers = vec![
            init_dense(4, 3, &mut rng),
            Layer::Relu,
            init_dense(2, 4, &mut rng),
        ];
        let split = SplitModel::new(layers, vec![3], 2).unwrap();
        let x = Tensor::from_vec(vec![0.1, -0.2, 0.3]);
        let via_split = split.server().forward(&split.client().forward(&x).unwrap()).unwrap();
        let direct = split.full().forward(&x).unwrap();
        assert_eq!(via_split.data(), direct.data());
    }

    #[test]
    fn split_index_bounds_enforced() {
        let mut rng = SeededRng::new(1);
        let layers = vec![init_dense(4, 3, &mut rng), Layer::Relu];
        assert!(SplitModel::new(layers.clone(), vec![3], 0).is_err());
        assert!(SplitModel::new(layers.clone(), vec![3], 2).is_err());
        assert!(SplitModel::new(layers, vec![3], 1).is_ok());
    }

    #[test]
    fn embedding_prefix_split() {
        let mut rng = SeededRng::new(2);
        let table = crate::layer::init_embedding(10, 4, &mut rng);
        let m = Model::new(
            vec![table, Layer::Concat { axis: 0 }, init_dense(3, 8, &mut rng)],
            vec![2],
        )
        .unwrap();
        assert!(!m.differentiable_input());
        let (prefix, rest) = m.split_embedding_prefix().unwrap();
        let prefix = prefix.unwrap();
        assert_eq!(prefix.output_shape(), &[8]);
        assert_eq!(rest.input_shape(), &[8]);
        assert!(rest.differentiable_input());
        let x = Tensor::from_vec(vec![3.0, 7.0]);
        let composed = rest.forward(&prefix.forward(&x).unwrap()).unwrap();
        assert_eq!(composed.data(), m.forward(&x).unwrap().data());
    }

    #[test]
    fn embedding_only_first() {
        let mut rng = SeededRng::new(2);
        let emb = crate::layer::init_embedding(10, 4, &mut rng);
        assert!(Model::new(vec![Layer::Flatten, emb], vec![2]).is_err());
    }
}
