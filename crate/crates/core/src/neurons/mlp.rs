use rand::Rng;
use serde::{Deserialize, Serialize};

use super::recurrent::gaussian;
use crate::error::{invalid, Error, Result};
use crate::numerics::{ParamSet, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Linear,
    Relu,
    Sigmoid,
    Tanh,
    Softmax,
}

impl Activation {
    fn apply(self, x: &Tensor) -> Result<Tensor> {
        match self {
            Activation::Linear => Ok(x.clone()),
            Activation::Relu => x.relu(),
            Activation::Sigmoid => x.sigmoid(),
            Activation::Tanh => x.tanh(),
            Activation::Softmax => x.softmax(),
        }
    }

    fn record(self, tape: &mut Tape, x: Var) -> Result<Var> {
        match self {
            Activation::Linear => Ok(x),
            Activation::Relu => tape.relu(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Tanh => tape.tanh(x),
            Activation::Softmax => tape.softmax(x),
        }
    }
}

/// `activation(x·W + b)`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// `[n_in × n_out]`
    pub w: Tensor,
    /// `[n_out]`
    pub b: Tensor,
    pub activation: Activation,
}

/// Feed-forward classifier; the final layer produces logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

fn weight_id(i: usize) -> String {
    format!("layer{i}.w")
}

fn bias_id(i: usize) -> String {
    format!("layer{i}.b")
}

pub fn mlp_forward(layers: &[DenseLayer], x: &Tensor) -> Result<Tensor> {
    let mut h = x.clone();
    for layer in layers {
        check_layer_input(layer, &h)?;
        let pre = h.matmul(&layer.w)?.add(&layer.b.expand_rows(h.rows())?)?;
        h = layer.activation.apply(&pre)?;
    }
    Ok(h)
}

fn check_layer_input(layer: &DenseLayer, h: &Tensor) -> Result<()> {
    if h.rank() != 2 || h.cols() != layer.w.rows() {
        return Err(Error::Shape {
            op: "dense layer",
            left: h.shape().to_vec(),
            right: layer.w.shape().to_vec(),
        });
    }
    Ok(())
}

impl Mlp {
    /// Hidden layers use `hidden_activation`; the output layer is linear.
    /// Weights are Gaussian with std `1/sqrt(fan_in)`, biases zero.
    pub fn init(sizes: &[usize], hidden_activation: Activation, rng: &mut impl Rng) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(invalid(format!("invalid layer sizes {sizes:?}")));
        }
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| DenseLayer {
                w: gaussian(rng, &[w[0], w[1]], 1.0 / (w[0] as f64).sqrt()),
                b: Tensor::zeros(&[w[1]]),
                activation: if i + 2 == sizes.len() {
                    Activation::Linear
                } else {
                    hidden_activation
                },
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn n_in(&self) -> usize {
        self.layers[0].w.rows()
    }

    pub fn n_out(&self) -> usize {
        self.layers.last().map_or(0, |l| l.b.len())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        mlp_forward(&self.layers, x)
    }

    pub fn params(&self) -> ParamSet {
        let mut p = ParamSet::new();
        for (i, l) in self.layers.iter().enumerate() {
            p.insert(weight_id(i), l.w.clone());
            p.insert(bias_id(i), l.b.clone());
        }
        p
    }

    pub fn set_params(&mut self, params: &ParamSet) -> Result<()> {
        if !self.params().same_keys(params) {
            return Err(invalid("parameter ids do not match the MLP layout"));
        }
        for (i, l) in self.layers.iter_mut().enumerate() {
            for (id, slot) in [(weight_id(i), &mut l.w), (bias_id(i), &mut l.b)] {
                let new = params.require(&id)?;
                if new.shape() != slot.shape() {
                    return Err(Error::Shape {
                        op: "set_params",
                        left: slot.shape().to_vec(),
                        right: new.shape().to_vec(),
                    });
                }
                *slot = new.clone();
            }
        }
        Ok(())
    }

    pub fn record(&self, tape: &mut Tape, x: &Tensor) -> Result<Var> {
        let mut h = tape.constant(x.clone())?;
        for (i, layer) in self.layers.iter().enumerate() {
            check_layer_input(layer, tape.value(h)?)?;
            let rows = tape.value(h)?.rows();
            let w = tape.param(weight_id(i), layer.w.clone())?;
            let b = tape.param(bias_id(i), layer.b.clone())?;
            let xw = tape.matmul(h, w)?;
            let bias = tape.expand_rows(b, rows)?;
            let pre = tape.add(xw, bias)?;
            h = layer.activation.record(tape, pre)?;
        }
        Ok(h)
    }
}
