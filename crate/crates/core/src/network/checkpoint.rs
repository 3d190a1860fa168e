use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Activation, Layer, Network};
use crate::error::{io_error, shape, Result};
use crate::linalg::Matrix;

/// On-disk network: layer widths, activation names, row-major weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    /// `[d_0, ..., d_L]`.
    pub dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl Checkpoint {
    pub fn from_network(net: &Network, seed: Option<u64>) -> Self {
        Checkpoint {
            dims: net.widths(),
            activations: net.layers().iter().map(|l| l.activation).collect(),
            weights: net
                .layers()
                .iter()
                .map(|l| l.weights.data().to_vec())
                .collect(),
            biases: net.layers().iter().map(|l| l.bias.clone()).collect(),
            seed,
        }
    }

    pub fn to_network(&self) -> Result<Network> {
        let depth = self.dims.len().saturating_sub(1);
        if self.activations.len() != depth
            || self.weights.len() != depth
            || self.biases.len() != depth
        {
            return Err(shape(
                "checkpoint",
                format!(
                    "{} dims imply {depth} layers; found {} activations, {} weight arrays, {} bias arrays",
                    self.dims.len(),
                    self.activations.len(),
                    self.weights.len(),
                    self.biases.len()
                ),
            ));
        }
        let layers = (0..depth)
            .map(|i| {
                Ok(Layer {
                    weights: Matrix::from_vec(
                        self.dims[i + 1],
                        self.dims[i],
                        self.weights[i].clone(),
                    )?,
                    bias: self.biases[i].clone(),
                    activation: self.activations[i],
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Network::new(layers)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(io_error(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_error(path))?;
        Ok(serde_json::from_str(&text)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::RandomSource;
    use crate::network::Init;

    #[test]
    fn round_trips_through_json_file() {
        let mut rs = RandomSource::new(4);
        let net = Network::random(&[3, 5, 2], Activation::Elu, Init::Uniform, &mut rs).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.json");
        Checkpoint::from_network(&net, Some(4)).save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back.seed, Some(4));
        assert_eq!(back.to_network().unwrap(), net);
    }

    #[test]
    fn inconsistent_checkpoint_is_rejected() {
        let mut ck = Checkpoint {
            dims: vec![2, 1],
            activations: vec![Activation::Identity],
            weights: vec![vec![1.0, 2.0]],
            biases: vec![vec![0.0]],
            seed: None,
        };
        assert!(ck.to_network().is_ok());
        ck.weights[0].push(3.0);
        assert!(ck.to_network().is_err());
    }
}
