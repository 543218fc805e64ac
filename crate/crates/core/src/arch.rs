//! Named network architectures.

use rand::RngCore;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::activation::Activation;
use crate::nn::layer::Layer;
use crate::nn::model::Model;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    /// Two conv + two fc layers for 28×28 grayscale digits.
    Lenet,
    /// Two conv + two fc layers for 32×32 colour images.
    Cifar4,
}

impl Arch {
    pub fn input_shape(self) -> [usize; 3] {
        match self {
            Arch::Lenet => [1, 28, 28],
            Arch::Cifar4 => [3, 32, 32],
        }
    }

    pub fn build<T: Scalar>(self, hidden: Activation, classes: usize, rng: &mut dyn RngCore) -> Model<T> {
        let gain = if hidden == Activation::Relu { 2.0 } else { 1.0 };
        let (name, layers) = match self {
            Arch::Lenet => (
                "lenet",
                vec![
                    Layer::conv("conv1", 1, 12, (5, 5), 2, gain, rng),
                    Layer::info_drop("drop1", 12, rng),
                    Layer::conv("conv2", 12, 24, (5, 5), 1, gain, rng),
                    Layer::info_drop("drop2", 24, rng),
                    Layer::fc("fc1", 24, (8, 8), 100, gain, rng),
                    Layer::info_drop("drop3", 100, rng),
                    Layer::fc("fc2", 100, (1, 1), classes, 1.0, rng),
                ],
            ),
            Arch::Cifar4 => (
                "cifar4",
                vec![
                    Layer::conv("conv1", 3, 16, (5, 5), 2, gain, rng),
                    Layer::info_drop("drop1", 16, rng),
                    Layer::conv("conv2", 16, 32, (5, 5), 1, gain, rng),
                    Layer::info_drop("drop2", 32, rng),
                    Layer::fc("fc1", 32, (10, 10), 128, gain, rng),
                    Layer::info_drop("drop3", 128, rng),
                    Layer::fc("fc2", 128, (1, 1), classes, 1.0, rng),
                ],
            ),
        };
        Model::new(name, self.input_shape(), hidden, layers)
    }

    pub fn check_input(self, item_shape: [usize; 3]) -> Result<()> {
        if item_shape != self.input_shape() {
            return Err(Error::Config(format!(
                "architecture {self:?} expects items {:?}, dataset has {:?}",
                self.input_shape(),
                item_shape
            )));
        }
        Ok(())
    }
}
