//! The ε-prediction network, its training loop and inference entry point.

pub mod augment;
pub mod layers;
pub mod optim;
pub mod scalar;
pub mod train;
pub mod unet;

use rand::SeedableRng;

pub use train::{train, EpochLoss, TrainConfig, TrainEvent, Trainer};
pub use unet::{ArchConfig, ParamEntry, UNet};

use crate::error::{Error, Result};
use crate::rng::{self, Purpose};
use crate::tensor::Tensor;

/// A U-Net noise predictor with `f32` weights.
///
/// Inference takes `&self` and touches no shared mutable state, so a frozen
/// model can serve concurrent samplers.
#[derive(Clone, Debug)]
pub struct DenoiserModel {
    net: UNet,
    params: Vec<f32>,
}

impl DenoiserModel {
    /// Fresh model with the output head zeroed (predicts zero noise).
    pub fn new(arch: ArchConfig, image_shape: [usize; 3], seed: u64) -> Result<Self> {
        let net = UNet::new(arch, image_shape)?;
        let mut rng =
            rand_chacha::ChaCha8Rng::seed_from_u64(rng::stream_key(seed, Purpose::Parameters, &[]));
        let params = net.init_params(&mut rng, true);
        Ok(Self { net, params })
    }

    pub fn from_params(
        arch: ArchConfig,
        image_shape: [usize; 3],
        params: Vec<f32>,
    ) -> Result<Self> {
        let net = UNet::new(arch, image_shape)?;
        if params.len() != net.num_params() {
            return Err(Error::Argument(format!(
                "architecture needs {} parameters, got {}",
                net.num_params(),
                params.len()
            )));
        }
        Ok(Self { net, params })
    }

    pub fn net(&self) -> &UNet {
        &self.net
    }

    pub fn arch(&self) -> &ArchConfig {
        self.net.config()
    }

    pub fn image_shape(&self) -> [usize; 3] {
        self.net.image_shape()
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.params
    }

    pub fn params_finite(&self) -> bool {
        self.params.iter().all(|v| v.is_finite())
    }

    pub fn param_norm(&self) -> f64 {
        self.params
            .iter()
            .map(|&v| f64::from(v).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Named views over the flat parameter vector, in layout order.
    pub fn named_params(&self) -> impl Iterator<Item = (&ParamEntry, &[f32])> {
        self.net
            .layout()
            .iter()
            .map(|e| (e, &self.params[e.offset..e.offset + e.len]))
    }

    /// ε_θ(x_t, t). Deterministic and independent of any other call.
    pub fn predict_noise(&self, x_t: &Tensor, t: usize) -> Result<Tensor> {
        x_t.ensure_shape(&self.image_shape())?;
        if t == 0 {
            return Err(Error::Argument("diffusion steps are 1-indexed".into()));
        }
        let out = self.net.forward(&self.params, x_t.data(), t);
        Tensor::new(x_t.shape().to_vec(), out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::ChaCha8Rng;

    fn small_arch() -> ArchConfig {
        ArchConfig {
            base_width: 8,
            channel_mults: vec![1, 2],
            blocks_per_level: 1,
            time_dim: 16,
            norm_groups: 4,
        }
    }

    #[test]
    fn untrained_model_predicts_zero() {
        let m = DenoiserModel::new(small_arch(), [1, 8, 8], 0).unwrap();
        let x = Tensor::randn(&[1, 8, 8], &mut ChaCha8Rng::seed_from_u64(1));
        let eps = m.predict_noise(&x, 4).unwrap();
        assert!(eps.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn prediction_is_deterministic() {
        let mut m = DenoiserModel::new(small_arch(), [1, 8, 8], 0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for p in m.params_mut() {
            *p += rand::Rng::random_range(&mut rng, -0.1..0.1);
        }
        let x = Tensor::randn(&[1, 8, 8], &mut rng);
        let a = m.predict_noise(&x, 9).unwrap();
        let b = m.predict_noise(&x, 9).unwrap();
        assert!(a.bit_eq(&b));
        assert_eq!(a.shape(), x.shape());
    }

    #[test]
    fn rejects_wrong_shape() {
        let m = DenoiserModel::new(small_arch(), [1, 8, 8], 0).unwrap();
        assert!(m.predict_noise(&Tensor::zeros(&[1, 4, 4]), 1).is_err());
        assert!(m.predict_noise(&Tensor::zeros(&[1, 8, 8]), 0).is_err());
    }
}
