use pgcycle_autograd::{Float, Tensor};

use crate::checkpoint::Checkpoint;
use crate::nn::ParameterSet;
use crate::{Error, Result};

const EPS: f64 = 1e-8;

/// Adam moments for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T: Float> {
    pub beta1: f64,
    pub beta2: f64,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Float> Adam<T> {
    pub fn new(params: &ParameterSet<T>, betas: (f64, f64)) -> Self {
        let zeros: Vec<_> = params.iter().map(|(_, t)| Tensor::zeros(t.dims())).collect();
        Self {
            beta1: betas.0,
            beta2: betas.1,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update. `grads` follows parameter order; `None`
    /// means the parameter did not influence the loss.
    pub fn update(&mut self, params: &mut ParameterSet<T>, grads: &[Option<Tensor<T>>], lr: f64) -> Result<()> {
        if grads.len() != self.m.len() || params.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer tracks {} tensors, got {} gradients for {} parameters",
                self.m.len(),
                grads.len(),
                params.len()
            )));
        }
        self.step += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        let step_size = T::of(lr / c1);
        let inv_c2 = T::of(1.0 / c2);
        let eps = T::of(EPS);
        let one = T::one();
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if let Some(g) = g {
                if g.dims() != p.dims() {
                    return Err(Error::Shape(format!("gradient {:?} vs parameter {:?}", g.dims(), p.dims())));
                }
            }
            // a missing gradient counts as zero: the moments still decay
            let g = g.as_ref().map(|g| g.data());
            for (k, ((w, mi), vi)) in p.data_mut().iter_mut().zip(m.data_mut()).zip(v.data_mut()).enumerate() {
                let gi = g.map_or(T::zero(), |g| g[k]);
                *mi = b1 * *mi + (one - b1) * gi;
                *vi = b2 * *vi + (one - b2) * gi * gi;
                *w -= step_size * *mi / ((*vi * inv_c2).sqrt() + eps);
            }
        }
        Ok(())
    }

    pub fn save_into(&self, ckpt: &mut Checkpoint, prefix: &str, params: &ParameterSet<T>) {
        ckpt.metadata.insert(format!("{prefix}.adam.step"), self.step.to_string());
        for (((name, _), m), v) in params.iter().zip(&self.m).zip(&self.v) {
            ckpt.put(format!("{prefix}.adam_m/{name}"), m);
            ckpt.put(format!("{prefix}.adam_v/{name}"), v);
        }
    }

    pub fn load_from(ckpt: &Checkpoint, prefix: &str, params: &ParameterSet<T>, betas: (f64, f64)) -> Result<Self> {
        let mut m = Vec::with_capacity(params.len());
        let mut v = Vec::with_capacity(params.len());
        for (name, p) in params.iter() {
            for (kind, store) in [("adam_m", &mut m), ("adam_v", &mut v)] {
                let key = format!("{prefix}.{kind}/{name}");
                let t: Tensor<T> = ckpt.get(&key)?;
                if t.dims() != p.dims() {
                    return Err(Error::Checkpoint(format!("{key}: shape {:?} vs {:?}", t.dims(), p.dims())));
                }
                store.push(t);
            }
        }
        Ok(Self {
            beta1: betas.0,
            beta2: betas.1,
            step: ckpt.meta_parse(&format!("{prefix}.adam.step"))?,
            m,
            v,
        })
    }
}
