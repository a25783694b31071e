use pgcycle_autograd::{Float, Tensor};
use rand::Rng;

use crate::checkpoint::Checkpoint;
use crate::Result;

/// History of generated images shown to a discriminator. Once full, each
/// query returns a stored image (and keeps the new one) with probability 1/2.
#[derive(Clone, Debug, PartialEq)]
pub struct ReplayBuffer<T: Float> {
    capacity: usize,
    items: Vec<Tensor<T>>,
}

impl<T: Float> ReplayBuffer<T> {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            items: Vec::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    /// Exchanges a `[n, c, h, w]` batch of fresh fakes for the batch the
    /// discriminator should see.
    pub fn query<R: Rng + ?Sized>(&mut self, batch: &Tensor<T>, rng: &mut R) -> Result<Tensor<T>> {
        if self.capacity == 0 {
            return Ok(batch.clone());
        }
        let [n, c, h, w] = batch.dims();
        let mut out = Vec::with_capacity(batch.len());
        for i in 0..n {
            let fresh = Tensor::from_vec([1, c, h, w], batch.sample(i).to_vec())?;
            if self.items.len() < self.capacity {
                out.extend_from_slice(fresh.data());
                self.items.push(fresh);
            } else if rng.gen::<f64>() < 0.5 {
                let k = rng.gen_range(0..self.items.len());
                let old = std::mem::replace(&mut self.items[k], fresh);
                if old.dims() == [1, c, h, w] {
                    out.extend_from_slice(old.data());
                } else {
                    out.extend_from_slice(self.items[k].data());
                }
            } else {
                out.extend_from_slice(fresh.data());
            }
        }
        Ok(Tensor::from_vec(batch.dims(), out)?)
    }

    pub fn save_into(&self, ckpt: &mut Checkpoint, prefix: &str) {
        ckpt.metadata.insert(format!("{prefix}.len"), self.items.len().to_string());
        for (i, t) in self.items.iter().enumerate() {
            ckpt.put(format!("{prefix}/{i}"), t);
        }
    }

    pub fn load_from(ckpt: &Checkpoint, prefix: &str, capacity: usize) -> Result<Self> {
        let len: usize = ckpt.meta_parse(&format!("{prefix}.len"))?;
        let items = (0..len.min(capacity))
            .map(|i| ckpt.get(&format!("{prefix}/{i}")))
            .collect::<Result<_>>()?;
        Ok(Self { capacity, items })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn disabled_buffer_passes_fakes_through() {
        let mut buf = ReplayBuffer::<f64>::new(0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let t = Tensor::full([2, 3, 2, 2], 0.5);
        assert_eq!(buf.query(&t, &mut rng).unwrap(), t);
        assert!(buf.is_empty());
    }

    #[test]
    fn never_exceeds_capacity_and_returns_seen_images() {
        let mut buf = ReplayBuffer::<f64>::new(3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for step in 0..40 {
            let t = Tensor::full([1, 1, 1, 1], step as f64);
            let got = buf.query(&t, &mut rng).unwrap().item();
            assert!(got <= step as f64 && got >= 0.0);
            assert!(buf.len() <= 3);
        }
        assert_eq!(buf.len(), 3);
    }
}
