use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::nn::{ParamId, ParamKind, ParamStore};
use crate::tensor::{Scalar, Tensor};

/// SGD with momentum and L2 weight decay:
/// `v ← μ·v + g + λ·p`, then `p ← p − lr·v`.
#[derive(Debug, Clone)]
pub struct Sgd<T: Scalar = f32> {
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: HashMap<ParamId, Tensor<T>>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Sgd {
            momentum,
            weight_decay,
            velocity: HashMap::new(),
        }
    }

    pub fn velocity(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.velocity.get(&id)
    }

    /// Updates every weight in `store`. Weights absent from `grads` are
    /// treated as having a zero data gradient.
    pub fn step(&mut self, store: &mut ParamStore<T>, grads: &HashMap<ParamId, Tensor<T>>, lr: f64) -> Result<()> {
        let (mu, wd, lr) = (
            T::from_f64_lossy(self.momentum),
            T::from_f64_lossy(self.weight_decay),
            T::from_f64_lossy(lr),
        );
        let ids: Vec<ParamId> = store.weights().map(|(id, _)| id).collect();
        for id in ids {
            let p = store.get(id);
            if let Some(g) = grads.get(&id) {
                if g.dims() != p.dims() {
                    return Err(Error::shape(format!(
                        "gradient {:?} for parameter `{}` of shape {:?}",
                        g.dims(),
                        store.entry(id).name,
                        p.dims()
                    )));
                }
            }
            let v = self.velocity.entry(id).or_insert_with(|| p.zeros_like());
            let g = grads.get(&id).map(|g| g.data());
            for (i, (vi, &pi)) in v.data_mut().iter_mut().zip(p.data()).enumerate() {
                *vi = mu * *vi + g.map_or(T::zero(), |g| g[i]) + wd * pi;
            }
            let v = &self.velocity[&id];
            for (pi, &vi) in store.get_mut(id).data_mut().iter_mut().zip(v.data()) {
                *pi -= lr * vi;
            }
        }
        Ok(())
    }

    /// Velocities keyed by parameter name, for checkpointing.
    pub fn named_state(&self, store: &ParamStore<T>) -> Vec<(String, Tensor<T>)> {
        store
            .iter()
            .filter_map(|(id, e)| self.velocity.get(&id).map(|v| (e.name.clone(), v.clone())))
            .collect()
    }

    pub fn load_named_state(&mut self, store: &ParamStore<T>, state: Vec<(String, Tensor<T>)>) -> Result<()> {
        let mut velocity = HashMap::new();
        for (name, v) in state {
            let id = store
                .id(&name)
                .filter(|&id| store.entry(id).kind == ParamKind::Weight)
                .ok_or_else(|| Error::Contract(format!("optimizer state for unknown weight `{name}`")))?;
            if v.dims() != store.get(id).dims() {
                return Err(Error::ParamShape {
                    name,
                    expected: store.get(id).dims().to_vec(),
                    found: v.dims().to_vec(),
                });
            }
            velocity.insert(id, v);
        }
        self.velocity = velocity;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;
    use crate::nn::{Mode, Session};

    fn one_param(v: f64) -> (ParamStore<f64>, ParamId) {
        let mut store = ParamStore::new();
        let id = store.insert("w", ParamKind::Weight, Tensor::new([1], vec![v]).unwrap()).unwrap();
        (store, id)
    }

    #[test]
    fn zero_lr_leaves_params() {
        let (mut store, id) = one_param(2.0);
        let mut opt = Sgd::new(0.9, 5e-4);
        let grads = HashMap::from([(id, Tensor::new([1], vec![3.0]).unwrap())]);
        opt.step(&mut store, &grads, 0.0).unwrap();
        assert_eq!(store.get(id).data(), &[2.0]);
    }

    #[test]
    fn weight_decay_alone_is_geometric() {
        let (mut store, id) = one_param(1.0);
        let mut opt = Sgd::new(0.0, 0.1);
        for _ in 0..10 {
            opt.step(&mut store, &HashMap::new(), 0.5).unwrap();
        }
        assert!((store.get(id).data()[0] - 0.95f64.powi(10)).abs() < 1e-15);
    }

    #[test]
    fn quadratic_converges() {
        // f(w) = (w - 3)^2, minimized at 3
        let (mut store, id) = one_param(-1.0);
        let mut opt = Sgd::new(0.5, 0.0);
        for _ in 0..200 {
            let tape = Tape::new();
            let g = {
                let mut s = Session::new(&tape, &mut store, Mode::Train);
                let w = s.param(id);
                let d = w.add_scalar(-3.0);
                let loss = d.mul(&d).unwrap().sum();
                loss.backward().unwrap();
                w.grad().unwrap()
            };
            opt.step(&mut store, &HashMap::from([(id, g)]), 0.1).unwrap();
        }
        assert!((store.get(id).data()[0] - 3.0).abs() < 1e-6, "{:?}", store.get(id));
    }

    #[test]
    fn momentum_accumulates() {
        let (mut store, id) = one_param(0.0);
        let mut opt = Sgd::new(0.5, 0.0);
        let grads = HashMap::from([(id, Tensor::new([1], vec![1.0]).unwrap())]);
        opt.step(&mut store, &grads, 1.0).unwrap();
        opt.step(&mut store, &grads, 1.0).unwrap();
        // v1 = 1, v2 = 1.5
        assert_eq!(store.get(id).data(), &[-2.5]);
        assert_eq!(opt.velocity(id).unwrap().data(), &[1.5]);
    }
}
