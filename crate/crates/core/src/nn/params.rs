use indexmap::IndexMap;
use ndarray::{Array4, Zip};
use serde::{Deserialize, Serialize};

use super::graph::{Element, Gradients, Graph, Var};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::param(format!("invalid Adam settings {self:?}")))
        }
    }
}

#[derive(Debug, Clone)]
pub struct Param<T> {
    pub value: Array4<T>,
    grad: Option<Array4<T>>,
    m: Array4<T>,
    v: Array4<T>,
}

/// Named trainable tensors plus their Adam moments.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    params: IndexMap<String, Param<T>>,
    step: u64,
}

impl<T: Element> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: IndexMap::new(),
            step: 0,
        }
    }

    pub fn insert(&mut self, name: &str, value: Array4<T>) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(Error::param(format!("duplicate parameter {name}")));
        }
        let zeros = Array4::zeros(value.raw_dim());
        self.params.insert(
            name.to_string(),
            Param {
                value,
                grad: None,
                m: zeros.clone(),
                v: zeros,
            },
        );
        Ok(())
    }

    pub fn value(&self, name: &str) -> Result<&Array4<T>> {
        self.params
            .get(name)
            .map(|p| &p.value)
            .ok_or_else(|| Error::state(format!("unknown parameter {name}")))
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Array4<T>> {
        self.params
            .get_mut(name)
            .map(|p| &mut p.value)
            .ok_or_else(|| Error::state(format!("unknown parameter {name}")))
    }

    pub fn grad(&self, name: &str) -> Option<&Array4<T>> {
        self.params.get(name).and_then(|p| p.grad.as_ref())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|k| k.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array4<T>)> {
        self.params.iter().map(|(k, p)| (k.as_str(), &p.value))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Records the parameter as a graph leaf.
    pub fn bind(&self, g: &mut Graph<T>, name: &str) -> Result<Var> {
        Ok(g.parameter(name, self.value(name)?.clone()))
    }

    /// Adds the gradients of every parameter leaf of `g` into the store.
    pub fn accumulate(&mut self, g: &Graph<T>, grads: &Gradients<T>) -> Result<()> {
        for (name, var) in g.parameters() {
            let Some(d) = grads.get(var) else { continue };
            let p = self
                .params
                .get_mut(name)
                .ok_or_else(|| Error::state(format!("graph parameter {name} not in store")))?;
            match &mut p.grad {
                Some(acc) => *acc += d,
                slot @ None => *slot = Some(d.clone()),
            }
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.params
            .values()
            .filter_map(|p| p.grad.as_ref())
            .flat_map(|g| g.iter())
            .map(|v| v.to_f64().unwrap_or(f64::NAN).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Bias-corrected Adam update. Every parameter must hold a gradient; the
    /// gradients are consumed.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        cfg.validate()?;
        if let Some(name) = self.params.iter().find(|(_, p)| p.grad.is_none()).map(|(k, _)| k) {
            return Err(Error::state(format!("optimizer step without a gradient for {name}")));
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(cfg.beta1), T::lit(cfg.beta2));
        let bc1 = T::lit(1.0 - cfg.beta1.powi(t));
        let bc2 = T::lit(1.0 - cfg.beta2.powi(t));
        let (lr, eps) = (T::lit(cfg.lr), T::lit(cfg.eps));
        let one = T::one();
        for p in self.params.values_mut() {
            let g = p.grad.take().expect("checked above");
            Zip::from(&mut p.value)
                .and(&mut p.m)
                .and(&mut p.v)
                .and(&g)
                .for_each(|w, m, v, &g| {
                    *m = b1 * *m + (one - b1) * g;
                    *v = b2 * *v + (one - b2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *w -= lr * mhat / (vhat.sqrt() + eps);
                });
        }
        Ok(())
    }

    /// Copy converted to another element type; moments and step count are kept.
    pub fn cast<U: Element>(&self) -> ParamStore<U> {
        let conv = |a: &Array4<T>| a.mapv(|v| U::from(v).expect("float cast"));
        ParamStore {
            params: self
                .params
                .iter()
                .map(|(k, p)| {
                    (
                        k.clone(),
                        Param {
                            value: conv(&p.value),
                            grad: p.grad.as_ref().map(conv),
                            m: conv(&p.m),
                            v: conv(&p.v),
                        },
                    )
                })
                .collect(),
            step: self.step,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut s = ParamStore::<f64>::new();
        s.insert("w", Array4::from_elem((1, 1, 1, 1), 1.0)).unwrap();
        let mut g = Graph::new();
        let w = s.bind(&mut g, "w").unwrap();
        let loss = g.mean_all(w);
        let grads = g.backward(loss).unwrap();
        s.accumulate(&g, &grads).unwrap();
        assert_eq!(s.grad("w").unwrap()[[0, 0, 0, 0]], 1.0);
        let cfg = AdamConfig::default();
        s.adam_step(&cfg).unwrap();
        let expect = 1.0 - cfg.lr * 1.0 / (1.0 + cfg.eps);
        assert!((s.value("w").unwrap()[[0, 0, 0, 0]] - expect).abs() < 1e-15);
        assert!(s.grad("w").is_none());
    }

    #[test]
    fn step_without_gradient_is_a_state_error() {
        let mut s = ParamStore::<f32>::new();
        s.insert("w", Array4::zeros((1, 1, 1, 1))).unwrap();
        assert!(matches!(s.adam_step(&AdamConfig::default()), Err(Error::State(_))));
        assert!(s.insert("w", Array4::zeros((1, 1, 1, 1))).is_err());
    }

    #[test]
    fn adam_minimizes_a_quadratic() {
        let mut s = ParamStore::<f64>::new();
        s.insert("w", Array4::from_elem((1, 3, 1, 1), 2.0)).unwrap();
        let cfg = AdamConfig { lr: 0.05, ..Default::default() };
        for _ in 0..400 {
            let mut g = Graph::new();
            let w = s.bind(&mut g, "w").unwrap();
            let sq = g.square(w);
            let loss = g.mean_all(sq);
            let grads = g.backward(loss).unwrap();
            s.accumulate(&g, &grads).unwrap();
            s.adam_step(&cfg).unwrap();
        }
        assert!(s.value("w").unwrap().iter().all(|v| v.abs() < 0.05));
    }
}
