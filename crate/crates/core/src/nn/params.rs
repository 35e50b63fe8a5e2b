use std::collections::BTreeMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::graph::{Graph, Var};
use super::tensor::Tensor;

/// Named learnable tensors, kept in name order so iteration is deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParameterSet {
    params: BTreeMap<String, Tensor>,
}

impl ParameterSet {
    pub fn new() -> Self {
        ParameterSet::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter {name}")));
        }
        self.params.insert(name, value);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.params.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn count_with_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, t)| t.numel())
            .sum()
    }

    /// Places every parameter on `graph` as a tracked leaf.
    pub fn bind(&self, graph: &mut Graph) -> Binding {
        let vars = self
            .params
            .iter()
            .map(|(name, t)| (name.clone(), graph.param(t.clone())))
            .collect();
        Binding { vars }
    }
}

/// Parameter name → graph leaf for one forward pass.
#[derive(Clone, Debug)]
pub struct Binding {
    vars: BTreeMap<String, Var>,
}

impl Binding {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("model has no parameter {name}")))
    }

    pub fn has(&self, name: &str) -> bool {
        self.vars.contains_key(name)
    }

    /// Collects gradients after `graph.backward`. Parameters the loss never reached get zeros.
    pub fn gradients(&self, graph: &Graph) -> Gradients {
        let grads = self
            .vars
            .iter()
            .map(|(name, &v)| {
                let g = graph
                    .grad(v)
                    .map(<[f64]>::to_vec)
                    .unwrap_or_else(|| vec![0.0; graph.value(v).numel()]);
                (name.clone(), g)
            })
            .collect();
        Gradients { grads }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Gradients {
    grads: BTreeMap<String, Vec<f64>>,
}

impl Gradients {
    pub fn new() -> Self {
        Gradients::default()
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.grads.get(name).map(Vec::as_slice)
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Vec<f64>) {
        self.grads.insert(name.into(), grad);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Vec<f64>)> {
        self.grads.iter()
    }

    /// Elementwise `self += other`; names missing on one side are taken from the other.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (name, g) in &other.grads {
            match self.grads.get_mut(name) {
                Some(mine) => mine.iter_mut().zip(g).for_each(|(a, b)| *a += b),
                None => {
                    self.grads.insert(name.clone(), g.clone());
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.values_mut() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }
}

/// He-style uniform init scaled by fan-in: weights in `±sqrt(6 / fan_in)`,
/// biases in `±1 / sqrt(fan_in)`.
pub fn kaiming_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    uniform(shape, bound, rng)
}

pub fn bias_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    uniform(shape, bound, rng)
}

pub fn uniform(shape: &[usize], bound: f64, rng: &mut ChaCha8Rng) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    Tensor::new(shape.to_vec(), data).expect("shape matches")
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam::new(0.9, 0.999, 1e-8)
    }
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Adam {
            beta1,
            beta2,
            eps,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn step(&mut self, params: &mut ParameterSet, grads: &Gradients, lr: f64) -> Result<()> {
        for (name, t) in params.iter() {
            match grads.get(name) {
                None => return Err(Error::State(format!("no gradient for parameter {name}"))),
                Some(g) if g.len() != t.numel() => {
                    return Err(Error::State(format!(
                        "gradient for {name} has {} values, parameter has {}",
                        g.len(),
                        t.numel()
                    )))
                }
                Some(_) => {}
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, value) in params.params.iter_mut() {
            let g = grads.get(name).expect("checked above");
            let n = g.len();
            let m = self.m.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            let v = self.v.entry(name.clone()).or_insert_with(|| vec![0.0; n]);
            for (((theta, &gi), mi), vi) in value.data_mut().iter_mut().zip(g).zip(m).zip(v) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *theta -= lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn single(value: f64) -> ParameterSet {
        let mut p = ParameterSet::new();
        p.insert("theta", Tensor::scalar(value)).unwrap();
        p
    }

    fn grad_of(g: f64) -> Gradients {
        let mut gr = Gradients::new();
        gr.insert("theta", vec![g]);
        gr
    }

    #[test]
    fn zero_gradient_leaves_parameters() {
        let mut p = single(1.25);
        let mut adam = Adam::default();
        for _ in 0..5 {
            adam.step(&mut p, &grad_of(0.0), 0.1).unwrap();
        }
        assert_eq!(p.get("theta").unwrap().item(), 1.25);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = single(2.0);
        Adam::default().step(&mut p, &grad_of(1.0), 0.1).unwrap();
        // m̂ = 1, v̂ = 1, so the step is 0.1 / (1 + 1e-8).
        let expected = 2.0 - 0.1 / (1.0 + 1e-8);
        assert!((p.get("theta").unwrap().item() - expected).abs() < 1e-15);
    }

    #[test]
    fn missing_gradient_is_a_state_error() {
        let mut p = single(0.0);
        p.insert("other", Tensor::scalar(0.0)).unwrap();
        let err = Adam::default().step(&mut p, &grad_of(1.0), 0.1).unwrap_err();
        assert!(matches!(err, Error::State(_)));
    }

    #[test]
    fn quadratic_bowl_converges() {
        // f(θ) = Σ a_i (θ_i - c_i)^2 with gradient 2 a_i (θ_i - c_i).
        let a = [1.0, 3.0, 0.5];
        let c = [0.7, -1.2, 2.0];
        let mut p = ParameterSet::new();
        p.insert("theta", Tensor::new(vec![3], vec![0.0; 3]).unwrap()).unwrap();
        let mut adam = Adam::default();
        let f = |th: &[f64]| -> f64 { (0..3).map(|i| a[i] * (th[i] - c[i]).powi(2)).sum() };
        let mut steps = 0;
        for step in 0..500 {
            let th = p.get("theta").unwrap().data().to_vec();
            if f(&th) < 1e-6 {
                steps = step;
                break;
            }
            let mut g = Gradients::new();
            g.insert("theta", (0..3).map(|i| 2.0 * a[i] * (th[i] - c[i])).collect());
            let lr = if step < 250 { 0.05 } else { 0.005 };
            adam.step(&mut p, &g, lr).unwrap();
            steps = step + 1;
        }
        let th = p.get("theta").unwrap().data().to_vec();
        assert!(f(&th) < 1e-6, "f = {} after {steps} steps", f(&th));
    }

    #[test]
    fn init_is_seeded_and_bounded() {
        let mut r1 = ChaCha8Rng::seed_from_u64(9);
        let mut r2 = ChaCha8Rng::seed_from_u64(9);
        let a = kaiming_uniform(&[4, 6], 6, &mut r1);
        let b = kaiming_uniform(&[4, 6], 6, &mut r2);
        assert_eq!(a, b);
        assert!(a.data().iter().all(|v| v.abs() <= 1.0));
    }
}
