use super::tensor::Tensor;

/// First-order update rule over a fixed list of parameter tensors.
pub trait Optimizer {
    fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]);
}

/// Plain gradient descent with a fixed step.
#[derive(Clone, Debug)]
pub struct Sgd {
    pub lr: f64,
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        for (p, g) in params.iter_mut().zip(grads) {
            for (w, d) in p.data_mut().iter_mut().zip(g.data()) {
                *w -= self.lr * d;
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, t: 0, m: Vec::new(), v: Vec::new() }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.v = self.m.clone();
        }
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for (k, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, (w, d)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * d;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * d * d;
                *w -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimise(opt: &mut dyn Optimizer, steps: usize) -> f64 {
        // f(w) = (w - 3)^2
        let mut p = vec![Tensor::scalar(0.0)];
        for _ in 0..steps {
            let g = Tensor::scalar(2.0 * (p[0].get(0, 0) - 3.0));
            opt.step(&mut p, &[g]);
        }
        p[0].get(0, 0)
    }

    #[test]
    fn sgd_converges_on_parabola() {
        assert!((minimise(&mut Sgd { lr: 0.1 }, 200) - 3.0).abs() < 1e-6);
    }

    #[test]
    fn adam_converges_on_parabola() {
        assert!((minimise(&mut Adam::new(0.1), 2000) - 3.0).abs() < 1e-3);
    }
}
