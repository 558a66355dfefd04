use ndarray::{Array2, Zip};

use crate::autodiff::{Gradients, ParamStore};
use crate::scalar::Scalar;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    first: Vec<Array2<T>>,
    second: Vec<Array2<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamStore<T>) -> Self {
        let zeros = || Gradients::zeros_like(params).grads;
        Adam {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            step: 0,
            first: zeros(),
            second: zeros(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut ParamStore<T>, grads: &Gradients<T>, lr: f64) {
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::lit(1.0 - self.beta1.powi(t));
        let c2 = T::lit(1.0 - self.beta2.powi(t));
        let (lr, eps) = (T::lit(lr), T::lit(self.eps));
        let ids: Vec<_> = params.ids().collect();
        for (i, id) in ids.into_iter().enumerate() {
            Zip::from(params.get_mut(id))
                .and(&grads.grads[i])
                .and(&mut self.first[i])
                .and(&mut self.second[i])
                .for_each(|p, &g, m, v| {
                    *m = b1 * *m + (T::one() - b1) * g;
                    *v = b2 * *v + (T::one() - b2) * g * g;
                    let mhat = *m / c1;
                    let vhat = *v / c2;
                    *p -= lr * mhat / (vhat.sqrt() + eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn minimises_a_quadratic() {
        let mut params = ParamStore::<f64>::new();
        let id = params.add("x", array![[3.0, -2.0]]);
        let mut adam = Adam::new(&params);
        for _ in 0..2000 {
            let mut g = Gradients::zeros_like(&params);
            g.grads[0] = params.get(id).mapv(|x| 2.0 * x);
            adam.update(&mut params, &g, 0.01);
        }
        assert!(params.get(id).iter().all(|x| x.abs() < 1e-2));
        assert_eq!(adam.steps_taken(), 2000);
    }
}
