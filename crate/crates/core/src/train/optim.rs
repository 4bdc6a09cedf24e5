use crate::diffcore::Array;

/// Global L2 norm over all arrays.
pub fn global_norm(grads: &[Array]) -> f64 {
    grads
        .iter()
        .flat_map(|g| g.data())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt()
}

/// Rescales `grads` so their global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_global_norm(grads: &mut [Array], max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        let factor = max_norm / norm;
        grads.iter_mut().for_each(|g| g.scale_in_place(factor));
    }
    norm
}

/// Adam without weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Number of updates applied so far.
    pub t: u64,
    pub m: Vec<Array>,
    pub v: Vec<Array>,
}

impl Adam {
    pub fn new(shapes: &[&[usize]]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: shapes.iter().map(|s| Array::zeros(s)).collect(),
            v: shapes.iter().map(|s| Array::zeros(s)).collect(),
        }
    }

    /// One update of every array in `params` whose `mask` entry is true.
    pub fn update(&mut self, params: &mut [Array], grads: &[Array], mask: &[bool], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t as i32);
        let c2 = 1.0 - self.beta2.powi(self.t as i32);
        for k in 0..params.len() {
            if !mask[k] {
                continue;
            }
            let p = params[k].data_mut();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            for (((p, m), v), g) in p.iter_mut().zip(m).zip(v).zip(grads[k].data()) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn clip_to_max_norm() {
        let mut g = vec![Array::vector(vec![3.0, 4.0])];
        let pre = clip_global_norm(&mut g, 0.5);
        assert_eq!(pre, 5.0);
        assert!((global_norm(&g) - 0.5).abs() < 1e-15);
        assert!((g[0].data()[0] / g[0].data()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn quadratic_descent() {
        // L = (p - 3)², gradient 2(p - 3)
        let mut p = vec![Array::scalar(0.0)];
        let mut adam = Adam::new(&[&[]]);
        let grad = |p: f64| vec![Array::scalar(2.0 * (p - 3.0))];
        let g = grad(p[0].item());
        adam.update(&mut p, &g, &[true], 0.1);
        // first Adam step moves by lr in the descent direction
        assert!((p[0].item() - 0.1).abs() < 1e-6);
        for _ in 0..500 {
            let g = grad(p[0].item());
            adam.update(&mut p, &g, &[true], 0.05);
        }
        assert!((p[0].item() - 3.0).abs() < 0.05, "{}", p[0].item());
    }

    #[test]
    fn masked_arrays_untouched() {
        let mut p = vec![Array::scalar(1.0), Array::scalar(1.0)];
        let mut adam = Adam::new(&[&[], &[]]);
        adam.update(&mut p, &[Array::scalar(1.0), Array::scalar(1.0)], &[true, false], 0.1);
        assert!(p[0].item() < 1.0);
        assert_eq!(p[1].item(), 1.0);
    }

    proptest! {
        #[test]
        fn clipping_never_grows_and_keeps_direction(
            v in proptest::collection::vec(-10.0f64..10.0, 1..20),
            max in 0.01f64..5.0,
        ) {
            let mut g = vec![Array::vector(v.clone())];
            let pre = clip_global_norm(&mut g, max);
            let post = global_norm(&g);
            prop_assert!(post <= pre + 1e-12);
            prop_assert!(post <= max * (1.0 + 1e-12) || post == pre);
            if pre > 0.0 {
                let cos: f64 = g[0].data().iter().zip(&v).map(|(a, b)| a * b).sum::<f64>() / (pre * post);
                prop_assert!((cos - 1.0).abs() < 1e-12);
            }
        }
    }
}
