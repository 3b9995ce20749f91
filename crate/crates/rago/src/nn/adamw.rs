//! AdamW with decoupled weight decay, plus the training-rate schedule.

use ndarray::Array2;
use std::collections::BTreeMap;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Base rate 1e-3 held for the first 100 epochs, then multiplied by 0.999
/// per epoch. Epochs are 1-based.
pub fn lr_schedule(epoch: usize) -> f64 {
    let base = 1e-3;
    if epoch <= 100 {
        base
    } else {
        base * 0.999f64.powi((epoch - 100) as i32)
    }
}

/// First/second moment state per parameter, keyed like the weight map.
pub struct AdamW {
    pub weight_decay: f64,
    step: u64,
    m: BTreeMap<String, Array2<f64>>,
    v: BTreeMap<String, Array2<f64>>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        AdamW {
            weight_decay,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One decoupled-weight-decay Adam update over all parameters present in
    /// `grads`. Parameters without a gradient entry stay untouched.
    pub fn step(
        &mut self,
        weights: &mut BTreeMap<String, Array2<f64>>,
        grads: &BTreeMap<String, Array2<f64>>,
        lr: f64,
    ) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);
        for (name, g) in grads {
            let w = weights
                .get_mut(name)
                .unwrap_or_else(|| panic!("gradient for unknown parameter `{name}`"));
            assert_eq!(w.dim(), g.dim(), "gradient shape mismatch for `{name}`");
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.dim()));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Array2::zeros(g.dim()));
            azip_update(w, g, m, v, lr, self.weight_decay, bc1, bc2);
        }
    }
}

fn azip_update(
    w: &mut Array2<f64>,
    g: &Array2<f64>,
    m: &mut Array2<f64>,
    v: &mut Array2<f64>,
    lr: f64,
    wd: f64,
    bc1: f64,
    bc2: f64,
) {
    ndarray::Zip::from(w)
        .and(g)
        .and(m)
        .and(v)
        .for_each(|w, &g, m, v| {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *m / bc1;
            let v_hat = *v / bc2;
            *w -= lr * (m_hat / (v_hat.sqrt() + ADAM_EPS) + wd * *w);
        });
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(name: &str, value: f64) -> BTreeMap<String, Array2<f64>> {
        BTreeMap::from([(name.to_string(), Array2::from_elem((1, 1), value))])
    }

    #[test]
    fn zero_gradient_without_decay_leaves_weights() {
        let mut w = single("p", 1.25);
        let g = single("p", 0.0);
        let mut opt = AdamW::new(0.0);
        for _ in 0..5 {
            opt.step(&mut w, &g, 1e-3);
        }
        assert_eq!(w["p"][(0, 0)], 1.25);
    }

    #[test]
    fn decay_shrinks_weight_even_with_zero_gradient() {
        let mut w = single("p", 2.0);
        let g = single("p", 0.0);
        let mut opt = AdamW::new(0.01);
        opt.step(&mut w, &g, 0.1);
        assert!((w["p"][(0, 0)] - 2.0 * (1.0 - 0.1 * 0.01)).abs() < 1e-12);
    }

    #[test]
    fn schedule_holds_then_decays() {
        assert_eq!(lr_schedule(1), 1e-3);
        assert_eq!(lr_schedule(100), 1e-3);
        assert!((lr_schedule(101) - 9.99e-4).abs() < 1e-12);
        assert!((lr_schedule(102) - 1e-3 * 0.999f64.powi(2)).abs() < 1e-15);
        assert!(lr_schedule(500) < lr_schedule(200));
    }

    // Minimize (x - 3)^2 from x = 10; Adam should close most of the gap in
    // 100 steps at lr 0.1.
    #[test]
    fn quadratic_descent_converges() {
        let mut w = single("x", 10.0);
        let mut opt = AdamW::new(0.0);
        let loss = |x: f64| (x - 3.0) * (x - 3.0);
        let initial = loss(10.0);
        for _ in 0..100 {
            let x = w["x"][(0, 0)];
            let g = single("x", 2.0 * (x - 3.0));
            opt.step(&mut w, &g, 0.1);
        }
        let fin = loss(w["x"][(0, 0)]);
        assert!(fin < 0.01 * initial, "loss {initial} -> {fin}");
    }

    #[test]
    #[should_panic(expected = "unknown parameter")]
    fn unknown_parameter_panics() {
        let mut w = single("a", 0.0);
        let g = single("b", 1.0);
        AdamW::new(0.0).step(&mut w, &g, 1e-3);
    }
}
