use accguard_core::{Error, Result};

use crate::network::{Grads, Sequential};

/// One momentum-SGD update: `velocity = momentum * velocity + grad`,
/// `param -= lr * velocity`.
pub fn sgd_step(param: &mut [f64], grad: &[f64], velocity: &mut [f64], lr: f64, momentum: f64) -> Result<()> {
    if param.len() != grad.len() || param.len() != velocity.len() {
        return Err(Error::Shape(format!(
            "sgd step over {} parameters with {} gradients and {} velocities",
            param.len(),
            grad.len(),
            velocity.len()
        )));
    }
    for ((p, g), v) in param.iter_mut().zip(grad).zip(velocity.iter_mut()) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

/// Momentum SGD over all trainable tensors of one network.
#[derive(Debug, Clone, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    velocity: Grads,
}

impl Sgd {
    pub fn new(net: &Sequential, lr: f64, momentum: f64) -> Self {
        Sgd {
            lr,
            momentum,
            velocity: Grads::zeros_like(net),
        }
    }

    pub fn step(&mut self, net: &mut Sequential, grads: &Grads) -> Result<()> {
        if grads.layers.len() != net.layers.len() || self.velocity.layers.len() != net.layers.len() {
            return Err(Error::Shape("gradients do not match the network".into()));
        }
        for ((layer, g), v) in net.layers.iter_mut().zip(&grads.layers).zip(&mut self.velocity.layers) {
            sgd_step(&mut layer.weight, &g.weight, &mut v.weight, self.lr, self.momentum)?;
            sgd_step(&mut layer.bias, &g.bias, &mut v.bias, self.lr, self.momentum)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn examples() {
        let mut w = [1.0];
        let mut v = [0.0];
        sgd_step(&mut w, &[0.5], &mut v, 0.1, 0.0).unwrap();
        assert!((w[0] - 0.95).abs() < 1e-15);

        let mut w = [3.0, -2.0];
        let mut v = [0.0; 2];
        sgd_step(&mut w, &[0.0; 2], &mut v, 0.1, 0.9).unwrap();
        assert_eq!(w, [3.0, -2.0]);

        let mut w = [0.0];
        let mut v = [0.0];
        sgd_step(&mut w, &[1.0], &mut v, 0.1, 0.9).unwrap();
        sgd_step(&mut w, &[1.0], &mut v, 0.1, 0.9).unwrap();
        assert!((w[0] - (-0.1 - 0.19)).abs() < 1e-15);

        assert!(sgd_step(&mut w, &[1.0, 2.0], &mut v, 0.1, 0.9).is_err());
    }
}
