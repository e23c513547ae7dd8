//! Central finite-difference verification of analytic gradients.

use super::Tensor;

/// Anything exposing its trainable tensors in a stable order.
pub trait Parameterized {
    fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, t| n += t.len());
        n
    }

    fn param_shapes(&self) -> Vec<Vec<usize>> {
        let mut shapes = Vec::new();
        self.visit_params(&mut |_, t| shapes.push(t.shape().to_vec()));
        shapes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorCheck {
    pub name: String,
    pub checked: usize,
    pub max_abs_error: f64,
    /// `max_i |analytic_i - numeric_i|` divided by the tensor's gradient scale
    /// `max_i max(|analytic_i|, |numeric_i|)`.
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tensors: Vec<TensorCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn worst_relative_error(&self) -> f64 {
        self.tensors
            .iter()
            .map(|t| t.max_relative_error)
            .fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.max_relative_error <= self.tolerance)
    }

    pub fn failures(&self) -> impl Iterator<Item = &TensorCheck> {
        self.tensors
            .iter()
            .filter(|t| t.max_relative_error > self.tolerance)
    }
}

fn with_param<P: Parameterized + ?Sized>(
    model: &mut P,
    index: usize,
    f: &mut dyn FnMut(&mut Tensor),
) {
    let mut seen = 0;
    model.visit_params_mut(&mut |_, t| {
        if seen == index {
            f(t);
        }
        seen += 1;
    });
}

/// Compares `analytic` (one tensor per parameter, in visit order) against
/// `(L(θ+ε) - L(θ-ε)) / 2ε` for every parameter element. `stride` > 1 checks
/// every `stride`-th element only.
pub fn finite_diff_check<P, L>(
    model: &mut P,
    loss: L,
    analytic: &[Tensor],
    epsilon: f64,
    tolerance: f64,
    stride: usize,
) -> GradCheckReport
where
    P: Parameterized + ?Sized,
    L: Fn(&P) -> f64,
{
    let mut names = Vec::new();
    let mut lens = Vec::new();
    model.visit_params(&mut |name, t| {
        names.push(name.to_string());
        lens.push(t.len());
    });
    assert_eq!(
        names.len(),
        analytic.len(),
        "one analytic gradient tensor per parameter"
    );
    let stride = stride.max(1);
    let mut tensors = Vec::with_capacity(names.len());
    for (index, (name, len)) in names.into_iter().zip(lens).enumerate() {
        assert_eq!(analytic[index].len(), len, "gradient shape for {name}");
        let mut max_abs_error: f64 = 0.0;
        let mut scale: f64 = 0.0;
        let mut checked = 0;
        for element in (0..len).step_by(stride) {
            let mut original = 0.0;
            with_param(model, index, &mut |t| {
                original = t[element];
                t[element] = original + epsilon;
            });
            let plus = loss(model);
            with_param(model, index, &mut |t| t[element] = original - epsilon);
            let minus = loss(model);
            with_param(model, index, &mut |t| t[element] = original);
            let numeric = (plus - minus) / (2.0 * epsilon);
            let exact = analytic[index][element];
            max_abs_error = max_abs_error.max((exact - numeric).abs());
            scale = scale.max(exact.abs()).max(numeric.abs());
            checked += 1;
        }
        let max_relative_error = if max_abs_error == 0.0 {
            0.0
        } else {
            max_abs_error / scale
        };
        tensors.push(TensorCheck {
            name,
            checked,
            max_abs_error,
            max_relative_error,
        });
    }
    GradCheckReport { tensors, tolerance }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Quadratic {
        w: Tensor,
    }

    impl Parameterized for Quadratic {
        fn visit_params(&self, f: &mut dyn FnMut(&str, &Tensor)) {
            f("w", &self.w);
        }
        fn visit_params_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
            f("w", &mut self.w);
        }
    }

    #[test]
    fn identity_graph_has_zero_error() {
        // L = sum(w): gradient is exactly one everywhere.
        let mut m = Quadratic {
            w: Tensor::vector(vec![0.5, -1.0, 2.0]),
        };
        let grads = vec![Tensor::filled(&[3], 1.0)];
        let report = finite_diff_check(&mut m, |m| m.w.data().iter().sum(), &grads, 1e-5, 1e-4, 1);
        assert!(report.passed());
        assert!(report.worst_relative_error() < 1e-9);
    }

    #[test]
    fn constant_loss_has_zero_gradient() {
        let mut m = Quadratic {
            w: Tensor::vector(vec![0.5, -1.0]),
        };
        let grads = vec![Tensor::zeros(&[2])];
        let report = finite_diff_check(&mut m, |_| 3.0, &grads, 1e-5, 1e-4, 1);
        assert_eq!(report.worst_relative_error(), 0.0);
    }

    #[test]
    fn wrong_gradient_is_caught() {
        let mut m = Quadratic {
            w: Tensor::vector(vec![0.5, -1.0]),
        };
        // L = sum(w^2) has gradient 2w; pass w instead.
        let grads = vec![m.w.clone()];
        let report = finite_diff_check(
            &mut m,
            |m| m.w.data().iter().map(|v| v * v).sum(),
            &grads,
            1e-5,
            1e-4,
            1,
        );
        assert!(!report.passed());
        assert_eq!(report.failures().count(), 1);
    }
}
