//! Differentiable objectives over flat real vectors, and the coordinate
//! wrappers (masking, box transforms) layered on top of them.

use crate::params::{bound_coord, BoxBounds, FixedMask};

/// A smooth function to minimize. `+inf` marks points outside the valid domain.
pub trait Objective: Sync {
    fn dim(&self) -> usize;

    /// Value at `x`; writes the gradient into `grad` (zeroed when the value is infinite).
    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64;

    fn value(&self, x: &[f64]) -> f64 {
        let mut g = vec![0.0; self.dim()];
        self.value_grad(x, &mut g)
    }
}

impl<T: Objective + ?Sized> Objective for &T {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        (**self).value_grad(x, grad)
    }

    fn value(&self, x: &[f64]) -> f64 {
        (**self).value(x)
    }
}

/// Closure-backed objective, mostly for tests and small synthetic targets.
pub struct FnObjective<F> {
    dim: usize,
    f: F,
}

impl<F> FnObjective<F>
where
    F: Fn(&[f64], &mut [f64]) -> f64 + Sync,
{
    pub fn new(dim: usize, f: F) -> Self {
        FnObjective { dim, f }
    }
}

impl<F> Objective for FnObjective<F>
where
    F: Fn(&[f64], &mut [f64]) -> f64 + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        (self.f)(x, grad)
    }
}

/// Restricts an objective to the free coordinates of a mask.
pub struct Masked<'a, O: ?Sized> {
    inner: &'a O,
    mask: &'a FixedMask,
}

impl<'a, O: Objective + ?Sized> Masked<'a, O> {
    pub fn new(inner: &'a O, mask: &'a FixedMask) -> Self {
        assert_eq!(inner.dim(), mask.dim(), "mask dimension mismatch");
        Masked { inner, mask }
    }
}

impl<O: Objective + ?Sized> Objective for Masked<'_, O> {
    fn dim(&self) -> usize {
        self.mask.free_dim()
    }

    fn value_grad(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        let full = self.mask.embed(x).expect("free vector length");
        let mut g = vec![0.0; full.len()];
        let v = self.inner.value_grad(&full, &mut g);
        for (dst, src) in grad.iter_mut().zip(self.mask.apply(&g)) {
            *dst = src;
        }
        v
    }
}

/// Sampling-space potential: `f(T(y)) - log|T'(y)|` for the coordinatewise box
/// transform `T`.
pub struct BoxTransformed<'a, O: ?Sized> {
    inner: &'a O,
    bounds: &'a BoxBounds,
}

impl<'a, O: Objective + ?Sized> BoxTransformed<'a, O> {
    pub fn new(inner: &'a O, bounds: &'a BoxBounds) -> Self {
        assert_eq!(inner.dim(), bounds.dim(), "bounds dimension mismatch");
        BoxTransformed { inner, bounds }
    }
}

impl<O: Objective + ?Sized> Objective for BoxTransformed<'_, O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value_grad(&self, y: &[f64], grad: &mut [f64]) -> f64 {
        let coords: Vec<_> = y
            .iter()
            .zip(self.bounds.lower().iter().zip(self.bounds.upper()))
            .map(|(&v, (&l, &u))| bound_coord(v, l, u))
            .collect();
        let x: Vec<f64> = coords.iter().map(|c| c.value).collect();
        let log_jac: f64 = coords.iter().map(|c| c.log_jacobian).sum();
        let mut gx = vec![0.0; x.len()];
        let f = self.inner.value_grad(&x, &mut gx);
        if !f.is_finite() {
            grad.iter_mut().for_each(|g| *g = 0.0);
            return f64::INFINITY;
        }
        for ((g, gxi), c) in grad.iter_mut().zip(&gx).zip(&coords) {
            *g = gxi * c.dvalue_dy - c.dlog_jacobian_dy;
        }
        f - log_jac
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic() -> FnObjective<impl Fn(&[f64], &mut [f64]) -> f64 + Sync> {
        FnObjective::new(3, |x: &[f64], g: &mut [f64]| {
            let mut f = 0.0;
            for i in 0..3 {
                let d = x[i] - (i as f64 + 1.0);
                f += d * d;
                g[i] = 2.0 * d;
            }
            f
        })
    }

    #[test]
    fn masked_objective_holds_fixed_coordinates() {
        let q = quadratic();
        let mask = FixedMask::from_indices(&[0.0, 5.0, 0.0], &[1]).unwrap();
        let masked = Masked::new(&q, &mask);
        assert_eq!(masked.dim(), 2);
        let mut g = [0.0; 2];
        let f = masked.value_grad(&[1.0, 3.0], &mut g);
        assert_eq!(f, 9.0);
        assert_eq!(g, [0.0, 0.0]);
    }

    #[test]
    fn box_transformed_gradient_matches_finite_differences() {
        let q = quadratic();
        let b = BoxBounds::new(
            vec![-2.0, 0.0, f64::NEG_INFINITY],
            vec![2.0, f64::INFINITY, f64::INFINITY],
        )
        .unwrap();
        let t = BoxTransformed::new(&q, &b);
        let y = [0.3, -0.4, 1.7];
        let mut g = [0.0; 3];
        t.value_grad(&y, &mut g);
        let h = 1e-6;
        for i in 0..3 {
            let mut up = y;
            let mut dn = y;
            up[i] += h;
            dn[i] -= h;
            let num = (t.value(&up) - t.value(&dn)) / (2.0 * h);
            assert!((num - g[i]).abs() < 1e-7 * (1.0 + num.abs()));
        }
    }
}
