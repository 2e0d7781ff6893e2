// Copyright 2026 The copal Authors
// SPDX-License-Identifier: Apache-2.0

//! Output sensitivity of a weighted layer to small perturbations.
//!
//! For a site `y = f(W, x)` and perturbations `(dW, dx)`:
//!
//! * `S_W = f(W + dW, x) - y` and `S_x = f(W, x + dx) - y` (finite differences),
//! * `dy = S_W + S_x`,
//! * `df/dW` is `x` for a linear site and `dW^+ S_W` otherwise,
//! * the gradient of `L = ||dy||^2` with respect to the weight displacement is
//!   the outer product `2 dy (df/dW)^T`, congruent to `W`.
//!
//! Vectors are columns: `x` is `in x k`, `y` is `out x k`, one column per
//! sample.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix, DEFAULT_PINV_TOL};
use crate::model::{Activation, Layer};

pub const DEFAULT_EPSILON: f64 = 1e-3;

/// A weighted function `f(W, x) = act(W x)`; a site without activation is
/// linear.
#[derive(Debug, Clone, Copy)]
pub struct Site<'a> {
    pub weight: &'a Matrix,
    pub activation: Option<Activation>,
}

impl<'a> Site<'a> {
    pub fn linear(weight: &'a Matrix) -> Self {
        Site { weight, activation: None }
    }

    pub fn activated(weight: &'a Matrix, activation: Activation) -> Self {
        Site { weight, activation: Some(activation) }
    }

    pub fn from_layer(layer: &'a Layer) -> Result<Self> {
        layer.weight().map(Site::linear).ok_or_else(|| Error::Usage("sensitivity needs a layer with weights".into()))
    }

    pub fn is_linear(&self) -> bool {
        self.activation.is_none()
    }

    /// `f(weight, x)` for an arbitrary weight congruent to the site's.
    pub fn eval(&self, weight: &Matrix, x: &Matrix) -> Result<Matrix> {
        if weight.shape() != self.weight.shape() {
            return Err(Error::shape(format!(
                "weight {:?} is not congruent to site weight {:?}",
                weight.shape(),
                self.weight.shape()
            )));
        }
        let z = weight.matmul(x)?;
        match self.activation {
            None => Ok(z),
            Some(act) => z.map(|v| act.apply(v)),
        }
    }

    pub fn output(&self, x: &Matrix) -> Result<Matrix> {
        self.eval(self.weight, x)
    }
}

/// `dW` and `dx` with their generating scale and seed.
#[derive(Debug, Clone, PartialEq)]
pub struct Perturbation {
    pub delta_w: Matrix,
    pub delta_x: Matrix,
    pub epsilon: f64,
    pub seed: u64,
}

fn scaled_gaussian(shape: (usize, usize), target_rms: f64, rng: &mut ChaCha8Rng) -> Result<Matrix> {
    let raw = Matrix::from_fn(shape.0, shape.1, |_, _| rng.sample(StandardNormal))?;
    let rms = raw.rms();
    if target_rms == 0.0 || rms == 0.0 {
        return Ok(Matrix::zeros(shape.0, shape.1));
    }
    raw.scale(target_rms / rms)
}

impl Perturbation {
    /// Dense Gaussian perturbations rescaled so that
    /// `rms(dW) = epsilon * rms(W)` and `rms(dx) = epsilon * rms(x)`.
    pub fn gaussian(weight: &Matrix, x: &Matrix, epsilon: f64, seed: u64) -> Result<Self> {
        if !epsilon.is_finite() || epsilon < 0.0 {
            return Err(Error::Usage(format!("epsilon must be finite and non-negative, got {epsilon}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let delta_w = scaled_gaussian(weight.shape(), epsilon * weight.rms(), &mut rng)?;
        let delta_x = scaled_gaussian(x.shape(), epsilon * x.rms(), &mut rng)?;
        Ok(Perturbation { delta_w, delta_x, epsilon, seed })
    }

    pub fn zero(weight: &Matrix, x: &Matrix) -> Self {
        Perturbation {
            delta_w: Matrix::zeros(weight.rows(), weight.cols()),
            delta_x: Matrix::zeros(x.rows(), x.cols()),
            epsilon: 0.0,
            seed: 0,
        }
    }

    pub fn is_full_rank(&self) -> Result<bool> {
        let (r, c) = self.delta_w.shape();
        Ok(linalg::rank(&self.delta_w, DEFAULT_PINV_TOL)? == r.min(c))
    }
}

fn check_io(site: &Site, x: &Matrix, y: &Matrix) -> Result<()> {
    let (out, inp) = site.weight.shape();
    if x.rows() != inp || y.rows() != out || x.cols() != y.cols() {
        return Err(Error::shape(format!("site {out}x{inp} with x {:?} and y {:?}", x.shape(), y.shape())));
    }
    Ok(())
}

/// `f(W + dW, x) - y`. A linear site uses the identical closed form
/// `dW x`, which avoids cancellation at small `epsilon`.
pub fn sensitivity_w(site: &Site, x: &Matrix, y: &Matrix, p: &Perturbation) -> Result<Matrix> {
    check_io(site, x, y)?;
    if site.is_linear() {
        return p.delta_w.matmul(x);
    }
    let perturbed = site.weight.add(&p.delta_w)?;
    site.eval(&perturbed, x)?.sub(y)
}

/// `f(W, x + dx) - y`; `W dx` for a linear site.
pub fn sensitivity_x(site: &Site, x: &Matrix, y: &Matrix, p: &Perturbation) -> Result<Matrix> {
    check_io(site, x, y)?;
    if site.is_linear() {
        return site.weight.matmul(&p.delta_x);
    }
    site.eval(site.weight, &x.add(&p.delta_x)?)?.sub(y)
}

/// `x` for a linear site; `dW^+ S_W` (shape `in x k`) otherwise. The
/// nonlinear branch requires a full-rank `dW`.
pub fn dfdw_surrogate(site: &Site, x: &Matrix, s_w: &Matrix, p: &Perturbation) -> Result<Matrix> {
    if site.is_linear() {
        return Ok(x.clone());
    }
    if !p.is_full_rank()? {
        return Err(Error::Numerical(format!(
            "perturbation (seed {}) of shape {:?} is rank deficient; regenerate with a new seed",
            p.seed,
            p.delta_w.shape()
        )));
    }
    linalg::pseudoinverse(&p.delta_w, DEFAULT_PINV_TOL)?.matmul(s_w)
}

/// `2 dy (df/dW)^T`. With several columns this is the sum of the per-column
/// outer products.
pub fn loss_gradient(dy: &Matrix, dfdw: &Matrix) -> Result<Matrix> {
    if dy.cols() != dfdw.cols() {
        return Err(Error::shape(format!("dy {:?} and df/dW {:?} do not compose", dy.shape(), dfdw.shape())));
    }
    dy.matmul_transb(dfdw)?.scale(2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityRecord {
    pub s_w: Matrix,
    pub s_x: Matrix,
    pub dy: Matrix,
    pub dfdw: Matrix,
    pub grad: Matrix,
}

pub fn record(site: &Site, x: &Matrix, y: &Matrix, p: &Perturbation) -> Result<SensitivityRecord> {
    let s_w = sensitivity_w(site, x, y, p)?;
    let s_x = sensitivity_x(site, x, y, p)?;
    let dy = s_w.add(&s_x)?;
    let dfdw = dfdw_surrogate(site, x, &s_w, p)?;
    let grad = loss_gradient(&dy, &dfdw)?;
    Ok(SensitivityRecord { s_w, s_x, dy, dfdw, grad })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gaussian(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.sample(StandardNormal)).unwrap()
    }

    #[test]
    fn perturbation_scale_invariant() {
        let w = gaussian(6, 5, 1).scale(0.3).unwrap();
        let x = gaussian(5, 1, 2);
        let p = Perturbation::gaussian(&w, &x, 1e-3, 7).unwrap();
        assert!((p.delta_w.rms() - 1e-3 * w.rms()).abs() < 1e-9 * w.rms());
        assert!((p.delta_x.rms() - 1e-3 * x.rms()).abs() < 1e-9 * x.rms());
        assert!(p.is_full_rank().unwrap());
        assert_eq!(p, Perturbation::gaussian(&w, &x, 1e-3, 7).unwrap());
    }

    #[test]
    fn linear_site_is_exact() {
        let w = gaussian(4, 3, 3);
        let x = gaussian(3, 1, 4);
        let site = Site::linear(&w);
        let y = site.output(&x).unwrap();
        let p = Perturbation::gaussian(&w, &x, 0.1, 5).unwrap();
        let s_w = sensitivity_w(&site, &x, &y, &p).unwrap();
        let s_x = sensitivity_x(&site, &x, &y, &p).unwrap();
        assert!(s_w.sub(&p.delta_w.matmul(&x).unwrap()).unwrap().max_abs() < 1e-15);
        assert!(s_x.sub(&w.matmul(&p.delta_x).unwrap()).unwrap().max_abs() < 1e-15);
        assert_eq!(dfdw_surrogate(&site, &x, &s_w, &p).unwrap(), x);
        // same quantity as the finite difference
        let fd = site.eval(&w.add(&p.delta_w).unwrap(), &x).unwrap().sub(&y).unwrap();
        assert!(fd.sub(&s_w).unwrap().max_abs() < 1e-12 * y.max_abs());
        let fd = site.output(&x.add(&p.delta_x).unwrap()).unwrap().sub(&y).unwrap();
        assert!(fd.sub(&s_x).unwrap().max_abs() < 1e-12 * y.max_abs());
    }

    #[test]
    fn zero_perturbation_gives_zero_sensitivity() {
        let w = gaussian(4, 3, 6);
        let x = gaussian(3, 1, 7);
        let site = Site::linear(&w);
        let y = site.output(&x).unwrap();
        let p = Perturbation::zero(&w, &x);
        let r = record(&site, &x, &y, &p).unwrap();
        for m in [&r.s_w, &r.s_x, &r.dy, &r.grad] {
            assert_eq!(m.max_abs(), 0.0);
        }
        // the nonlinear branch refuses a rank-deficient perturbation
        let act = Site::activated(&w, Activation::Tanh);
        let ya = act.output(&x).unwrap();
        assert!(matches!(record(&act, &x, &ya, &p), Err(Error::Numerical(_))));
    }

    #[test]
    fn relu_sensitivity_matches_analytic_jacobian() {
        let w = gaussian(5, 4, 8);
        let x = gaussian(4, 1, 9);
        let site = Site::activated(&w, Activation::Relu);
        let z = w.matmul(&x).unwrap();
        assert!(z.as_slice().iter().all(|v| v.abs() > 1e-2), "pick inputs away from the kink");
        let y = site.output(&x).unwrap();
        let p = Perturbation::gaussian(&w, &x, 1e-4, 10).unwrap();
        let s_w = sensitivity_w(&site, &x, &y, &p).unwrap();
        // analytic: diag(relu'(z)) dW x
        let dwx = p.delta_w.matmul(&x).unwrap();
        let oracle = Matrix::from_fn(5, 1, |i, _| if z.get(i, 0) > 0.0 { dwx.get(i, 0) } else { 0.0 }).unwrap();
        assert!(s_w.sub(&oracle).unwrap().max_abs() < 1e-6);
    }

    #[test]
    fn tanh_input_sensitivity_is_second_order_accurate() {
        let w = gaussian(3, 4, 11).scale(0.5).unwrap();
        let x = gaussian(4, 1, 12);
        let site = Site::activated(&w, Activation::Tanh);
        let y = site.output(&x).unwrap();
        let z = w.matmul(&x).unwrap();
        for eps in [1e-2, 1e-3] {
            let p = Perturbation::gaussian(&w, &x, eps, 13).unwrap();
            let s_x = sensitivity_x(&site, &x, &y, &p).unwrap();
            let wdx = w.matmul(&p.delta_x).unwrap();
            let jac = Matrix::from_fn(3, 1, |i, _| (1.0 - z.get(i, 0).tanh().powi(2)) * wdx.get(i, 0)).unwrap();
            let err = s_x.sub(&jac).unwrap().max_abs();
            let scale = p.delta_x.frobenius_norm().powi(2);
            assert!(err < 10.0 * scale, "eps {eps}: err {err} vs dx^2 {scale}");
        }
    }

    #[test]
    fn surrogate_of_scaled_identity() {
        let w = gaussian(3, 3, 14);
        let x = gaussian(3, 1, 15);
        let site = Site::activated(&w, Activation::Gelu);
        let eps = 1e-3;
        let p = Perturbation {
            delta_w: Matrix::identity(3).scale(eps).unwrap(),
            delta_x: Matrix::zeros(3, 1),
            epsilon: eps,
            seed: 0,
        };
        let s_w = Matrix::from_rows(&[&[0.2], &[-0.1], &[0.05]]);
        let got = dfdw_surrogate(&site, &x, &s_w, &p).unwrap();
        assert!(got.sub(&s_w.scale(1.0 / eps).unwrap()).unwrap().max_abs() < 1e-9);
    }

    #[test]
    fn relu_surrogate_matches_projected_jacobian() {
        // wide layer so dW has full row rank
        let w = gaussian(4, 6, 16);
        let x = gaussian(6, 1, 17);
        let z = w.matmul(&x).unwrap();
        let site = Site::activated(&w, Activation::Relu);
        let y = site.output(&x).unwrap();
        let p = Perturbation::gaussian(&w, &x, 1e-3, 18).unwrap();
        let s_w = sensitivity_w(&site, &x, &y, &p).unwrap();
        let got = dfdw_surrogate(&site, &x, &s_w, &p).unwrap();
        let dwx = p.delta_w.matmul(&x).unwrap();
        let jdw = Matrix::from_fn(4, 1, |i, _| if z.get(i, 0) > 0.0 { dwx.get(i, 0) } else { 0.0 }).unwrap();
        let oracle = linalg::pseudoinverse(&p.delta_w, DEFAULT_PINV_TOL).unwrap().matmul(&jdw).unwrap();
        let rel = got.sub(&oracle).unwrap().frobenius_norm() / oracle.frobenius_norm();
        assert!(rel < 0.05, "relative error {rel}");
    }

    #[test]
    fn gradient_outer_product() {
        assert_eq!(loss_gradient(&Matrix::zeros(2, 1), &Matrix::ones(3, 1)).unwrap(), Matrix::zeros(2, 3));
        let g = loss_gradient(&Matrix::from_rows(&[&[1.0], &[2.0]]), &Matrix::from_rows(&[&[3.0], &[4.0]])).unwrap();
        assert_eq!(g, Matrix::from_rows(&[&[6.0, 8.0], &[12.0, 16.0]]));
        assert!(loss_gradient(&Matrix::zeros(2, 1), &Matrix::zeros(3, 2)).is_err());
    }

    #[test]
    fn gradient_matches_central_difference_on_linear_layer() {
        let w = gaussian(5, 4, 19);
        let x = gaussian(4, 1, 20);
        let site = Site::linear(&w);
        let y = site.output(&x).unwrap();
        let p = Perturbation::gaussian(&w, &x, 1e-3, 21).unwrap();
        let r = record(&site, &x, &y, &p).unwrap();
        // L(D) = ||S_x + D x||^2, evaluated around D = dW
        let loss = |d: &Matrix| r.s_x.add(&d.matmul(&x).unwrap()).unwrap().frobenius_norm().powi(2);
        let h = 1e-3 * p.delta_w.rms();
        let mut fd = Matrix::zeros(5, 4);
        for i in 0..5 {
            for j in 0..4 {
                let mut plus = p.delta_w.clone();
                let mut minus = p.delta_w.clone();
                plus.set(i, j, p.delta_w.get(i, j) + h).unwrap();
                minus.set(i, j, p.delta_w.get(i, j) - h).unwrap();
                fd.set(i, j, (loss(&plus) - loss(&minus)) / (2.0 * h)).unwrap();
            }
        }
        let rel = fd.sub(&r.grad).unwrap().frobenius_norm() / r.grad.frobenius_norm();
        assert!(rel < 1e-4, "relative error {rel}");
    }

    #[test]
    fn record_matches_constituents() {
        let w = gaussian(4, 6, 22);
        let x = gaussian(6, 1, 23);
        let site = Site::activated(&w, Activation::Tanh);
        let y = site.output(&x).unwrap();
        let p = Perturbation::gaussian(&w, &x, 1e-3, 24).unwrap();
        let r = record(&site, &x, &y, &p).unwrap();
        assert_eq!(r.s_w, sensitivity_w(&site, &x, &y, &p).unwrap());
        assert_eq!(r.s_x, sensitivity_x(&site, &x, &y, &p).unwrap());
        assert_eq!(r.dy, r.s_w.add(&r.s_x).unwrap());
        assert_eq!(r.dfdw, dfdw_surrogate(&site, &x, &r.s_w, &p).unwrap());
        assert_eq!(r.grad, loss_gradient(&r.dy, &r.dfdw).unwrap());
        assert_eq!(r.grad.shape(), w.shape());
        assert_eq!(r.dy.sub(&r.s_w.add(&r.s_x).unwrap()).unwrap().max_abs(), 0.0);
    }

    #[test]
    fn halving_epsilon_halves_weight_sensitivity() {
        let w = gaussian(8, 8, 25).scale(0.4).unwrap();
        let x = gaussian(8, 1, 26);
        for act in [None, Some(Activation::Tanh), Some(Activation::Gelu)] {
            let site = Site { weight: &w, activation: act };
            let y = site.output(&x).unwrap();
            let a = Perturbation::gaussian(&w, &x, 1e-3, 27).unwrap();
            let b = Perturbation::gaussian(&w, &x, 5e-4, 27).unwrap();
            let na = sensitivity_w(&site, &x, &y, &a).unwrap().frobenius_norm();
            let nb = sensitivity_w(&site, &x, &y, &b).unwrap().frobenius_norm();
            assert!((nb / na - 0.5).abs() < 0.01, "{act:?}: ratio {}", nb / na);
        }
    }

    #[test]
    fn site_agrees_with_model_layer() {
        let w = gaussian(3, 5, 28);
        let x = gaussian(5, 2, 29);
        let layer = Layer::Linear { weight: w.clone() };
        let site = Site::from_layer(&layer).unwrap();
        let rows = layer.forward(&x.transpose()).unwrap();
        assert!(site.output(&x).unwrap().sub(&rows.transpose()).unwrap().max_abs() < 1e-14);
        assert!(Site::from_layer(&Layer::Activation(Activation::Relu)).is_err());
    }
}
