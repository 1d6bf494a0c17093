use nalgebra::{Matrix2, Matrix3, RowVector2, Vector2};
use num_complex::Complex64;

use super::DiscreteTransferFunction;
use crate::error::{Error, Result};

/// Discrete two-state SISO model `x+ = A x + B u`, `y = C x + D u`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSpaceModel {
    pub a: Matrix2<f64>,
    pub b: Vector2<f64>,
    pub c: RowVector2<f64>,
    pub d: f64,
    pub dt: f64,
}

impl StateSpaceModel {
    pub fn step(&self, x: &Vector2<f64>, u: f64) -> Vector2<f64> {
        self.a * x + self.b * u
    }

    pub fn output(&self, x: &Vector2<f64>, u: f64) -> f64 {
        (self.c * x)[0] + self.d * u
    }

    pub fn poles(&self) -> Vec<Complex64> {
        self.a.complex_eigenvalues().iter().copied().collect()
    }

    /// `C (zI - A)^-1 B + D` as a transfer function in `z^-1`.
    pub fn to_transfer_function(&self) -> Result<DiscreteTransferFunction> {
        let a = &self.a;
        // det(zI - A) = z^2 - tr(A) z + det(A)
        let den = vec![1.0, -a.trace(), a.determinant()];
        // C adj(zI - A) B, adj(zI - A) = [[z - a11, a01], [a10, z - a00]]
        let (c0, c1) = (self.c[0], self.c[1]);
        let (b0, b1) = (self.b[0], self.b[1]);
        let z1 = c0 * b0 + c1 * b1;
        let z0 = c0 * (-a[(1, 1)] * b0 + a[(0, 1)] * b1) + c1 * (a[(1, 0)] * b0 - a[(0, 0)] * b1);
        let num = vec![self.d, z1 + self.d * den[1], z0 + self.d * den[2]];
        DiscreteTransferFunction::new(num, den)
    }
}

/// Zero-order-hold discretization of `gain / (mass s^2 + damping s + stiffness)`
/// with state `(position, velocity)`.
///
/// Uses the exponential of the augmented matrix `[[A, B], [0, 0]] dt`, which
/// needs no inverse of `A` and so also covers singular dynamics (`stiffness = 0`).
pub fn c2d_zoh(mass: f64, damping: f64, stiffness: f64, gain: f64, dt: f64) -> Result<StateSpaceModel> {
    if !(mass > 0.0 && dt > 0.0) || ![mass, damping, stiffness, gain, dt].iter().all(|v| v.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "c2d_zoh needs mass > 0 and dt > 0 (got mass={mass}, dt={dt})"
        )));
    }
    #[rustfmt::skip]
    let aug = Matrix3::new(
        0.0,                 1.0,               0.0,
        -stiffness / mass,   -damping / mass,   gain / mass,
        0.0,                 0.0,               0.0,
    ) * dt;
    let phi = aug.exp();
    if phi.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("matrix exponential overflowed".into()));
    }
    Ok(StateSpaceModel {
        a: phi.fixed_view::<2, 2>(0, 0).into_owned(),
        b: phi.fixed_view::<2, 1>(0, 2).into_owned(),
        c: RowVector2::new(1.0, 0.0),
        d: 0.0,
        dt,
    })
}
