//! Continuous-time LTI plants and their exact zero-order-hold discretization.

use nalgebra::{DMatrix, DVector};

use crate::error::MpcError;

/// `x' = A x + B u`, `y = C x`.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
}

fn finite(m: &DMatrix<f64>, what: &'static str) -> Result<(), MpcError> {
    if m.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(MpcError::NonFinite(what))
    }
}

impl PlantModel {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self, MpcError> {
        let n = a.nrows();
        if n == 0 || a.ncols() != n {
            return Err(MpcError::Dimension(format!(
                "A is {}x{}, expected square",
                n,
                a.ncols()
            )));
        }
        if b.nrows() != n || b.ncols() == 0 {
            return Err(MpcError::Dimension(format!(
                "B is {}x{}, expected {n}xm",
                b.nrows(),
                b.ncols()
            )));
        }
        if c.ncols() != n || c.nrows() == 0 {
            return Err(MpcError::Dimension(format!(
                "C is {}x{}, expected px{n}",
                c.nrows(),
                c.ncols()
            )));
        }
        finite(&a, "A")?;
        finite(&b, "B")?;
        finite(&c, "C")?;
        Ok(PlantModel { a, b, c })
    }

    /// Linearised pendulum: `A = [0 1; a b]`, `B = [0; c]`, `y = x1`.
    pub fn pendulum(a: f64, b: f64, c: f64) -> Result<Self, MpcError> {
        PlantModel::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, a, b]),
            DMatrix::from_row_slice(2, 1, &[0.0, c]),
            DMatrix::from_row_slice(1, 2, &[1.0, 0.0]),
        )
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }

    pub fn states(&self) -> usize {
        self.a.nrows()
    }

    pub fn inputs(&self) -> usize {
        self.b.ncols()
    }

    pub fn outputs(&self) -> usize {
        self.c.nrows()
    }

    pub fn output(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.c * x
    }

    pub(crate) fn check_state(&self, x: &DVector<f64>, what: &'static str) -> Result<(), MpcError> {
        if x.len() != self.states() {
            return Err(MpcError::Dimension(format!(
                "{what} has {} entries, plant has {} states",
                x.len(),
                self.states()
            )));
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(MpcError::NonFinite(what));
        }
        Ok(())
    }

    pub(crate) fn check_input(&self, u: &DVector<f64>, what: &'static str) -> Result<(), MpcError> {
        if u.len() != self.inputs() {
            return Err(MpcError::Dimension(format!(
                "{what} has {} entries, plant has {} inputs",
                u.len(),
                self.inputs()
            )));
        }
        if !u.iter().all(|v| v.is_finite()) {
            return Err(MpcError::NonFinite(what));
        }
        Ok(())
    }
}

/// `(Ad, Bd)` for an input held constant over `h` seconds:
/// `Ad = e^{Ah}`, `Bd = ∫_0^h e^{As} ds B`, read off the exponential of the
/// augmented matrix `[A B; 0 0] h`.
pub fn discretize_segment(plant: &PlantModel, h: f64) -> Result<(DMatrix<f64>, DMatrix<f64>), MpcError> {
    if !h.is_finite() || h < 0.0 {
        return Err(MpcError::InvalidSchedule(format!("segment length {h} s")));
    }
    let (n, m) = (plant.states(), plant.inputs());
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(&plant.a * h));
    aug.view_mut((0, n), (n, m)).copy_from(&(&plant.b * h));
    let e = aug.exp();
    let ad = e.view((0, 0), (n, n)).into_owned();
    let bd = e.view((0, n), (n, m)).into_owned();
    if !ad.iter().chain(bd.iter()).all(|v| v.is_finite()) {
        return Err(MpcError::NonFinite("discretized plant"));
    }
    Ok((ad, bd))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn scalar(a: f64, b: f64) -> PlantModel {
        PlantModel::new(
            DMatrix::from_element(1, 1, a),
            DMatrix::from_element(1, 1, b),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap()
    }

    #[test]
    fn integrator() {
        let (ad, bd) = discretize_segment(&scalar(0.0, 1.0), 0.5).unwrap();
        assert_relative_eq!(ad[(0, 0)], 1.0, epsilon = 1e-14);
        assert_relative_eq!(bd[(0, 0)], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn first_order_lag() {
        let (ad, bd) = discretize_segment(&scalar(-1.0, 1.0), std::f64::consts::LN_2).unwrap();
        assert_relative_eq!(ad[(0, 0)], 0.5, epsilon = 1e-14);
        assert_relative_eq!(bd[(0, 0)], 0.5, epsilon = 1e-14);
    }

    #[test]
    fn zero_length_is_identity() {
        let p = PlantModel::pendulum(98.0, 120.0, 20.0).unwrap();
        let (ad, bd) = discretize_segment(&p, 0.0).unwrap();
        assert_eq!(ad, DMatrix::identity(2, 2));
        assert_eq!(bd, DMatrix::zeros(2, 1));
    }

    #[test]
    fn double_integrator_unit_step() {
        let p = PlantModel::pendulum(0.0, 0.0, 1.0).unwrap();
        let (ad, bd) = discretize_segment(&p, 1.0).unwrap();
        assert_relative_eq!(
            ad,
            DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 0.0, 1.0]),
            epsilon = 1e-14
        );
        assert_relative_eq!(bd, DMatrix::from_row_slice(2, 1, &[0.5, 1.0]), epsilon = 1e-14);
    }

    #[test]
    fn double_integrator() {
        let p = PlantModel::pendulum(0.0, 0.0, 1.0).unwrap();
        let (ad, bd) = discretize_segment(&p, 2.0).unwrap();
        assert_relative_eq!(
            ad,
            DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 1.0]),
            epsilon = 1e-13
        );
        assert_relative_eq!(bd, DMatrix::from_row_slice(2, 1, &[2.0, 2.0]), epsilon = 1e-13);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(discretize_segment(&scalar(0.0, 1.0), -1.0).is_err());
        assert!(discretize_segment(&scalar(0.0, 1.0), f64::NAN).is_err());
        assert!(PlantModel::new(DMatrix::zeros(2, 3), DMatrix::zeros(2, 1), DMatrix::zeros(1, 2)).is_err());
        assert!(PlantModel::pendulum(f64::INFINITY, 0.0, 1.0).is_err());
    }
}
