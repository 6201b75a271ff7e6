//! Classical fixed-step fourth-order Runge–Kutta.

use crate::scalar::Scalar;

/// Stage input `out = y + h·k`.
#[inline]
pub fn stage_point<T: Scalar>(y: &[T], k: &[T], h: T, out: &mut [T]) {
    for i in 0..y.len() {
        out[i] = y[i] + h * k[i];
    }
}

/// Final update `y += dt/6·(k1 + 2(k2 + k3) + k4)`.
///
/// Both helpers act element by element, so a state split across several
/// owners advances bit for bit like the whole vector.
#[inline]
pub fn combine<T: Scalar>(y: &mut [T], k: [&[T]; 4], dt: T) {
    let sixth = dt / T::c(6.0);
    for i in 0..y.len() {
        y[i] += sixth * (k[0][i] + T::c(2.0) * (k[1][i] + k[2][i]) + k[3][i]);
    }
}

/// RK4 stepper with reusable stage buffers.
#[derive(Debug, Clone, Default)]
pub struct Rk4<T> {
    k1: Vec<T>,
    k2: Vec<T>,
    k3: Vec<T>,
    k4: Vec<T>,
    tmp: Vec<T>,
}

impl<T: Scalar> Rk4<T> {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![T::zero(); dim],
            k2: vec![T::zero(); dim],
            k3: vec![T::zero(); dim],
            k4: vec![T::zero(); dim],
            tmp: vec![T::zero(); dim],
        }
    }

    /// Advances `y` from `t` to `t + dt` for `ẏ = f(t, y)`. On error `y` is
    /// left untouched.
    pub fn step<E, F>(&mut self, t: T, y: &mut [T], dt: T, mut f: F) -> Result<(), E>
    where
        F: FnMut(T, &[T], &mut [T]) -> Result<(), E>,
    {
        let n = y.len();
        if self.k1.len() != n {
            *self = Self::new(n);
        }
        let half = T::c(0.5) * dt;
        f(t, y, &mut self.k1)?;
        stage_point(y, &self.k1, half, &mut self.tmp);
        f(t + half, &self.tmp, &mut self.k2)?;
        stage_point(y, &self.k2, half, &mut self.tmp);
        f(t + half, &self.tmp, &mut self.k3)?;
        stage_point(y, &self.k3, dt, &mut self.tmp);
        f(t + dt, &self.tmp, &mut self.k4)?;
        combine(y, [&self.k1, &self.k2, &self.k3, &self.k4], dt);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    fn decay_error(dt: f64) -> f64 {
        let mut rk = Rk4::new(1);
        let mut y = [1.0];
        let steps = (1.0 / dt).round() as usize;
        for k in 0..steps {
            rk.step(k as f64 * dt, &mut y, dt, |_, y, d| {
                d[0] = -2.0 * y[0];
                Ok::<_, Infallible>(())
            })
            .unwrap();
        }
        (y[0] - (-2.0f64).exp()).abs()
    }

    #[test]
    fn fourth_order_on_linear_decay() {
        let order = (decay_error(0.02) / decay_error(0.01)).log2();
        assert!(order > 3.8, "observed order {order}");
    }

    #[test]
    fn failed_stage_leaves_state() {
        let mut rk = Rk4::new(2);
        let mut y = [1.0f32, 2.0];
        let r = rk.step(0.0, &mut y, 0.1, |t, _, _| if t > 0.0 { Err("boom") } else { Ok(()) });
        assert!(r.is_err());
        assert_eq!(y, [1.0, 2.0]);
    }
}
