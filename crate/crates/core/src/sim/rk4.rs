//! Classical fixed-step fourth-order Runge–Kutta.

/// Reusable stage buffers for one system dimension.
#[derive(Debug, Clone)]
pub struct Rk4 {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

impl Rk4 {
    pub fn new(dim: usize) -> Self {
        Self {
            k1: vec![0.0; dim],
            k2: vec![0.0; dim],
            k3: vec![0.0; dim],
            k4: vec![0.0; dim],
            tmp: vec![0.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.k1.len()
    }

    /// Advances `x` in place by `dt`. The right-hand side receives the state
    /// and writes its derivative; inputs are held constant by the caller.
    /// Returns `false` if the new state is not finite.
    #[inline]
    pub fn step<F>(&mut self, f: F, x: &mut [f64], dt: f64) -> bool
    where
        F: Fn(&[f64], &mut [f64]),
    {
        let n = x.len();
        debug_assert_eq!(n, self.k1.len());
        let half = 0.5 * dt;

        f(x, &mut self.k1);
        for j in 0..n {
            self.tmp[j] = x[j] + half * self.k1[j];
        }
        f(&self.tmp, &mut self.k2);
        for j in 0..n {
            self.tmp[j] = x[j] + half * self.k2[j];
        }
        f(&self.tmp, &mut self.k3);
        for j in 0..n {
            self.tmp[j] = x[j] + dt * self.k3[j];
        }
        f(&self.tmp, &mut self.k4);

        let sixth = dt / 6.0;
        let mut finite = true;
        for j in 0..n {
            x[j] += sixth * (self.k1[j] + 2.0 * self.k2[j] + 2.0 * self.k3[j] + self.k4[j]);
            finite &= x[j].is_finite();
        }
        finite
    }
}

/// One RK4 step returning a new state; `None` if it is not finite.
pub fn rk4_step<F>(f: F, x: &[f64], dt: f64) -> Option<Vec<f64>>
where
    F: Fn(&[f64], &mut [f64]),
{
    let mut next = x.to_vec();
    Rk4::new(x.len()).step(f, &mut next, dt).then_some(next)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn exponential_decay_single_step() {
        let x = rk4_step(|x, dx| dx[0] = -x[0], &[1.0], 0.1).unwrap();
        assert_abs_diff_eq!(x[0], (-0.1f64).exp(), epsilon = 1e-7);
        assert_abs_diff_eq!(x[0], 0.904_837_42, epsilon = 1e-7);
    }

    #[test]
    fn constant_dynamics_leave_state_unchanged() {
        let x0 = [1.5, -2.0, 300.0];
        let x = rk4_step(|_, dx| dx.fill(0.0), &x0, 0.7).unwrap();
        assert_eq!(x, x0);
    }

    #[test]
    fn non_finite_step_is_reported() {
        assert!(rk4_step(|x, dx| dx[0] = 1.0 / (x[0] - 1.0), &[1.0], 1.0).is_none());
    }
}
