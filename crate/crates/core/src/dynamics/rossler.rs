use super::OdeSystem;

/// Two diffusively coupled Rössler oscillators, state `(x1, y1, z1, x2, y2, z2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledRossler {
    pub a: f64,
    pub c: f64,
    pub f: f64,
    pub epsilon: f64,
}

impl Default for CoupledRossler {
    fn default() -> Self {
        Self { a: 0.15, c: 10.0, f: 0.2, epsilon: 0.06 }
    }
}

impl OdeSystem for CoupledRossler {
    fn dim(&self) -> usize {
        6
    }

    fn rhs(&self, s: &[f64], d: &mut [f64]) {
        let (x1, y1, z1, x2, y2, z2) = (s[0], s[1], s[2], s[3], s[4], s[5]);
        d[0] = -y1 - z1 + self.epsilon * (x2 - x1);
        d[1] = x1 + self.a * y1;
        d[2] = self.f + x1 * z1 - self.c * z1;
        d[3] = -y2 - z2 + self.epsilon * (x1 - x2);
        d[4] = x2 + self.a * y2;
        d[5] = self.f + x2 * z2 - self.c * z2;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::integrate;

    #[test]
    fn synchronized_manifold_is_invariant() {
        // identical oscillators stay identical: the coupling term vanishes
        let sys = CoupledRossler::default();
        let traj = integrate(&sys, &[1.0, -2.0, 0.1, 1.0, -2.0, 0.1], 0.01, 2000).unwrap();
        for s in traj.states() {
            assert_eq!(s[0], s[3]);
            assert_eq!(s[1], s[4]);
            assert_eq!(s[2], s[5]);
        }
    }

    #[test]
    fn convergence_order_on_short_horizon() {
        let sys = CoupledRossler::default();
        let x0 = [1.0, -2.0, 0.1, -3.0, 1.0, 0.05];
        let end = |dt: f64| integrate(&sys, &x0, dt, (2.0 / dt).round() as usize).unwrap().last().unwrap().to_vec();
        let reference = end(0.00125);
        let err = |dt: f64| {
            end(dt).iter().zip(&reference).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        let ratio = err(0.02) / err(0.01);
        assert!(ratio > 12.0 && ratio < 20.0, "ratio {ratio}");
    }
}
