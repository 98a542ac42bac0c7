use std::f64::consts::PI;

/// Sine-based C1 mollifier with compact support `[-eps_h, eps_h]`.
///
/// `H(t) = (1 + t/eps + sin(pi t / eps) / pi) / 2` inside the support, clamped
/// to 0 below and 1 above. `delta` is its exact derivative.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Mollifier {
    pub eps_h: f64,
}

impl Mollifier {
    /// # Panics
    /// If `eps_h` is not a positive finite number.
    pub fn new(eps_h: f64) -> Self {
        assert!(eps_h > 0.0 && eps_h.is_finite(), "mollifier width must be positive");
        Self { eps_h }
    }

    /// Width given in grid cells.
    pub fn from_cells(cells: f64, spacing: f64) -> Self {
        Self::new(cells * spacing)
    }

    #[inline]
    pub fn heaviside(&self, t: f64) -> f64 {
        let e = self.eps_h;
        if t <= -e {
            0.0
        } else if t >= e {
            1.0
        } else {
            0.5 * (1.0 + t / e + (PI * t / e).sin() / PI)
        }
    }

    #[inline]
    pub fn delta(&self, t: f64) -> f64 {
        let e = self.eps_h;
        if t.abs() >= e {
            0.0
        } else {
            0.5 / e * (1.0 + (PI * t / e).cos())
        }
    }

    #[inline]
    pub fn in_band(&self, t: f64) -> bool {
        t.abs() <= self.eps_h
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn closed_form_values() {
        let m = Mollifier::new(0.8);
        assert_eq!(m.heaviside(0.0), 0.5);
        assert_eq!(m.heaviside(0.8), 1.0);
        assert_eq!(m.heaviside(-0.8), 0.0);
        assert!((m.heaviside(0.4) - 0.909155).abs() < 1e-6);
        assert!((m.delta(0.0) - 1.0 / 0.8).abs() < 1e-12);
        assert_eq!(m.delta(0.8), 0.0);
        assert_eq!(m.delta(-0.8), 0.0);
    }

    #[test]
    fn delta_integrates_to_one() {
        // trapezoid rule with step eps/100
        let m = Mollifier::new(1.5);
        let n = 200;
        let step = 2.0 * m.eps_h / n as f64;
        let mut s = 0.0;
        for i in 0..=n {
            let t = -m.eps_h + i as f64 * step;
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            s += w * m.delta(t);
        }
        assert!((s * step - 1.0).abs() < 1e-3);
    }

    #[test]
    fn delta_matches_finite_difference_of_heaviside() {
        let m = Mollifier::new(1.0);
        for &t in &[-0.9, -0.3, 0.0, 0.25, 0.7] {
            let fd = (m.heaviside(t + 1e-6) - m.heaviside(t - 1e-6)) / 2e-6;
            assert!((fd - m.delta(t)).abs() < 1e-6);
        }
    }

    proptest! {
        #[test]
        fn symmetric_and_monotone(t in -5.0f64..5.0, dt in 0.0f64..1.0, eps in 0.1f64..3.0) {
            let m = Mollifier::new(eps);
            prop_assert!((m.heaviside(t) + m.heaviside(-t) - 1.0).abs() < 1e-12);
            prop_assert!((m.delta(t) - m.delta(-t)).abs() < 1e-12);
            prop_assert!(m.delta(t) >= 0.0);
            prop_assert!(m.heaviside(t + dt) >= m.heaviside(t) - 1e-15);
            prop_assert!((0.0..=1.0).contains(&m.heaviside(t)));
        }
    }
}
