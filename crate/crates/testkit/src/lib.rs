//! Central-difference gradient oracles.
//!
//! Everything here works on plain `f64` slices and closures so that it stays
//! independent of the tensor library whose backward passes it checks.

/// Step used by every gradient check in the workspace.
pub const FD_STEP: f64 = 1e-3;

/// Relative tolerance for gradient checks.
pub const FD_REL_TOL: f64 = 1e-4;

/// Below this oracle magnitude entries are compared absolutely.
pub const FD_ABS_FLOOR: f64 = 1e-8;

/// Central-difference gradient of `f` at `x`.
pub fn central_difference<F>(mut f: F, x: &[f64], step: f64) -> Vec<f64>
where
    F: FnMut(&[f64]) -> f64,
{
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = probe[i];
            probe[i] = orig + step;
            let plus = f(&probe);
            probe[i] = orig - step;
            let minus = f(&probe);
            probe[i] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// Worst-case discrepancy between an analytic and a numeric gradient.
///
/// Entries whose oracle magnitude is below `floor` contribute their absolute
/// error scaled by `tol / floor`, so the result can always be compared
/// against `tol`.
pub fn max_relative_error(analytic: &[f64], numeric: &[f64], tol: f64, floor: f64) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient length mismatch");
    analytic
        .iter()
        .zip(numeric)
        .map(|(&a, &n)| {
            let diff = (a - n).abs();
            if n.abs() < floor {
                diff / floor * tol
            } else {
                diff / a.abs().max(n.abs())
            }
        })
        .fold(0.0, f64::max)
}

/// Outcome of comparing one named gradient against its oracle.
#[derive(Debug, Clone)]
pub struct GradCheck {
    pub name: String,
    pub max_rel_error: f64,
}

impl GradCheck {
    pub fn passes(&self) -> bool {
        self.max_rel_error < FD_REL_TOL
    }
}

/// Compare `analytic` with the central-difference gradient of `f` at `x`.
pub fn check_gradient<F>(name: &str, f: F, x: &[f64], analytic: &[f64]) -> GradCheck
where
    F: FnMut(&[f64]) -> f64,
{
    let numeric = central_difference(f, x, FD_STEP);
    GradCheck {
        name: name.to_string(),
        max_rel_error: max_relative_error(analytic, &numeric, FD_REL_TOL, FD_ABS_FLOOR),
    }
}

/// SplitMix64 stream for test fixtures.
#[derive(Debug, Clone)]
pub struct SplitMix64(u64);

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64(seed.wrapping_add(0x9E37_79B9_7F4A_7C15))
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(0x9E37_79B9_7F4A_7C15);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[0, 1)`.
    pub fn unit(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }

    /// Uniform integer in `lo..=hi`.
    pub fn between(&mut self, lo: u64, hi: u64) -> u64 {
        lo + self.next_u64() % (hi - lo + 1)
    }
}

/// Deterministic pseudo-random values in `[-scale, scale]`.
pub fn seeded_values(seed: u64, len: usize, scale: f64) -> Vec<f64> {
    let mut rng = SplitMix64::new(seed);
    (0..len).map(|_| (2.0 * rng.unit() - 1.0) * scale).collect()
}
