//! Bit-exact emulation of floating-point quantization by mantissa truncation.
//!
//! The host format is IEEE binary64. An emulated format keeps the host's sign
//! and exponent and shrinks the significand to `M` bits; dequantization pads
//! the dropped bits with zeros, so quantized values live exactly on the
//! `M`-bit grid inside the host format. For every input that neither
//! overflows nor underflows, `|Q(x) - x| <= 2^-M * |x|` in all rounding
//! modes, and stochastic rounding is exactly unbiased between the two
//! bracketing representables.

use crate::error::Error;
use crate::mat::Mat;
use crate::rng::RngStream;
use crate::Result;

const HOST_MANT_BITS: u32 = 52;
const EXP_MASK: u64 = 0x7FF0_0000_0000_0000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rounding {
    /// Drop the tail bits (round toward zero in magnitude).
    Truncate,
    /// Round to nearest, ties to the value with an even last kept bit.
    NearestEven,
    /// Round to one of the two bracketing representables with probability
    /// proportional to proximity; unbiased in expectation.
    Stochastic,
}

impl Rounding {
    pub fn name(self) -> &'static str {
        match self {
            Rounding::Truncate => "truncate",
            Rounding::NearestEven => "nearest_even",
            Rounding::Stochastic => "stochastic",
        }
    }
}

/// One emulated-format configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantSpec {
    /// Significand bits kept after the leading 1. `M >= 52` is the identity
    /// on host values.
    pub mantissa_bits: u32,
    pub rounding: Rounding,
    /// Disabled means the identity map with reported error bound 0.
    pub enabled: bool,
    /// Optional override for the reported relative-error bound; the default
    /// bound is exactly `2^-M`.
    pub q_override: Option<f64>,
}

impl QuantSpec {
    pub fn new(mantissa_bits: u32, rounding: Rounding) -> QuantSpec {
        QuantSpec {
            mantissa_bits,
            rounding,
            enabled: true,
            q_override: None,
        }
    }

    pub fn disabled() -> QuantSpec {
        QuantSpec {
            mantissa_bits: HOST_MANT_BITS,
            rounding: Rounding::Truncate,
            enabled: false,
            q_override: None,
        }
    }

    /// Relative-error bound `q` fed to the theory module: `2^-M` when
    /// enabled, 0 when disabled.
    pub fn q(&self) -> f64 {
        if !self.enabled {
            return 0.0;
        }
        match self.q_override {
            Some(q) => q,
            None => (2.0f64).powi(-(self.mantissa_bits.min(1074) as i32)),
        }
    }

    pub fn is_identity(&self) -> bool {
        !self.enabled || self.mantissa_bits >= HOST_MANT_BITS
    }
}

/// Quantize one finite scalar.
///
/// The RNG is consumed only in `Stochastic` mode and only when the value is
/// not already representable.
pub fn quantize_scalar(x: f64, spec: &QuantSpec, rng: &mut RngStream) -> Result<f64> {
    if spec.is_identity() {
        return Ok(x);
    }
    if !x.is_finite() {
        return Err(Error::NonFiniteInput { value: x });
    }
    if x == 0.0 {
        return Ok(x);
    }
    if x.is_subnormal() {
        return Err(Error::SubnormalInput { value: x });
    }
    let drop = HOST_MANT_BITS - spec.mantissa_bits;
    let bits = x.to_bits();
    let tail_mask = (1u64 << drop) - 1;
    let tail = bits & tail_mask;
    let down = bits & !tail_mask; // truncation toward zero in magnitude
    if tail == 0 {
        return Ok(x);
    }
    let round_up = match spec.rounding {
        Rounding::Truncate => false,
        Rounding::NearestEven => {
            let half = 1u64 << (drop - 1);
            if tail != half {
                tail > half
            } else {
                // tie: pick the neighbor whose last kept bit is zero
                down & (1u64 << drop) != 0
            }
        }
        Rounding::Stochastic => rng.next_bits(drop) < tail,
    };
    if !round_up {
        return Ok(f64::from_bits(down));
    }
    // adding one unit in the last kept place; a full significand carries
    // into the exponent field, which is exactly the next-binade step
    let up = down + (1u64 << drop);
    if up & EXP_MASK == EXP_MASK {
        return Err(Error::OverflowAfterRounding {
            value: x,
            location: None,
        });
    }
    Ok(f64::from_bits(up))
}

/// Elementwise quantization of a matrix in row-major order.
pub fn quantize_mat(x: &Mat, spec: &QuantSpec, rng: &mut RngStream) -> Result<Mat> {
    if spec.is_identity() {
        return Ok(x.clone());
    }
    let cols = x.cols();
    let mut out = x.clone();
    for (idx, v) in out.as_mut_slice().iter_mut().enumerate() {
        *v = quantize_scalar(*v, spec, rng).map_err(|e| match e {
            Error::OverflowAfterRounding { value, .. } => Error::OverflowAfterRounding {
                value,
                location: Some((idx / cols, idx % cols)),
            },
            other => other,
        })?;
    }
    Ok(out)
}

/// Measured relative quantization error `||XQ - X||_F / ||X||_F`.
pub fn measure_rel_error(x: &Mat, xq: &Mat) -> Result<f64> {
    let diff = xq.sub(x)?;
    let denom = x.frob_norm();
    if denom == 0.0 {
        return Err(Error::ZeroNorm);
    }
    Ok(diff.frob_norm() / denom)
}

/// Which tensor a quantizer applies to; used to derive RNG stream ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    Weights,
    Gradients,
    Moment1,
    Moment2,
}

impl Component {
    pub fn tag(self) -> u64 {
        match self {
            Component::Weights => 0x0157,
            Component::Gradients => 0x0247,
            Component::Moment1 => 0x034d,
            Component::Moment2 => 0x0456,
        }
    }

    pub const ALL: [Component; 4] = [
        Component::Weights,
        Component::Gradients,
        Component::Moment1,
        Component::Moment2,
    ];
}

/// The four-component quantization assignment `(q_W, q_G, q_M, q_V)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuantPolicy {
    pub weights: QuantSpec,
    pub gradients: QuantSpec,
    pub moment1: QuantSpec,
    pub moment2: QuantSpec,
}

impl QuantPolicy {
    /// All components disabled: the exact-arithmetic reference policy.
    pub fn disabled() -> QuantPolicy {
        QuantPolicy {
            weights: QuantSpec::disabled(),
            gradients: QuantSpec::disabled(),
            moment1: QuantSpec::disabled(),
            moment2: QuantSpec::disabled(),
        }
    }

    /// Same mantissa length and rounding for all four components.
    pub fn uniform(mantissa_bits: u32, rounding: Rounding) -> QuantPolicy {
        let s = QuantSpec::new(mantissa_bits, rounding);
        QuantPolicy {
            weights: s,
            gradients: s,
            moment1: s,
            moment2: s,
        }
    }

    pub fn component(&self, c: Component) -> &QuantSpec {
        match c {
            Component::Weights => &self.weights,
            Component::Gradients => &self.gradients,
            Component::Moment1 => &self.moment1,
            Component::Moment2 => &self.moment2,
        }
    }

    pub fn component_mut(&mut self, c: Component) -> &mut QuantSpec {
        match c {
            Component::Weights => &mut self.weights,
            Component::Gradients => &mut self.gradients,
            Component::Moment1 => &mut self.moment1,
            Component::Moment2 => &mut self.moment2,
        }
    }

    pub fn q_w(&self) -> f64 {
        self.weights.q()
    }
    pub fn q_g(&self) -> f64 {
        self.gradients.q()
    }
    pub fn q_m(&self) -> f64 {
        self.moment1.q()
    }
    pub fn q_v(&self) -> f64 {
        self.moment2.q()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng() -> RngStream {
        RngStream::new(0xF00D, 7)
    }

    /// All representable magnitudes at `m` bits inside the binade of `x`,
    /// plus the next binade's first value: the brute-force rounding grid.
    fn bracket_oracle(x: f64, m: u32) -> (f64, f64) {
        assert!(x != 0.0 && x.is_finite());
        let mag = x.abs();
        let e = mag.log2().floor();
        let base = (2.0f64).powi(e as i32);
        let base = if base > mag { base / 2.0 } else { base }; // log2 edge
        let step = base * (2.0f64).powi(-(m as i32));
        let mut down = base;
        let mut up = base * 2.0;
        let count = 1u64 << m.min(26);
        for k in 0..=count {
            let v = base + k as f64 * step;
            if v <= mag && v > down {
                down = v;
            }
            if v >= mag && v < up {
                up = v;
            }
        }
        if down > mag {
            down = base;
        }
        if mag == down {
            up = down;
        }
        if x > 0.0 {
            (down, up)
        } else {
            (-up, -down)
        }
    }

    #[test]
    fn exactly_representable_is_identity() {
        let mut r = rng();
        for mode in [Rounding::Truncate, Rounding::NearestEven, Rounding::Stochastic] {
            let spec = QuantSpec::new(7, mode);
            assert_eq!(quantize_scalar(1.0, &spec, &mut r).unwrap(), 1.0);
            assert_eq!(quantize_scalar(-1.5, &spec, &mut r).unwrap(), -1.5);
            assert_eq!(quantize_scalar(0.0, &spec, &mut r).unwrap(), 0.0);
        }
    }

    #[test]
    fn truncate_drops_bit_below_grid() {
        let mut r = rng();
        let spec = QuantSpec::new(7, Rounding::Truncate);
        let x = 1.0 + (2.0f64).powi(-8);
        assert_eq!(quantize_scalar(x, &spec, &mut r).unwrap(), 1.0);
    }

    #[test]
    fn one_and_a_half_fits_in_one_bit() {
        let mut r = rng();
        let spec = QuantSpec::new(1, Rounding::Truncate);
        let m = Mat::filled(3, 4, 1.5);
        let q = quantize_mat(&m, &spec, &mut r).unwrap();
        assert_eq!(q.as_slice(), m.as_slice());
    }

    #[test]
    fn zero_matrix_maps_to_zero() {
        let mut r = rng();
        for mode in [Rounding::Truncate, Rounding::NearestEven, Rounding::Stochastic] {
            let spec = QuantSpec::new(3, mode);
            let q = quantize_mat(&Mat::zeros(4, 4), &spec, &mut r).unwrap();
            assert_eq!(q.as_slice(), Mat::zeros(4, 4).as_slice());
        }
    }

    #[test]
    fn relative_error_bound_holds_on_log_uniform_samples() {
        let mut r = rng();
        let mut sampler = RngStream::new(99, 1);
        for m in 1..=10u32 {
            let q = (2.0f64).powi(-(m as i32));
            for mode in [Rounding::Truncate, Rounding::NearestEven, Rounding::Stochastic] {
                let spec = QuantSpec::new(m, mode);
                for _ in 0..2_000 {
                    let e = sampler.next_f64() * 120.0 - 60.0;
                    let sign = if sampler.next_u64() & 1 == 0 { 1.0 } else { -1.0 };
                    let x = sign * (2.0f64).powf(e);
                    let qx = quantize_scalar(x, &spec, &mut r).unwrap();
                    assert!(
                        (qx - x).abs() <= q * x.abs(),
                        "M={m} mode={mode:?} x={x:e} qx={qx:e}"
                    );
                }
            }
        }
    }

    #[test]
    fn bracketing_matches_enumeration_oracle() {
        let mut r = rng();
        let mut sampler = RngStream::new(5, 5);
        for m in 1..=6u32 {
            let trunc = QuantSpec::new(m, Rounding::Truncate);
            let ne = QuantSpec::new(m, Rounding::NearestEven);
            let st = QuantSpec::new(m, Rounding::Stochastic);
            for _ in 0..500 {
                let x = (1.0 + sampler.next_f64()) * if sampler.next_u64() & 1 == 0 { 1.0 } else { -1.0 };
                let (down, up) = bracket_oracle(x, m);
                assert!(down.min(up) <= x && x <= down.max(up));
                let t = quantize_scalar(x, &trunc, &mut r).unwrap();
                // truncation keeps the magnitude-smaller bracket
                let toward_zero = if x > 0.0 { down } else { up };
                assert_eq!(t, toward_zero, "x={x} m={m}");
                let nearest = quantize_scalar(x, &ne, &mut r).unwrap();
                assert!(nearest == down || nearest == up);
                assert!((nearest - x).abs() <= (up - down) / 2.0 + 1e-300);
                let s = quantize_scalar(x, &st, &mut r).unwrap();
                assert!(s == down || s == up);
            }
        }
    }

    #[test]
    fn stochastic_is_unbiased() {
        let x = 1.0 + (2.0f64).powi(-9) * 3.0; // strictly between 5-bit grid points
        let spec = QuantSpec::new(5, Rounding::Stochastic);
        let n = 100_000u64;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for k in 0..n {
            let mut r = RngStream::new(77, 3).at(k);
            let qx = quantize_scalar(x, &spec, &mut r).unwrap();
            sum += qx;
            sum_sq += qx * qx;
        }
        let mean = sum / n as f64;
        let var = sum_sq / n as f64 - mean * mean;
        let stderr = (var / n as f64).sqrt();
        assert!(
            (mean - x).abs() <= 5.0 * stderr,
            "bias {} vs stderr {}",
            (mean - x).abs(),
            stderr
        );
    }

    #[test]
    fn stochastic_is_deterministic_in_the_triple() {
        let spec = QuantSpec::new(4, Rounding::Stochastic);
        let x = std::f64::consts::PI;
        let mut a = RngStream::new(1, 2).at(9);
        let mut b = RngStream::new(1, 2).at(9);
        assert_eq!(
            quantize_scalar(x, &spec, &mut a).unwrap(),
            quantize_scalar(x, &spec, &mut b).unwrap()
        );
    }

    #[test]
    fn idempotent_for_deterministic_modes_and_fixed_points_for_stochastic() {
        let mut r = rng();
        let mut sampler = RngStream::new(13, 0);
        for m in [1u32, 3, 7, 12] {
            for _ in 0..200 {
                let x = sampler.next_normal() * 100.0;
                if x == 0.0 {
                    continue;
                }
                for mode in [Rounding::Truncate, Rounding::NearestEven] {
                    let spec = QuantSpec::new(m, mode);
                    let q1 = quantize_scalar(x, &spec, &mut r).unwrap();
                    let q2 = quantize_scalar(q1, &spec, &mut r).unwrap();
                    assert_eq!(q1, q2);
                }
                // representable values are fixed points of stochastic rounding
                let spec = QuantSpec::new(m, Rounding::Stochastic);
                let v = quantize_scalar(x, &QuantSpec::new(m, Rounding::Truncate), &mut r).unwrap();
                assert_eq!(quantize_scalar(v, &spec, &mut r).unwrap(), v);
            }
        }
    }

    #[test]
    fn truncate_error_is_monotone_in_mantissa_length() {
        let mut r = rng();
        let mut sampler = RngStream::new(21, 4);
        for _ in 0..300 {
            let x = sampler.next_normal() * (2.0f64).powi((sampler.next_bits(5) as i32) - 16);
            if x == 0.0 || x.is_subnormal() {
                continue;
            }
            let mut prev = f64::INFINITY;
            for m in 1..=20u32 {
                let spec = QuantSpec::new(m, Rounding::Truncate);
                let err = (quantize_scalar(x, &spec, &mut r).unwrap() - x).abs();
                assert!(err <= prev, "x={x} m={m}");
                prev = err;
            }
        }
    }

    #[test]
    fn carry_increments_exponent_by_one_with_zero_mantissa() {
        let mut r = rng();
        // 1.111111...2 at M=3 rounds up across the binade to 2.0
        let x = 1.97;
        let spec = QuantSpec::new(3, Rounding::NearestEven);
        let q = quantize_scalar(x, &spec, &mut r).unwrap();
        assert_eq!(q, 2.0);
    }

    #[test]
    fn overflow_after_rounding_is_reported() {
        let mut r = rng();
        let spec = QuantSpec::new(2, Rounding::NearestEven);
        let x = f64::MAX; // all-ones mantissa rounds up past the top binade
        match quantize_scalar(x, &spec, &mut r) {
            Err(Error::OverflowAfterRounding { .. }) => {}
            other => panic!("expected overflow, got {other:?}"),
        }
        let m = Mat::from_rows(&[&[1.0, f64::MAX]]);
        match quantize_mat(&m, &spec, &mut r) {
            Err(Error::OverflowAfterRounding { location, .. }) => {
                assert_eq!(location, Some((0, 1)));
            }
            other => panic!("expected located overflow, got {other:?}"),
        }
    }

    #[test]
    fn subnormals_are_rejected() {
        let mut r = rng();
        let spec = QuantSpec::new(4, Rounding::Truncate);
        let x = f64::MIN_POSITIVE / 4.0;
        assert!(matches!(
            quantize_scalar(x, &spec, &mut r),
            Err(Error::SubnormalInput { .. })
        ));
    }

    #[test]
    fn mat_bound_and_measured_error() {
        let mut r = rng();
        let mut sampler = RngStream::new(3, 3);
        let x = Mat::gaussian(50, 100, &mut sampler);
        let spec = QuantSpec::new(7, Rounding::Truncate);
        let xq = quantize_mat(&x, &spec, &mut r).unwrap();
        let err = measure_rel_error(&x, &xq).unwrap();
        assert!(err > 0.0 && err <= (2.0f64).powi(-7), "err {err}");
    }

    #[test]
    fn measure_rel_error_contract() {
        let mut sampler = RngStream::new(8, 8);
        let x = Mat::gaussian(6, 6, &mut sampler);
        assert_eq!(measure_rel_error(&x, &x).unwrap(), 0.0);
        let scaled = x.scale(1.01);
        assert!((measure_rel_error(&x, &scaled).unwrap() - 0.01).abs() < 1e-12);
        assert!(matches!(
            measure_rel_error(&Mat::zeros(2, 2), &Mat::zeros(2, 2)),
            Err(Error::ZeroNorm)
        ));
    }

    #[test]
    fn disabled_policy_reports_zero_q() {
        let p = QuantPolicy::disabled();
        assert_eq!(p.q_w(), 0.0);
        assert_eq!(p.q_g(), 0.0);
        let p = QuantPolicy::uniform(8, Rounding::Stochastic);
        assert_eq!(p.q_m(), (2.0f64).powi(-8));
    }
}
