//! Small numeric helpers: deterministic reductions, Gauss–Legendre rules,
//! and the special functions needed by kernel profiles and oracles.

/// Deterministic pairwise (tree) summation.
///
/// Always reduces in the same fixed order for a given input length, so the
/// result is bit-for-bit reproducible regardless of thread count. The error
/// constant grows like `log2(n)` rather than `n`, which matters for the
/// 10^5-node quadratures used throughout.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    const BLOCK: usize = 64;
    let n = values.len();
    if n <= BLOCK {
        let mut acc = 0.0;
        for &v in values {
            acc += v;
        }
        return acc;
    }
    let half = n / 2;
    pairwise_sum(&values[..half]) + pairwise_sum(&values[half..])
}

/// Pairwise-summed dot product with the same determinism contract as
/// [`pairwise_sum`].
pub fn pairwise_dot(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "pairwise_dot length mismatch");
    const BLOCK: usize = 64;
    let n = a.len();
    if n <= BLOCK {
        let mut acc = 0.0;
        for i in 0..n {
            acc += a[i] * b[i];
        }
        return acc;
    }
    let half = n / 2;
    pairwise_dot(&a[..half], &b[..half]) + pairwise_dot(&a[half..], &b[half..])
}

/// Gauss–Legendre nodes and weights on `[-1, 1]`, ascending nodes.
///
/// Newton iteration on the Legendre recurrence; accurate to machine
/// precision for the small orders (≤ 128) used here.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(n >= 1, "gauss_legendre needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        // Chebyshev-based initial guess for the i-th root (descending).
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            // Evaluate P_n(x) and P_n'(x) by upward recurrence.
            let mut p0 = 1.0;
            let mut p1 = x;
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            let p = if n == 1 { x } else { p1 };
            let pm1 = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (pm1 - x * p) / (1.0 - x * x);
            let dx = p / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
        // Recompute the central weight explicitly.
        let mut p0 = 1.0;
        let mut p1 = 0.0;
        for k in 2..=n {
            let kf = k as f64;
            let p2 = (-(kf - 1.0) * p0) / kf;
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * p0;
        weights[n / 2] = 2.0 / (dp * dp);
    }
    (nodes, weights)
}

/// Gauss–Legendre rule mapped to `[a, b]`.
pub fn gauss_legendre_on(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let (x, w) = gauss_legendre(n);
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    (
        x.iter().map(|&t| mid + half * t).collect(),
        w.iter().map(|&t| t * half).collect(),
    )
}

/// Bessel function J0, Abramowitz–Stegun 9.4.1 / 9.4.3 (abs err ≲ 5e-8).
pub fn bessel_j0(x: f64) -> f64 {
    let ax = x.abs();
    if ax <= 3.0 {
        let t = (ax / 3.0) * (ax / 3.0);
        1.0 + t
            * (-2.249_999_7
                + t * (1.265_620_8
                    + t * (-0.316_386_6
                        + t * (0.044_447_9 + t * (-0.003_944_4 + t * 0.000_210_0)))))
    } else {
        let y = 3.0 / ax;
        let f0 = 0.797_884_56
            + y * (-0.000_000_77
                + y * (-0.005_527_40
                    + y * (-0.000_095_12
                        + y * (0.001_372_37 + y * (-0.000_728_05 + y * 0.000_144_76)))));
        let th = ax - 0.785_398_16
            + y * (-0.041_663_97
                + y * (-0.000_039_54
                    + y * (0.002_625_73
                        + y * (-0.000_541_25 + y * (-0.000_293_33 + y * 0.000_135_58)))));
        f0 * th.cos() / ax.sqrt()
    }
}

/// Bessel function J1, Abramowitz–Stegun 9.4.4 / 9.4.6 (abs err ≲ 1e-7).
pub fn bessel_j1(x: f64) -> f64 {
    let ax = x.abs();
    let val = if ax <= 3.0 {
        let t = (ax / 3.0) * (ax / 3.0);
        ax * (0.5
            + t * (-0.562_499_85
                + t * (0.210_935_73
                    + t * (-0.039_542_89
                        + t * (0.004_433_19 + t * (-0.000_317_61 + t * 0.000_011_09))))))
    } else {
        let y = 3.0 / ax;
        let f1 = 0.797_884_56
            + y * (0.000_001_56
                + y * (0.016_596_67
                    + y * (0.000_171_05
                        + y * (-0.002_495_11 + y * (0.001_136_53 + y * -0.000_200_33)))));
        let th = ax - 2.356_194_49
            + y * (0.124_996_12
                + y * (0.000_056_50
                    + y * (-0.006_378_79
                        + y * (0.000_743_48 + y * (0.000_798_24 + y * -0.000_291_66)))));
        f1 * th.cos() / ax.sqrt()
    };
    if x < 0.0 {
        -val
    } else {
        val
    }
}

/// Natural log of the Gamma function for positive arguments (Lanczos, g = 7).
pub fn ln_gamma(x: f64) -> f64 {
    assert!(x > 0.0, "ln_gamma needs a positive argument");
    const COEF: [f64; 9] = [
        0.999_999_999_999_809_93,
        676.520_368_121_885_1,
        -1_259.139_216_722_402_8,
        771.323_428_777_653_13,
        -176.615_029_162_140_59,
        12.507_343_278_686_905,
        -0.138_571_095_265_720_12,
        9.984_369_578_019_571_6e-6,
        1.505_632_735_149_311_6e-7,
    ];
    if x < 0.5 {
        // Reflection: Γ(x) Γ(1-x) = π / sin(πx).
        let pi = std::f64::consts::PI;
        return pi.ln() - (pi * x).sin().ln() - ln_gamma(1.0 - x);
    }
    let z = x - 1.0;
    let mut acc = COEF[0];
    for (i, &c) in COEF.iter().enumerate().skip(1) {
        acc += c / (z + i as f64);
    }
    let t = z + 7.5;
    0.5 * (2.0 * std::f64::consts::PI).ln() + (z + 0.5) * t.ln() - t + acc.ln()
}

/// Error function, Abramowitz–Stegun 7.1.26 (abs err ≤ 1.5e-7).
pub fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let ax = x.abs();
    let t = 1.0 / (1.0 + 0.327_591_1 * ax);
    let poly = t
        * (0.254_829_592
            + t * (-0.284_496_736 + t * (1.421_413_741 + t * (-1.453_152_027 + t * 1.061_405_429))));
    sign * (1.0 - poly * (-ax * ax).exp())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairwise_sum_matches_naive_on_small_inputs() {
        let v: Vec<f64> = (0..1000).map(|i| (i as f64).sin()).collect();
        let naive: f64 = v.iter().sum();
        assert!((pairwise_sum(&v) - naive).abs() < 1e-9);
    }

    #[test]
    fn pairwise_sum_is_exact_on_integers() {
        let v: Vec<f64> = (1..=10_000).map(|i| i as f64).collect();
        assert_eq!(pairwise_sum(&v), 50_005_000.0);
    }

    #[test]
    fn gauss_legendre_weights_sum_to_two() {
        for n in [1, 2, 3, 8, 13, 40, 64] {
            let (_, w) = gauss_legendre(n);
            let s: f64 = w.iter().sum();
            assert!((s - 2.0).abs() < 1e-13, "n={n} sum={s}");
        }
    }

    #[test]
    fn gauss_legendre_integrates_polynomials_exactly() {
        // n-point rule is exact through degree 2n-1; check x^14 with n = 8.
        let (x, w) = gauss_legendre(8);
        let got: f64 = x.iter().zip(&w).map(|(&xi, &wi)| wi * xi.powi(14)).sum();
        assert!((got - 2.0 / 15.0).abs() < 1e-13, "got {got}");
    }

    #[test]
    fn gauss_legendre_on_interval_integrates_exp() {
        let (x, w) = gauss_legendre_on(20, 0.0, 1.0);
        let got: f64 = x.iter().zip(&w).map(|(&xi, &wi)| wi * xi.exp()).sum();
        assert!((got - (std::f64::consts::E - 1.0)).abs() < 1e-12);
    }

    #[test]
    fn bessel_values_match_reference() {
        // Reference values from standard tables.
        assert!((bessel_j0(0.0) - 1.0).abs() < 1e-12);
        assert!((bessel_j0(1.0) - 0.765_197_686_557_966_6).abs() < 1e-7);
        assert!((bessel_j0(5.0) - (-0.177_596_771_314_338_3)).abs() < 1e-7);
        assert!((bessel_j1(0.0)).abs() < 1e-12);
        assert!((bessel_j1(1.0) - 0.440_050_585_744_933_5).abs() < 1e-7);
        assert!((bessel_j1(5.0) - (-0.327_579_137_591_465_2)).abs() < 1e-7);
        assert!((bessel_j1(-1.0) + bessel_j1(1.0)).abs() < 1e-12);
    }

    #[test]
    fn ln_gamma_matches_known_values() {
        assert!((ln_gamma(1.0)).abs() < 1e-12);
        assert!((ln_gamma(2.0)).abs() < 1e-12);
        assert!((ln_gamma(5.0) - 24.0_f64.ln()).abs() < 1e-12);
        // Γ(1/2) = √π.
        assert!((ln_gamma(0.5) - 0.5 * std::f64::consts::PI.ln()).abs() < 1e-12);
        // Γ(1/4) ≈ 3.625609908.
        assert!((ln_gamma(0.25) - 3.625_609_908_221_908_f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn erf_matches_reference() {
        // The rational approximation carries ~1e-7 absolute error everywhere,
        // including a ~1e-9 residue at 0.
        assert!((erf(0.0)).abs() < 1e-8);
        assert!((erf(1.0) - 0.842_700_792_949_714_9).abs() < 2e-7);
        assert!((erf(2.0) - 0.995_322_265_018_952_7).abs() < 2e-7);
        assert!((erf(-1.0) + erf(1.0)).abs() < 1e-12);
    }
}
