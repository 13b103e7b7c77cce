//! Self-contained numerical kernels shared by the rest of the crate:
//! complete elliptic integrals, eigenvalues of small complex matrices,
//! Brent root finding, and least-squares line/plane fits.
//!
//! Every function here is pure: identical inputs give bit-identical outputs
//! and nothing touches global state, so concurrent use is unrestricted.

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("elliptic modulus {0} outside [0, 1)")]
    ModulusOutOfRange(f64),
    #[error("modulus ratio argument {0} outside [0, 1]")]
    RatioOutOfRange(f64),
    #[error("no sign change on [{a}, {b}]: f(a) = {fa:e}, f(b) = {fb:e}")]
    NoSignChange { a: f64, b: f64, fa: f64, fb: f64 },
    #[error("root not isolated to tolerance within {0} iterations")]
    MaxIterations(usize),
    #[error("line fit needs at least two points with distinct abscissae")]
    DegenerateAbscissa,
    #[error("plane fit needs at least three points not collinear in (x, y)")]
    RankDeficient,
}

/// Arithmetic-geometric mean of two non-negative numbers.
fn agm(a0: f64, b0: f64) -> f64 {
    if a0 == 0.0 || b0 == 0.0 {
        return 0.0;
    }
    let (mut a, mut b) = (a0, b0);
    for _ in 0..64 {
        if (a - b).abs() <= f64::EPSILON * a.abs() {
            break;
        }
        let am = 0.5 * (a + b);
        let gm = (a * b).sqrt();
        a = am;
        b = gm;
    }
    0.5 * (a + b)
}

/// Complete elliptic integral of the first kind K(k), modulus convention
/// K(k) = integral of 1/sqrt(1 - k^2 sin^2 t) over t in [0, pi/2].
///
/// Computed as pi / (2 AGM(1, k')); relative error below 1e-14 on [0, 1).
pub fn elliptic_k(k: f64) -> Result<f64, NumericsError> {
    if !(0.0..1.0).contains(&k) {
        return Err(NumericsError::ModulusOutOfRange(k));
    }
    let kp = ((1.0 - k) * (1.0 + k)).sqrt();
    Ok(std::f64::consts::FRAC_PI_2 / agm(1.0, kp))
}

/// The conformal-mapping ratio K(k) / K(k') with k' = sqrt(1 - k^2).
///
/// Evaluated as AGM(1, k) / AGM(1, k'), which is uniformly stable over the
/// whole closed interval: k = 0 gives exactly 0 and k = 1 gives +inf, with
/// the logarithmic endpoint behaviour of K emerging from the AGM itself
/// rather than from an explicit series switch.
pub fn k_ratio(k: f64) -> Result<f64, NumericsError> {
    if !(0.0..=1.0).contains(&k) {
        return Err(NumericsError::RatioOutOfRange(k));
    }
    let kp = ((1.0 - k) * (1.0 + k)).sqrt();
    Ok(agm(1.0, k) / agm(1.0, kp))
}

fn assert_finite(entries: &[Complex64]) {
    for e in entries {
        assert!(
            e.re.is_finite() && e.im.is_finite(),
            "matrix entries must be finite, got {e}"
        );
    }
}

/// Dense 2x2 complex matrix, row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComplexMatrix2 {
    e: [[Complex64; 2]; 2],
}

impl ComplexMatrix2 {
    /// Panics on non-finite entries.
    pub fn new(rows: [[Complex64; 2]; 2]) -> Self {
        assert_finite(&[rows[0][0], rows[0][1], rows[1][0], rows[1][1]]);
        Self { e: rows }
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.e[i][j]
    }

    pub fn trace(&self) -> Complex64 {
        self.e[0][0] + self.e[1][1]
    }

    pub fn det(&self) -> Complex64 {
        self.e[0][0] * self.e[1][1] - self.e[0][1] * self.e[1][0]
    }

    /// Both eigenvalues, by the stabilized quadratic formula.
    pub fn eigenvalues(&self) -> [Complex64; 2] {
        let m = &self.e;
        let mid = 0.5 * (m[0][0] + m[1][1]);
        let d = (0.25 * (m[0][0] - m[1][1]) * (m[0][0] - m[1][1]) + m[0][1] * m[1][0]).sqrt();
        [mid + d, mid - d]
    }

    /// Eigenvalues paired with unit-norm eigenvectors.
    pub fn eigenpairs(&self) -> [(Complex64, [Complex64; 2]); 2] {
        let vals = self.eigenvalues();
        let m = &self.e;
        let mut out = [(Complex64::default(), [Complex64::default(); 2]); 2];
        for (idx, &lam) in vals.iter().enumerate() {
            // Null-space candidates from the two rows of (M - lam I).
            let c1 = [m[0][1], lam - m[0][0]];
            let c2 = [lam - m[1][1], m[1][0]];
            let n1 = c1[0].norm_sqr() + c1[1].norm_sqr();
            let n2 = c2[0].norm_sqr() + c2[1].norm_sqr();
            let mut v = if n1 >= n2 { c1 } else { c2 };
            if n1.max(n2) == 0.0 {
                // Scalar matrix: any basis vector is an eigenvector.
                v = [Complex64::default(); 2];
                v[idx] = Complex64::new(1.0, 0.0);
            }
            let norm = (v[0].norm_sqr() + v[1].norm_sqr()).sqrt();
            out[idx] = (lam, [v[0] / norm, v[1] / norm]);
        }
        out
    }
}

/// Dense 3x3 complex matrix, row-major.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ComplexMatrix3 {
    e: [[Complex64; 3]; 3],
}

impl ComplexMatrix3 {
    /// Panics on non-finite entries.
    pub fn new(rows: [[Complex64; 3]; 3]) -> Self {
        for r in &rows {
            assert_finite(r);
        }
        Self { e: rows }
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.e[i][j]
    }

    pub fn trace(&self) -> Complex64 {
        self.e[0][0] + self.e[1][1] + self.e[2][2]
    }

    pub fn det(&self) -> Complex64 {
        let m = &self.e;
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    }

    /// Sum of the principal 2x2 minors (the second elementary symmetric
    /// function of the eigenvalues).
    fn minor_sum(&self) -> Complex64 {
        let m = &self.e;
        m[0][0] * m[1][1] - m[0][1] * m[1][0] + m[0][0] * m[2][2] - m[0][2] * m[2][0]
            + m[1][1] * m[2][2]
            - m[1][2] * m[2][1]
    }

    /// All three eigenvalues.
    ///
    /// The matrix is first shifted by trace/3 so the characteristic
    /// polynomial is a depressed cubic; Cardano's formula solves it and two
    /// Newton steps polish each root before shifting back. The shift keeps
    /// tiny imaginary parts (weakly damped modes) accurate even when the
    /// eigenvalue magnitudes are many orders larger.
    pub fn eigenvalues(&self) -> [Complex64; 3] {
        let shift = self.trace() / 3.0;
        let mut a = *self;
        for i in 0..3 {
            a.e[i][i] -= shift;
        }
        // Depressed characteristic polynomial t^3 + p t + q (trace of a is 0).
        let p = a.minor_sum();
        let q = -a.det();
        let roots = depressed_cubic_roots(p, q);
        [roots[0] + shift, roots[1] + shift, roots[2] + shift]
    }

    /// Eigenvalues paired with unit-norm eigenvectors.
    ///
    /// Eigenvectors come from cross products of rows of (M - lam I); for the
    /// well-separated spectra this crate produces the construction is exact
    /// to rounding.
    pub fn eigenpairs(&self) -> [(Complex64, [Complex64; 3]); 3] {
        let vals = self.eigenvalues();
        let mut out = [(Complex64::default(), [Complex64::default(); 3]); 3];
        for (idx, &lam) in vals.iter().enumerate() {
            let mut b = *self;
            for i in 0..3 {
                b.e[i][i] -= lam;
            }
            let r = &b.e;
            let cands = [
                cross3(r[0], r[1]),
                cross3(r[0], r[2]),
                cross3(r[1], r[2]),
            ];
            let mut v = cands[0];
            let mut best = norm_sqr3(&v);
            for c in &cands[1..] {
                let n = norm_sqr3(c);
                if n > best {
                    best = n;
                    v = *c;
                }
            }
            if best == 0.0 {
                // Rank <= 1: pick a vector orthogonal to the largest row, or
                // a basis vector if the matrix is scalar.
                let (mut bi, mut bn) = (0, 0.0);
                for (i, row) in r.iter().enumerate() {
                    let n = norm_sqr3(row);
                    if n > bn {
                        bn = n;
                        bi = i;
                    }
                }
                if bn == 0.0 {
                    v = [Complex64::default(); 3];
                    v[idx] = Complex64::new(1.0, 0.0);
                } else {
                    let row = r[bi];
                    let c1 = [-row[1], row[0], Complex64::default()];
                    let c2 = [-row[2], Complex64::default(), row[0]];
                    v = if norm_sqr3(&c1) >= norm_sqr3(&c2) { c1 } else { c2 };
                }
            }
            let norm = norm_sqr3(&v).sqrt();
            out[idx] = (lam, [v[0] / norm, v[1] / norm, v[2] / norm]);
        }
        out
    }
}

fn cross3(a: [Complex64; 3], b: [Complex64; 3]) -> [Complex64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm_sqr3(v: &[Complex64; 3]) -> f64 {
    v[0].norm_sqr() + v[1].norm_sqr() + v[2].norm_sqr()
}

/// Roots of t^3 + p t + q = 0 by Cardano plus Newton polish.
fn depressed_cubic_roots(p: Complex64, q: Complex64) -> [Complex64; 3] {
    let zero = Complex64::default();
    if p == zero && q == zero {
        return [zero; 3];
    }
    let omega = Complex64::new(-0.5, 0.75f64.sqrt());
    let mut roots;
    let s = (0.25 * q * q + p * p * p / 27.0).sqrt();
    // Pick the cube whose magnitude is larger to dodge cancellation.
    let c1 = -0.5 * q + s;
    let c2 = -0.5 * q - s;
    let u3 = if c1.norm_sqr() >= c2.norm_sqr() { c1 } else { c2 };
    if u3 == zero {
        // Happens only for p = 0: the roots are the cube roots of -q.
        let r = (-q).cbrt();
        roots = [r, omega * r, omega * omega * r];
    } else {
        let u = u3.cbrt();
        let mut w = u;
        roots = [zero; 3];
        for root in &mut roots {
            *root = w - p / (3.0 * w);
            w *= omega;
        }
    }
    for root in &mut roots {
        for _ in 0..2 {
            let t = *root;
            let f = t * t * t + p * t + q;
            let df = 3.0 * t * t + p;
            if df != zero {
                *root = t - f / df;
            }
        }
    }
    roots
}

/// Brent's method for a root of `f` on the bracketing interval [a, b].
///
/// Requires f(a) and f(b) of opposite sign; stops once the bracket width
/// falls below `tol` (plus a machine-precision floor) or f hits zero
/// exactly. Deterministic; at most 200 iterations.
pub fn brent_root<F: FnMut(f64) -> f64>(
    mut f: F,
    a: f64,
    b: f64,
    tol: f64,
) -> Result<f64, NumericsError> {
    const MAX_ITER: usize = 200;
    let (mut a, mut b) = (a, b);
    let mut fa = f(a);
    let mut fb = f(b);
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(NumericsError::NoSignChange { a, b, fa, fb });
    }
    let (mut c, mut fc) = (a, fa);
    let (mut d, mut e) = (b - a, b - a);
    for _ in 0..MAX_ITER {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol1 = 2.0 * f64::EPSILON * b.abs() + 0.5 * tol;
        let xm = 0.5 * (c - b);
        if xm.abs() <= tol1 || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol1 && fa.abs() > fb.abs() {
            // Inverse quadratic interpolation, or secant when a == c.
            let s = fb / fa;
            let (mut pp, mut qq);
            if a == c {
                pp = 2.0 * xm * s;
                qq = 1.0 - s;
            } else {
                let q0 = fa / fc;
                let r = fb / fc;
                pp = s * (2.0 * xm * q0 * (q0 - r) - (b - a) * (r - 1.0));
                qq = (q0 - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if pp > 0.0 {
                qq = -qq;
            }
            pp = pp.abs();
            let min1 = 3.0 * xm * qq - (tol1 * qq).abs();
            let min2 = (e * qq).abs();
            if 2.0 * pp < min1.min(min2) {
                e = d;
                d = pp / qq;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        if d.abs() > tol1 {
            b += d;
        } else {
            b += tol1.copysign(xm);
        }
        fb = f(b);
        if fb == 0.0 {
            return Ok(b);
        }
    }
    Err(NumericsError::MaxIterations(MAX_ITER))
}

/// Ordinary least-squares line fit y = intercept + slope * x.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root mean square residual with divisor n (not n - 2).
    pub rmse: f64,
    pub n: usize,
}

pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<LineFit, NumericsError> {
    let n = xs.len();
    if n < 2 || n != ys.len() {
        return Err(NumericsError::DegenerateAbscissa);
    }
    let nf = n as f64;
    let xm = xs.iter().sum::<f64>() / nf;
    let ym = ys.iter().sum::<f64>() / nf;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (&x, &y) in xs.iter().zip(ys) {
        sxx += (x - xm) * (x - xm);
        sxy += (x - xm) * (y - ym);
    }
    if sxx == 0.0 {
        return Err(NumericsError::DegenerateAbscissa);
    }
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let ss = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum::<f64>();
    Ok(LineFit {
        slope,
        intercept,
        rmse: (ss / nf).sqrt(),
        n,
    })
}

/// Least-squares plane fit z = z0 + alpha * x + beta * y.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct PlaneFit {
    pub z0: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Root mean square residual with divisor n.
    pub residual_rms: f64,
}

impl PlaneFit {
    /// Evaluate the fitted plane.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        self.z0 + self.alpha * x + self.beta * y
    }

    /// Tilt of the plane against the horizontal, small-angle form
    /// sqrt(alpha^2 + beta^2) in radians (exact to ~1e-8 for the
    /// sub-milliradian gradients this crate deals in).
    pub fn tilt(&self) -> f64 {
        self.alpha.hypot(self.beta)
    }
}

pub fn fit_plane(points: &[(f64, f64, f64)]) -> Result<PlaneFit, NumericsError> {
    let n = points.len();
    if n < 3 {
        return Err(NumericsError::RankDeficient);
    }
    let nf = n as f64;
    let (mut xm, mut ym, mut zm) = (0.0, 0.0, 0.0);
    for &(x, y, z) in points {
        xm += x;
        ym += y;
        zm += z;
    }
    xm /= nf;
    ym /= nf;
    zm /= nf;
    let (mut sxx, mut sxy, mut syy, mut sxz, mut syz) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(x, y, z) in points {
        let (dx, dy, dz) = (x - xm, y - ym, z - zm);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
        sxz += dx * dz;
        syz += dy * dz;
    }
    let det = sxx * syy - sxy * sxy;
    if det <= 1e-12 * sxx * syy || !det.is_finite() {
        return Err(NumericsError::RankDeficient);
    }
    let alpha = (syy * sxz - sxy * syz) / det;
    let beta = (sxx * syz - sxy * sxz) / det;
    let z0 = zm - alpha * xm - beta * ym;
    let ss = points
        .iter()
        .map(|&(x, y, z)| {
            let r = z - (z0 + alpha * x + beta * y);
            r * r
        })
        .sum::<f64>();
    Ok(PlaneFit {
        z0,
        alpha,
        beta,
        residual_rms: (ss / nf).sqrt(),
    })
}
