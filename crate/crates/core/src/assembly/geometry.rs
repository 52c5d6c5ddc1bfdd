use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// 3x3 matrix stored by rows.
pub type Mat3<T> = [[T; 3]; 3];

/// Point evaluation of a map: image, Jacobian `J[i][j] = ∂G_i/∂η_j`.
pub type MapEval<T> = ([T; 3], Mat3<T>);

type MapFn<T> = Arc<dyn Fn([T; 3]) -> MapEval<T> + Send + Sync>;
type ScalarFn<T> = Arc<dyn Fn([T; 3]) -> T + Send + Sync>;

/// Parametrization `G : [0,1]^3 → Ω`.
#[derive(Clone)]
pub enum GeometryMap<T> {
    Identity,
    /// `G(η) = ((1+η1) cos(πη2/4), (1+η1) sin(πη2/4), η3)`.
    EighthAnnulus,
    Callable(MapFn<T>),
}

impl<T> fmt::Debug for GeometryMap<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Identity => write!(f, "Identity"),
            Self::EighthAnnulus => write!(f, "EighthAnnulus"),
            Self::Callable(_) => write!(f, "Callable"),
        }
    }
}

/// Geometry kinds accepted by [`make_geometry`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GeometryKind {
    Cube,
    Annulus,
}

impl GeometryKind {
    pub fn tag(self) -> &'static str {
        match self {
            Self::Cube => "cube",
            Self::Annulus => "annulus",
        }
    }
}

impl<T: Real> GeometryMap<T> {
    pub fn callable(f: impl Fn([T; 3]) -> MapEval<T> + Send + Sync + 'static) -> Self {
        Self::Callable(Arc::new(f))
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, Self::Identity)
    }

    pub fn eval(&self, eta: [T; 3]) -> MapEval<T> {
        match self {
            Self::Identity => (eta, identity3()),
            Self::EighthAnnulus => {
                let quarter = T::FRAC_PI_4();
                let r = T::one() + eta[0];
                let (s, c) = (quarter * eta[1]).sin_cos();
                let x = [r * c, r * s, eta[2]];
                let j = [
                    [c, -r * quarter * s, T::zero()],
                    [s, r * quarter * c, T::zero()],
                    [T::zero(), T::zero(), T::one()],
                ];
                (x, j)
            }
            Self::Callable(f) => f(eta),
        }
    }

    pub fn point(&self, eta: [T; 3]) -> [T; 3] {
        self.eval(eta).0
    }

    pub fn jacobian(&self, eta: [T; 3]) -> Mat3<T> {
        self.eval(eta).1
    }

    pub fn det_jacobian(&self, eta: [T; 3]) -> T {
        det3(&self.jacobian(eta))
    }

    /// Fails if `det J` vanishes (relative to `|J|^3`) at any of the given points.
    pub fn check_nonsingular(&self, points: impl IntoIterator<Item = [T; 3]>) -> Result<()> {
        for eta in points {
            let j = self.jacobian(eta);
            let scale = j.iter().flatten().fold(T::zero(), |m, v| m.max(v.abs()));
            let det = det3(&j);
            if !det.is_finite() || det.abs() <= T::lit(1e-12) * scale * scale * scale {
                return Err(Error::Geometry(format!(
                    "singular Jacobian (det = {}) at ({}, {}, {})",
                    det.as_f64(),
                    eta[0].as_f64(),
                    eta[1].as_f64(),
                    eta[2].as_f64()
                )));
            }
        }
        Ok(())
    }
}

/// Builds a named geometry and validates it on a `samples^3` grid of interior points.
pub fn make_geometry<T: Real>(kind: GeometryKind, samples: usize) -> Result<GeometryMap<T>> {
    let g = match kind {
        GeometryKind::Cube => GeometryMap::Identity,
        GeometryKind::Annulus => GeometryMap::EighthAnnulus,
    };
    let n = samples.max(1);
    let pts = (0..n * n * n).map(|i| {
        let t = |k: usize| T::from_usize_lossy(2 * k + 1) / T::from_usize_lossy(2 * n);
        [t(i % n), t((i / n) % n), t(i / (n * n))]
    });
    g.check_nonsingular(pts)?;
    Ok(g)
}

/// Kinematic viscosity `ν(x) > 0` on the physical domain.
#[derive(Clone)]
pub enum ViscosityField<T> {
    Constant(T),
    /// `ν = 1 + (k − 1)(1 + cos(atan2(x, z)))/2`.
    AngularVariation {
        k: T,
    },
    Callable(ScalarFn<T>),
}

impl<T: fmt::Debug> fmt::Debug for ViscosityField<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Constant(v) => write!(f, "Constant({v:?})"),
            Self::AngularVariation { k } => write!(f, "AngularVariation {{ k: {k:?} }}"),
            Self::Callable(_) => write!(f, "Callable"),
        }
    }
}

impl<T: Real> ViscosityField<T> {
    pub fn constant(nu: T) -> Result<Self> {
        if !(nu > T::zero()) {
            return Err(Error::Viscosity(format!(
                "nonpositive viscosity {}",
                nu.as_f64()
            )));
        }
        Ok(Self::Constant(nu))
    }

    pub fn callable(f: impl Fn([T; 3]) -> T + Send + Sync + 'static) -> Self {
        Self::Callable(Arc::new(f))
    }

    pub fn as_constant(&self) -> Option<T> {
        match self {
            Self::Constant(v) => Some(*v),
            Self::AngularVariation { k } if *k == T::one() => Some(T::one()),
            _ => None,
        }
    }

    pub fn eval(&self, x: [T; 3]) -> T {
        match self {
            Self::Constant(v) => *v,
            Self::AngularVariation { k } => {
                let angle = x[0].atan2(x[2]);
                T::one() + (*k - T::one()) * (T::one() + angle.cos()) * T::half()
            }
            Self::Callable(f) => f(x),
        }
    }

    /// Evaluates and rejects nonpositive or non-finite values.
    pub fn eval_checked(&self, x: [T; 3]) -> Result<T> {
        let v = self.eval(x);
        if !(v > T::zero()) || !v.is_finite() {
            return Err(Error::Viscosity(format!(
                "viscosity {} at ({}, {}, {})",
                v.as_f64(),
                x[0].as_f64(),
                x[1].as_f64(),
                x[2].as_f64()
            )));
        }
        Ok(v)
    }
}

pub fn identity3<T: Real>() -> Mat3<T> {
    let (o, z) = (T::one(), T::zero());
    [[o, z, z], [z, o, z], [z, z, o]]
}

pub fn det3<T: Real>(m: &Mat3<T>) -> T {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Inverse by cofactors; the caller guarantees `det != 0`.
pub fn inv3<T: Real>(m: &Mat3<T>) -> Mat3<T> {
    let d = det3(m);
    let c = |a: usize, b: usize, e: usize, f: usize| m[a][b] * m[e][f] - m[a][f] * m[e][b];
    [
        [c(1, 1, 2, 2) / d, -c(0, 1, 2, 2) / d, c(0, 1, 1, 2) / d],
        [-c(1, 0, 2, 2) / d, c(0, 0, 2, 2) / d, -c(0, 0, 1, 2) / d],
        [c(1, 0, 2, 1) / d, -c(0, 0, 2, 1) / d, c(0, 0, 1, 1) / d],
    ]
}

/// Spectral norm of a 3x3 matrix: square root of the largest eigenvalue of `J^T J`.
pub fn spectral_norm3<T: Real>(m: &Mat3<T>) -> T {
    let mut g = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                g[i][j] += m[k][i] * m[k][j];
            }
        }
    }
    sym3_eigenvalues(&g)[2].max(T::zero()).sqrt()
}

/// Eigenvalues (ascending) of a symmetric 3x3 matrix, closed form.
pub fn sym3_eigenvalues<T: Real>(a: &Mat3<T>) -> [T; 3] {
    let p1 = a[0][1] * a[0][1] + a[0][2] * a[0][2] + a[1][2] * a[1][2];
    let three = T::lit(3.0);
    let q = (a[0][0] + a[1][1] + a[2][2]) / three;
    if p1 <= T::epsilon() * T::epsilon() * (q * q).max(T::min_positive_value()) {
        let mut e = [a[0][0], a[1][1], a[2][2]];
        e.sort_by(|x, y| x.partial_cmp(y).unwrap());
        return e;
    }
    let p2 = (a[0][0] - q).powi(2) + (a[1][1] - q).powi(2) + (a[2][2] - q).powi(2) + T::two() * p1;
    let p = (p2 / T::lit(6.0)).sqrt();
    let mut b = *a;
    for (i, row) in b.iter_mut().enumerate() {
        row[i] -= q;
        for v in row.iter_mut() {
            *v /= p;
        }
    }
    let r = (det3(&b) / T::two()).max(-T::one()).min(T::one());
    let phi = r.acos() / three;
    let e1 = q + T::two() * p * phi.cos();
    let e3 = q + T::two() * p * (phi + T::lit(2.0 * std::f64::consts::PI / 3.0)).cos();
    let e2 = three * q - e1 - e3;
    let mut e = [e3, e2, e1];
    e.sort_by(|x, y| x.partial_cmp(y).unwrap());
    e
}
