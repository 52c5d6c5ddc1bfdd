use crate::assembly::geometry::inv3;
use crate::assembly::{Discretization, GridSamples};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// Univariate weights of the separable surrogate
/// `Ĉ_k = diag(τ1 μ2 μ3, μ1 τ2 μ3, μ1 μ2 τ3)` for one velocity component,
/// sampled at the univariate quadrature nodes.
#[derive(Clone, Debug, PartialEq)]
pub struct SeparableWeights<T> {
    pub tau: [Vec<T>; 3],
    pub mu: [Vec<T>; 3],
}

impl<T: Real> SeparableWeights<T> {
    /// `τ_d ≡ c_d`, `μ_d ≡ 1`.
    pub fn constant(npts: [usize; 3], c: [T; 3]) -> Self {
        Self {
            tau: [0, 1, 2].map(|d| vec![c[d]; npts[d]]),
            mu: [0, 1, 2].map(|d| vec![T::one(); npts[d]]),
        }
    }

    /// Value of the separable model for entry `d` at node `(i1, i2, i3)`.
    pub fn model(&self, d: usize, idx: [usize; 3]) -> T {
        let mut v = T::one();
        for e in 0..3 {
            v *= if e == d {
                self.tau[e][idx[e]]
            } else {
                self.mu[e][idx[e]]
            };
        }
        v
    }
}

/// Outcome of the alternating least-squares fit.
#[derive(Clone, Debug)]
pub struct SeparableFit<T> {
    pub weights: SeparableWeights<T>,
    /// Log-domain objective before the first sweep and after every sweep.
    pub objective: Vec<f64>,
    pub sweeps: usize,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    pub max_sweeps: usize,
    pub rel_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_sweeps: 50,
            rel_tol: 1e-8,
        }
    }
}

/// Diagonal entries `c_dd^k` of the velocity coefficient tensor at every
/// node of the sampled grid (direction 1 fastest).
///
/// Taylor–Hood: `ν|det J|(G_dd + (J⁻¹)_dk²)` with `G = J⁻¹J⁻ᵀ`.
/// Raviart–Thomas: `ν|det J|(‖R_k‖² G_dd + (J⁻¹R_k)_d²)` with `R_k = J e_k / det J`.
pub fn sample_coefficients<T: Real>(
    samples: &GridSamples<T>,
    disc: Discretization,
    k: usize,
) -> Result<[Vec<T>; 3]> {
    if k > 2 {
        return Err(Error::Parameter(format!(
            "velocity component {k} out of range"
        )));
    }
    let n = samples.len();
    let mut out = [
        Vec::with_capacity(n),
        Vec::with_capacity(n),
        Vec::with_capacity(n),
    ];
    for i in 0..n {
        let ji = &samples.jinv[i];
        let scale = samples.nu[i] * samples.det[i];
        let g = |d: usize| (0..3).map(|c| ji[d][c] * ji[d][c]).sum::<T>();
        for d in 0..3 {
            let v = match disc {
                Discretization::TaylorHood => scale * (g(d) + ji[d][k] * ji[d][k]),
                Discretization::RaviartThomas => {
                    let j = inv3(ji);
                    let det = samples.det[i];
                    let r: [T; 3] = [0, 1, 2].map(|c| j[c][k] / det);
                    let rn = r.iter().map(|v| *v * *v).sum::<T>();
                    let jr = (0..3).map(|c| ji[d][c] * r[c]).sum::<T>();
                    scale * (rn * g(d) + jr * jr)
                }
            };
            if !(v > T::zero()) || !v.is_finite() {
                return Err(Error::Geometry(format!(
                    "nonpositive coefficient sample {} at node {i}",
                    v.as_f64()
                )));
            }
            out[d].push(v);
        }
    }
    Ok(out)
}

struct LogData<T> {
    npts: [usize; 3],
    l: [Vec<T>; 3],
}

impl<T: Real> LogData<T> {
    #[inline]
    fn at(&self, d: usize, i: [usize; 3]) -> T {
        self.l[d][i[0] + self.npts[0] * (i[1] + self.npts[1] * i[2])]
    }

    /// Residual of entry `d` with the log-factor of direction `skip` removed.
    fn slice_means(&self, d: usize, skip: usize, t: &[Vec<T>; 3], m: &[Vec<T>; 3]) -> Vec<T> {
        let n = self.npts;
        let mut sums = vec![T::zero(); n[skip]];
        for i3 in 0..n[2] {
            for i2 in 0..n[1] {
                for i1 in 0..n[0] {
                    let idx = [i1, i2, i3];
                    let mut r = self.at(d, idx);
                    for e in 0..3 {
                        if e != skip {
                            r -= if e == d { t[e][idx[e]] } else { m[e][idx[e]] };
                        }
                    }
                    sums[idx[skip]] += r;
                }
            }
        }
        let count = T::from_usize_lossy(n[0] * n[1] * n[2] / n[skip]);
        sums.into_iter().map(|s| s / count).collect()
    }

    fn objective(&self, t: &[Vec<T>; 3], m: &[Vec<T>; 3]) -> f64 {
        let n = self.npts;
        let mut total = 0.0;
        for d in 0..3 {
            for i3 in 0..n[2] {
                for i2 in 0..n[1] {
                    for i1 in 0..n[0] {
                        let idx = [i1, i2, i3];
                        let mut r = self.at(d, idx);
                        for e in 0..3 {
                            r -= if e == d { t[e][idx[e]] } else { m[e][idx[e]] };
                        }
                        total += r.as_f64() * r.as_f64();
                    }
                }
            }
        }
        total
    }
}

/// Fits `c_11, c_22, c_33` (tensors on a grid with `npts` nodes per
/// direction) by the separable structure, minimizing the summed squared
/// misfit of the logarithms by alternating closed-form block updates.
///
/// Each `μ_d` is normalized to geometric mean one; the scale moves into the
/// `τ_e` factors that multiply it.
pub fn separable_fit<T: Real>(
    npts: [usize; 3],
    c: &[Vec<T>; 3],
    opts: &FitOptions,
) -> Result<SeparableFit<T>> {
    let total = npts[0] * npts[1] * npts[2];
    if npts.contains(&0) {
        return Err(Error::Fit("empty sample grid".into()));
    }
    let mut l: [Vec<T>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for d in 0..3 {
        if c[d].len() != total {
            return Err(Error::Shape(format!(
                "coefficient tensor {} has {} samples, expected {total}",
                d + 1,
                c[d].len()
            )));
        }
        if let Some(i) = c[d]
            .iter()
            .position(|v| !(*v > T::zero()) || !v.is_finite())
        {
            return Err(Error::Fit(format!(
                "nonpositive sample {} in entry {}",
                c[d][i].as_f64(),
                d + 1
            )));
        }
        l[d] = c[d].iter().map(|v| v.ln()).collect();
    }
    let data = LogData { npts, l };
    let mut m: [Vec<T>; 3] = npts.map(|n| vec![T::zero(); n]);
    let mut t: [Vec<T>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    for d in 0..3 {
        t[d] = data.slice_means(d, d, &t, &m);
    }
    let mut objective = vec![data.objective(&t, &m)];
    let mut converged = objective[0] == 0.0;
    let mut sweeps = 0;
    while !converged && sweeps < opts.max_sweeps {
        for d in 0..3 {
            t[d] = data.slice_means(d, d, &t, &m);
        }
        for d in 0..3 {
            let others: Vec<Vec<T>> = (0..3)
                .filter(|&e| e != d)
                .map(|e| data.slice_means(e, d, &t, &m))
                .collect();
            m[d] = others[0]
                .iter()
                .zip(&others[1])
                .map(|(a, b)| (*a + *b) * T::half())
                .collect();
        }
        sweeps += 1;
        let f = data.objective(&t, &m);
        let prev = *objective.last().expect("nonempty");
        objective.push(f);
        converged = f == 0.0 || (prev - f).abs() <= opts.rel_tol * prev.max(f64::MIN_POSITIVE);
    }
    for d in 0..3 {
        let shift = m[d].iter().copied().sum::<T>() / T::from_usize_lossy(npts[d]);
        for v in m[d].iter_mut() {
            *v -= shift;
        }
        for e in (0..3).filter(|&e| e != d) {
            for v in t[e].iter_mut() {
                *v += shift;
            }
        }
    }
    Ok(SeparableFit {
        weights: SeparableWeights {
            tau: t.map(|v| v.into_iter().map(|x| x.exp()).collect()),
            mu: m.map(|v| v.into_iter().map(|x| x.exp()).collect()),
        },
        objective,
        sweeps,
        converged,
    })
}
