//! Numerical uniform-observability analysis of the pair `(A(t), C(t))`.
//!
//! With `T(t) = I₃ ⊗ R(t)` the state transition is `φ(t, s) = T(t)ᵀ T(s)`,
//! so the windowed Gramian is, up to an orthogonal conjugation,
//! `∫ Σᵢ uᵢ uᵢᵀ ds` with `uᵢ = bᵢ ⊗ R aᵢ`. For complete vector triads
//! this collapses to `(∫ Σⱼ rⱼ rⱼᵀ ds) ⊗ I₃`, a persistent-excitation
//! condition on the inertial vectors alone.

use nalgebra::{DMatrix, Matrix3, SMatrix, SVector};

use crate::error::{Error, Result};
use crate::filter::a_matrix;
use crate::measurements::{ChannelKind, ScalarChannel, VectorProvider};
use crate::scalar::Real;
use crate::so3::{Mat9, RotationMatrix, Vec3};

/// Pass/fail band of a windowed minimum eigenvalue against `μ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    /// `λ_min ≥ μ`
    Observable,
    /// `0.1 μ ≤ λ_min < μ`
    Marginal,
    Unobservable,
}

impl Verdict {
    pub fn classify<T: Real>(min_eig: T, mu: T) -> Self {
        if min_eig >= mu {
            Self::Observable
        } else if min_eig >= mu * T::lit(0.1) {
            Self::Marginal
        } else {
            Self::Unobservable
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Observable => "observable",
            Self::Marginal => "marginal",
            Self::Unobservable => "unobservable",
        }
    }
}

/// Default margin `μ = 1e-3 · δ`.
pub fn default_mu<T: Real>(delta: T) -> T {
    delta * T::lit(1e-3)
}

/// Quadrature intervals for a window at the default 1 kHz resolution.
pub fn default_steps<T: Real>(delta: T) -> usize {
    ((delta * T::lit(1000.0)).ceil().as_f64() as usize).max(10)
}

/// Windowed observability Gramian and its spectrum.
#[derive(Clone, Debug)]
pub struct GramianReport<T: Real> {
    pub t0: T,
    pub t1: T,
    pub w: Mat9<T>,
    /// Ascending.
    pub eigenvalues: SVector<T, 9>,
    pub min_eig: T,
    pub mu_threshold: T,
    pub verdict: Verdict,
    /// Eigenvectors whose eigenvalue falls below `μ`.
    pub null_directions: Vec<SVector<T, 9>>,
}

/// Windowed persistent-excitation matrix of inertial vectors.
#[derive(Clone, Debug)]
pub struct PeReport<T: Real> {
    pub t0: T,
    pub t1: T,
    pub g3: Matrix3<T>,
    /// Ascending.
    pub eigenvalues: Vec3<T>,
    pub min_eig: T,
    pub mu_threshold: T,
    pub verdict: Verdict,
}

/// `b ⊗ v`: block `j` is `b_j v`.
pub fn kron3<T: Real>(b: &Vec3<T>, v: &Vec3<T>) -> SVector<T, 9> {
    SVector::from_fn(|k, _| b[k / 3] * v[k % 3])
}

/// Integrand `Σᵢ uᵢ uᵢᵀ` at time `s` for the given channels.
pub fn gramian_integrand<T: Real>(
    r: &RotationMatrix<T>,
    channels: &[ScalarChannel<T>],
    s: T,
) -> Mat9<T> {
    let mut acc = Mat9::zeros();
    for ch in channels {
        let m = ch.sample(r, s);
        let u = kron3(&m.b, &(r.matrix() * m.a));
        acc += u * u.transpose();
    }
    acc
}

fn trapezoid<T: Real, const N: usize>(
    t0: T,
    delta: T,
    n_steps: usize,
    mut f: impl FnMut(T) -> SMatrix<T, N, N>,
) -> SMatrix<T, N, N> {
    let h = delta / T::lit(n_steps as f64);
    let mut acc = (f(t0) + f(t0 + delta)) * T::lit(0.5);
    for k in 1..n_steps {
        acc += f(t0 + h * T::lit(k as f64));
    }
    acc * h
}

fn sorted_eigen<T: Real, const N: usize>(
    m: &SMatrix<T, N, N>,
) -> (SVector<T, N>, Vec<SVector<T, N>>) {
    let eig = DMatrix::from_fn(N, N, |r, c| m[(r, c)]).symmetric_eigen();
    let mut order: Vec<usize> = (0..N).collect();
    order.sort_by(|&i, &j| {
        eig.eigenvalues[i]
            .partial_cmp(&eig.eigenvalues[j])
            .unwrap_or(core::cmp::Ordering::Equal)
    });
    let values = SVector::<T, N>::from_iterator(order.iter().map(|&i| eig.eigenvalues[i]));
    let vectors = order
        .iter()
        .map(|&i| SVector::<T, N>::from_iterator(eig.eigenvectors.column(i).iter().copied()))
        .collect();
    (values, vectors)
}

/// Integrates `Σᵢ uᵢ uᵢᵀ` over `[t0, t0 + δ]` by the trapezoid rule and
/// classifies the smallest eigenvalue against `mu`.
pub fn gramian_lemma1<T: Real>(
    truth: &dyn Fn(T) -> RotationMatrix<T>,
    channels: &[ScalarChannel<T>],
    t0: T,
    delta: T,
    n_steps: usize,
    mu: T,
) -> Result<GramianReport<T>> {
    check_window(delta, n_steps)?;
    let w = trapezoid(t0, delta, n_steps, |s| {
        gramian_integrand(&truth(s), channels, s)
    });
    let mut w_sym = w;
    crate::filter::symmetrize(&mut w_sym);
    let (eigenvalues, vectors) = sorted_eigen(&w_sym);
    let min_eig = eigenvalues[0];
    let null_directions = eigenvalues
        .iter()
        .zip(vectors)
        .filter(|(e, _)| **e < mu)
        .map(|(_, v)| v)
        .collect();
    Ok(GramianReport {
        t0,
        t1: t0 + delta,
        w: w_sym,
        eigenvalues,
        min_eig,
        mu_threshold: mu,
        verdict: Verdict::classify(min_eig, mu),
        null_directions,
    })
}

/// Integrates `Σⱼ rⱼ rⱼᵀ` over `[t0, t0 + δ]` and classifies it against `mu`.
pub fn pe_condition_lemma2<T: Real>(
    inertial_vectors: &[VectorProvider<T>],
    t0: T,
    delta: T,
    n_steps: usize,
    mu: T,
) -> Result<PeReport<T>> {
    check_window(delta, n_steps)?;
    if inertial_vectors.is_empty() {
        return Err(Error::NoActiveChannels);
    }
    let g3 = trapezoid(t0, delta, n_steps, |s| {
        inertial_vectors.iter().fold(Matrix3::zeros(), |acc, r| {
            let v = r.at(s);
            acc + v * v.transpose()
        })
    });
    let (eigenvalues, _) = sorted_eigen(&g3);
    let min_eig = eigenvalues[0];
    Ok(PeReport {
        t0,
        t1: t0 + delta,
        g3,
        eigenvalues,
        min_eig,
        mu_threshold: mu,
        verdict: Verdict::classify(min_eig, mu),
    })
}

/// Inertial vectors of the complete 3-axis vector groups among `channels`.
///
/// Channels are grouped by the id prefix before the last `_`; every group
/// must carry axes 1, 2 and 3 with a common inertial vector.
pub fn complete_triads<T: Real>(
    channels: &[ScalarChannel<T>],
) -> Result<Vec<(String, VectorProvider<T>)>> {
    let mut groups: indexmap::IndexMap<String, ([bool; 3], VectorProvider<T>)> =
        indexmap::IndexMap::new();
    for ch in channels {
        let ChannelKind::VectorAxis { axis } = ch.kind else {
            return Err(Error::InvalidParameter(format!(
                "channel `{}` is not a vector-axis channel",
                ch.id
            )));
        };
        let prefix = ch.id.rsplit_once('_').map(|(p, _)| p).unwrap_or(&ch.id);
        let entry = groups
            .entry(prefix.to_owned())
            .or_insert_with(|| ([false; 3], ch.b.clone()));
        entry.0[axis - 1] = true;
    }
    groups
        .into_iter()
        .map(|(prefix, (axes, b))| {
            if axes.iter().all(|&x| x) {
                Ok((prefix, b))
            } else {
                Err(Error::InvalidParameter(format!(
                    "vector channel group `{prefix}` is not a complete triad"
                )))
            }
        })
        .collect()
}

/// Largest pointwise discrepancy between `Σᵢ (bᵢ ⊗ R aᵢ)(bᵢ ⊗ R aᵢ)ᵀ` and
/// `Σⱼ (rⱼ rⱼᵀ) ⊗ I₃` over `n_steps + 1` samples of `[t0, t0 + δ]`.
pub fn gramian_equivalence_check<T: Real>(
    truth: &dyn Fn(T) -> RotationMatrix<T>,
    vector_channels: &[ScalarChannel<T>],
    t0: T,
    delta: T,
    n_steps: usize,
) -> Result<T> {
    check_window(delta, n_steps)?;
    let triads = complete_triads(vector_channels)?;
    let h = delta / T::lit(n_steps as f64);
    let mut worst = T::zero();
    for k in 0..=n_steps {
        let s = t0 + h * T::lit(k as f64);
        let lhs = gramian_integrand(&truth(s), vector_channels, s);
        let mut rhs = Mat9::zeros();
        for (_, r) in &triads {
            let v = r.at(s);
            rhs += kron_identity(&(v * v.transpose()));
        }
        worst = worst.max((lhs - rhs).amax());
    }
    Ok(worst)
}

/// `G ⊗ I₃`.
pub fn kron_identity<T: Real>(g: &Matrix3<T>) -> Mat9<T> {
    Mat9::from_fn(|r, c| {
        if r % 3 == c % 3 {
            g[(r / 3, c / 3)]
        } else {
            T::zero()
        }
    })
}

/// Adds a virtual triad `r₁ × r₂` for the first two complete vector groups.
/// Returns `None` when fewer than two groups are present.
pub fn cross_product_triad<T: Real>(
    channels: &[ScalarChannel<T>],
) -> Option<Vec<ScalarChannel<T>>> {
    let vector_only: Vec<_> = channels
        .iter()
        .filter(|c| matches!(c.kind, ChannelKind::VectorAxis { .. }))
        .cloned()
        .collect();
    let triads = complete_triads(&vector_only).ok()?;
    if triads.len() < 2 {
        return None;
    }
    let (p1, r1) = triads[0].clone();
    let (p2, r2) = triads[1].clone();
    let r3 = match (&r1, &r2) {
        (VectorProvider::Constant(a), VectorProvider::Constant(b)) => {
            VectorProvider::Constant(a.cross(b))
        }
        _ => VectorProvider::Function(std::sync::Arc::new(move |t| r1.at(t).cross(&r2.at(t)))),
    };
    crate::measurements::vector_channels(&format!("{p1}x{p2}"), r3, &[1, 2, 3], T::zero(), T::one())
        .ok()
}

/// Integrates `Φ' = A(τ) Φ` from `s` to `t` with RK4 at step `h` and
/// returns the largest entry of `Φ - T(t)ᵀ T(s)`.
pub fn transition_matrix_check<T: Real>(
    truth: &dyn Fn(T) -> RotationMatrix<T>,
    omega: &dyn Fn(T) -> Vec3<T>,
    t: T,
    s: T,
    h: T,
) -> Result<T> {
    if t < s {
        return Err(Error::InvalidParameter(format!(
            "need s <= t, got s = {s}, t = {t}"
        )));
    }
    let mut phi = Mat9::<T>::identity();
    let span = t - s;
    if span > T::zero() {
        let n = (span / h).ceil().as_f64().max(1.0) as usize;
        let h = span / T::lit(n as f64);
        let half = h * T::lit(0.5);
        for k in 0..n {
            let tau = s + h * T::lit(k as f64);
            let a0 = a_matrix(&omega(tau));
            let am = a_matrix(&omega(tau + half));
            let a1 = a_matrix(&omega(tau + h));
            let k1 = a0 * phi;
            let k2 = am * (phi + k1 * half);
            let k3 = am * (phi + k2 * half);
            let k4 = a1 * (phi + k3 * h);
            phi += (k1 + k2 * T::lit(2.0) + k3 * T::lit(2.0) + k4) * (h / T::lit(6.0));
        }
    }
    let expected = block_transition(&truth(t), &truth(s));
    Ok((phi - expected).amax())
}

/// `T(t)ᵀ T(s) = I₃ ⊗ R(t)ᵀ R(s)`.
pub fn block_transition<T: Real>(r_t: &RotationMatrix<T>, r_s: &RotationMatrix<T>) -> Mat9<T> {
    let block = r_t.matrix().transpose() * r_s.matrix();
    let mut m = Mat9::zeros();
    for j in 0..3 {
        m.fixed_view_mut::<3, 3>(3 * j, 3 * j).copy_from(&block);
    }
    m
}

/// Gramian reports for consecutive windows `[t, t + δ]` covering `[t_start, t_end]`.
pub fn sweep_windows<T: Real>(
    truth: &dyn Fn(T) -> RotationMatrix<T>,
    channels: &[ScalarChannel<T>],
    t_start: T,
    t_end: T,
    delta: T,
    mu: T,
) -> Result<Vec<GramianReport<T>>> {
    if !(delta > T::zero()) {
        return Err(Error::InvalidParameter(
            "window length must be positive".into(),
        ));
    }
    let mut out = Vec::new();
    let mut t0 = t_start;
    let eps = delta * T::lit(1e-9);
    loop {
        out.push(gramian_lemma1(
            truth,
            channels,
            t0,
            delta,
            default_steps(delta),
            mu,
        )?);
        t0 += delta;
        if t0 + delta > t_end + eps {
            break;
        }
    }
    Ok(out)
}

fn check_window<T: Real>(delta: T, n_steps: usize) -> Result<()> {
    if !(delta > T::zero()) {
        return Err(Error::InvalidParameter(format!(
            "window length must be positive, got {delta}"
        )));
    }
    if n_steps < 10 {
        return Err(Error::InvalidParameter(format!(
            "need at least 10 quadrature steps, got {n_steps}"
        )));
    }
    Ok(())
}

/// Dense copy of a Gramian, for reporting.
pub fn to_dmatrix<T: Real>(w: &Mat9<T>) -> DMatrix<T> {
    DMatrix::from_fn(9, 9, |r, c| w[(r, c)])
}
