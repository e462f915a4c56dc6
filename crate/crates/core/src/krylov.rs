//! Constant-input block rational Krylov reduction of the stress descriptor
//! system, with loop-free reduced stepping and an LRU basis cache.
//!
//! The basis spans `{K⁻¹Cσ0, K⁻¹f}` and its images under `K⁻¹C` with
//! `K = s0 C − A`, so the Galerkin-projected model matches the leading
//! moments of the full response about `s0`.

use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};
use std::num::NonZeroUsize;
use std::sync::{Arc, Mutex};

use lru::LruCache;
use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{spmv, SparseMat, SymFactor};
use crate::stress::{StressSystem, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KrylovConfig {
    /// Number of block moments.
    pub q: usize,
    /// Shift time as a multiple of the slowest diffusion time.
    pub eta: f64,
    /// Relative block-norm threshold for Arnoldi breakdown.
    pub breakdown_tol: f64,
    pub enable: bool,
    pub cache_capacity: usize,
}

impl Default for KrylovConfig {
    fn default() -> Self {
        Self {
            q: 6,
            eta: 1.0,
            breakdown_tol: 1e-12,
            enable: true,
            cache_capacity: 256,
        }
    }
}

impl KrylovConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |key: &str, msg: String| {
            Err(Error::Param {
                key: format!("krylov.{key}"),
                msg,
            })
        };
        if self.q < 2 {
            return bad("q", format!("must be at least 2, got {}", self.q));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return bad("eta", format!("must be positive, got {}", self.eta));
        }
        if self.breakdown_tol.is_nan() || self.breakdown_tol <= 0.0 {
            return bad("breakdown_tol", format!("must be positive, got {}", self.breakdown_tol));
        }
        if self.cache_capacity == 0 {
            return bad("cache_capacity", "must be at least 1".into());
        }
        Ok(())
    }
}

/// Slowest diffusion time `L² / (π² κ)` scaled by `eta`.
pub fn shift_time(max_path_length: f64, kappa_ref: f64, eta: f64) -> f64 {
    eta * max_path_length * max_path_length / (std::f64::consts::PI.powi(2) * kappa_ref)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SolverPath {
    Krylov,
    BackwardEuler,
}

/// Cold cache: Krylov for `n ≥ max(3q, 30)`. Warm cache: `n ≥ q + 2`.
pub fn select_solver(n: usize, q: usize, cache_warm: bool, enabled: bool) -> SolverPath {
    let threshold = if cache_warm { q + 2 } else { (3 * q).max(30) };
    if enabled && n >= threshold {
        SolverPath::Krylov
    } else {
        SolverPath::BackwardEuler
    }
}

/// Reduced descriptor system `C_h σ̂' = A_h σ̂ + f_h`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedDynamics {
    pub a: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub f: DVector<f64>,
}

#[derive(Debug, Clone)]
pub struct ReducedModel {
    /// Orthonormal columns, n × r.
    pub basis: DMatrix<f64>,
    pub dynamics: ReducedDynamics,
    pub s0: f64,
    pub fingerprint: u64,
}

impl ReducedModel {
    pub fn order(&self) -> usize {
        self.basis.ncols()
    }

    pub fn project(&self, x: &[f64]) -> DVector<f64> {
        self.basis.tr_mul(&DVector::from_column_slice(x))
    }

    /// Whether `x` lies in the basis span to `1e-10 ‖x‖`.
    pub fn spans(&self, x: &[f64]) -> bool {
        let v = DVector::from_column_slice(x);
        let norm = v.norm();
        if norm == 0.0 {
            return true;
        }
        let resid = &v - &self.basis * self.basis.tr_mul(&v);
        resid.norm() <= 1e-10 * norm
    }

    /// Full-space trajectory: project, step in reduced space, lift.
    pub fn trajectory(&self, sigma0: &[f64], dts: &[f64]) -> Result<Trajectory> {
        let hat = self.dynamics.trajectory(&self.project(sigma0), dts)?;
        let mut times = Vec::with_capacity(dts.len() + 1);
        times.push(0.0);
        for &dt in dts {
            times.push(times.last().unwrap() + dt);
        }
        Ok(Trajectory {
            times,
            states: lift(self, &hat),
        })
    }
}

/// All snapshots at once: `V · Σ̂`.
pub fn lift(model: &ReducedModel, reduced: &DMatrix<f64>) -> DMatrix<f64> {
    &model.basis * reduced
}

/// Column-wise content hash of the system and the shift.
pub fn fingerprint(a: &SparseMat, c: &SparseMat, f: &[f64], s0: f64) -> u64 {
    let mut h = std::collections::hash_map::DefaultHasher::new();
    for m in [a, c] {
        m.shape().hash(&mut h);
        m.indptr().raw_storage().hash(&mut h);
        m.indices().hash(&mut h);
        for v in m.data() {
            v.to_bits().hash(&mut h);
        }
    }
    for v in f {
        v.to_bits().hash(&mut h);
    }
    format!("{s0:.11e}").hash(&mut h);
    h.finish()
}

pub fn system_fingerprint(sys: &StressSystem, s0: f64) -> u64 {
    fingerprint(&sys.diffusion, &sys.capacitance_matrix(), &sys.load(), s0)
}

/// Orthogonalize `w` against `basis` with two modified Gram–Schmidt passes.
fn orthogonalize(basis: &[DVector<f64>], w: &mut DVector<f64>) {
    for _ in 0..2 {
        for v in basis {
            let p = v.dot(w);
            w.axpy(-p, v, 1.0);
        }
    }
}

/// Build the reduced model of `C σ' = A σ + f` about shift `s0`.
pub fn build_reduction(
    a: &SparseMat,
    c: &SparseMat,
    f: &[f64],
    sigma0: &[f64],
    s0: f64,
    q: usize,
    breakdown_tol: f64,
) -> Result<ReducedModel> {
    let n = a.rows();
    if !(s0 > 0.0 && s0.is_finite()) {
        return Err(Error::Krylov(format!("shift must be positive, got {s0}")));
    }
    let k = crate::linalg::add_scaled(&c.map(|v| v * s0), -1.0, a);
    let factor = SymFactor::new(&k).map_err(|e| Error::Krylov(format!("shifted matrix: {e}")))?;
    let apply = |x: &DVector<f64>| -> DVector<f64> { DVector::from_vec(factor.solve(&spmv(c, x.as_slice()))) };

    // Arnoldi fills at most 2q columns; a start block that deflates to one
    // column keeps iterating into the freed slots.
    let budget = (2 * q).min(n);
    let mut basis: Vec<DVector<f64>> = Vec::with_capacity(2 * q + 1);
    let mut block = vec![
        apply(&DVector::from_column_slice(sigma0)),
        DVector::from_vec(factor.solve(f)),
    ];
    let mut j = 0;
    while basis.len() < budget {
        let raw_norm: f64 = block.iter().map(|w| w.norm_squared()).sum::<f64>().sqrt();
        let mut accepted = Vec::new();
        let mut resid_sq = 0.0;
        for mut w in block {
            let before = w.norm();
            orthogonalize(&basis, &mut w);
            orthogonalize(&accepted, &mut w);
            let after = w.norm();
            resid_sq += after * after;
            if after > 1e-10 * before && after > 0.0 {
                accepted.push(w / after);
            }
        }
        if j > 0 && resid_sq.sqrt() < breakdown_tol * raw_norm {
            break;
        }
        if accepted.is_empty() {
            break;
        }
        accepted.truncate(budget - basis.len());
        basis.extend(accepted.iter().cloned());
        block = accepted.iter().map(apply).collect();
        j += 1;
    }

    // The initial state itself must be representable.
    let mut s = DVector::from_column_slice(sigma0);
    let s_norm = s.norm();
    if s_norm > 0.0 && basis.len() < n {
        orthogonalize(&basis, &mut s);
        let r = s.norm();
        if r > 1e-10 * s_norm {
            basis.push(s / r);
        }
    }
    if basis.is_empty() {
        // Zero start block: a single direction suffices for a trajectory
        // that never leaves zero.
        let mut e = DVector::zeros(n);
        e[0] = 1.0;
        basis.push(e);
    }

    let v = DMatrix::from_columns(&basis);
    let r = v.ncols();
    let mut av = DMatrix::zeros(n, r);
    let mut cv = DMatrix::zeros(n, r);
    for j in 0..r {
        let col = v.column(j).iter().copied().collect::<Vec<_>>();
        av.column_mut(j).copy_from_slice(&spmv(a, &col));
        cv.column_mut(j).copy_from_slice(&spmv(c, &col));
    }
    let sym = |m: DMatrix<f64>| (&m + m.transpose()) * 0.5;
    let dynamics = ReducedDynamics {
        a: sym(v.tr_mul(&av)),
        c: sym(v.tr_mul(&cv)),
        f: v.tr_mul(&DVector::from_column_slice(f)),
    };
    Ok(ReducedModel {
        basis: v,
        dynamics,
        s0,
        fingerprint: fingerprint(a, c, f, s0),
    })
}

/// Reduction of a tree stress system.
pub fn build_for_system(sys: &StressSystem, sigma0: &[f64], s0: f64, cfg: &KrylovConfig) -> Result<ReducedModel> {
    let c = sys.capacitance_matrix();
    let f = sys.load();
    build_reduction(&sys.diffusion, &c, &f, sigma0, s0, cfg.q, cfg.breakdown_tol)
}

/// Condition limit of the eigenvector matrix for the loop-free form.
const EIGEN_COND_LIMIT: f64 = 1e8;

impl ReducedDynamics {
    /// Reduced backward Euler trajectory, `r × (steps + 1)`. Uniform step
    /// lists use the eigen power-series form; otherwise one Cholesky factor
    /// per distinct step length is reused.
    pub fn trajectory(&self, x0: &DVector<f64>, dts: &[f64]) -> Result<DMatrix<f64>> {
        let uniform = dts.windows(2).all(|w| w[0] == w[1]);
        if uniform && !dts.is_empty() {
            if let Some(out) = self.power_series(x0, dts[0], dts.len())? {
                return Ok(out);
            }
        }
        self.looped(x0, dts)
    }

    fn pencil(&self, dt: f64) -> Result<Cholesky<f64, nalgebra::Dyn>> {
        let p = &self.c - &self.a * dt;
        Cholesky::new(p).ok_or_else(|| Error::Krylov(format!("reduced pencil not positive definite at dt = {dt:e}")))
    }

    /// Looped reduced backward Euler.
    pub fn looped(&self, x0: &DVector<f64>, dts: &[f64]) -> Result<DMatrix<f64>> {
        let r = x0.len();
        let mut factors: BTreeMap<u64, Cholesky<f64, nalgebra::Dyn>> = BTreeMap::new();
        let mut out = DMatrix::zeros(r, dts.len() + 1);
        out.set_column(0, x0);
        let mut x = x0.clone();
        for (k, &dt) in dts.iter().enumerate() {
            let factor = match factors.entry(dt.to_bits()) {
                std::collections::btree_map::Entry::Occupied(e) => e.into_mut(),
                std::collections::btree_map::Entry::Vacant(e) => e.insert(self.pencil(dt)?),
            };
            let rhs = &self.c * &x + &self.f * dt;
            x = factor.solve(&rhs);
            out.set_column(k + 1, &x);
        }
        Ok(out)
    }

    /// `x_k = E (Λ^k c0 + Σ_{i<k} Λ^i γ)` with `F = E Λ E⁻¹`. Returns `None`
    /// when the eigenvector matrix is too ill-conditioned.
    fn power_series(&self, x0: &DVector<f64>, dt: f64, steps: usize) -> Result<Option<DMatrix<f64>>> {
        let r = x0.len();
        let p = &self.c - &self.a * dt;
        let chol = match Cholesky::new(p.clone()) {
            Some(c) => c,
            None => return Ok(None),
        };
        // cond(E) = sqrt(cond(P)) for E = L⁻ᵀ Z.
        let pe = SymmetricEigen::new(p).eigenvalues;
        let (lo, hi) = pe
            .iter()
            .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        if lo.is_nan() || lo <= 0.0 || (hi / lo).sqrt() > EIGEN_COND_LIMIT {
            return Ok(None);
        }
        let l = chol.l();
        let l_inv = match l.clone().try_inverse() {
            Some(m) => m,
            None => return Ok(None),
        };
        let s = &l_inv * &self.c * l_inv.transpose();
        let eig = SymmetricEigen::new((&s + s.transpose()) * 0.5);
        let e = l_inv.tr_mul(&eig.eigenvectors);
        let e_inv = eig.eigenvectors.tr_mul(&l.transpose());
        let g = chol.solve(&(&self.f * dt));
        let c0 = &e_inv * x0;
        let gamma = &e_inv * g;
        let mut coeff = DMatrix::zeros(r, steps + 1);
        for i in 0..r {
            let lam = eig.eigenvalues[i];
            let (mut pow, mut geo) = (1.0, 0.0);
            coeff[(i, 0)] = c0[i];
            for k in 1..=steps {
                geo = lam * geo + 1.0;
                pow *= lam;
                coeff[(i, k)] = pow * c0[i] + geo * gamma[i];
            }
        }
        Ok(Some(e * coeff))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct CacheStats {
    pub hits: u64,
    pub misses: u64,
    pub entries: usize,
}

impl CacheStats {
    pub fn hit_rate(&self) -> f64 {
        let total = self.hits + self.misses;
        if total == 0 {
            0.0
        } else {
            self.hits as f64 / total as f64
        }
    }
}

/// Shared least-recently-used basis store.
#[derive(Debug)]
pub struct BasisCache {
    inner: Mutex<(LruCache<u64, Arc<ReducedModel>>, CacheStats)>,
}

impl BasisCache {
    pub fn new(capacity: usize) -> Self {
        let cap = NonZeroUsize::new(capacity.max(1)).unwrap();
        Self {
            inner: Mutex::new((LruCache::new(cap), CacheStats::default())),
        }
    }

    /// Hit iff the fingerprint is stored and, when given, `sigma0` lies in
    /// the stored basis span.
    pub fn lookup(&self, fp: u64, sigma0: Option<&[f64]>) -> Option<Arc<ReducedModel>> {
        let mut g = self.inner.lock().expect("cache lock");
        let (lru, stats) = &mut *g;
        let found = lru.get(&fp).filter(|m| sigma0.is_none_or(|s| m.spans(s))).cloned();
        if found.is_some() {
            stats.hits += 1;
        } else {
            stats.misses += 1;
        }
        found
    }

    /// Presence check without touching recency or counters.
    pub fn contains(&self, fp: u64) -> bool {
        self.inner.lock().expect("cache lock").0.contains(&fp)
    }

    pub fn store(&self, model: Arc<ReducedModel>) {
        let mut g = self.inner.lock().expect("cache lock");
        g.0.put(model.fingerprint, model);
    }

    pub fn stats(&self) -> CacheStats {
        let g = self.inner.lock().expect("cache lock");
        CacheStats {
            entries: g.0.len(),
            ..g.1
        }
    }
}
