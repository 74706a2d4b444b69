//! Spin-½ operators and Hahn-echo overlaps for small conditioned
//! Hamiltonians.
//!
//! Hamiltonians are in kHz and times in ms, so a propagator is
//! `exp(−2πi·H·t)`. Each Hermitian matrix is diagonalised once; the echo
//! overlap at any time then needs only phases.

use nalgebra::{Complex, DMatrix, SymmetricEigen};

use crate::bath::Vec3;

pub type C64 = Complex<f64>;
pub type CMatrix = DMatrix<C64>;

const TAU: f64 = std::f64::consts::TAU;

/// Pauli-based spin-½ operators (I = σ/2).
pub fn spin_half() -> [CMatrix; 3] {
    let z = C64::new(0.0, 0.0);
    let h = C64::new(0.5, 0.0);
    let ih = C64::new(0.0, 0.5);
    [
        CMatrix::from_row_slice(2, 2, &[z, h, h, z]),
        CMatrix::from_row_slice(2, 2, &[z, -ih, ih, z]),
        CMatrix::from_row_slice(2, 2, &[h, z, z, -h]),
    ]
}

/// `op` acting on spin `k` of an `n`-spin register (spin 0 is the most
/// significant factor).
pub fn embed(op: &CMatrix, k: usize, n: usize) -> CMatrix {
    let id = CMatrix::identity(2, 2);
    let mut out = CMatrix::identity(1, 1);
    for site in 0..n {
        out = out.kronecker(if site == k { op } else { &id });
    }
    out
}

/// Conditioned nuclear Hamiltonian (kHz) for `fields.len()` spins:
/// `Σ −γ_n h_k·I_k + Σ b_kl [I_z I_z − ½(I_x I_x + I_y I_y)]`.
pub fn bath_hamiltonian(
    fields: &[Vec3],
    gamma_n: f64,
    couplings: &[(usize, usize, f64)],
) -> CMatrix {
    let n = fields.len();
    let dim = 1usize << n;
    let s = spin_half();
    let ops: Vec<[CMatrix; 3]> = (0..n)
        .map(|k| [embed(&s[0], k, n), embed(&s[1], k, n), embed(&s[2], k, n)])
        .collect();
    let mut h = CMatrix::zeros(dim, dim);
    for (k, field) in fields.iter().enumerate() {
        for axis in 0..3 {
            h -= &ops[k][axis] * C64::new(gamma_n * field[axis], 0.0);
        }
    }
    for &(k, l, b) in couplings {
        let zz = &ops[k][2] * &ops[l][2];
        let xx = &ops[k][0] * &ops[l][0];
        let yy = &ops[k][1] * &ops[l][1];
        h += (zz - (xx + yy) * C64::new(0.5, 0.0)) * C64::new(b, 0.0);
    }
    h
}

/// Precomputed Hahn-echo overlap for a pair of conditioned Hamiltonians.
///
/// With each arm lasting `t`, the branch propagators are
/// `W₀ = U₁U₀` and `W₁ = U₀U₁`, and the overlap is `Re Tr[W₁†W₀]/d`.
/// Writing `U_m = V_m E_m V_m†` and `M = V₁†V₀` this reduces to
/// `Σ_ac |A_ac|² cos(θ₁ₐ − θ₁꜀)/d` with `A = M E₀* M†`.
#[derive(Debug, Clone)]
pub struct EchoKernel {
    dim: usize,
    eig0: Vec<f64>,
    eig1: Vec<f64>,
    // products[(a * dim + c) * dim + b] = M_ab · conj(M_cb)
    products: Vec<C64>,
}

impl EchoKernel {
    pub fn new(h0: &CMatrix, h1: &CMatrix) -> Self {
        let dim = h0.nrows();
        assert_eq!(h0.shape(), (dim, dim));
        assert_eq!(h1.shape(), (dim, dim));
        let e0 = SymmetricEigen::new(h0.clone());
        let e1 = SymmetricEigen::new(h1.clone());
        let m = e1.eigenvectors.adjoint() * &e0.eigenvectors;
        let mut products = Vec::with_capacity(dim * dim * dim);
        for a in 0..dim {
            for c in 0..dim {
                for b in 0..dim {
                    products.push(m[(a, b)] * m[(c, b)].conj());
                }
            }
        }
        Self {
            dim,
            eig0: e0.eigenvalues.iter().copied().collect(),
            eig1: e1.eigenvalues.iter().copied().collect(),
            products,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Echo overlap after two arms of duration `t` (ms).
    pub fn overlap(&self, t: f64) -> f64 {
        let d = self.dim;
        let mut phase0 = [C64::new(0.0, 0.0); 16];
        let mut cs1 = [(0.0, 0.0); 16];
        let (phase0, cs1) = if d <= 16 {
            (&mut phase0[..d], &mut cs1[..d])
        } else {
            return self.overlap_large(t);
        };
        for b in 0..d {
            let (s, c) = (TAU * self.eig0[b] * t).sin_cos();
            phase0[b] = C64::new(c, s);
            let (s, c) = (TAU * self.eig1[b] * t).sin_cos();
            cs1[b] = (c, s);
        }
        let mut sum = 0.0;
        for a in 0..d {
            for c in 0..d {
                let row = &self.products[(a * d + c) * d..(a * d + c + 1) * d];
                let mut acc = C64::new(0.0, 0.0);
                for b in 0..d {
                    acc += row[b] * phase0[b];
                }
                let w = cs1[a].0 * cs1[c].0 + cs1[a].1 * cs1[c].1;
                sum += acc.norm_sqr() * w;
            }
        }
        sum / d as f64
    }

    fn overlap_large(&self, t: f64) -> f64 {
        let d = self.dim;
        let phase0: Vec<C64> = self
            .eig0
            .iter()
            .map(|e| C64::from_polar(1.0, TAU * e * t))
            .collect();
        let cs1: Vec<(f64, f64)> = self
            .eig1
            .iter()
            .map(|e| (TAU * e * t).sin_cos())
            .map(|(s, c)| (c, s))
            .collect();
        let mut sum = 0.0;
        for a in 0..d {
            for c in 0..d {
                let row = &self.products[(a * d + c) * d..(a * d + c + 1) * d];
                let acc: C64 = row.iter().zip(&phase0).map(|(p, e)| p * e).sum();
                sum += acc.norm_sqr() * (cs1[a].0 * cs1[c].0 + cs1[a].1 * cs1[c].1);
            }
        }
        sum / d as f64
    }
}
