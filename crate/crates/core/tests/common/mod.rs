//! Independent reference implementations used only by tests. Nothing here
//! calls into the library's evolution code.

#![allow(dead_code)]

use nalgebra::{Complex, DMatrix, Matrix3, Vector3};

pub type C = Complex<f64>;
pub type M = DMatrix<C>;

const GAMMA_N: f64 = 1.0705; // kHz/G
const GAMMA_E: f64 = 2802.5; // kHz/G
const H_PLANCK: f64 = 6.626_070_15e-34;

fn c(re: f64) -> C {
    C::new(re, 0.0)
}

pub fn pauli() -> [M; 3] {
    let (o, l, i) = (c(0.0), c(1.0), C::new(0.0, 1.0));
    [
        M::from_row_slice(2, 2, &[o, l, l, o]),
        M::from_row_slice(2, 2, &[o, -i, i, o]),
        M::from_row_slice(2, 2, &[l, o, o, -l]),
    ]
}

/// I_axis on spin `k` of `n`, built by explicit Kronecker products.
pub fn spin_op(axis: usize, k: usize, n: usize) -> M {
    let s = pauli()[axis].map(|z| z * 0.5);
    let mut out = M::identity(1, 1);
    for site in 0..n {
        let f = if site == k {
            s.clone()
        } else {
            M::identity(2, 2)
        };
        out = out.kronecker(&f);
    }
    out
}

fn one_norm(a: &M) -> f64 {
    (0..a.ncols())
        .map(|j| a.column(j).iter().map(|z| z.norm()).sum::<f64>())
        .fold(0.0, f64::max)
}

/// exp(a) by scaling and squaring around a long Taylor series.
pub fn expm(a: &M) -> M {
    let norm = one_norm(a);
    let s = if norm > 0.5 {
        (norm / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a.map(|z| z / 2f64.powi(s));
    let n = a.nrows();
    let mut term = M::identity(n, n);
    let mut sum = M::identity(n, n);
    for k in 1..=30 {
        term = &term * &scaled / c(k as f64);
        sum += &term;
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    sum
}

/// exp(−2πi·H·t) with H in kHz and t in ms.
pub fn propagator(h: &M, t: f64) -> M {
    expm(&h.map(|z| z * C::new(0.0, -std::f64::consts::TAU * t)))
}

/// Nuclear Hamiltonian with Zeeman fields (G) and secular pair couplings (kHz).
pub fn nuclear_hamiltonian(fields: &[Vector3<f64>], couplings: &[(usize, usize, f64)]) -> M {
    let n = fields.len();
    let d = 1 << n;
    let mut h = M::zeros(d, d);
    for (k, f) in fields.iter().enumerate() {
        for axis in 0..3 {
            h -= spin_op(axis, k, n).map(|z| z * (GAMMA_N * f[axis]));
        }
    }
    for &(i, j, b) in couplings {
        let zz = spin_op(2, i, n) * spin_op(2, j, n);
        let xx = spin_op(0, i, n) * spin_op(0, j, n);
        let yy = spin_op(1, i, n) * spin_op(1, j, n);
        h += (zz - (xx + yy).map(|z| z * 0.5)).map(|z| z * b);
    }
    h
}

/// Hahn echo on the full electron ⊗ nuclei register.
///
/// The electron two-level system holds m = 0 and m = 1. The nuclei see
/// B in m = 0 and B − A/γ_n in m = 1. The register starts in
/// |+⟩⟨+| ⊗ 1/d, evolves for `t`, takes an ideal X pulse, evolves for `t`
/// again, and the coherence is Re 2·Tr ⟨0|ρ|1⟩.
pub fn exact_echo(
    field: Vector3<f64>,
    hyperfines: &[Vector3<f64>],
    couplings: &[(usize, usize, f64)],
    t: f64,
) -> f64 {
    let n = hyperfines.len();
    let d = 1 << n;
    let f0: Vec<_> = hyperfines.iter().map(|_| field).collect();
    let f1: Vec<_> = hyperfines.iter().map(|a| field - a / GAMMA_N).collect();
    let h0 = nuclear_hamiltonian(&f0, couplings);
    let h1 = nuclear_hamiltonian(&f1, couplings);

    let p0 = M::from_row_slice(2, 2, &[c(1.0), c(0.0), c(0.0), c(0.0)]);
    let p1 = M::from_row_slice(2, 2, &[c(0.0), c(0.0), c(0.0), c(1.0)]);
    let h = p0.kronecker(&h0) + p1.kronecker(&h1);
    let u = propagator(&h, t);
    let x = pauli()[0].kronecker(&M::identity(d, d));
    let echo = &u * &x * &u;

    let plus = M::from_element(2, 2, c(0.5));
    let rho0 = plus.kronecker(&M::identity(d, d).map(|z| z / d as f64));
    let rho = &echo * rho0 * echo.adjoint();
    let mut off = c(0.0);
    for k in 0..d {
        off += rho[(k, d + k)];
    }
    2.0 * off.re
}

/// Full point-dipole tensor (kHz) between the electron at the origin and a
/// ¹³C nucleus at `r` (nm): d(r)·(1 − 3 r̂ r̂ᵀ).
pub fn dipole_tensor(r: Vector3<f64>) -> Matrix3<f64> {
    let mu0_4pi = 1e-7;
    let hz_per_t = |g_khz_per_g: f64| g_khz_per_g * 1e3 * 1e4;
    let rm = r.norm() * 1e-9;
    let d_hz = mu0_4pi * H_PLANCK * hz_per_t(GAMMA_E) * hz_per_t(GAMMA_N) / rm.powi(3);
    let n = r / r.norm();
    (Matrix3::identity() - 3.0 * n * n.transpose()) * (d_hz * 1e-3)
}

/// Secular nuclear-nuclear coupling (kHz) evaluated constant by constant.
pub fn pair_coupling(ri: Vector3<f64>, rj: Vector3<f64>) -> f64 {
    let dr = rj - ri;
    let rm = dr.norm() * 1e-9;
    let g = GAMMA_N * 1e7; // Hz/T
    let cos = dr.z / dr.norm();
    1e-7 * H_PLANCK * g * g / rm.powi(3) * (1.0 - 3.0 * cos * cos) * 1e-3
}

/// Real roots of x³ + a x² + b x + c (three real roots assumed), ascending,
/// by the trigonometric method followed by Newton polishing.
pub fn real_cubic_roots(a: f64, b: f64, cc: f64) -> [f64; 3] {
    let p = b - a * a / 3.0;
    let q = 2.0 * a * a * a / 27.0 - a * b / 3.0 + cc;
    let mut roots = if p.abs() < 1e-300 {
        let r = (-q).cbrt() - a / 3.0;
        [r, r, r]
    } else {
        let m = 2.0 * (-p / 3.0).sqrt();
        let arg = (3.0 * q / (p * m)).clamp(-1.0, 1.0);
        let theta = arg.acos() / 3.0;
        let mut r = [0.0; 3];
        for (k, v) in r.iter_mut().enumerate() {
            *v = m * (theta - std::f64::consts::TAU * k as f64 / 3.0).cos() - a / 3.0;
        }
        r
    };
    for r in roots.iter_mut() {
        for _ in 0..4 {
            let f = ((*r + a) * *r + b) * *r + cc;
            let df = (3.0 * *r + 2.0 * a) * *r + b;
            if df.abs() > 1e-300 {
                *r -= f / df;
            }
        }
    }
    roots.sort_by(|x, y| x.partial_cmp(y).unwrap());
    roots
}

/// Eigenvalues (GHz) of Δ S_z² − γ_e B·S from its characteristic polynomial
/// E³ − 2ΔE² + (Δ² − γ²B²)E + γ²B⊥²Δ = 0.
pub fn zeeman_levels_by_cubic(b: Vector3<f64>, gamma_e_ghz: f64, delta: f64) -> [f64; 3] {
    let g2b2 = gamma_e_ghz * gamma_e_ghz * b.norm_squared();
    let g2bperp2 = gamma_e_ghz * gamma_e_ghz * (b.x * b.x + b.y * b.y);
    real_cubic_roots(-2.0 * delta, delta * delta - g2b2, g2bperp2 * delta)
}
