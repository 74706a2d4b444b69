mod common;

use common::{
    dipole_tensor, exact_echo, nuclear_hamiltonian, pair_coupling, propagator,
    zeeman_levels_by_cubic,
};
use nalgebra::{Matrix3, Vector3};
use nvmag_core::bath::{
    generate_bath, generate_lattice_sites, hyperfine_vector, nuclear_dipolar_coupling,
    nv_frame_rotation,
};
use nvmag_core::decoherence::{echo_coherence_trace, pair_echo_factor, single_spin_echo_factor};
use nvmag_core::magnetometry::{zeeman_levels, NvParams};
use nvmag_core::{BathRealization, EchoSchedule, FieldVector, LatticeConfig, NuclearSpin, Vec3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const GAMMA_N: f64 = 1.0705;

fn v(x: f64, y: f64, z: f64) -> Vector3<f64> {
    Vector3::new(x, y, z)
}

fn bath_of(positions: &[Vec3], pair_cutoff_nm: f64) -> BathRealization {
    let config = LatticeConfig {
        pair_cutoff_nm,
        ..LatticeConfig::default()
    };
    let spins = positions
        .iter()
        .map(|&p| NuclearSpin {
            position: p,
            hyperfine: hyperfine_vector(p).unwrap(),
        })
        .collect();
    BathRealization::from_spins(config, spins).unwrap()
}

#[test]
fn hyperfine_is_z_row_of_dipole_tensor() {
    for r in [
        v(0.5, 0.0, 0.0),
        v(0.0, 0.0, 0.5),
        v(0.31, -0.22, 0.47),
        v(-1.3, 0.8, -0.6),
    ] {
        let a = hyperfine_vector(r).unwrap();
        let row = dipole_tensor(r).row(2).transpose();
        for k in 0..3 {
            let tol = 1e-12 * row.norm();
            assert!(
                (a[k] - row[k]).abs() <= tol,
                "r={r:?} k={k}: {} vs {}",
                a[k],
                row[k]
            );
        }
    }
}

#[test]
fn pair_coupling_matches_constants() {
    let a = 0.3567;
    let bond = Vec3::new(0.25, 0.25, 0.25) * a;
    let rot = nv_frame_rotation();
    // Bond along the NV axis and a bond off the axis.
    for (ri, rj) in [
        (Vec3::zeros(), rot * bond),
        (
            Vec3::new(0.5, 0.1, 0.2),
            Vec3::new(0.5, 0.1, 0.2) + rot * Vec3::new(0.25, -0.25, -0.25) * a,
        ),
    ] {
        let b = nuclear_dipolar_coupling(ri, rj).unwrap();
        let want = pair_coupling(ri, rj);
        assert!((b - want).abs() <= 1e-12 * want.abs(), "{b} vs {want}");
    }
}

#[test]
fn lattice_nearest_neighbours_are_bonds() {
    let sites = generate_lattice_sites(&LatticeConfig {
        cutoff_radius_nm: 0.6,
        ..LatticeConfig::default()
    })
    .unwrap();
    let bond = 0.3567 * 3f64.sqrt() / 4.0;
    let min = sites
        .iter()
        .enumerate()
        .flat_map(|(i, a)| sites[i + 1..].iter().map(move |b| (a - b).norm()))
        .fold(f64::INFINITY, f64::min);
    assert!((min - bond).abs() < 1e-12);
}

#[test]
fn single_spin_factor_matches_unitary_oracle() {
    let cases = [
        (v(0.0, 0.0, 10.0), v(3.1, -1.2, 8.4), 0.3),
        (v(0.0, 0.0, 1.0), v(-0.7, 2.5, 0.2), 0.173),
        (v(1.0, 2.0, 3.0), v(1.0, 2.0, 3.0), 0.5),
        (v(0.0, 0.0, 50.0), v(0.1, 0.0, 49.0), 0.0123),
    ];
    for (h0, h1, t) in cases {
        // A spin whose m = 1 field is h1 has A = γ_n (h0 − h1) when B = h0.
        let a = (h0 - h1) * GAMMA_N;
        let exact = exact_echo(h0, &[a], &[], t);
        let got = single_spin_echo_factor(h0, h1, t, GAMMA_N);
        assert!((got - exact).abs() < 1e-10, "{got} vs {exact}");

        // And the unitary form Re Tr[(U0 U1)† U1 U0]/2 directly.
        let u0 = propagator(&nuclear_hamiltonian(&[h0], &[]), t);
        let u1 = propagator(&nuclear_hamiltonian(&[h1], &[]), t);
        let tr = ((&u0 * &u1).adjoint() * (&u1 * &u0)).trace().re / 2.0;
        assert!((got - tr).abs() < 1e-12, "{got} vs {tr}");
    }
}

#[test]
fn pair_factor_matches_exact_diagonalization() {
    let ri = Vec3::new(0.42, -0.31, 0.55);
    let rj = Vec3::new(0.61, -0.12, 0.38);
    let spins = (
        NuclearSpin {
            position: ri,
            hyperfine: hyperfine_vector(ri).unwrap(),
        },
        NuclearSpin {
            position: rj,
            hyperfine: hyperfine_vector(rj).unwrap(),
        },
    );
    let b = nuclear_dipolar_coupling(ri, rj).unwrap();
    let field = FieldVector::axial(10.0);
    for k in 0..=12 {
        let t = 0.025 * k as f64;
        let got = pair_echo_factor((&spins.0, &spins.1), b, field, t, GAMMA_N).unwrap();
        let exact = exact_echo(
            field.0,
            &[spins.0.hyperfine, spins.1.hyperfine],
            &[(0, 1, b)],
            t,
        );
        assert!((got - exact).abs() < 1e-10, "t={t}: {got} vs {exact}");
    }
}

#[test]
fn two_spin_bath_trace_is_exact() {
    let bath = bath_of(
        &[Vec3::new(0.42, -0.31, 0.55), Vec3::new(0.61, -0.12, 0.38)],
        1.0,
    );
    assert_eq!(bath.pair_couplings.len(), 1);
    let field = FieldVector::new(0.8, -0.3, 10.0);
    let schedule = EchoSchedule::for_field(0.4, field, GAMMA_N, 60.0).unwrap();
    let trace = echo_coherence_trace(&bath, field, &schedule).unwrap();
    let hf: Vec<_> = bath.spins.iter().map(|s| s.hyperfine).collect();
    let couplings = [(0, 1, bath.pair_couplings[0].b)];
    for (t, l) in trace.t_ms.iter().zip(&trace.values) {
        let exact = exact_echo(field.0, &hf, &couplings, *t);
        assert!((l - exact).abs() < 1e-10, "t={t}: {l} vs {exact}");
    }
}

fn max_deviation(
    bath: &BathRealization,
    field: FieldVector,
    schedule: &EchoSchedule,
    stride: usize,
) -> f64 {
    let trace = echo_coherence_trace(bath, field, schedule).unwrap();
    let hf: Vec<_> = bath.spins.iter().map(|s| s.hyperfine).collect();
    let couplings: Vec<_> = bath
        .pair_couplings
        .iter()
        .map(|c| (c.i, c.j, c.b))
        .collect();
    trace
        .t_ms
        .iter()
        .zip(&trace.values)
        .step_by(stride)
        .map(|(t, l)| (l - exact_echo(field.0, &hf, &couplings, *t)).abs())
        .fold(0.0, f64::max)
}

/// Three spins drawn uniformly from natural-abundance baths, compared with
/// full 16-dimensional evolution of every retained coupling.
#[test]
fn three_spin_baths_match_full_evolution() {
    let field = FieldVector::axial(10.0);
    let schedule = EchoSchedule::for_field(0.5, field, GAMMA_N, 50.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst: f64 = 0.0;
    for seed in 0..4 {
        let full = generate_bath(&LatticeConfig {
            seed,
            ..LatticeConfig::default()
        })
        .unwrap();
        for _ in 0..10 {
            let idx = rand::seq::index::sample(&mut rng, full.len(), 3);
            let positions: Vec<_> = idx.iter().map(|k| full.spins[k].position).collect();
            worst = worst.max(max_deviation(
                &bath_of(&positions, 1.0),
                field,
                &schedule,
                5,
            ));
        }
    }
    assert!(worst < 1e-8, "max |CCE-2 − exact| = {worst:e}");
}

/// A coupled pair plus a third spin outside the pair cutoff.
#[test]
fn pair_plus_spectator_is_exact() {
    let field = FieldVector::new(0.4, 0.0, 20.0);
    let schedule = EchoSchedule::for_field(0.3, field, GAMMA_N, 50.0).unwrap();
    let bath = bath_of(
        &[
            Vec3::new(0.42, -0.31, 0.55),
            Vec3::new(0.61, -0.12, 0.38),
            Vec3::new(-1.2, 0.9, -0.4),
        ],
        1.0,
    );
    assert_eq!(bath.pair_couplings.len(), 1);
    let worst = max_deviation(&bath, field, &schedule, 1);
    assert!(worst < 1e-10, "{worst:e}");
}

/// When all three spins couple to one another the pair truncation drops a
/// genuine three-body term; it stays small but is not at rounding level.
#[test]
fn connected_triples_deviate_only_by_three_body_term() {
    let full = generate_bath(&LatticeConfig {
        seed: 11,
        ..LatticeConfig::default()
    })
    .unwrap();
    let field = FieldVector::axial(10.0);
    let schedule = EchoSchedule::for_field(0.5, field, GAMMA_N, 50.0).unwrap();
    let mut worst: f64 = 0.0;
    for p in full.pair_couplings.iter().take(40) {
        let Some(k) = (0..full.len()).find(|&k| {
            k != p.i
                && k != p.j
                && full.coupling(k, p.i).is_some()
                && full.coupling(k, p.j).is_some()
        }) else {
            continue;
        };
        let positions = [
            full.spins[p.i].position,
            full.spins[p.j].position,
            full.spins[k].position,
        ];
        worst = worst.max(max_deviation(
            &bath_of(&positions, 1.0),
            field,
            &schedule,
            7,
        ));
    }
    assert!(worst > 0.0 && worst < 1e-3, "{worst:e}");
}

#[test]
fn zeeman_levels_match_characteristic_polynomial() {
    let params = NvParams::default();
    let g = params.gamma_e_ghz_per_g;
    let d = params.zero_field_splitting_ghz;
    for b in [
        v(10.0, 0.0, 0.0),
        v(0.0, 10.0, 0.0),
        v(3.0, -4.0, 12.0),
        v(60.0, 20.0, -45.0),
        v(0.1, 0.2, 0.2),
        v(0.0, 0.0, 100.0),
    ] {
        let got = zeeman_levels(FieldVector(b), &params);
        let want = zeeman_levels_by_cubic(b, g, d);
        for k in 0..3 {
            assert!(
                (got[k] - want[k]).abs() < 1e-10,
                "B={b:?}: {got:?} vs {want:?}"
            );
        }
    }
}

#[test]
fn axial_levels_closed_form() {
    let params = NvParams::default();
    let g = params.gamma_e_ghz_per_g;
    let d = params.zero_field_splitting_ghz;
    for bz in [0.0, 0.5, 10.0, 100.0, -30.0] {
        let got = zeeman_levels(FieldVector::axial(bz), &params);
        let mut want = [0.0, d - g * bz, d + g * bz];
        want.sort_by(|a, b| a.partial_cmp(b).unwrap());
        for k in 0..3 {
            assert!(
                (got[k] - want[k]).abs() < 1e-10,
                "Bz={bz}: {got:?} vs {want:?}"
            );
        }
    }
}

/// The secular equation in scaled form x³ + 2Δ'x² + (Δ'² − 2B²)x − 2B⊥²Δ' = 0
/// holds with x = −√2 E/γ_e and Δ' = √2 Δ/γ_e.
#[test]
fn scaled_secular_equation_substitution() {
    let params = NvParams::default();
    let g = params.gamma_e_ghz_per_g;
    let dp = 2f64.sqrt() * params.zero_field_splitting_ghz / g;
    for b in [v(10.0, 0.0, 0.0), v(3.0, -4.0, 12.0), v(0.0, 0.0, 25.0)] {
        let b2 = b.norm_squared();
        let bperp2 = b.x * b.x + b.y * b.y;
        for e in zeeman_levels(FieldVector(b), &params) {
            let x = -2f64.sqrt() * e / g;
            let r = x * x * x + 2.0 * dp * x * x + (dp * dp - 2.0 * b2) * x - 2.0 * bperp2 * dp;
            let scale = dp.powi(3);
            assert!(r.abs() < 1e-10 * scale, "B={b:?} E={e}: residual {r:e}");
        }
    }
}

#[test]
fn rotation_is_orthonormal_with_z_along_111() {
    let r = nv_frame_rotation();
    assert!((r * r.transpose() - Matrix3::identity()).norm() < 1e-14);
    let z = r * Vec3::new(1.0, 1.0, 1.0).normalize();
    assert!((z - Vec3::z()).norm() < 1e-14);
}
