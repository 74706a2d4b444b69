//! Diamond lattice around the NV defect and the sampled ¹³C bath.
//!
//! The NV frame has z along the crystal [111] axis, pointing from the
//! vacancy (at the origin) to the nitrogen. Positions are in nm.

use std::collections::HashMap;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::constants::{
    dipolar_prefactor_khz, DIAMOND_LATTICE_CONSTANT_ANGSTROM, GAMMA_C13_KHZ_PER_G,
    GAMMA_E_MHZ_PER_G, NATURAL_ABUNDANCE,
};
use crate::error::{NvError, Result};

pub type Vec3 = Vector3<f64>;

/// Geometry and sampling parameters for one bath realization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LatticeConfig {
    pub lattice_constant_angstrom: f64,
    pub cutoff_radius_nm: f64,
    pub exclusion_radius_angstrom: f64,
    /// Largest nuclear separation for which a pair coupling is retained.
    pub pair_cutoff_nm: f64,
    pub abundance: f64,
    pub gamma_n_khz_per_g: f64,
    pub gamma_e_mhz_per_g: f64,
    pub seed: u64,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self {
            lattice_constant_angstrom: DIAMOND_LATTICE_CONSTANT_ANGSTROM,
            cutoff_radius_nm: 4.0,
            exclusion_radius_angstrom: 1.55,
            pair_cutoff_nm: 1.0,
            abundance: NATURAL_ABUNDANCE,
            gamma_n_khz_per_g: GAMMA_C13_KHZ_PER_G,
            gamma_e_mhz_per_g: GAMMA_E_MHZ_PER_G,
            seed: 0,
        }
    }
}

impl LatticeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(NvError::InvalidConfig(msg));
        if !(self.lattice_constant_angstrom.is_finite() && self.lattice_constant_angstrom > 0.0) {
            return bad(format!(
                "lattice constant must be positive, got {}",
                self.lattice_constant_angstrom
            ));
        }
        if !(self.exclusion_radius_angstrom >= 0.0) {
            return bad(format!(
                "exclusion radius must be ≥ 0, got {}",
                self.exclusion_radius_angstrom
            ));
        }
        if !(self.cutoff_radius_nm.is_finite()
            && self.cutoff_radius_nm > self.exclusion_radius_nm())
        {
            return bad(format!(
                "cutoff radius {} nm must exceed exclusion radius {} nm",
                self.cutoff_radius_nm,
                self.exclusion_radius_nm()
            ));
        }
        if !(0.0..=1.0).contains(&self.abundance) {
            return bad(format!(
                "abundance must lie in [0, 1], got {}",
                self.abundance
            ));
        }
        if !(self.pair_cutoff_nm >= 0.0) {
            return bad(format!(
                "pair cutoff must be ≥ 0, got {}",
                self.pair_cutoff_nm
            ));
        }
        if !(self.gamma_n_khz_per_g.is_finite() && self.gamma_n_khz_per_g != 0.0) {
            return bad("nuclear gyromagnetic ratio must be nonzero".into());
        }
        if !self.gamma_e_mhz_per_g.is_finite() {
            return bad("electron gyromagnetic ratio must be finite".into());
        }
        Ok(())
    }

    pub fn exclusion_radius_nm(&self) -> f64 {
        self.exclusion_radius_angstrom * 0.1
    }

    pub fn lattice_constant_nm(&self) -> f64 {
        self.lattice_constant_angstrom * 0.1
    }
}

/// A single ¹³C nucleus: position and the hyperfine vector coupling S_z to I.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NuclearSpin {
    #[serde(rename = "position_nm")]
    pub position: Vec3,
    #[serde(rename = "hyperfine_khz")]
    pub hyperfine: Vec3,
}

/// Retained secular dipolar coupling between spins `i < j`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairCoupling {
    pub i: usize,
    pub j: usize,
    #[serde(rename = "b_khz")]
    pub b: f64,
}

/// One sampled nuclear-spin environment. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BathRealization {
    pub config: LatticeConfig,
    pub seed: u64,
    #[serde(rename = "gamma_n_khz_per_g")]
    pub gamma_n: f64,
    pub spins: Vec<NuclearSpin>,
    pub pair_couplings: Vec<PairCoupling>,
}

impl BathRealization {
    /// A bath assembled directly from spins, with couplings computed for
    /// every pair closer than `config.pair_cutoff_nm`.
    pub fn from_spins(config: LatticeConfig, spins: Vec<NuclearSpin>) -> Result<Self> {
        let pair_couplings =
            pair_couplings_within(&spins, config.pair_cutoff_nm, config.gamma_n_khz_per_g)?;
        Ok(Self {
            seed: config.seed,
            gamma_n: config.gamma_n_khz_per_g,
            config,
            spins,
            pair_couplings,
        })
    }

    pub fn len(&self) -> usize {
        self.spins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spins.is_empty()
    }

    /// Symmetric lookup of a retained coupling; `None` for self-pairs and
    /// pairs beyond the cutoff.
    pub fn coupling(&self, i: usize, j: usize) -> Option<f64> {
        let (lo, hi) = if i < j { (i, j) } else { (j, i) };
        if lo == hi {
            return None;
        }
        self.pair_couplings
            .binary_search_by(|p| (p.i, p.j).cmp(&(lo, hi)))
            .ok()
            .map(|k| self.pair_couplings[k].b)
    }

    /// Copy of this bath with every pair coupling removed.
    pub fn without_pairs(&self) -> Self {
        Self {
            pair_couplings: Vec::new(),
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let bath: Self = serde_json::from_str(text)?;
        bath.config.validate()?;
        for p in &bath.pair_couplings {
            if p.i >= p.j || p.j >= bath.spins.len() {
                return Err(NvError::InvalidConfig(format!(
                    "bad pair index ({}, {})",
                    p.i, p.j
                )));
            }
        }
        Ok(bath)
    }
}

/// Rotation taking cubic-crystal coordinates into the NV frame.
pub fn nv_frame_rotation() -> Matrix3<f64> {
    let z = Vec3::new(1.0, 1.0, 1.0).normalize();
    let x = Vec3::new(1.0, 1.0, -2.0).normalize();
    let y = z.cross(&x);
    Matrix3::from_rows(&[x.transpose(), y.transpose(), z.transpose()])
}

/// Every carbon site of the diamond lattice with
/// `exclusion < |r| ≤ cutoff`, in NV-frame coordinates (nm).
///
/// The vacancy sits at the origin and the nitrogen at a₀(¼, ¼, ¼); neither
/// is returned. The result does not depend on the seed.
pub fn generate_lattice_sites(config: &LatticeConfig) -> Result<Vec<Vec3>> {
    config.validate()?;
    let a = config.lattice_constant_nm();
    let r_max = config.cutoff_radius_nm;
    let r_min = config.exclusion_radius_nm();
    let rot = nv_frame_rotation();

    const BASIS: [[f64; 3]; 8] = [
        [0.0, 0.0, 0.0],
        [0.0, 0.5, 0.5],
        [0.5, 0.0, 0.5],
        [0.5, 0.5, 0.0],
        [0.25, 0.25, 0.25],
        [0.25, 0.75, 0.75],
        [0.75, 0.25, 0.75],
        [0.75, 0.75, 0.25],
    ];
    let nitrogen = Vec3::new(0.25, 0.25, 0.25) * a;
    let n_cells = (r_max / a).ceil() as i64 + 1;

    let mut sites = Vec::new();
    for i in -n_cells..=n_cells {
        for j in -n_cells..=n_cells {
            for k in -n_cells..=n_cells {
                let cell = Vec3::new(i as f64, j as f64, k as f64);
                for b in &BASIS {
                    let r = (cell + Vec3::new(b[0], b[1], b[2])) * a;
                    let d = r.norm();
                    if d <= r_min || d > r_max || (r - nitrogen).norm() < 1e-9 * a {
                        continue;
                    }
                    sites.push(rot * r);
                }
            }
        }
    }
    Ok(sites)
}

/// Occupy each site with probability `config.abundance` and fill in the
/// hyperfine vectors and pair couplings.
pub fn sample_bath(sites: &[Vec3], config: &LatticeConfig) -> Result<BathRealization> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let gamma_e_khz = config.gamma_e_mhz_per_g * 1.0e3;
    let mut spins = Vec::new();
    for &position in sites {
        let u: f64 = rng.random();
        if u < config.abundance {
            let hyperfine = hyperfine_vector_with(position, gamma_e_khz, config.gamma_n_khz_per_g)?;
            spins.push(NuclearSpin {
                position,
                hyperfine,
            });
        }
    }
    BathRealization::from_spins(*config, spins)
}

/// Convenience: lattice generation followed by sampling.
pub fn generate_bath(config: &LatticeConfig) -> Result<BathRealization> {
    let sites = generate_lattice_sites(config)?;
    sample_bath(&sites, config)
}

/// Hyperfine vector (kHz) coupling S_z to the nucleus at `position` (nm),
/// using the default ¹³C and electron gyromagnetic ratios.
pub fn hyperfine_vector(position: Vec3) -> Result<Vec3> {
    hyperfine_vector_with(position, GAMMA_E_MHZ_PER_G * 1.0e3, GAMMA_C13_KHZ_PER_G)
}

/// Point-dipole z-row A = d(r)·(ẑ − 3(ẑ·r̂)r̂), with d(r) = (μ₀/4π)hγ_eγ_n/r³.
/// Both secular (A_z) and pseudo-secular (A_x, A_y) parts are kept.
pub fn hyperfine_vector_with(
    position: Vec3,
    gamma_e_khz_per_g: f64,
    gamma_n_khz_per_g: f64,
) -> Result<Vec3> {
    let r = position.norm();
    if !(r > 0.0) || !r.is_finite() {
        return Err(NvError::Domain(format!("hyperfine undefined at |r| = {r}")));
    }
    let n = position / r;
    let d = dipolar_prefactor_khz(gamma_e_khz_per_g, gamma_n_khz_per_g, r);
    Ok(d * (Vec3::z() - 3.0 * n.z * n))
}

/// Secular homonuclear coupling b = (μ₀/4π)hγ_n²(1 − 3cos²θ)/r³ in kHz,
/// θ measured from the NV axis. The pair term it multiplies is
/// `b·[I_z I_z − ½(I_x I_x + I_y I_y)]`.
pub fn nuclear_dipolar_coupling(pos_i: Vec3, pos_j: Vec3) -> Result<f64> {
    nuclear_dipolar_coupling_with(pos_i, pos_j, GAMMA_C13_KHZ_PER_G)
}

pub fn nuclear_dipolar_coupling_with(
    pos_i: Vec3,
    pos_j: Vec3,
    gamma_n_khz_per_g: f64,
) -> Result<f64> {
    let d = pos_j - pos_i;
    let r = d.norm();
    if !(r > 0.0) || !r.is_finite() {
        return Err(NvError::Domain("coincident nuclear positions".into()));
    }
    let cos = d.z / r;
    Ok(dipolar_prefactor_khz(gamma_n_khz_per_g, gamma_n_khz_per_g, r) * (1.0 - 3.0 * cos * cos))
}

/// All pairs closer than `cutoff_nm`, sorted by `(i, j)` with `i < j`.
fn pair_couplings_within(
    spins: &[NuclearSpin],
    cutoff_nm: f64,
    gamma_n: f64,
) -> Result<Vec<PairCoupling>> {
    let mut out = Vec::new();
    if cutoff_nm <= 0.0 || spins.len() < 2 {
        return Ok(out);
    }
    // Bucket into cubes of side `cutoff_nm`; only neighbouring cubes can hold partners.
    let key = |p: &Vec3| {
        (
            (p.x / cutoff_nm).floor() as i64,
            (p.y / cutoff_nm).floor() as i64,
            (p.z / cutoff_nm).floor() as i64,
        )
    };
    let mut cells: HashMap<(i64, i64, i64), Vec<usize>> = HashMap::new();
    for (idx, s) in spins.iter().enumerate() {
        cells.entry(key(&s.position)).or_default().push(idx);
    }
    for (i, si) in spins.iter().enumerate() {
        let (cx, cy, cz) = key(&si.position);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    let Some(members) = cells.get(&(cx + dx, cy + dy, cz + dz)) else {
                        continue;
                    };
                    for &j in members {
                        if j <= i {
                            continue;
                        }
                        if (spins[j].position - si.position).norm() <= cutoff_nm {
                            let b = nuclear_dipolar_coupling_with(
                                si.position,
                                spins[j].position,
                                gamma_n,
                            )?;
                            out.push(PairCoupling { i, j, b });
                        }
                    }
                }
            }
        }
    }
    out.sort_by_key(|p| (p.i, p.j));
    Ok(out)
}
