//! Synthetic surface-pressure domains with closed-form potential-flow
//! targets, used as exact oracles for training and evaluation protocols.
//!
//! * `cylinder` — unit-radius circular cylinder of finite span in cross-flow;
//!   Cp(theta) = 1 - 4 sin^2(theta). The single flow condition U does not
//!   enter Cp unless an explicit warp coefficient is set.
//! * `sphere` — unit sphere; Cp(theta) = 1 - (9/4) sin^2(theta) with theta
//!   measured from a stagnation axis rotated by the second condition alpha.

use crate::error::Result;
use crate::geometry::PointSet;
use crate::rng::Rng;

use super::{Condition, DomainSpec, Sample};

pub const CYLINDER_NAME: &str = "cylinder";
pub const SPHERE_NAME: &str = "sphere";

pub fn cylinder_domain() -> DomainSpec {
    DomainSpec::new(
        1,
        CYLINDER_NAME,
        vec![Condition {
            name: "U".into(),
            unit: "m/s".into(),
        }],
    )
}

pub fn sphere_domain() -> DomainSpec {
    DomainSpec::new(
        2,
        SPHERE_NAME,
        vec![
            Condition {
                name: "U".into(),
                unit: "m/s".into(),
            },
            Condition {
                name: "alpha".into(),
                unit: "rad".into(),
            },
        ],
    )
}

/// Potential-flow pressure coefficient on a circular cylinder.
pub fn cylinder_cp(theta: f64) -> f64 {
    1.0 - 4.0 * theta.sin().powi(2)
}

/// Potential-flow pressure coefficient on a sphere, from the cosine of the
/// angle to the stagnation axis.
pub fn sphere_cp(cos_theta: f64) -> f64 {
    1.0 - 2.25 * (1.0 - cos_theta * cos_theta)
}

/// Generation knobs beyond the basic (n_points, noise, seed) triple.
#[derive(Debug, Clone, Copy)]
pub struct CylinderOptions {
    pub n_points: usize,
    pub noise_std: f64,
    pub seed: u64,
    /// Optional condition sensitivity: Cp = 1 - (4 + warp*(U - 30)) sin^2.
    pub warp: f64,
}

/// Cylinder sample: points uniform in angle and height over a span of 2,
/// flow vector `[U]` drawn from `[10, 50)` m/s. Domain index defaults to 0;
/// re-tag with [`Sample::with_domain`] for multi-domain registries.
pub fn gen_cylinder(n_points: usize, noise_std: f64, seed: u64) -> Result<Sample> {
    gen_cylinder_with(CylinderOptions {
        n_points,
        noise_std,
        seed,
        warp: 0.0,
    })
}

pub fn gen_cylinder_with(opts: CylinderOptions) -> Result<Sample> {
    let mut rng = Rng::new(opts.seed).derive(0xC11);
    let u = rng.uniform_in(10.0, 50.0);
    let mut coords = Vec::with_capacity(opts.n_points * 3);
    let mut target = Vec::with_capacity(opts.n_points);
    let coef = 4.0 + opts.warp * (u - 30.0);
    for _ in 0..opts.n_points {
        let theta = rng.uniform_in(0.0, std::f64::consts::TAU);
        let z = rng.uniform_in(0.0, 2.0);
        coords.push(theta.cos());
        coords.push(theta.sin());
        coords.push(z);
        let mut cp = 1.0 - coef * theta.sin().powi(2);
        if opts.noise_std > 0.0 {
            cp += opts.noise_std * rng.normal();
        }
        target.push(cp);
    }
    Sample::new(
        PointSet::new(coords)?,
        0,
        vec![u],
        target,
        format!("cylinder-{:08x}", opts.seed),
    )
}

/// Sphere sample: points area-uniform on the unit sphere, flow vector
/// `[U, alpha]` with U in `[10, 50)` m/s and alpha in `[-1.2, 1.2]` rad rotating
/// the stagnation axis in the x-y plane.
pub fn gen_sphere(n_points: usize, noise_std: f64, seed: u64) -> Result<Sample> {
    let mut rng = Rng::new(seed).derive(0x59E);
    let u = rng.uniform_in(10.0, 50.0);
    let alpha = rng.uniform_in(-1.2, 1.2);
    gen_sphere_at(n_points, noise_std, u, alpha, &mut rng, seed)
}

/// Sphere sample with explicit flow conditions, for symmetry checks.
pub fn gen_sphere_with_conditions(
    n_points: usize,
    noise_std: f64,
    u: f64,
    alpha: f64,
    seed: u64,
) -> Result<Sample> {
    let mut rng = Rng::new(seed).derive(0x59E);
    let _ = (rng.uniform(), rng.uniform()); // keep the point stream aligned with gen_sphere
    gen_sphere_at(n_points, noise_std, u, alpha, &mut rng, seed)
}

fn gen_sphere_at(
    n_points: usize,
    noise_std: f64,
    u: f64,
    alpha: f64,
    rng: &mut Rng,
    seed: u64,
) -> Result<Sample> {
    let axis = [alpha.cos(), alpha.sin(), 0.0];
    let mut coords = Vec::with_capacity(n_points * 3);
    let mut target = Vec::with_capacity(n_points);
    for _ in 0..n_points {
        let z = rng.uniform_in(-1.0, 1.0);
        let phi = rng.uniform_in(0.0, std::f64::consts::TAU);
        let r = (1.0 - z * z).sqrt();
        let p = [r * phi.cos(), r * phi.sin(), z];
        coords.extend_from_slice(&p);
        let cos_theta = p[0] * axis[0] + p[1] * axis[1] + p[2] * axis[2];
        let mut cp = sphere_cp(cos_theta);
        if noise_std > 0.0 {
            cp += noise_std * rng.normal();
        }
        target.push(cp);
    }
    Sample::new(
        PointSet::new(coords)?,
        0,
        vec![u, alpha],
        target,
        format!("sphere-{seed:08x}"),
    )
}
