//! Uniform planar array geometry, propagation distances, and array
//! response vectors (ARVs).
//!
//! Arrays live on the x–z plane with their center element at the origin.
//! The element grid is indexed by `n` along x and `m` along z, both running
//! over symmetric ranges. A point source at spherical coordinate
//! (azimuth θ, elevation φ, range r) sits at Cartesian
//! (r·cosθ·sinφ, r·sinθ·sinφ, r·cosφ).
//!
//! The near-field ARV uses the quadratic (second-order Taylor) expansion of
//! the exact element-to-source distance; the expansion separates into an
//! n-only and an m-only term, so the full ARV factorizes as a Kronecker
//! product of per-axis vectors. The far-field ARV keeps only the linear
//! phase terms and has no range dependence.

use nalgebra::DVector;
use num_complex::Complex64;
use std::f64::consts::TAU;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("element index (m={m}, n={n}) outside a {nz}x{nx} array")]
    IndexOutOfRange { m: i64, n: i64, nz: usize, nx: usize },
    #[error("range {range} m too small for the quadratic phase expansion (requires > {min} m)")]
    RangeBelowTaylorLimit { range: f64, min: f64 },
    #[error("invalid array config: {0}")]
    InvalidConfig(String),
    #[error("invalid spherical coordinate: {0}")]
    InvalidCoord(String),
}

/// Uniform planar array: (2·half_count_x+1) columns by (2·half_count_z+1)
/// rows of elements with fixed spacings, shared by the base station and the
/// reflecting surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpaConfig {
    pub half_count_x: u32,
    pub half_count_z: u32,
    pub spacing_x: f64,
    pub spacing_z: f64,
    pub wavelength: f64,
}

impl UpaConfig {
    pub fn new(
        half_count_x: u32,
        half_count_z: u32,
        spacing_x: f64,
        spacing_z: f64,
        wavelength: f64,
    ) -> Result<Self, GeometryError> {
        if !(spacing_x > 0.0 && spacing_z > 0.0 && wavelength > 0.0) {
            return Err(GeometryError::InvalidConfig(format!(
                "spacings and wavelength must be positive (got dx={spacing_x}, dz={spacing_z}, lambda={wavelength})"
            )));
        }
        Ok(Self {
            half_count_x,
            half_count_z,
            spacing_x,
            spacing_z,
            wavelength,
        })
    }

    /// Square half-wavelength-spaced array with `2*half+1` elements per side.
    pub fn square_half_wavelength(half: u32, wavelength: f64) -> Self {
        Self::new(half, half, wavelength / 2.0, wavelength / 2.0, wavelength).unwrap()
    }

    pub fn count_x(&self) -> usize {
        2 * self.half_count_x as usize + 1
    }

    pub fn count_z(&self) -> usize {
        2 * self.half_count_z as usize + 1
    }

    pub fn len(&self) -> usize {
        self.count_x() * self.count_z()
    }

    pub fn is_empty(&self) -> bool {
        false // at least the center element exists
    }

    /// Physical side lengths (element count times spacing, per axis).
    pub fn side_lengths(&self) -> (f64, f64) {
        (
            self.count_x() as f64 * self.spacing_x,
            self.count_z() as f64 * self.spacing_z,
        )
    }

    /// Aperture diagonal used for near-field boundary and Taylor-validity
    /// checks.
    pub fn aperture(&self) -> f64 {
        let (lx, lz) = self.side_lengths();
        lx.hypot(lz)
    }

    /// Minimum source range accepted by the quadratic expansion.
    pub fn taylor_min_range(&self) -> f64 {
        10.0 * self.aperture()
    }

    fn check_index(&self, m: i64, n: i64) -> Result<(), GeometryError> {
        let hx = self.half_count_x as i64;
        let hz = self.half_count_z as i64;
        if n < -hx || n > hx || m < -hz || m > hz {
            return Err(GeometryError::IndexOutOfRange {
                m,
                n,
                nz: self.count_z(),
                nx: self.count_x(),
            });
        }
        Ok(())
    }
}

/// Source location in the array's spherical frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SphericalCoord {
    pub azimuth: f64,
    pub elevation: f64,
    pub range: f64,
}

impl SphericalCoord {
    pub fn new(azimuth: f64, elevation: f64, range: f64) -> Result<Self, GeometryError> {
        if !(range > 0.0 && range.is_finite()) {
            return Err(GeometryError::InvalidCoord(format!(
                "range must be positive and finite, got {range}"
            )));
        }
        if !(0.0..TAU).contains(&azimuth) {
            return Err(GeometryError::InvalidCoord(format!(
                "azimuth must lie in [0, 2pi), got {azimuth}"
            )));
        }
        if !(elevation > 0.0 && elevation < std::f64::consts::PI) {
            return Err(GeometryError::InvalidCoord(format!(
                "elevation must lie in (0, pi), got {elevation}"
            )));
        }
        Ok(Self {
            azimuth,
            elevation,
            range,
        })
    }

    /// Cartesian position in the array frame.
    pub fn cartesian(&self) -> [f64; 3] {
        let (st, ct) = self.azimuth.sin_cos();
        let (sp, cp) = self.elevation.sin_cos();
        [
            self.range * ct * sp,
            self.range * st * sp,
            self.range * cp,
        ]
    }
}

/// Flat per-element phase response, stored in x-major Kronecker order:
/// `values = kron(a_x, a_z)`, i.e. index `(n + half_x) * count_z + (m + half_z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayResponse {
    pub values: DVector<Complex64>,
    count_x: usize,
    count_z: usize,
}

impl ArrayResponse {
    fn from_factors(ax: &[Complex64], az: &[Complex64]) -> Self {
        let mut values = DVector::zeros(ax.len() * az.len());
        let mut i = 0;
        for &vx in ax {
            for &vz in az {
                values[i] = vx * vz;
                i += 1;
            }
        }
        Self {
            values,
            count_x: ax.len(),
            count_z: az.len(),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn count_x(&self) -> usize {
        self.count_x
    }

    pub fn count_z(&self) -> usize {
        self.count_z
    }

    /// Entry for element (m, n) with signed grid indices.
    pub fn entry(&self, m: i64, n: i64) -> Complex64 {
        let hx = (self.count_x as i64 - 1) / 2;
        let hz = (self.count_z as i64 - 1) / 2;
        let ix = (n + hx) as usize;
        let iz = (m + hz) as usize;
        self.values[ix * self.count_z + iz]
    }

    /// Recover the per-axis factors through the center row and column of the
    /// reshaped response. For responses built from separable phases the
    /// center entry is 1, so `kron` of the recovered factors reproduces the
    /// response exactly.
    pub fn axis_factors(&self) -> (Vec<Complex64>, Vec<Complex64>) {
        let cx = (self.count_x - 1) / 2;
        let cz = (self.count_z - 1) / 2;
        let ax: Vec<Complex64> = (0..self.count_x)
            .map(|ix| self.values[ix * self.count_z + cz])
            .collect();
        let az: Vec<Complex64> = (0..self.count_z)
            .map(|iz| self.values[cx * self.count_z + iz])
            .collect();
        (ax, az)
    }
}

/// Cartesian position of the (m, n)-th element: (n·dx, 0, m·dz).
pub fn element_position(cfg: &UpaConfig, m: i64, n: i64) -> Result<[f64; 3], GeometryError> {
    cfg.check_index(m, n)?;
    Ok([n as f64 * cfg.spacing_x, 0.0, m as f64 * cfg.spacing_z])
}

/// Exact Euclidean distance from the source to element (m, n).
pub fn exact_distance(
    user: &SphericalCoord,
    cfg: &UpaConfig,
    m: i64,
    n: i64,
) -> Result<f64, GeometryError> {
    let e = element_position(cfg, m, n)?;
    let u = user.cartesian();
    Ok(((u[0] - e[0]).powi(2) + (u[1] - e[1]).powi(2) + (u[2] - e[2]).powi(2)).sqrt())
}

/// The n-dependent quadratic phase-distance term of the expansion.
fn taylor_x(cfg: &UpaConfig, user: &SphericalCoord, n: i64) -> f64 {
    let a = user.azimuth.cos() * user.elevation.sin();
    let nd = n as f64 * cfg.spacing_x;
    -nd * a + nd * nd * (1.0 - a * a) / (2.0 * user.range)
}

/// The m-dependent quadratic phase-distance term of the expansion.
fn taylor_z(cfg: &UpaConfig, user: &SphericalCoord, m: i64) -> f64 {
    let b = user.elevation.cos();
    let md = m as f64 * cfg.spacing_z;
    -md * b + md * md * (1.0 - b * b) / (2.0 * user.range)
}

fn check_taylor_range(cfg: &UpaConfig, user: &SphericalCoord) -> Result<(), GeometryError> {
    let min = cfg.taylor_min_range();
    if user.range <= min {
        return Err(GeometryError::RangeBelowTaylorLimit {
            range: user.range,
            min,
        });
    }
    Ok(())
}

/// The separable excess path lengths (x term, z term) of the second-order
/// expansion; the approximated distance is `range + x + z` and the ARV phase
/// is −2π/λ times their sum.
pub fn taylor_excess(
    user: &SphericalCoord,
    cfg: &UpaConfig,
    m: i64,
    n: i64,
) -> Result<(f64, f64), GeometryError> {
    cfg.check_index(m, n)?;
    check_taylor_range(cfg, user)?;
    Ok((taylor_x(cfg, user, n), taylor_z(cfg, user, m)))
}

/// Second-order Taylor approximation of `exact_distance`: r + h1(n) + h2(m).
/// The two correction terms are separable; the n–m cross term of the exact
/// distance is dropped by construction, which the tests quantify against the
/// exact oracle rather than correct.
pub fn taylor_distance(
    user: &SphericalCoord,
    cfg: &UpaConfig,
    m: i64,
    n: i64,
) -> Result<f64, GeometryError> {
    let (x, z) = taylor_excess(user, cfg, m, n)?;
    Ok(user.range + x + z)
}

/// Near-field ARV: entry (m, n) is exp(−j·2π/λ·(h1(n)+h2(m))), assembled as
/// the Kronecker product of the per-axis factors.
pub fn nf_arv(cfg: &UpaConfig, coord: &SphericalCoord) -> Result<ArrayResponse, GeometryError> {
    check_taylor_range(cfg, coord)?;
    let k = TAU / cfg.wavelength;
    let hx = cfg.half_count_x as i64;
    let hz = cfg.half_count_z as i64;
    let ax: Vec<Complex64> = (-hx..=hx)
        .map(|n| Complex64::from_polar(1.0, -k * taylor_x(cfg, coord, n)))
        .collect();
    let az: Vec<Complex64> = (-hz..=hz)
        .map(|m| Complex64::from_polar(1.0, -k * taylor_z(cfg, coord, m)))
        .collect();
    Ok(ArrayResponse::from_factors(&ax, &az))
}

/// Far-field ARV: linear phases only, no range dependence.
pub fn ff_arv(cfg: &UpaConfig, azimuth: f64, elevation: f64) -> ArrayResponse {
    let k = TAU / cfg.wavelength;
    let a = azimuth.cos() * elevation.sin();
    let b = elevation.cos();
    let hx = cfg.half_count_x as i64;
    let hz = cfg.half_count_z as i64;
    let ax: Vec<Complex64> = (-hx..=hx)
        .map(|n| Complex64::from_polar(1.0, k * n as f64 * cfg.spacing_x * a))
        .collect();
    let az: Vec<Complex64> = (-hz..=hz)
        .map(|m| Complex64::from_polar(1.0, k * m as f64 * cfg.spacing_z * b))
        .collect();
    ArrayResponse::from_factors(&ax, &az)
}

/// Outcome of the near-field boundary test for a reflecting surface placed
/// between a transmitter at `r_ab` and a user at `r_a`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayleighReport {
    /// True when the harmonic-mean range falls inside the Rayleigh distance.
    pub near_field: bool,
    /// r_a · r_ab / (r_a + r_ab).
    pub harmonic_range: f64,
    /// 2·D²/λ with D the aperture diagonal.
    pub rayleigh_distance: f64,
    pub aperture: f64,
}

/// Check whether a link reflected by `cfg_irs` operates in the near field.
pub fn rayleigh_check(cfg_irs: &UpaConfig, r_a: f64, r_ab: f64) -> RayleighReport {
    let aperture = cfg_irs.aperture();
    let rayleigh_distance = 2.0 * aperture * aperture / cfg_irs.wavelength;
    let harmonic_range = r_a * r_ab / (r_a + r_ab);
    RayleighReport {
        near_field: harmonic_range < rayleigh_distance,
        harmonic_range,
        rayleigh_distance,
        aperture,
    }
}
