//! Closed-form wedge-failure force model for a flat blade cutting soil.
//!
//! The blade pushes a planar soil wedge up a failure surface inclined at
//! `beta` to the soil surface. Equilibrium of the wedge gives the cutting
//! force as a sum of four terms (wedge weight, cohesion, surcharge and
//! blade adhesion), each scaled by a dimensionless coefficient that depends
//! only on the angles of the problem:
//!
//! ```text
//! F = γ d'² w N_γ + c d' w N_c + Q N_Q + c_a' w N_a
//! η = δ' + ρ + φ + β
//! ```
//!
//! `δ'` and `c_a'` are the soil-tool friction angle and adhesion scaled by
//! `tanh(-C1 (i_b · v))` so that the frictional terms flip sign when the
//! blade moves up relative to the wedge.
//!
//! All angles are radians. Every function here is pure.

use serde::{Deserialize, Serialize};
use std::f64::consts::{FRAC_PI_2, PI};
use thiserror::Error;

use crate::optim;

/// Velocity scaling constant of the soil-tool friction/adhesion switch, s/m.
pub const C1: f64 = 20.0;

/// Half-width of the guard band around 0 and π for η, β and ρ, radians.
pub const EPS_SING: f64 = 1e-3;

/// Minimum number of coarse samples used before golden-section refinement.
pub const BETA_GRID_POINTS: usize = 256;

/// Golden-section termination width, radians.
pub const BETA_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Error)]
pub enum FeeError {
    #[error("angle {name} = {value} rad is outside its domain")]
    Domain { name: &'static str, value: f64 },
    #[error("singular wedge geometry: {name} = {value} rad is within the guard band of 0 or π")]
    Singular { name: &'static str, value: f64 },
    #[error("N_γ is singular over the whole interval [{lo}, {hi}]")]
    NoValidBeta { lo: f64, hi: f64 },
}

/// Intrinsic soil material values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoilParams {
    /// Internal friction angle, rad.
    pub phi: f64,
    /// Cohesion, Pa.
    pub c: f64,
    /// Soil-tool friction angle, rad.
    pub delta: f64,
    /// Soil-tool adhesion, Pa.
    pub c_a: f64,
    /// Moist unit weight, N/m³.
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToolGeometry {
    /// Blade angle measured from the soil surface, rad.
    pub rho: f64,
    /// Surface inclination, rad.
    pub alpha: f64,
    /// Blade width, m.
    pub w: f64,
}

impl ToolGeometry {
    /// Unit vector pointing up along the blade face in the x-z plane.
    ///
    /// Forward (+x) or downward motion gives `i_b · v < 0`, which is the
    /// passive case where the wedge slides up the blade.
    pub fn blade_up(&self) -> [f64; 2] {
        let a = self.rho - self.alpha;
        [-a.cos(), a.sin()]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutState {
    /// Depth of cut, m. Negative when the blade is above the surface.
    pub d: f64,
    /// Surcharge force, N.
    pub q: f64,
    /// Blade velocity (v_x, v_z), m/s.
    pub v: [f64; 2],
    /// Blade up-direction unit vector.
    pub i_b: [f64; 2],
}

/// Full parameter vector of the force model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeeTheta {
    pub soil: SoilParams,
    pub tool: ToolGeometry,
    pub cut: CutState,
    /// Soil failure angle, rad.
    pub beta: f64,
    /// Residual depth of cut, m.
    pub delta_d: f64,
}

impl FeeTheta {
    /// `tanh(-C1 (i_b · v))`, the factor applied to δ and c_a.
    pub fn velocity_factor(&self) -> f64 {
        let dot = self.cut.i_b[0] * self.cut.v[0] + self.cut.i_b[1] * self.cut.v[1];
        (-C1 * dot).tanh()
    }

    pub fn effective_delta(&self) -> f64 {
        self.velocity_factor() * self.soil.delta
    }

    /// Augmented depth `d' = d + Δd`, floored at zero.
    pub fn depth(&self) -> f64 {
        (self.cut.d + self.delta_d).max(0.0)
    }

    pub fn eta(&self) -> f64 {
        self.effective_delta() + self.tool.rho + self.soil.phi + self.beta
    }

    pub fn wedge_angles(&self) -> WedgeAngles {
        WedgeAngles {
            phi: self.soil.phi,
            delta_eff: self.effective_delta(),
            rho: self.tool.rho,
            alpha: self.tool.alpha,
            beta: self.beta,
        }
    }

    pub fn with_beta(mut self, beta: f64) -> Self {
        self.beta = beta;
        self
    }
}

/// The angles that fully determine the four coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WedgeAngles {
    pub phi: f64,
    /// Effective (velocity-scaled) soil-tool friction angle δ'.
    pub delta_eff: f64,
    pub rho: f64,
    pub alpha: f64,
    pub beta: f64,
}

impl WedgeAngles {
    pub fn eta(&self) -> f64 {
        self.delta_eff + self.rho + self.phi + self.beta
    }

    fn check(&self) -> Result<(), FeeError> {
        guard("rho", self.rho)?;
        guard("beta", self.beta)?;
        guard("eta", self.eta())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeeCoefficients {
    pub n_gamma: f64,
    pub n_c: f64,
    pub n_q: f64,
    pub n_a: f64,
    pub eta: f64,
}

/// Force the blade applies to the soil, split into horizontal and vertical parts, N.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ForceXZ {
    pub f_x: f64,
    pub f_z: f64,
}

impl ForceXZ {
    pub fn new(f_x: f64, f_z: f64) -> Self {
        Self { f_x, f_z }
    }

    pub fn norm(&self) -> f64 {
        self.f_x.hypot(self.f_z)
    }
}

/// Distance from `x` to the nearest multiple of π.
fn distance_to_singularity(x: f64) -> f64 {
    let r = x.rem_euclid(PI);
    r.min(PI - r)
}

fn guard(name: &'static str, value: f64) -> Result<(), FeeError> {
    if !value.is_finite() || distance_to_singularity(value) < EPS_SING {
        Err(FeeError::Singular { name, value })
    } else {
        Ok(())
    }
}

/// Mohr-Coulomb shear strength `τ = c + σ_n tan φ`.
pub fn shear_strength(c: f64, phi: f64, sigma_n: f64) -> Result<f64, FeeError> {
    if !(0.0..FRAC_PI_2).contains(&phi) {
        return Err(FeeError::Domain { name: "phi", value: phi });
    }
    Ok(c + sigma_n * phi.tan())
}

/// Velocity-dependent soil-tool friction angle and adhesion `(δ', c_a')`.
pub fn effective_tool_params(delta: f64, c_a: f64, i_b: [f64; 2], v: [f64; 2], c1: f64) -> (f64, f64) {
    let s = (-c1 * (i_b[0] * v[0] + i_b[1] * v[1])).tanh();
    (s * delta, s * c_a)
}

pub fn coefficients(angles: &WedgeAngles) -> Result<FeeCoefficients, FeeError> {
    angles.check()?;
    let WedgeAngles { phi, rho, alpha, beta, .. } = *angles;
    let eta = angles.eta();
    let sin_eta = eta.sin();
    let s = (alpha + phi + beta).sin();
    let cot = |x: f64| x.cos() / unfused(x).sin();
    Ok(FeeCoefficients {
        n_gamma: (cot(rho) + cot(beta)) * s / (2.0 * sin_eta),
        n_c: phi.cos() / (beta.sin() * sin_eta),
        n_q: s / sin_eta,
        n_a: -(rho + phi + beta).cos() / (rho.sin() * sin_eta),
        eta,
    })
}

pub fn fee_coefficients(theta: &FeeTheta) -> Result<FeeCoefficients, FeeError> {
    coefficients(&theta.wedge_angles())
}

/// Keeps the compiler from merging a `sin` and `cos` of the same angle into
/// one `sincos` call, whose last bit can differ from the separate calls the
/// graph layer makes.
#[inline(always)]
fn unfused(x: f64) -> f64 {
    std::hint::black_box(x)
}

/// Unclamped force from given coefficients.
fn raw_force(theta: &FeeTheta, k: &FeeCoefficients) -> f64 {
    let d = theta.depth();
    let w = theta.tool.w;
    let s = &theta.soil;
    let c_a_eff = theta.velocity_factor() * s.c_a;
    s.gamma * d * d * w * k.n_gamma + s.c * d * w * k.n_c + theta.cut.q * k.n_q + c_a_eff * w * k.n_a
}

/// Scalar cutting force, clamped at zero from below.
pub fn fee_force(theta: &FeeTheta) -> Result<f64, FeeError> {
    let k = fee_coefficients(theta)?;
    Ok(raw_force(theta, &k).max(0.0))
}

/// Angle of the force from the +x axis, `90° − ρ − δ' + α`.
pub fn force_direction(theta: &FeeTheta) -> f64 {
    FRAC_PI_2 - theta.tool.rho - theta.effective_delta() + theta.tool.alpha
}

pub fn fee_force_xz(theta: &FeeTheta) -> Result<ForceXZ, FeeError> {
    let f = fee_force(theta)?;
    let psi = force_direction(theta);
    Ok(ForceXZ::new(f * psi.cos(), f * unfused(psi).sin()))
}

/// `N_γ` as a function of β alone with the other angles fixed.
pub fn n_gamma(angles: &WedgeAngles) -> Result<f64, FeeError> {
    coefficients(angles).map(|k| k.n_gamma)
}

/// Exact `∂N_γ/∂β`.
pub fn dngamma_dbeta(theta: &FeeTheta) -> Result<f64, FeeError> {
    dngamma_dbeta_angles(&theta.wedge_angles())
}

pub fn dngamma_dbeta_angles(angles: &WedgeAngles) -> Result<f64, FeeError> {
    angles.check()?;
    let WedgeAngles { phi, rho, alpha, beta, .. } = *angles;
    let eta = angles.eta();
    let a = rho.cos() / rho.sin() + beta.cos() / beta.sin();
    let da = -1.0 / (beta.sin() * beta.sin());
    let s = (alpha + phi + beta).sin();
    let ds = (alpha + phi + beta).cos();
    let e = eta.sin();
    let de = eta.cos();
    Ok((da * s * e + a * ds * e - a * s * de) / (2.0 * e * e))
}

/// β minimizing `N_γ` over `[lo, hi]`.
///
/// A coarse scan of at least [`BETA_GRID_POINTS`] samples brackets the
/// minimum and golden-section search refines it. Near a flat minimum the
/// function values stop resolving β, so the result is then polished by
/// bisecting on the exact derivative. Samples where η has wrapped past π are
/// not part of the wedge solution and are skipped along with singular ones.
/// When the bracketing sample sits on an interval end, that end is returned
/// if it is no worse than the interior candidate.
pub fn solve_beta_star(theta: &FeeTheta, interval: (f64, f64)) -> Result<f64, FeeError> {
    let (lo, hi) = interval;
    if lo > hi || !lo.is_finite() || !hi.is_finite() {
        return Err(FeeError::Domain { name: "beta interval", value: hi - lo });
    }
    let angles = theta.wedge_angles();
    let at = |beta: f64| WedgeAngles { beta, ..angles };
    let ng = |beta: f64| {
        let a = at(beta);
        if a.eta() >= PI {
            return None;
        }
        n_gamma(&a).ok()
    };
    if lo == hi {
        return ng(lo).map(|_| lo).ok_or(FeeError::NoValidBeta { lo, hi });
    }

    let n = BETA_GRID_POINTS;
    let step = (hi - lo) / (n - 1) as f64;
    let grid = |i: usize| if i + 1 == n { hi } else { lo + step * i as f64 };
    let mut best: Option<(usize, f64)> = None;
    for i in 0..n {
        if let Some(v) = ng(grid(i)) {
            if best.is_none_or(|(_, b)| v < b) {
                best = Some((i, v));
            }
        }
    }
    let (i_best, _) = best.ok_or(FeeError::NoValidBeta { lo, hi })?;

    let a = grid(i_best.saturating_sub(1));
    let b = grid((i_best + 1).min(n - 1));
    let objective = |beta: f64| ng(beta).unwrap_or(f64::INFINITY);
    let (x, fx) = optim::golden_section(objective, a, b, BETA_TOL);
    let x = polish_stationary(&at, a, b).unwrap_or(x);
    let mut result = (x, objective(x).min(fx));

    // the golden bracket never evaluates its own ends
    for end in [lo, hi] {
        if (end == a || end == b) && objective(end) <= result.1 {
            result = (end, objective(end));
        }
    }
    Ok(result.0)
}

/// Root of `∂N_γ/∂β` inside `[a, b]` by bisection, if the derivative changes
/// sign from negative to positive across the bracket.
fn polish_stationary(at: &impl Fn(f64) -> WedgeAngles, a: f64, b: f64) -> Option<f64> {
    let slope = |beta: f64| dngamma_dbeta_angles(&at(beta)).ok().filter(|d| d.is_finite());
    let (mut a, mut b) = (a, b);
    if !(slope(a)? < 0.0 && slope(b)? > 0.0) {
        return None;
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        if slope(m)? < 0.0 {
            a = m;
        } else {
            b = m;
        }
    }
    Some(0.5 * (a + b))
}

/// Index into the flattened parameter vector used by [`fee_gradient`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ThetaIndex {
    Phi,
    C,
    Delta,
    CA,
    Gamma,
    Rho,
    Alpha,
    W,
    D,
    Q,
    Vx,
    Vz,
    Beta,
    DeltaD,
}

impl ThetaIndex {
    pub const ALL: [ThetaIndex; 14] = [
        ThetaIndex::Phi,
        ThetaIndex::C,
        ThetaIndex::Delta,
        ThetaIndex::CA,
        ThetaIndex::Gamma,
        ThetaIndex::Rho,
        ThetaIndex::Alpha,
        ThetaIndex::W,
        ThetaIndex::D,
        ThetaIndex::Q,
        ThetaIndex::Vx,
        ThetaIndex::Vz,
        ThetaIndex::Beta,
        ThetaIndex::DeltaD,
    ];

    pub fn get(self, t: &FeeTheta) -> f64 {
        match self {
            ThetaIndex::Phi => t.soil.phi,
            ThetaIndex::C => t.soil.c,
            ThetaIndex::Delta => t.soil.delta,
            ThetaIndex::CA => t.soil.c_a,
            ThetaIndex::Gamma => t.soil.gamma,
            ThetaIndex::Rho => t.tool.rho,
            ThetaIndex::Alpha => t.tool.alpha,
            ThetaIndex::W => t.tool.w,
            ThetaIndex::D => t.cut.d,
            ThetaIndex::Q => t.cut.q,
            ThetaIndex::Vx => t.cut.v[0],
            ThetaIndex::Vz => t.cut.v[1],
            ThetaIndex::Beta => t.beta,
            ThetaIndex::DeltaD => t.delta_d,
        }
    }

    pub fn set(self, t: &mut FeeTheta, value: f64) {
        let slot = match self {
            ThetaIndex::Phi => &mut t.soil.phi,
            ThetaIndex::C => &mut t.soil.c,
            ThetaIndex::Delta => &mut t.soil.delta,
            ThetaIndex::CA => &mut t.soil.c_a,
            ThetaIndex::Gamma => &mut t.soil.gamma,
            ThetaIndex::Rho => &mut t.tool.rho,
            ThetaIndex::Alpha => &mut t.tool.alpha,
            ThetaIndex::W => &mut t.tool.w,
            ThetaIndex::D => &mut t.cut.d,
            ThetaIndex::Q => &mut t.cut.q,
            ThetaIndex::Vx => &mut t.cut.v[0],
            ThetaIndex::Vz => &mut t.cut.v[1],
            ThetaIndex::Beta => &mut t.beta,
            ThetaIndex::DeltaD => &mut t.delta_d,
        };
        *slot = value;
    }
}

/// Jacobian of `(f_x, f_z)` with respect to every [`ThetaIndex`] entry.
///
/// `i_b` is held fixed; it is an input of the model, not a parameter.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeeJacobian {
    pub d_fx: [f64; 14],
    pub d_fz: [f64; 14],
}

impl FeeJacobian {
    pub fn fx(&self, i: ThetaIndex) -> f64 {
        self.d_fx[i as usize]
    }

    pub fn fz(&self, i: ThetaIndex) -> f64 {
        self.d_fz[i as usize]
    }
}

/// Analytic Jacobian of [`fee_force_xz`].
pub fn fee_gradient(theta: &FeeTheta) -> Result<FeeJacobian, FeeError> {
    use ThetaIndex as I;

    let k = fee_coefficients(theta)?;
    let WedgeAngles { phi, rho, alpha, beta, .. } = theta.wedge_angles();
    let sv = theta.velocity_factor();
    let SoilParams { c, delta, c_a, gamma, .. } = theta.soil;
    let w = theta.tool.w;
    let q = theta.cut.q;
    let d = theta.depth();
    let c_a_eff = sv * c_a;

    let e = k.eta.sin();
    let ce_e = k.eta.cos() / e;
    let cot_rho = rho.cos() / rho.sin();
    let cot_beta = beta.cos() / beta.sin();
    let a = cot_rho + cot_beta;
    let s = (alpha + phi + beta).sin();
    let cs = (alpha + phi + beta).cos();
    let p = rho + phi + beta;

    // Partials of the coefficients. Every coefficient carries 1/sin(η), and η
    // moves one-for-one with φ, β, ρ and δ'.
    let ng_eta = -k.n_gamma * ce_e;
    let nc_eta = -k.n_c * ce_e;
    let nq_eta = -k.n_q * ce_e;
    let na_eta = -k.n_a * ce_e;

    let ng_s = a * cs / (2.0 * e);
    let ng_phi = ng_s + ng_eta;
    let ng_beta = -s / (2.0 * e * beta.sin().powi(2)) + ng_s + ng_eta;
    let ng_rho = -s / (2.0 * e * rho.sin().powi(2)) + ng_eta;
    let ng_alpha = ng_s;

    let nc_phi = -phi.sin() / (beta.sin() * e) + nc_eta;
    let nc_beta = -k.n_c * cot_beta + nc_eta;
    let nc_rho = nc_eta;

    let nq_phi = cs / e + nq_eta;
    let nq_beta = nq_phi;
    let nq_rho = nq_eta;
    let nq_alpha = cs / e;

    let na_p = p.sin() / (rho.sin() * e);
    let na_phi = na_p + na_eta;
    let na_beta = na_p + na_eta;
    let na_rho = na_p - k.n_a * cot_rho + na_eta;

    let tg = gamma * d * d * w;
    let tc = c * d * w;
    let ta = c_a_eff * w;
    let combine = |g: f64, cc: f64, qq: f64, aa: f64| tg * g + tc * cc + q * qq + ta * aa;

    let raw = raw_force(theta, &k);
    let active = raw > 0.0;
    let f = raw.max(0.0);

    let mut df = [0.0; 14];
    if active {
        let f_delta_eff = combine(ng_eta, nc_eta, nq_eta, na_eta);
        // ∂F/∂s where s is the velocity factor: through δ' and through c_a'
        let f_s = f_delta_eff * delta + c_a * w * k.n_a;
        let ds_ddot = -C1 * (1.0 - sv * sv);
        let depth_active = theta.cut.d + theta.delta_d > 0.0;
        let f_depth = if depth_active {
            2.0 * gamma * d * w * k.n_gamma + c * w * k.n_c
        } else {
            0.0
        };

        df[I::Phi as usize] = combine(ng_phi, nc_phi, nq_phi, na_phi);
        df[I::C as usize] = d * w * k.n_c;
        df[I::Delta as usize] = f_delta_eff * sv;
        df[I::CA as usize] = sv * w * k.n_a;
        df[I::Gamma as usize] = d * d * w * k.n_gamma;
        df[I::Rho as usize] = combine(ng_rho, nc_rho, nq_rho, na_rho);
        df[I::Alpha as usize] = combine(ng_alpha, 0.0, nq_alpha, 0.0);
        df[I::W as usize] = gamma * d * d * k.n_gamma + c * d * k.n_c + c_a_eff * k.n_a;
        df[I::D as usize] = f_depth;
        df[I::Q as usize] = k.n_q;
        df[I::Vx as usize] = f_s * ds_ddot * theta.cut.i_b[0];
        df[I::Vz as usize] = f_s * ds_ddot * theta.cut.i_b[1];
        df[I::Beta as usize] = combine(ng_beta, nc_beta, nq_beta, na_beta);
        df[I::DeltaD as usize] = f_depth;
    }

    // direction ψ = π/2 − ρ − sδ + α
    let psi = force_direction(theta);
    let ds_ddot = -C1 * (1.0 - sv * sv);
    let mut dpsi = [0.0; 14];
    dpsi[I::Rho as usize] = -1.0;
    dpsi[I::Alpha as usize] = 1.0;
    dpsi[I::Delta as usize] = -sv;
    dpsi[I::Vx as usize] = -delta * ds_ddot * theta.cut.i_b[0];
    dpsi[I::Vz as usize] = -delta * ds_ddot * theta.cut.i_b[1];

    let (sp, cp) = psi.sin_cos();
    let mut jac = FeeJacobian { d_fx: [0.0; 14], d_fz: [0.0; 14] };
    for i in 0..14 {
        jac.d_fx[i] = df[i] * cp - f * sp * dpsi[i];
        jac.d_fz[i] = df[i] * sp + f * cp * dpsi[i];
    }
    Ok(jac)
}
