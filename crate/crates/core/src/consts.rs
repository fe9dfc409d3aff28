//! Sign and factor conventions, fixed once for the whole crate.
//!
//! Everything downstream (connection forms, curvature pullbacks, moment maps)
//! is sensitive to these choices; keeping them in one place is what makes the
//! cross-checks in the verification suites meaningful rather than circular.

/// Orientation sign of the principal actions (fixed at +1 for this build).
/// Fundamental so(3) fields then satisfy [Z_a, Z_b] = 2 eps Z_c cyclically.
pub const EPS: f64 = 1.0;

/// Section pullback of the fiber connection uses HALVED components:
/// s*theta = 1/2 sum_a theta^U_a e_a. The unhalved values are what the
/// bundle-level forms theta_a return.
pub const SECTION_HALF: f64 = 0.5;

/// Curvature pullback on horizontal lifts: Omega_a(X^h, Y^h) = 1/2 eps Omega^U_a(X, Y).
pub const CURVATURE_LIFT_HALF: f64 = 0.5;

/// Ricci convention: Ric(X, Y) = Tr(Z -> R(Z, X) Y). With it,
/// Tr R(X, Y) = -2 Ric^a(X, Y) and eps * d theta^U_0 = Tr R, both verified
/// numerically as convention gates.
pub const RICCI_TRACE_FIRST_SLOT: bool = true;

/// Scale part of the connection relative to a reference volume form nu = f dx:
/// theta^U_0(Y) = Gamma^k_{Yk} - Y(log f). Horizontal transport then scales
/// volumes contravariantly, which is the orientation that makes the c-family
/// degenerate at c = -4(n+1) rather than +4(n+1).
pub const THETA0_CONTRAVARIANT: bool = true;

/// Default moment-map scale.
pub const DEFAULT_A: f64 = 1.0;

/// Canonical c for a quaternionic dimension n: the connection-independent member
/// of the c-family.
pub fn canonical_c(n: usize) -> f64 {
    -4.0 * (n as f64 + 1.0)
}

/// Tolerances used by the verification suites and the acceptance gate.
/// Residuals are compared after normalization by input magnitudes.
pub mod tol {
    /// Pointwise structure relations: frame algebra, torsion, nabla Q in Q,
    /// deformation trace identity.
    pub const STRUCTURE: f64 = 1e-8;
    /// Agreement of the two curvature-form constructions (trace vs Ricci parts).
    pub const OMEGA_CROSS: f64 = 1e-7;
    /// Curvature/Ricci contraction identity on horizontal pairs.
    pub const OMEGA_RICCI: f64 = 1e-6;
    /// Nijenhuis residual threshold for the integrable verdict.
    pub const INTEGRABLE: f64 = 1e-6;
    /// Expected-fail checks must exceed this obstruction size.
    pub const OBSTRUCTION_FLOOR: f64 = 1e-3;
    /// Connection-independence of the canonical structure.
    pub const CONNECTION_INDEPENDENT: f64 = 1e-8;
    /// Closed-form comparisons of the structure difference at general c.
    pub const CLOSED_FORM_DIFF: f64 = 1e-7;
    /// Exact moment values on the right-multiplication models.
    pub const MOMENT_EXACT: f64 = 1e-10;
    /// Moment equivariance under fiber translation.
    pub const EQUIVARIANCE: f64 = 1e-8;
    /// Shared kernel of the rotated-moment differentials.
    pub const CR: f64 = 1e-6;
    /// Transversality expression accuracy.
    pub const TRANSVERSALITY: f64 = 1e-6;
    /// d(theta-hat) against the symmetric form G.
    pub const DTHETA_G: f64 = 1e-6;
    /// Induced-structure algebra on the quotient slice.
    pub const REDUCED_STRUCTURE: f64 = 1e-8;
    /// Finite-difference-limited quotient checks (Nijenhuis, Lie derivatives).
    pub const REDUCED_FD: f64 = 1e-5;
    /// Closedness of the reduced two-forms.
    pub const REDUCED_CLOSED: f64 = 1e-6;
    /// Covering-map transport of the base structure.
    pub const COVER_MATCH: f64 = 1e-6;
    /// Twist-data compatibility.
    pub const TWIST: f64 = 1e-6;
    /// Exact twist values on the flat family.
    pub const TWIST_EXACT: f64 = 1e-9;
    /// Forward-mode vs central-difference cross-validation (relative).
    pub const AD_VS_FD: f64 = 1e-6;
    /// Newton projection convergence target on the moment residual.
    pub const LEVEL_SET: f64 = 1e-12;
    /// Rank cutoff (relative to the largest singular value) for slice assembly.
    pub const RANK_CUT: f64 = 1e-7;
}
