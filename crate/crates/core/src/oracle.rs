//! Desk-scale numerical verification of the 1-D inverse-CDF latent
//! construction: build the transport map `f = F⁻¹ ∘ G` onto a target
//! density, pair it with the prescribed Gaussian recognition model
//! `Q_σ(z|x) = N(g(x), (g'(x)·σ)²)`, and measure
//! `D[Q_σ(z|x) ‖ P_σ(z|x)]` by quadrature as the decoder noise σ shrinks.
//!
//! All integration is trapezoid on (possibly piecewise-uniform) grids; the
//! CDF of the target is tabulated on a dense uniform grid and inverted on
//! the monotone piecewise-linear interpolant.

use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7; // ln √(2π)

fn std_normal() -> Normal {
    Normal::new(0.0, 1.0).expect("unit normal")
}

fn log_normal_pdf(x: f64, mean: f64, sd: f64) -> f64 {
    let z = (x - mean) / sd;
    -LN_SQRT_2PI - sd.ln() - 0.5 * z * z
}

// ── Target densities ─────────────────────────────────────────────────

/// A strictly positive 1-D density with CDF and quantile function, plus
/// finite bounds outside which its mass is negligible for quadrature.
pub trait Density1d {
    fn pdf(&self, x: f64) -> f64;
    fn cdf(&self, x: f64) -> f64;
    fn inverse_cdf(&self, p: f64) -> f64;
    fn support(&self) -> (f64, f64);
}

#[derive(Clone, Copy, Debug)]
pub struct Gaussian1d {
    pub mean: f64,
    pub sd: f64,
    dist: Normal,
}

impl Gaussian1d {
    pub fn new(mean: f64, sd: f64) -> Result<Self> {
        if !(sd > 0.0 && sd.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "gaussian sd must be positive, got {sd}"
            )));
        }
        Ok(Gaussian1d {
            mean,
            sd,
            dist: Normal::new(mean, sd).expect("validated"),
        })
    }
}

impl Density1d for Gaussian1d {
    fn pdf(&self, x: f64) -> f64 {
        self.dist.pdf(x)
    }

    fn cdf(&self, x: f64) -> f64 {
        self.dist.cdf(x)
    }

    fn inverse_cdf(&self, p: f64) -> f64 {
        self.dist.inverse_cdf(p)
    }

    fn support(&self) -> (f64, f64) {
        // ±6 sd: wide enough that the truncated mass (~2e-9) is invisible
        // at the tested tolerances, narrow enough that tabulated CDF
        // increments stay above f64 spacing near 1.0.
        (self.mean - 6.0 * self.sd, self.mean + 6.0 * self.sd)
    }
}

/// Weighted mixture of Gaussians; the quantile function falls back to
/// bisection on the analytic CDF.
#[derive(Clone, Debug)]
pub struct GaussianMixture1d {
    components: Vec<(f64, Normal, f64, f64)>, // weight, dist, mean, sd
}

impl GaussianMixture1d {
    pub fn new(components: &[(f64, f64, f64)]) -> Result<Self> {
        // (weight, mean, sd)
        if components.is_empty() {
            return Err(Error::InvalidArgument("empty mixture".into()));
        }
        let total: f64 = components.iter().map(|c| c.0).sum();
        if total <= 0.0 || total.is_nan() || components.iter().any(|c| c.0 < 0.0) {
            return Err(Error::InvalidArgument(
                "mixture weights must be positive".into(),
            ));
        }
        let mut out = Vec::with_capacity(components.len());
        for &(w, mean, sd) in components {
            if !(sd > 0.0 && sd.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "mixture sd must be positive, got {sd}"
                )));
            }
            out.push((
                w / total,
                Normal::new(mean, sd).expect("validated"),
                mean,
                sd,
            ));
        }
        Ok(GaussianMixture1d { components: out })
    }

    /// The two-bump example target: equal mixture of N(-2,1) and N(2,1).
    pub fn two_bumps() -> Self {
        GaussianMixture1d::new(&[(0.5, -2.0, 1.0), (0.5, 2.0, 1.0)]).expect("valid components")
    }
}

impl Density1d for GaussianMixture1d {
    fn pdf(&self, x: f64) -> f64 {
        self.components
            .iter()
            .map(|(w, d, _, _)| w * d.pdf(x))
            .sum()
    }

    fn cdf(&self, x: f64) -> f64 {
        self.components
            .iter()
            .map(|(w, d, _, _)| w * d.cdf(x))
            .sum()
    }

    fn inverse_cdf(&self, p: f64) -> f64 {
        let (mut lo, mut hi) = self.support();
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
            if hi - lo < 1e-13 * (1.0 + mid.abs()) {
                break;
            }
        }
        0.5 * (lo + hi)
    }

    fn support(&self) -> (f64, f64) {
        let lo = self
            .components
            .iter()
            .map(|(_, _, m, s)| m - 6.0 * s)
            .fold(f64::INFINITY, f64::min);
        let hi = self
            .components
            .iter()
            .map(|(_, _, m, s)| m + 6.0 * s)
            .fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

/// Target family selector, mirroring what the sweep command accepts.
#[derive(Clone, Debug)]
pub enum TargetDensity {
    Gaussian { mean: f64, sd: f64 },
    TwoBumps,
}

impl TargetDensity {
    pub fn density(&self) -> Result<Box<dyn Density1d>> {
        Ok(match self {
            TargetDensity::Gaussian { mean, sd } => Box::new(Gaussian1d::new(*mean, *sd)?),
            TargetDensity::TwoBumps => Box::new(GaussianMixture1d::two_bumps()),
        })
    }
}

// ── The instance: tabulated transport map + prescribed posterior ─────

pub const DEFAULT_CDF_TABLE_POINTS: usize = 1 << 18;
pub const DEFAULT_QUAD_POINTS: usize = 8192;

/// A 1-D latent-variable model `x = f(z) + N(0, σ²)`, `z ~ N(0,1)`, whose
/// decoder `f = F⁻¹ ∘ G` transports the standard normal onto the target
/// density, together with the prescribed recognition model
/// `Q_σ(z|x) = N(g(x), (g'(x)σ)²)`, `g = G⁻¹ ∘ F`.
pub struct InverseCdfInstance {
    target: Box<dyn Density1d>,
    sigma: f64,
    xs: Vec<f64>,  // uniform grid over the target support
    cdf: Vec<f64>, // tabulated, strictly increasing
    quad_points: usize,
}

/// Tabulate the target CDF and build the transport pair. `Q_σ` follows from
/// the same tables. The target must be strictly positive on its support or
/// the table stops being strictly monotone.
pub fn build_instance(target: Box<dyn Density1d>, sigma: f64) -> Result<InverseCdfInstance> {
    build_instance_with(target, sigma, DEFAULT_CDF_TABLE_POINTS, DEFAULT_QUAD_POINTS)
}

pub fn build_instance_with(
    target: Box<dyn Density1d>,
    sigma: f64,
    cdf_table_points: usize,
    quad_points: usize,
) -> Result<InverseCdfInstance> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if cdf_table_points < 4096 {
        return Err(Error::InvalidArgument(
            "cdf table needs at least 4096 points".into(),
        ));
    }
    let (lo, hi) = target.support();
    let xs = linspace(lo, hi, cdf_table_points);
    let cdf: Vec<f64> = xs.iter().map(|&x| target.cdf(x)).collect();
    for i in 1..cdf.len() {
        if cdf[i] <= cdf[i - 1] {
            return Err(Error::NonMonotoneCdf { x: xs[i] });
        }
    }
    Ok(InverseCdfInstance {
        target,
        sigma,
        xs,
        cdf,
        quad_points,
    })
}

impl InverseCdfInstance {
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn target(&self) -> &dyn Density1d {
        self.target.as_ref()
    }

    pub fn quad_points(&self) -> usize {
        self.quad_points
    }

    /// Tabulated CDF, linearly interpolated (clamped outside the table).
    pub fn cdf_hat(&self, x: f64) -> f64 {
        let n = self.xs.len();
        if x <= self.xs[0] {
            return self.cdf[0];
        }
        if x >= self.xs[n - 1] {
            return self.cdf[n - 1];
        }
        let step = (self.xs[n - 1] - self.xs[0]) / (n - 1) as f64;
        let i = (((x - self.xs[0]) / step) as usize).min(n - 2);
        let t = (x - self.xs[i]) / (self.xs[i + 1] - self.xs[i]);
        self.cdf[i] + t * (self.cdf[i + 1] - self.cdf[i])
    }

    /// Inverse of the interpolated CDF (exact on each linear segment,
    /// clamped to the table range).
    pub fn inverse_cdf_hat(&self, p: f64) -> f64 {
        let n = self.cdf.len();
        if p <= self.cdf[0] {
            return self.xs[0];
        }
        if p >= self.cdf[n - 1] {
            return self.xs[n - 1];
        }
        let i = self.cdf.partition_point(|&c| c < p) - 1;
        let t = (p - self.cdf[i]) / (self.cdf[i + 1] - self.cdf[i]);
        self.xs[i] + t * (self.xs[i + 1] - self.xs[i])
    }

    /// Decoder `f(z) = F⁻¹(G(z))`: pushes a standard normal sample onto the
    /// target density.
    pub fn f(&self, z: f64) -> f64 {
        self.inverse_cdf_hat(std_normal().cdf(z))
    }

    /// Encoder mean `g(x) = G⁻¹(F(x))`, the inverse of `f`.
    pub fn g(&self, x: f64) -> f64 {
        std_normal().inverse_cdf(self.cdf_hat(x))
    }

    /// `g'(x) = p_target(x) / φ(g(x))` by the chain rule.
    pub fn g_prime(&self, x: f64) -> f64 {
        let g = self.g(x);
        self.target.pdf(x) / std_normal().pdf(g)
    }

    /// Mean and standard deviation of the prescribed `Q_σ(z|x)`.
    pub fn q_params(&self, x: f64) -> (f64, f64) {
        (self.g(x), self.g_prime(x) * self.sigma)
    }

    fn log_joint(&self, x: f64, z: f64) -> f64 {
        // ln φ(z) + ln N(x | f(z), σ²)
        log_normal_pdf(z, 0.0, 1.0) + log_normal_pdf(x, self.f(z), self.sigma)
    }
}

// ── Quadrature ───────────────────────────────────────────────────────

pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    assert!(n >= 2);
    let step = (b - a) / (n - 1) as f64;
    (0..n).map(|i| a + step * i as f64).collect()
}

/// Trapezoid rule on a sorted (not necessarily uniform) grid.
pub fn trapezoid(zs: &[f64], vals: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 1..zs.len() {
        acc += 0.5 * (vals[i] + vals[i - 1]) * (zs[i] - zs[i - 1]);
    }
    acc
}

/// `∫ q ln(q/p)` by trapezoid over the grid, with the convention
/// `0·ln(0/p) = 0`. Both densities must be tabulated on the same grid.
pub fn kl_divergence_on_grid(zs: &[f64], q: &[f64], p: &[f64]) -> f64 {
    let vals: Vec<f64> = q
        .iter()
        .zip(p)
        .map(|(&qv, &pv)| {
            if qv <= 0.0 {
                0.0
            } else {
                qv * (qv.ln() - pv.ln())
            }
        })
        .collect();
    trapezoid(zs, &vals)
}

/// Merge two sorted grids, dropping near-duplicate nodes.
fn merge_grids(a: &[f64], b: &[f64], min_gap: f64) -> Vec<f64> {
    let mut all: Vec<f64> = a.iter().chain(b).copied().collect();
    all.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let mut out = Vec::with_capacity(all.len());
    for v in all {
        if out.last().is_none_or(|&last| v - last > min_gap) {
            out.push(v);
        }
    }
    out
}

/// Quadrature grid covering both the prior's bulk and the likelihood peak
/// around `g(x)` (narrow at small σ).
pub fn default_posterior_grid(inst: &InverseCdfInstance, x: f64) -> Vec<f64> {
    let n = inst.quad_points();
    let wide = linspace(-8.6, 8.6, n);
    let (m, s) = inst.q_params(x);
    let half_width = (10.0 * s).max(20.0 * 17.2 / n as f64);
    let fine = linspace(m - half_width, m + half_width, n);
    merge_grids(&wide, &fine, half_width * 2.0 / (n as f64 * 4.0))
}

/// The posterior `P_σ(z|x) ∝ N(x|f(z),σ²)·φ(z)` tabulated on a grid and
/// normalized by trapezoid quadrature.
pub struct PosteriorTable {
    pub zs: Vec<f64>,
    pub pdf: Vec<f64>,
    /// `ln ∫ N(x|f(z),σ²)·φ(z) dz` over the grid — the log normalizer.
    pub log_norm: f64,
}

impl PosteriorTable {
    pub fn integral(&self) -> f64 {
        trapezoid(&self.zs, &self.pdf)
    }

    /// Mean and variance of the tabulated posterior by quadrature.
    pub fn mean_var(&self) -> (f64, f64) {
        let weighted: Vec<f64> = self.zs.iter().zip(&self.pdf).map(|(z, p)| z * p).collect();
        let mean = trapezoid(&self.zs, &weighted);
        let second: Vec<f64> = self
            .zs
            .iter()
            .zip(&self.pdf)
            .map(|(z, p)| (z - mean) * (z - mean) * p)
            .collect();
        (mean, trapezoid(&self.zs, &second))
    }
}

/// Tabulate the normalized posterior on the supplied grid.
pub fn posterior_pdf(inst: &InverseCdfInstance, x: f64, z_grid: &[f64]) -> Result<PosteriorTable> {
    if z_grid.len() < 16 {
        return Err(Error::GridCoverage("posterior grid too small".into()));
    }
    let logs: Vec<f64> = z_grid.iter().map(|&z| inst.log_joint(x, z)).collect();
    let m = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() || m < -700.0 {
        return Err(Error::GridCoverage(format!(
            "all posterior integrand values underflow at x = {x} (max log {m})"
        )));
    }
    let scaled: Vec<f64> = logs.iter().map(|l| (l - m).exp()).collect();
    let z_scaled = trapezoid(z_grid, &scaled);
    if z_scaled <= 0.0 || z_scaled.is_nan() {
        return Err(Error::GridCoverage(format!(
            "posterior mass vanished on the grid at x = {x}"
        )));
    }
    let log_norm = m + z_scaled.ln();
    let pdf: Vec<f64> = logs.iter().map(|l| (l - log_norm).exp()).collect();
    Ok(PosteriorTable {
        zs: z_grid.to_vec(),
        pdf,
        log_norm,
    })
}

/// Re-integrate the normalized posterior on a midpoint-refined grid; a
/// result far from 1 means the original grid under-resolved the density.
pub fn posterior_normalization_check(
    inst: &InverseCdfInstance,
    x: f64,
    table: &PosteriorTable,
) -> f64 {
    let mut zs = Vec::with_capacity(table.zs.len() * 2 - 1);
    for i in 0..table.zs.len() - 1 {
        zs.push(table.zs[i]);
        zs.push(0.5 * (table.zs[i] + table.zs[i + 1]));
    }
    zs.push(*table.zs.last().expect("non-empty grid"));
    let pdf: Vec<f64> = zs
        .iter()
        .map(|&z| (inst.log_joint(x, z) - table.log_norm).exp())
        .collect();
    trapezoid(&zs, &pdf)
}

/// `D[Q_σ(z|x) ‖ P_σ(z|x)]` in nats by quadrature: the posterior is
/// normalized on a wide grid, the KL integrand on a fine grid spanning
/// ±8.5 standard deviations of Q (everything in log space pointwise).
pub fn kl_q_vs_posterior(inst: &InverseCdfInstance, x: f64) -> Result<f64> {
    let norm_grid = default_posterior_grid(inst, x);
    let table = posterior_pdf(inst, x, &norm_grid)?;

    let (m, s) = inst.q_params(x);
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::GridCoverage(format!(
            "degenerate Q at x = {x}: sd = {s}"
        )));
    }
    let zs = linspace(m - 8.5 * s, m + 8.5 * s, inst.quad_points());
    let vals: Vec<f64> = zs
        .iter()
        .map(|&z| {
            let log_q = log_normal_pdf(z, m, s);
            let q = log_q.exp();
            if q <= 0.0 {
                0.0
            } else {
                let log_p = inst.log_joint(x, z) - table.log_norm;
                q * (log_q - log_p)
            }
        })
        .collect();
    let kl = trapezoid(&zs, &vals);
    // Quadrature noise in log Z is a few e-9; anything clearly below that
    // means the normalization grid missed mass.
    if kl < -1e-6 {
        return Err(Error::GridCoverage(format!(
            "negative KL {kl} at x = {x}: posterior grid did not cover Q"
        )));
    }
    Ok(kl.max(0.0))
}

// ── Convergence sweep ────────────────────────────────────────────────

#[derive(Clone, Copy, Debug)]
pub struct SweepRow {
    pub sigma: f64,
    pub x: f64,
    pub kl_nats: f64,
    pub grid_points: usize,
}

#[derive(Clone, Debug)]
pub struct SweepTable {
    pub rows: Vec<SweepRow>,
    pub sigmas: Vec<f64>,
    pub xs: Vec<f64>,
}

impl SweepTable {
    pub fn kl_at(&self, sigma_idx: usize, x_idx: usize) -> f64 {
        self.rows[sigma_idx * self.xs.len() + x_idx].kl_nats
    }

    /// KL at the smallest σ is below KL at the largest σ, for every x.
    /// Vacuously true for a single-σ table.
    pub fn last_below_first_for_every_x(&self) -> bool {
        if self.sigmas.len() < 2 {
            return true;
        }
        let last = self.sigmas.len() - 1;
        (0..self.xs.len()).all(|xi| self.kl_at(last, xi) < self.kl_at(0, xi))
    }

    /// KL strictly decreases along the whole σ sequence, for every x.
    pub fn strictly_decreasing_per_x(&self) -> bool {
        (0..self.xs.len())
            .all(|xi| (1..self.sigmas.len()).all(|si| self.kl_at(si, xi) < self.kl_at(si - 1, xi)))
    }

    pub fn max_kl_at_sigma(&self, sigma_idx: usize) -> f64 {
        (0..self.xs.len())
            .map(|xi| self.kl_at(sigma_idx, xi))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// CSV body in `sigma,x,kl_nats,grid_points` order, matching the sweep
    /// command's output file.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("sigma,x,kl_nats,grid_points\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{:e},{}\n",
                row.sigma, row.x, row.kl_nats, row.grid_points
            ));
        }
        out
    }
}

/// KL table over a decreasing σ list and a set of observation points.
pub fn convergence_sweep(
    target: &TargetDensity,
    sigmas: &[f64],
    xs: &[f64],
    quad_points: usize,
) -> Result<SweepTable> {
    if sigmas.is_empty() || xs.is_empty() {
        return Err(Error::InvalidArgument("sweep needs sigmas and xs".into()));
    }
    for pair in sigmas.windows(2) {
        if pair[1] >= pair[0] {
            return Err(Error::InvalidArgument(format!(
                "sigmas must be strictly decreasing, got {} then {}",
                pair[0], pair[1]
            )));
        }
    }
    let mut rows = Vec::with_capacity(sigmas.len() * xs.len());
    for &sigma in sigmas {
        let inst = build_instance_with(
            target.density()?,
            sigma,
            DEFAULT_CDF_TABLE_POINTS,
            quad_points,
        )?;
        for &x in xs {
            let kl = kl_q_vs_posterior(&inst, x)?;
            rows.push(SweepRow {
                sigma,
                x,
                kl_nats: kl,
                grid_points: quad_points,
            });
        }
    }
    Ok(SweepTable {
        rows,
        sigmas: sigmas.to_vec(),
        xs: xs.to_vec(),
    })
}
