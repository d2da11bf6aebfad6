//! Synthetic data generator.
//!
//! Covariates come in four independent blocks `(X_c, X_iv, X_y, X_irr)`, each
//! AR(1)-correlated Gaussian with `Σ_kj = ρ^|j-k|`. Treatment and outcome are
//!
//! ```text
//! η = f_a(X_c) + g_a(X_iv)          A ~ Bernoulli(1 / (1 + e^-η))
//! Y = c + β·A + f_y(X_c) + g_y(X_y) + ε,   ε ~ N(0, noise_sd²)
//! ```
//!
//! where every link `f_a, g_a, f_y, g_y` selects a fraction of its block's
//! columns, pairs them up, and applies one randomly drawn bivariate
//! nonlinearity per pair, scaled by a coefficient drawn from the block's
//! `(r1, r2)` range.

use nalgebra::{DMatrix, DVector};
use ndarray::Array2;
use rand::seq::index;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Truth};
use crate::error::{Error, Result};
use crate::seed;

/// Number of fresh draws attempted when every unit lands in the same arm.
pub const MAX_ARM_RETRIES: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DgpSpec {
    pub n: usize,
    pub p: usize,
    /// Widths of `(X_c, X_iv, X_y, X_irr)`.
    pub block_sizes: [usize; 4],
    pub rho: f64,
    pub gamma_c: (f64, f64),
    pub gamma_c_prime: (f64, f64),
    pub gamma_y: (f64, f64),
    pub gamma_iv: (f64, f64),
    pub beta_true: f64,
    pub noise_sd: f64,
    pub intercept: f64,
    /// Fraction of each block's columns fed to its link.
    pub select_fraction: f64,
    /// Center and scale every link term to unit variance on the generated sample.
    pub standardize_links: bool,
    pub seed: u64,
}

impl Default for DgpSpec {
    fn default() -> Self {
        Self::small_design()
    }
}

impl DgpSpec {
    /// `n = 750`, `p = 32`, blocks of 8.
    pub fn small_design() -> Self {
        Self {
            n: 750,
            p: 32,
            block_sizes: [8; 4],
            rho: 0.5,
            gamma_c: (0.25, 0.25),
            gamma_c_prime: (0.25, 0.25),
            gamma_y: (0.25, 0.25),
            gamma_iv: (0.25, 0.25),
            beta_true: 1.0,
            noise_sd: 1.0,
            intercept: 3.0,
            select_fraction: 0.2,
            standardize_links: true,
            seed: 0,
        }
    }

    /// `n = 7500`, `p = 300`, blocks of 75.
    pub fn large_design() -> Self {
        Self { n: 7500, p: 300, block_sizes: [75; 4], ..Self::small_design() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.block_sizes.iter().sum::<usize>() != self.p {
            return bad(format!("block sizes {:?} do not sum to p = {}", self.block_sizes, self.p));
        }
        if !(self.rho.abs() < 1.0) {
            return bad(format!("rho = {} must satisfy |rho| < 1", self.rho));
        }
        if self.n < 2 {
            return bad(format!("n = {} must be at least 2", self.n));
        }
        if let Some(b) = self.block_sizes.iter().find(|&&b| b < 2) {
            return bad(format!("block width {b} is below 2; links consume column pairs"));
        }
        for (name, (lo, hi)) in [
            ("gamma_c", self.gamma_c),
            ("gamma_c_prime", self.gamma_c_prime),
            ("gamma_y", self.gamma_y),
            ("gamma_iv", self.gamma_iv),
        ] {
            if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
                return bad(format!("{name} range ({lo}, {hi}) is not an ordered finite interval"));
            }
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return bad(format!("noise_sd = {} must be finite and non-negative", self.noise_sd));
        }
        if !(self.select_fraction > 0.0 && self.select_fraction <= 1.0) {
            return bad(format!("select_fraction = {} must lie in (0, 1]", self.select_fraction));
        }
        if !self.beta_true.is_finite() || !self.intercept.is_finite() {
            return bad("beta_true and intercept must be finite".into());
        }
        Ok(())
    }

    /// First column and width of a block.
    pub fn block_range(&self, block: Block) -> std::ops::Range<usize> {
        let k = block as usize;
        let start: usize = self.block_sizes[..k].iter().sum();
        start..start + self.block_sizes[k]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Block {
    Confounder = 0,
    Instrument = 1,
    Outcome = 2,
    Irrelevant = 3,
}

/// Step-function pair used by [`LinkFamily::Step`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StepVariant {
    /// `g ∈ {-2, -1, 1, 3}` with breaks at -1, 0, 2; `h ∈ {-5, -2, 3}` with breaks at 0, 1.
    /// A break point belongs to the interval on its left.
    Graded,
    /// `g(x) = 1{x ≥ 0}`, `h(x) = 1{x ≥ 1}`.
    Indicator,
}

impl StepVariant {
    pub fn g(self, x: f64) -> f64 {
        match self {
            StepVariant::Graded => {
                if x <= -1.0 {
                    -2.0
                } else if x <= 0.0 {
                    -1.0
                } else if x <= 2.0 {
                    1.0
                } else {
                    3.0
                }
            }
            StepVariant::Indicator => f64::from(u8::from(x >= 0.0)),
        }
    }

    pub fn h(self, x: f64) -> f64 {
        match self {
            StepVariant::Graded => {
                if x <= 0.0 {
                    -5.0
                } else if x <= 1.0 {
                    -2.0
                } else {
                    3.0
                }
            }
            StepVariant::Indicator => f64::from(u8::from(x >= 1.0)),
        }
    }
}

/// The five bivariate nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LinkFamily {
    /// `exp(x1·x2 / 2)`
    ExpProduct,
    /// `x1 / (1 + exp(x2))`
    Logistic,
    /// `(x1·x2 / 10 + 2)³`
    CubicProduct,
    /// `(x1 + x2 + 3)²`
    SquaredSum,
    /// `g(x1)·h(x2)`
    Step(StepVariant),
}

impl LinkFamily {
    pub fn eval(self, x1: f64, x2: f64) -> f64 {
        match self {
            LinkFamily::ExpProduct => (x1 * x2 / 2.0).exp(),
            LinkFamily::Logistic => x1 / (1.0 + x2.exp()),
            LinkFamily::CubicProduct => (x1 * x2 / 10.0 + 2.0).powi(3),
            LinkFamily::SquaredSum => (x1 + x2 + 3.0).powi(2),
            LinkFamily::Step(v) => v.g(x1) * v.h(x2),
        }
    }

    /// 1-based family id in the order listed above.
    pub fn id(self) -> u8 {
        match self {
            LinkFamily::ExpProduct => 1,
            LinkFamily::Logistic => 2,
            LinkFamily::CubicProduct => 3,
            LinkFamily::SquaredSum => 4,
            LinkFamily::Step(_) => 5,
        }
    }
}

/// One `coefficient · (l(x1, x2) - center) / scale` summand.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkTerm {
    /// Absolute column indices into `W`.
    pub columns: (usize, usize),
    pub family: LinkFamily,
    pub coefficient: f64,
    pub center: f64,
    pub scale: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LinkSpec {
    pub block: Block,
    pub terms: Vec<LinkTerm>,
}

impl LinkSpec {
    pub fn selected_pairs(&self) -> Vec<(usize, usize)> {
        self.terms.iter().map(|t| t.columns).collect()
    }

    fn raw_term(term: &LinkTerm, w: &Array2<f64>) -> Vec<f64> {
        let (c1, c2) = term.columns;
        w.rows().into_iter().map(|r| term.family.eval(r[c1], r[c2])).collect()
    }

    /// Fits each term's center and scale on `w`. Constant terms keep scale 1.
    pub fn standardize(&mut self, w: &Array2<f64>) {
        for term in &mut self.terms {
            let raw = Self::raw_term(term, w);
            let n = raw.len() as f64;
            let mean = raw.iter().sum::<f64>() / n;
            let var = raw.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
            term.center = mean;
            term.scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
    }
}

/// Evaluates `Σ coefficient · (l(x1, x2) - center) / scale` row by row.
pub fn eval_link(link: &LinkSpec, w: &Array2<f64>) -> Vec<f64> {
    let mut out = vec![0.0; w.nrows()];
    for term in &link.terms {
        let (c1, c2) = term.columns;
        assert!(c1 < w.ncols() && c2 < w.ncols(), "link column outside covariate matrix");
        for (o, row) in out.iter_mut().zip(w.rows()) {
            *o += term.coefficient * (term.family.eval(row[c1], row[c2]) - term.center) / term.scale;
        }
    }
    out
}

/// `⌈fraction · width⌉`, at least two so one pair always exists.
pub fn selected_column_count(width: usize, fraction: f64) -> usize {
    // The epsilon keeps exact products such as 0.2 · 75 from rounding up.
    let k = (fraction * width as f64 - 1e-9).ceil().max(0.0) as usize;
    k.clamp(2, width)
}

/// Draws pairs, families and coefficients for one block.
pub fn draw_links<R: Rng + ?Sized>(spec: &DgpSpec, block: Block, range: (f64, f64), rng: &mut R) -> Result<LinkSpec> {
    let cols = spec.block_range(block);
    let width = cols.len();
    if width < 2 {
        return Err(Error::InvalidSpec(format!("block {block:?} has width {width}; need at least 2")));
    }
    let k = selected_column_count(width, spec.select_fraction);
    let chosen: Vec<usize> = index::sample(rng, width, k).into_iter().map(|j| cols.start + j).collect();
    let mut terms = Vec::with_capacity(k / 2);
    for pair in chosen.chunks_exact(2) {
        let family = match rng.random_range(0..5u8) {
            0 => LinkFamily::ExpProduct,
            1 => LinkFamily::Logistic,
            2 => LinkFamily::CubicProduct,
            3 => LinkFamily::SquaredSum,
            _ => LinkFamily::Step(if rng.random_bool(0.5) { StepVariant::Graded } else { StepVariant::Indicator }),
        };
        let u: f64 = rng.random();
        let coefficient = range.0 + (range.1 - range.0) * u;
        terms.push(LinkTerm { columns: (pair[0], pair[1]), family, coefficient, center: 0.0, scale: 1.0 });
    }
    Ok(LinkSpec { block, terms })
}

/// AR(1) correlation matrix `ρ^|j-k|` of size `width`.
pub fn ar1_covariance(width: usize, rho: f64) -> DMatrix<f64> {
    DMatrix::from_fn(width, width, |k, j| rho.powi((j as i32 - k as i32).abs()))
}

/// Draws `n × p` covariates: independent blocks, AR(1) inside each block.
pub fn gen_covariates<R: Rng + ?Sized>(spec: &DgpSpec, rng: &mut R) -> Result<Array2<f64>> {
    spec.validate()?;
    let factors: Vec<DMatrix<f64>> = spec
        .block_sizes
        .iter()
        .map(|&b| {
            ar1_covariance(b, spec.rho)
                .cholesky()
                .map(|c| c.l())
                .ok_or_else(|| Error::InvalidSpec("AR(1) covariance is not positive definite".into()))
        })
        .collect::<Result<_>>()?;
    let mut w = Array2::zeros((spec.n, spec.p));
    for mut row in w.rows_mut() {
        let mut offset = 0;
        for l in &factors {
            let b = l.nrows();
            let z = DVector::from_fn(b, |_, _| rng.sample::<f64, _>(StandardNormal));
            let x = l * z;
            for j in 0..b {
                row[offset + j] = x[j];
            }
            offset += b;
        }
    }
    Ok(w)
}

/// The four links of one synthetic design.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DesignLinks {
    pub f_a: LinkSpec,
    pub g_a: LinkSpec,
    pub f_y: LinkSpec,
    pub g_y: LinkSpec,
}

pub fn draw_design<R: Rng + ?Sized>(spec: &DgpSpec, rng: &mut R) -> Result<DesignLinks> {
    Ok(DesignLinks {
        f_a: draw_links(spec, Block::Confounder, spec.gamma_c, rng)?,
        g_a: draw_links(spec, Block::Instrument, spec.gamma_iv, rng)?,
        f_y: draw_links(spec, Block::Confounder, spec.gamma_c_prime, rng)?,
        g_y: draw_links(spec, Block::Outcome, spec.gamma_y, rng)?,
    })
}

pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Draws a dataset from the stream, retrying on a single-arm assignment.
pub fn gen_dataset<R: Rng + ?Sized>(spec: &DgpSpec, rng: &mut R) -> Result<Dataset> {
    spec.validate()?;
    for _ in 0..MAX_ARM_RETRIES {
        if let Some(d) = draw_once(spec, rng)? {
            return Ok(d);
        }
    }
    Err(Error::DegenerateArm(MAX_ARM_RETRIES))
}

/// [`gen_dataset`] on the stream seeded by `spec.seed`.
pub fn generate(spec: &DgpSpec) -> Result<Dataset> {
    gen_dataset(spec, &mut seed::rng(spec.seed))
}

fn draw_once<R: Rng + ?Sized>(spec: &DgpSpec, rng: &mut R) -> Result<Option<Dataset>> {
    let mut links = draw_design(spec, rng)?;
    let w = gen_covariates(spec, rng)?;
    if spec.standardize_links {
        for l in [&mut links.f_a, &mut links.g_a, &mut links.f_y, &mut links.g_y] {
            l.standardize(&w);
        }
    }
    let (fa, ga, fy, gy) =
        (eval_link(&links.f_a, &w), eval_link(&links.g_a, &w), eval_link(&links.f_y, &w), eval_link(&links.g_y, &w));

    let n = spec.n;
    let mut g = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    for i in 0..n {
        let gi = logistic(fa[i] + ga[i]);
        let u: f64 = rng.random();
        g.push(gi);
        a.push(u8::from(u < gi));
    }
    let q0: Vec<f64> = (0..n).map(|i| spec.intercept + fy[i] + gy[i]).collect();
    let q1: Vec<f64> = q0.iter().map(|q| q + spec.beta_true).collect();
    let y: Vec<f64> = (0..n)
        .map(|i| {
            let eps: f64 = rng.sample(StandardNormal);
            (if a[i] == 1 { q1[i] } else { q0[i] }) + spec.noise_sd * eps
        })
        .collect();

    if a.iter().all(|&v| v == a[0]) {
        return Ok(None);
    }
    Dataset::new(w, a, y)?
        .with_truth(Truth { g, q1, q0, beta: spec.beta_true })
        .map(Some)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn small(seed: u64) -> DgpSpec {
        DgpSpec { n: 400, seed, ..DgpSpec::small_design() }
    }

    #[test]
    fn ar1_entries() {
        let s = ar1_covariance(4, 0.5);
        assert_eq!(s[(0, 1)], 0.5);
        assert_eq!(s[(0, 2)], 0.25);
        assert_eq!(s[(2, 0)], 0.25);
        assert_eq!(ar1_covariance(3, 0.0), DMatrix::identity(3, 3));
    }

    #[test]
    fn validation_errors() {
        let mut s = DgpSpec::small_design();
        s.block_sizes = [8, 8, 8, 7];
        assert!(s.validate().is_err());
        let mut s = DgpSpec::small_design();
        s.rho = 1.0;
        assert!(s.validate().is_err());
        let mut s = DgpSpec { p: 13, block_sizes: [1, 4, 4, 4], ..DgpSpec::small_design() };
        assert!(s.validate().is_err());
        s.n = 1;
        assert!(s.validate().is_err());
    }

    #[test]
    fn column_counts() {
        assert_eq!(selected_column_count(8, 0.2), 2);
        assert_eq!(selected_column_count(75, 0.2), 15);
        assert_eq!(selected_column_count(2, 0.2), 2);
        assert_eq!(selected_column_count(10, 0.2), 2);
        assert_eq!(selected_column_count(11, 0.2), 3);
    }

    #[test]
    fn link_draw_shapes() {
        let spec = DgpSpec::small_design();
        let l = draw_links(&spec, Block::Instrument, (0.25, 0.25), &mut seed::rng(3)).unwrap();
        assert_eq!(l.terms.len(), 1);
        let r = spec.block_range(Block::Instrument);
        for (c1, c2) in l.selected_pairs() {
            assert!(r.contains(&c1) && r.contains(&c2) && c1 != c2);
        }
        assert_eq!(l.terms[0].coefficient, 0.25);

        let large = DgpSpec::large_design();
        let l = draw_links(&large, Block::Outcome, (0.25, 0.25), &mut seed::rng(3)).unwrap();
        assert_eq!(l.terms.len(), 7);
        let mut cols: Vec<usize> = l.selected_pairs().into_iter().flat_map(|(a, b)| [a, b]).collect();
        cols.sort();
        cols.dedup();
        assert_eq!(cols.len(), 14);
        assert!(cols.iter().all(|c| large.block_range(Block::Outcome).contains(c)));
    }

    #[test]
    fn link_draw_is_deterministic() {
        let spec = DgpSpec::large_design();
        let a = draw_design(&spec, &mut seed::rng(11)).unwrap();
        let b = draw_design(&spec, &mut seed::rng(11)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn family_values() {
        assert_eq!(LinkFamily::ExpProduct.eval(0.0, 7.3), 1.0);
        assert_eq!(LinkFamily::SquaredSum.eval(-3.0, 0.0), 0.0);
        assert_abs_diff_eq!(LinkFamily::Logistic.eval(2.0, 0.0), 1.0);
        assert_abs_diff_eq!(LinkFamily::CubicProduct.eval(0.0, 5.0), 8.0);
        let v = StepVariant::Graded;
        assert_eq!((v.g(-2.0), v.g(0.5), v.g(3.0)), (-2.0, 1.0, 3.0));
        assert_eq!((v.h(-1.0), v.h(0.5), v.h(2.0)), (-5.0, -2.0, 3.0));
        assert_eq!((v.g(-1.0), v.g(0.0), v.g(2.0), v.h(0.0), v.h(1.0)), (-2.0, -1.0, 1.0, -5.0, -2.0));
        let v = StepVariant::Indicator;
        assert_eq!((v.g(-0.1), v.g(0.0), v.h(0.9), v.h(1.0)), (0.0, 1.0, 0.0, 1.0));
        assert_eq!(LinkFamily::Step(StepVariant::Graded).eval(0.5, 2.0), 3.0);
    }

    #[test]
    fn standardized_terms_have_unit_variance() {
        let spec = small(5);
        let mut rng = seed::rng(5);
        let mut links = draw_design(&spec, &mut rng).unwrap();
        let w = gen_covariates(&spec, &mut rng).unwrap();
        links.g_y.standardize(&w);
        let unit = LinkSpec {
            terms: links.g_y.terms.iter().map(|t| LinkTerm { coefficient: 1.0, ..t.clone() }).collect(),
            ..links.g_y.clone()
        };
        let v = eval_link(&unit, &w);
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        assert_abs_diff_eq!(m, 0.0, epsilon = 1e-9);
        if unit.terms.len() == 1 && unit.terms[0].scale != 1.0 {
            let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
            assert_abs_diff_eq!(var, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn dataset_is_reproducible() {
        let a = generate(&small(42)).unwrap();
        let b = generate(&small(42)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, generate(&small(43)).unwrap());
    }

    #[test]
    fn truth_has_exact_effect() {
        let d = generate(&small(1)).unwrap();
        let t = d.truth.as_ref().unwrap();
        assert!(t.q1.iter().zip(&t.q0).all(|(a, b)| (a - b - 1.0).abs() < 1e-12));
        let ate = t.q1.iter().zip(&t.q0).map(|(a, b)| a - b).sum::<f64>() / d.n() as f64;
        assert_abs_diff_eq!(ate, 1.0, epsilon = 1e-12);
        assert!(t.g.iter().all(|&g| g > 0.0 && g < 1.0));
        d.require_both_arms().unwrap();
    }

    #[test]
    fn zero_index_gives_balanced_assignment() {
        let spec = DgpSpec { n: 4000, gamma_c: (0.0, 0.0), gamma_iv: (0.0, 0.0), ..small(9) };
        let d = generate(&spec).unwrap();
        assert!(d.truth.as_ref().unwrap().g.iter().all(|&g| g == 0.5));
        let (n1, _) = d.arm_counts();
        assert!((n1 as f64 / 4000.0 - 0.5).abs() < 0.03);
    }

    #[test]
    fn instrument_strength_widens_propensity_range() {
        let range = |gamma: f64| {
            let spec = DgpSpec { gamma_iv: (gamma, gamma), ..small(17) };
            let g = generate(&spec).unwrap().truth.unwrap().g;
            let (lo, hi) = g.iter().fold((1.0f64, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
            hi - lo
        };
        let widths: Vec<f64> = [0.25, 1.0, 4.0].iter().map(|&g| range(g)).collect();
        assert!(widths[0] < widths[1] && widths[1] < widths[2], "{widths:?}");
    }

    #[test]
    fn degenerate_assignment_is_an_error() {
        // An enormous intercept-free index pushes every unit into one arm.
        let spec = DgpSpec { n: 2, gamma_iv: (1e6, 1e6), gamma_c: (1e6, 1e6), standardize_links: false, ..small(0) };
        match generate(&spec) {
            Ok(d) => d.require_both_arms().unwrap(),
            Err(e) => assert!(matches!(e, Error::DegenerateArm(MAX_ARM_RETRIES))),
        }
    }
}
