//! Seen-emitter identifier: a separate projector into an `n`-dimensional
//! space, one reciprocal point per seen class, adversarial reciprocal point
//! losses and a calibrated threshold that yields the ±1 indicator.

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::encoder::Embedding;
use crate::error::{CashError, Result};
use crate::nn::{dot, l2_normalize, l2_normalize_backward, prefixed, Mlp, MlpCache, ParamView, Parameterized};
use crate::rng::Rng;
use crate::signal::EmitterId;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IdentifierConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    /// Projector output dimension `n`.
    pub output_dim: usize,
    pub lambda: f64,
    pub gamma: f64,
    /// Scale each projector output `z` to unit length.
    #[serde(default)]
    pub normalize_output: bool,
}

impl IdentifierConfig {
    pub fn paper(input_dim: usize) -> Self {
        Self { input_dim, hidden_dim: 256, output_dim: 128, lambda: 0.1, gamma: 0.95, normalize_output: false }
    }

    pub fn desk(input_dim: usize) -> Self {
        Self { input_dim, hidden_dim: 64, output_dim: 32, lambda: 30.0, gamma: 0.95, normalize_output: true }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.output_dim == 0 {
            return Err(CashError::InvalidParameter("identifier widths must be positive".into()));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(CashError::InvalidParameter(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(CashError::InvalidParameter(format!("lambda must be nonnegative, got {}", self.lambda)));
        }
        Ok(())
    }
}

/// One learnable point per seen class plus the shared margin radius `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReciprocalPointSet {
    pub classes: Vec<EmitterId>,
    /// Row-major `classes.len() × dim`.
    pub points: Vec<f64>,
    pub dim: usize,
    pub radius: Vec<f64>,
    pub lambda: f64,
    shape: [usize; 2],
}

impl ReciprocalPointSet {
    pub fn new(classes: Vec<EmitterId>, dim: usize, lambda: f64, rng: &mut Rng) -> Result<Self> {
        if classes.is_empty() {
            return Err(CashError::Empty("seen classes"));
        }
        let normal = Normal::new(0.0, 0.1).expect("valid normal");
        let points = (0..classes.len() * dim).map(|_| normal.sample(rng)).collect();
        Ok(Self::from_parts(classes, points, dim, 0.0, lambda))
    }

    pub fn from_parts(classes: Vec<EmitterId>, points: Vec<f64>, dim: usize, radius: f64, lambda: f64) -> Self {
        assert_eq!(points.len(), classes.len() * dim, "point matrix shape");
        let shape = [classes.len(), dim];
        Self { classes, points, dim, radius: vec![radius], lambda, shape }
    }

    pub fn len(&self) -> usize {
        self.classes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.classes.is_empty()
    }

    pub fn point(&self, u: usize) -> &[f64] {
        &self.points[u * self.dim..(u + 1) * self.dim]
    }

    pub fn radius(&self) -> f64 {
        self.radius[0]
    }

    pub fn clamp_radius(&mut self) {
        if self.radius[0] < 0.0 {
            self.radius[0] = 0.0;
        }
    }

    pub fn class_index(&self, label: EmitterId) -> Result<usize> {
        self.classes.iter().position(|&c| c == label).ok_or(CashError::UnknownLabel(label as usize))
    }

    fn check(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim {
            return Err(CashError::DimensionMismatch {
                context: "reciprocal point",
                expected: self.dim,
                actual: z.len(),
            });
        }
        Ok(())
    }

    /// `d(z, P_u)` for every class.
    pub fn distances(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.check(z)?;
        (0..self.len()).map(|u| reciprocal_distance(z, self.point(u))).collect()
    }

    /// `max_u d(z, P_u)`.
    pub fn max_distance(&self, z: &[f64]) -> Result<f64> {
        Ok(self.distances(z)?.into_iter().fold(f64::NEG_INFINITY, f64::max))
    }
}

impl Parameterized for ReciprocalPointSet {
    fn params(&self) -> Vec<(String, ParamView<'_>)> {
        vec![
            ("points".into(), ParamView { shape: &self.shape, data: &self.points }),
            ("radius".into(), ParamView { shape: &[1], data: &self.radius }),
        ]
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        vec![&mut self.points, &mut self.radius]
    }
}

/// Spatial part `(1/n)‖z − P‖²`.
pub fn spatial_distance(z: &[f64], p: &[f64]) -> Result<f64> {
    if z.len() != p.len() {
        return Err(CashError::DimensionMismatch {
            context: "reciprocal distance",
            expected: p.len(),
            actual: z.len(),
        });
    }
    Ok(z.iter().zip(p).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / z.len() as f64)
}

/// `d = (1/n)‖z − P‖² − z·P`.
pub fn reciprocal_distance(z: &[f64], p: &[f64]) -> Result<f64> {
    Ok(spatial_distance(z, p)? - dot(z, p))
}

/// Loss value with gradients for the projected features, the points and `R`.
#[derive(Debug, Clone, PartialEq)]
pub struct ArplGrad {
    pub value: f64,
    pub dz: Vec<Vec<f64>>,
    pub dpoints: Vec<f64>,
    pub dradius: f64,
}

impl ArplGrad {
    fn zeros(zs: &[Vec<f64>], points: &ReciprocalPointSet) -> Self {
        Self {
            value: 0.0,
            dz: zs.iter().map(|z| vec![0.0; z.len()]).collect(),
            dpoints: vec![0.0; points.points.len()],
            dradius: 0.0,
        }
    }

    fn add_scaled(mut self, other: &ArplGrad, w: f64) -> Self {
        self.value += w * other.value;
        for (a, b) in self.dz.iter_mut().flatten().zip(other.dz.iter().flatten()) {
            *a += w * b;
        }
        for (a, b) in self.dpoints.iter_mut().zip(&other.dpoints) {
            *a += w * b;
        }
        self.dradius += w * other.dradius;
        self
    }
}

fn check_batch(zs: &[Vec<f64>], labels: &[EmitterId], points: &ReciprocalPointSet) -> Result<Vec<usize>> {
    if zs.is_empty() {
        return Err(CashError::Empty("identifier batch"));
    }
    if zs.len() != labels.len() {
        return Err(CashError::DimensionMismatch {
            context: "identifier labels",
            expected: zs.len(),
            actual: labels.len(),
        });
    }
    for z in zs {
        points.check(z)?;
    }
    labels.iter().map(|&l| points.class_index(l)).collect()
}

/// Cross entropy of class `y` under a softmax over `logits`, with the
/// softmax probabilities.
fn softmax_ce(logits: &[f64], y: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    (lse - logits[y], logits.iter().map(|v| (v - lse).exp()).collect())
}

/// `L_CE`: cross entropy of a softmax over `+d`, so the farthest reciprocal
/// point is the most probable class.
pub fn arpl_ce_loss(zs: &[Vec<f64>], labels: &[EmitterId], points: &ReciprocalPointSet) -> Result<ArplGrad> {
    let idx = check_batch(zs, labels, points)?;
    let b = zs.len() as f64;
    let n = points.dim as f64;
    let mut out = ArplGrad::zeros(zs, points);
    for ((z, &y), dz) in zs.iter().zip(&idx).zip(out.dz.iter_mut()) {
        let (loss, probs) = softmax_ce(&points.distances(z)?, y);
        out.value += loss / b;
        for (u, pu) in probs.iter().enumerate() {
            let coeff = (pu - if u == y { 1.0 } else { 0.0 }) / b;
            let p = points.point(u);
            let dp = &mut out.dpoints[u * points.dim..(u + 1) * points.dim];
            for i in 0..z.len() {
                let diff = 2.0 / n * (z[i] - p[i]);
                dz[i] += coeff * (diff - p[i]);
                dp[i] += coeff * (-diff - z[i]);
            }
        }
    }
    Ok(out)
}

/// `L_AMC`: mean hinge of the spatial distance to the true class point
/// beyond the radius `R`.
pub fn arpl_margin_loss(zs: &[Vec<f64>], labels: &[EmitterId], points: &ReciprocalPointSet) -> Result<ArplGrad> {
    let idx = check_batch(zs, labels, points)?;
    let b = zs.len() as f64;
    let n = points.dim as f64;
    let r = points.radius();
    let mut out = ArplGrad::zeros(zs, points);
    for ((z, &y), dz) in zs.iter().zip(&idx).zip(out.dz.iter_mut()) {
        let p = points.point(y);
        let ds = spatial_distance(z, p)?;
        if ds > r {
            out.value += (ds - r) / b;
            out.dradius -= 1.0 / b;
            let dp = &mut out.dpoints[y * points.dim..(y + 1) * points.dim];
            for i in 0..z.len() {
                let g = 2.0 / n * (z[i] - p[i]) / b;
                dz[i] += g;
                dp[i] -= g;
            }
        }
    }
    Ok(out)
}

/// `L_I = L_CE + λ·L_AMC`.
pub fn arpl_loss(zs: &[Vec<f64>], labels: &[EmitterId], points: &ReciprocalPointSet) -> Result<ArplGrad> {
    let ce = arpl_ce_loss(zs, labels, points)?;
    let amc = arpl_margin_loss(zs, labels, points)?;
    Ok(ce.add_scaled(&amc, points.lambda))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentifierState {
    pub threshold: f64,
    pub gamma: f64,
    pub calibration_set_size: usize,
}

/// Sorts `max_u d` over the calibration batch in descending order and takes
/// the `⌊γ·B⌋`-th value (1-based, clamped to `[1, B]`).
pub fn calibrate_threshold(zs: &[Vec<f64>], points: &ReciprocalPointSet, gamma: f64) -> Result<IdentifierState> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(CashError::InvalidParameter(format!("gamma must lie in (0, 1), got {gamma}")));
    }
    if zs.is_empty() {
        return Err(CashError::Empty("calibration batch"));
    }
    let mut m: Vec<f64> = zs.iter().map(|z| points.max_distance(z)).collect::<Result<_>>()?;
    m.sort_by(|a, b| b.total_cmp(a));
    let size = m.len();
    // the epsilon keeps γ·B from flooring one below an exact integer
    let t = ((gamma * size as f64 + 1e-9).floor() as usize).clamp(1, size);
    let threshold = m[t - 1];
    if !threshold.is_finite() {
        return Err(CashError::Diverged { epoch: 0, component: "identifier threshold".into() });
    }
    Ok(IdentifierState { threshold, gamma, calibration_set_size: size })
}

/// `+1` when `max_u d(z, P_u)` strictly exceeds the threshold.
pub fn indicator(z: &[f64], points: &ReciprocalPointSet, state: Option<&IdentifierState>) -> Result<i8> {
    let state = state.ok_or(CashError::Uncalibrated)?;
    Ok(if points.max_distance(z)? > state.threshold { 1 } else { -1 })
}

/// Forward state of one projection, kept for the backward pass.
pub struct ProjectCache {
    mlp: MlpCache,
    unit: Option<(Vec<f64>, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Identifier {
    pub config: IdentifierConfig,
    pub projector: Mlp,
    pub points: ReciprocalPointSet,
    pub state: Option<IdentifierState>,
}

impl Identifier {
    pub fn new(config: IdentifierConfig, seen: Vec<EmitterId>, rng: &mut Rng) -> Result<Self> {
        config.validate()?;
        let projector = Mlp::new(&[config.input_dim, config.hidden_dim, config.output_dim], false, rng);
        let points = ReciprocalPointSet::new(seen, config.output_dim, config.lambda, rng)?;
        Ok(Self { config, projector, points, state: None })
    }

    fn check(&self, e: &Embedding) -> Result<()> {
        if e.0.len() != self.config.input_dim {
            return Err(CashError::DimensionMismatch {
                context: "identifier input",
                expected: self.config.input_dim,
                actual: e.0.len(),
            });
        }
        Ok(())
    }

    /// `z = O(e)`.
    pub fn separate_project(&self, e: &Embedding) -> Result<Vec<f64>> {
        Ok(self.project_cached(e)?.0)
    }

    pub fn project_cached(&self, e: &Embedding) -> Result<(Vec<f64>, ProjectCache)> {
        self.check(e)?;
        let (raw, mlp) = self.projector.forward_cached(&e.0);
        if self.config.normalize_output {
            let (z, norm) = l2_normalize(&raw);
            Ok((z.clone(), ProjectCache { mlp, unit: Some((z, norm)) }))
        } else {
            Ok((raw, ProjectCache { mlp, unit: None }))
        }
    }

    /// Accumulates projector gradients and returns `dL/de`.
    pub fn project_backward(&self, cache: &ProjectCache, dz: &[f64], grad: &mut Identifier) -> Vec<f64> {
        let d_raw = match &cache.unit {
            Some((z, norm)) => l2_normalize_backward(z, *norm, dz),
            None => dz.to_vec(),
        };
        self.projector.backward(&cache.mlp, &d_raw, &mut grad.projector)
    }

    pub fn calibrate(&mut self, embeddings: &[Embedding]) -> Result<IdentifierState> {
        let zs: Vec<Vec<f64>> = embeddings.iter().map(|e| self.separate_project(e)).collect::<Result<_>>()?;
        let state = calibrate_threshold(&zs, &self.points, self.config.gamma)?;
        self.state = Some(state);
        Ok(state)
    }

    pub fn indicate(&self, e: &Embedding) -> Result<i8> {
        let z = self.separate_project(e)?;
        indicator(&z, &self.points, self.state.as_ref())
    }
}

impl Parameterized for Identifier {
    fn params(&self) -> Vec<(String, ParamView<'_>)> {
        let mut v = prefixed("projector", self.projector.params());
        v.extend(prefixed("reciprocal", self.points.params()));
        v
    }

    fn params_mut(&mut self) -> Vec<&mut [f64]> {
        let mut v = self.projector.params_mut();
        v.extend(self.points.params_mut());
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{central_difference, max_relative_error};
    use crate::rng;
    use rand::Rng as _;

    fn set(points: Vec<Vec<f64>>, radius: f64, lambda: f64) -> ReciprocalPointSet {
        let dim = points[0].len();
        let classes = (0..points.len() as u32).collect();
        ReciprocalPointSet::from_parts(classes, points.concat(), dim, radius, lambda)
    }

    fn random_vecs(r: &mut Rng, count: usize, dim: usize) -> Vec<Vec<f64>> {
        (0..count).map(|_| (0..dim).map(|_| r.random_range(-1.0..1.0)).collect()).collect()
    }

    #[test]
    fn distance_fixtures() {
        assert_eq!(reciprocal_distance(&[0.0, 0.0], &[0.0, 0.0]).unwrap(), 0.0);
        let p = [2.0f64.sqrt(), 2.0f64.sqrt()];
        assert!(spatial_distance(&p, &p).unwrap().abs() < 1e-12);
        assert!((reciprocal_distance(&p, &p).unwrap() + 4.0).abs() < 1e-12);
        assert!((reciprocal_distance(&[1.0, 0.0], &[0.0, 1.0]).unwrap() - 1.0).abs() < 1e-12);
        assert!(reciprocal_distance(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn distance_is_symmetric() {
        let mut r = rng::stream(1, "id");
        for _ in 0..20 {
            let v = random_vecs(&mut r, 2, 5);
            let a = reciprocal_distance(&v[0], &v[1]).unwrap();
            let b = reciprocal_distance(&v[1], &v[0]).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn ce_fixtures() {
        // d(z, P_0) = 1 (orthogonal unit vectors), d(z, P_1) = 0 (zero point)
        let points = set(vec![vec![0.0, 1.0], vec![0.0, 0.0]], 0.0, 0.1);
        let z = vec![vec![1.0, 0.0]];
        let d = points.distances(&z[0]).unwrap();
        assert!((d[0] - 1.0).abs() < 1e-12 && (d[1] - 0.5).abs() < 1e-12);
        // z at the origin makes every distance the spatial norm; pick points
        // so d = 1 and d = 0 exactly.
        let points = set(vec![vec![2f64.sqrt(), 0.0], vec![0.0, 0.0]], 0.0, 0.1);
        let z = vec![vec![0.0, 0.0]];
        let d = points.distances(&z[0]).unwrap();
        assert!((d[0] - 1.0).abs() < 1e-12 && d[1].abs() < 1e-12);
        let ce = arpl_ce_loss(&z, &[0], &points).unwrap().value;
        let e = std::f64::consts::E;
        assert!((ce - -(e / (e + 1.0)).ln()).abs() < 1e-9);
        assert!((ce - 0.3133).abs() < 1e-4);

        let equal = set(vec![vec![0.0; 3]; 4], 0.0, 0.1);
        let ce = arpl_ce_loss(&[vec![0.3, -0.2, 0.5]], &[2], &equal).unwrap().value;
        assert!((ce - 4f64.ln()).abs() < 1e-12);
        assert!(matches!(arpl_ce_loss(&z, &[9], &points), Err(CashError::UnknownLabel(9))));
    }

    #[test]
    fn margin_fixtures_and_combined_loss() {
        // d_s = ‖z − P‖²/2 = 2.5 with z − P = (2, 1); R = 0.5 → hinge 2
        let points = set(vec![vec![0.0, 0.0], vec![1.0, 1.0]], 0.5, 1.0);
        let z = vec![vec![2.0, 1.0]];
        assert!((arpl_margin_loss(&z, &[0], &points).unwrap().value - 2.0).abs() < 1e-12);
        let on_boundary = set(vec![vec![0.0, 0.0], vec![1.0, 1.0]], 2.5, 1.0);
        assert_eq!(arpl_margin_loss(&z, &[0], &on_boundary).unwrap().value, 0.0);

        let ce = arpl_ce_loss(&z, &[0], &points).unwrap().value;
        let total = arpl_loss(&z, &[0], &points).unwrap().value;
        assert!((total - (ce + 2.0)).abs() < 1e-12);
        let mut no_margin = points.clone();
        no_margin.lambda = 0.0;
        assert_eq!(arpl_loss(&z, &[0], &no_margin).unwrap().value, ce);
    }

    #[test]
    fn ce_is_shift_invariant() {
        let mut r = rng::stream(2, "id");
        let d: Vec<f64> = (0..5).map(|_| r.random_range(-3.0..3.0)).collect();
        let (base, pb) = softmax_ce(&d, 1);
        for shift in [-50.0, 3.0, 700.0] {
            let shifted: Vec<f64> = d.iter().map(|v| v + shift).collect();
            let (loss, p) = softmax_ce(&shifted, 1);
            assert!((loss - base).abs() < 1e-9);
            assert!(max_relative_error(&p, &pb) < 1e-9);
        }
    }

    #[test]
    fn loss_gradients_match_finite_differences() {
        let mut r = rng::stream(3, "id");
        let dim = 4;
        let zs = random_vecs(&mut r, 6, dim);
        let labels = [0, 1, 2, 0, 1, 2];
        let pts = random_vecs(&mut r, 3, dim).concat();
        // a radius below every d_s keeps each hinge active and away from 0
        let radius = 0.05;
        let build = |p: &[f64], rad: f64| ReciprocalPointSet::from_parts(vec![0, 1, 2], p.to_vec(), dim, rad, 0.7);
        let points = build(&pts, radius);
        for (z, &y) in zs.iter().zip(&labels) {
            assert!(spatial_distance(z, points.point(y as usize)).unwrap() - radius > 0.1);
        }
        type LossFn = fn(&[Vec<f64>], &[EmitterId], &ReciprocalPointSet) -> Result<ArplGrad>;
        let fns: [(&str, LossFn); 3] = [("ce", arpl_ce_loss), ("amc", arpl_margin_loss), ("arpl", arpl_loss)];
        for (name, f) in fns {
            let g = f(&zs, &labels, &points).unwrap();
            let flat_z: Vec<f64> = zs.concat();
            let nz = central_difference(
                |x| f(&x.chunks(dim).map(<[f64]>::to_vec).collect::<Vec<_>>(), &labels, &points).unwrap().value,
                &flat_z,
            );
            assert!(max_relative_error(&g.dz.concat(), &nz) <= 1e-4, "{name} z");
            let np = central_difference(|x| f(&zs, &labels, &build(x, radius)).unwrap().value, &pts);
            assert!(max_relative_error(&g.dpoints, &np) <= 1e-4, "{name} P");
            let nr = central_difference(|x| f(&zs, &labels, &build(&pts, x[0])).unwrap().value, &[radius]);
            assert!(max_relative_error(&[g.dradius], &nr) <= 1e-4, "{name} R");
        }
    }

    /// Independent oracle: sort values descending and pick by rank.
    fn rank_oracle(m: &[f64], gamma: f64) -> f64 {
        let mut v = m.to_vec();
        v.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let t = ((gamma * v.len() as f64).round() as usize).max(1).min(v.len());
        v[t - 1]
    }

    #[test]
    fn calibration_picks_nineteenth_of_twenty() {
        // with a single zero point, max d = ‖z‖²/n, so z = (√(2k), 0) gives m = k
        let points = set(vec![vec![0.0, 0.0]], 0.0, 0.1);
        let mut r = rng::stream(4, "cal");
        let mut ks: Vec<f64> = (1..=20).map(f64::from).collect();
        for i in (1..ks.len()).rev() {
            ks.swap(i, r.random_range(0..=i));
        }
        let zs: Vec<Vec<f64>> = ks.iter().map(|k| vec![(2.0 * k).sqrt(), 0.0]).collect();
        let state = calibrate_threshold(&zs, &points, 0.95).unwrap();
        assert!((state.threshold - 2.0).abs() < 1e-9);
        assert_eq!(state.calibration_set_size, 20);
        assert!((state.threshold - rank_oracle(&ks, 0.95)).abs() < 1e-9);
        let above = zs.iter().filter(|z| indicator(z, &points, Some(&state)).unwrap() == 1).count();
        assert_eq!(above, 18);

        let high = calibrate_threshold(&zs, &points, 0.999).unwrap();
        assert!((high.threshold - 2.0).abs() < 1e-9);
        let limit = calibrate_threshold(&zs, &points, 1.0 - 1e-11).unwrap();
        assert!((limit.threshold - 1.0).abs() < 1e-9);
        let low = calibrate_threshold(&zs, &points, 0.01).unwrap();
        assert!((low.threshold - 20.0).abs() < 1e-9);
    }

    #[test]
    fn calibration_fraction_tracks_gamma() {
        let mut r = rng::stream(5, "cal");
        let points = set(random_vecs(&mut r, 4, 6), 0.0, 0.1);
        let zs = random_vecs(&mut r, 400, 6);
        for gamma in [0.9, 0.95, 0.99] {
            let state = calibrate_threshold(&zs, &points, gamma).unwrap();
            let above = zs.iter().filter(|z| indicator(z, &points, Some(&state)).unwrap() == 1).count();
            let t = (gamma * 400.0 + 1e-9).floor() as usize;
            assert_eq!(above, t - 1);
            assert!((above as f64 / 400.0 - gamma).abs() <= 2.0 / 400.0);
        }
    }

    #[test]
    fn indicator_is_strict() {
        let points = set(vec![vec![0.0, 0.0]], 0.0, 0.1);
        let z = vec![2.0, 0.0];
        let m = points.max_distance(&z).unwrap();
        let at = IdentifierState { threshold: m, gamma: 0.95, calibration_set_size: 1 };
        assert_eq!(indicator(&z, &points, Some(&at)).unwrap(), -1);
        let below = IdentifierState { threshold: m - 1e-9, ..at };
        assert_eq!(indicator(&z, &points, Some(&below)).unwrap(), 1);
        assert!(matches!(indicator(&z, &points, None), Err(CashError::Uncalibrated)));
    }

    #[test]
    fn calibration_rejects_bad_input() {
        let points = set(vec![vec![0.0, 0.0]], 0.0, 0.1);
        assert!(calibrate_threshold(&[], &points, 0.95).is_err());
        assert!(calibrate_threshold(&[vec![1.0, 1.0]], &points, 1.0).is_err());
        assert!(calibrate_threshold(&[vec![1.0, 1.0]], &points, 0.0).is_err());
        assert!(calibrate_threshold(&[vec![1.0]], &points, 0.5).is_err());
        let one = calibrate_threshold(&[vec![1.0, 1.0]], &points, 0.5).unwrap();
        assert_eq!(one.threshold, points.max_distance(&[1.0, 1.0]).unwrap());
    }

    #[test]
    fn identifier_shapes_and_projector_gradient() {
        let mut r = rng::stream(6, "idm");
        let id = Identifier::new(IdentifierConfig::paper(768), vec![0, 1, 2], &mut r).unwrap();
        let e = Embedding(vec![0.01; 768]);
        assert_eq!(id.separate_project(&e).unwrap().len(), 128);
        assert_eq!(id.separate_project(&e).unwrap(), id.separate_project(&e).unwrap());
        assert!(id.separate_project(&Embedding(vec![0.0; 5])).is_err());
        assert!(matches!(id.indicate(&e), Err(CashError::Uncalibrated)));
        assert_eq!(id.points.radius(), 0.0);

        for normalize_output in [false, true] {
            let cfg = IdentifierConfig {
                input_dim: 5,
                hidden_dim: 6,
                output_dim: 3,
                lambda: 0.5,
                gamma: 0.9,
                normalize_output,
            };
            let id = Identifier::new(cfg, vec![4, 8], &mut r).unwrap();
            let es: Vec<Embedding> = random_vecs(&mut r, 4, 5).into_iter().map(Embedding).collect();
            let labels = [4, 8, 8, 4];
            let objective = |m: &Identifier| {
                let zs: Vec<Vec<f64>> = es.iter().map(|e| m.separate_project(e).unwrap()).collect();
                arpl_loss(&zs, &labels, &m.points).unwrap().value
            };
            let mut grad = id.zeros_like();
            let passes: Vec<_> = es.iter().map(|e| id.project_cached(e).unwrap()).collect();
            let zs: Vec<Vec<f64>> = passes.iter().map(|p| p.0.clone()).collect();
            let g = arpl_loss(&zs, &labels, &id.points).unwrap();
            for ((_, cache), dz) in passes.iter().zip(&g.dz) {
                id.project_backward(cache, dz, &mut grad);
            }
            grad.points.points.copy_from_slice(&g.dpoints);
            grad.points.radius[0] = g.dradius;
            let err = crate::gradcheck::check_module(&id, &grad, 30, &mut r, objective);
            assert!(err <= 1e-4, "{err}");
        }
    }
}
