//! Contextual consistency loss.
//!
//! For a batch of `C` categories with `K` variants each, every feature is
//! pulled towards its category centroid and pushed from all features in the
//! batch:
//!
//! ```text
//! L = -1/(CK) * sum_{c,k} log( exp(sim(v_ck, m_c)/tau) / sum_{c',k'} exp(sim(v_ck, v_c'k')/tau) )
//! ```
//!
//! where `m_c` is the plain mean of the `K` features of category `c` and
//! `sim` is cosine similarity. The denominator includes the anchor itself.
//! Cosine similarity against a zero vector is defined as 0.

use ndarray::{s, Array1, Array2, Array3, ArrayView1, Axis};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{norm, FeatureBatch, FeatureError, Modality};
use crate::geometry::BBox;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("temperature must be positive and finite, got {0}")]
    NonPositiveTau(f64),
    #[error("text batch required when lambda_t > 0")]
    MissingTextBatch,
    #[error("loss weights must be finite and non-negative")]
    InvalidWeight,
    #[error("non-finite loss component")]
    NonFinite,
    #[error("pooling region is empty")]
    EmptyRegion,
    #[error("pooling region {region:?} exceeds the {w}x{h} feature grid")]
    RegionOutOfBounds { region: BBox, w: usize, h: usize },
    #[error(transparent)]
    Feature(#[from] FeatureError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub tau: f64,
    pub lambda_i: f64,
    pub lambda_t: f64,
    /// L2-normalize each feature before centroids are formed.
    pub prenormalize: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            tau: 1.0,
            lambda_i: 0.15,
            lambda_t: 0.05,
            prenormalize: false,
        }
    }
}

impl LossConfig {
    /// Weights for detectors whose image and text encoders do not interact:
    /// the text term is switched off.
    pub fn decoupled() -> Self {
        Self {
            lambda_t: 0.0,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<(), LossError> {
        check_tau(self.tau)?;
        for w in [self.lambda_i, self.lambda_t] {
            if !(w >= 0.0 && w.is_finite()) {
                return Err(LossError::InvalidWeight);
            }
        }
        Ok(())
    }
}

fn check_tau(tau: f64) -> Result<(), LossError> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(LossError::NonPositiveTau(tau))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolMode {
    #[default]
    Mean,
    Max,
}

/// Spatial grid of feature vectors, indexed `(row, col, dim)`, with the
/// region to pool in grid coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionFeatureMap {
    pub grid: Array3<f64>,
    pub region: BBox,
}

/// Context-aware aggregated feature: pools every grid vector inside the
/// region.
pub fn caaf_pool(rf: &RegionFeatureMap, mode: PoolMode) -> Result<Array1<f64>, LossError> {
    let (h, w, d) = rf.grid.dim();
    let r = rf.region;
    if d == 0 {
        return Err(LossError::EmptyRegion);
    }
    if !r.fits_within(w as u32, h as u32) {
        return Err(LossError::RegionOutOfBounds { region: r, w, h });
    }
    let view = rf.grid.slice(s![
        r.y() as usize..r.bottom() as usize,
        r.x() as usize..r.right() as usize,
        ..
    ]);
    let cells = view.len_of(Axis(0)) * view.len_of(Axis(1));
    if cells == 0 {
        return Err(LossError::EmptyRegion);
    }
    let flat = view.to_shape((cells, d)).expect("contiguous region reshapes");
    Ok(match mode {
        PoolMode::Mean => flat.mean_axis(Axis(0)).expect("non-empty"),
        PoolMode::Max => flat.fold_axis(Axis(0), f64::NEG_INFINITY, |m, v| m.max(*v)),
    })
}

/// Sum in ascending value order, so any permutation of the inputs gives the
/// same bits.
fn ordered_sum(mut v: Vec<f64>) -> f64 {
    v.sort_unstable_by(f64::total_cmp);
    v.into_iter().sum()
}

/// Mean of the `K` features of category `c`.
pub fn centroid(fb: &FeatureBatch, c: usize) -> Array1<f64> {
    let group = fb.values().slice(s![c, .., ..]);
    let k = group.nrows() as f64;
    group.columns().into_iter().map(|col| ordered_sum(col.to_vec()) / k).collect()
}

/// Cosine similarity; 0 when either vector is zero.
pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let na = norm(a);
    let nb = norm(b);
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        a.dot(&b) / (na * nb)
    }
}

/// Shared intermediate quantities for loss and gradient.
struct Pass {
    n: usize,
    k: usize,
    norms: Array1<f64>,
    /// Unit vectors, one row per (c, k) flattened as `c * K + k`.
    units: Array2<f64>,
    /// Pairwise cosine similarities.
    sims: Array2<f64>,
    centroids: Array2<f64>,
    centroid_norms: Array1<f64>,
    /// cos(v_i, m_c(i))
    pos: Array1<f64>,
    /// Row-wise softmax of sims / tau.
    probs: Array2<f64>,
    /// log-sum-exp of each row of sims / tau.
    lse: Array1<f64>,
}

fn forward(fb: &FeatureBatch, tau: f64) -> Pass {
    let (c, k, d) = fb.dims();
    let n = c * k;
    let flat = fb.values().to_shape((n, d)).expect("reshape").to_owned();
    let norms: Array1<f64> = flat.rows().into_iter().map(norm).collect();
    let units = &flat / &norms.view().insert_axis(Axis(1));
    let mut sims = Array2::from_shape_fn((n, n), |(i, j)| units.row(i).dot(&units.row(j)).clamp(-1.0, 1.0));
    sims.diag_mut().fill(1.0);

    let centroids = Array2::from_shape_fn((c, d), |(ci, di)| {
        ordered_sum(fb.values().slice(s![ci, .., di]).to_vec()) / k as f64
    });
    let centroid_norms: Array1<f64> = centroids.rows().into_iter().map(norm).collect();
    let pos: Array1<f64> = (0..n)
        .map(|i| {
            let cn = centroid_norms[i / k];
            if k == 1 {
                // the centroid is the anchor itself
                1.0
            } else if cn == 0.0 {
                0.0
            } else {
                (units.row(i).dot(&centroids.row(i / k)) / cn).clamp(-1.0, 1.0)
            }
        })
        .collect();

    let mut probs = Array2::zeros((n, n));
    let mut lse = Array1::zeros(n);
    for i in 0..n {
        let row = sims.row(i).mapv(|s| s / tau);
        let max = row.fold(f64::NEG_INFINITY, |m, v| m.max(*v));
        let e = row.mapv(|v| (v - max).exp());
        let z = ordered_sum(e.to_vec());
        lse[i] = max + z.ln();
        probs.row_mut(i).assign(&(e / z));
    }
    Pass {
        n,
        k,
        norms,
        units,
        sims,
        centroids,
        centroid_norms,
        pos,
        probs,
        lse,
    }
}

/// Consistency loss of one modality.
pub fn modality_consistency_loss(fb: &FeatureBatch, tau: f64) -> Result<f64, LossError> {
    check_tau(tau)?;
    let p = forward(fb, tau);
    let total = ordered_sum((0..p.n).map(|i| p.lse[i] - p.pos[i] / tau).collect());
    Ok(total / p.n as f64)
}

/// Gradient of [`modality_consistency_loss`] with respect to every feature
/// entry, including the paths through the centroids.
pub fn modality_consistency_grad(fb: &FeatureBatch, tau: f64) -> Result<Array3<f64>, LossError> {
    check_tau(tau)?;
    let p = forward(fb, tau);
    let (c, k, d) = fb.dims();
    let scale = 1.0 / (p.n as f64 * tau);

    // dL/d sims[i][j] = scale * probs[i][j]; sims is symmetric so each pair
    // contributes through both arguments.
    let w = p.probs.mapv(|v| v * scale);
    let a = &w + &w.t();
    let mut grad = Array2::<f64>::zeros((p.n, d));
    for i in 0..p.n {
        let coeff: f64 = a.row(i).dot(&p.sims.row(i));
        let mut g = a.row(i).dot(&p.units);
        g.scaled_add(-coeff, &p.units.row(i));
        grad.row_mut(i).assign(&(g / p.norms[i]));
    }

    // Positive term: -scale * cos(v_i, m_c).
    let mut centroid_grad = Array2::<f64>::zeros((c, d));
    for i in 0..p.n {
        let ci = i / p.k;
        let cn = p.centroid_norms[ci];
        if cn == 0.0 {
            continue;
        }
        let m_unit = p.centroids.row(ci).mapv(|v| v / cn);
        let cos = p.pos[i];
        let mut gv = m_unit.clone();
        gv.scaled_add(-cos, &p.units.row(i));
        grad.row_mut(i).scaled_add(-scale / p.norms[i], &gv);

        let mut gm = p.units.row(i).to_owned();
        gm.scaled_add(-cos, &m_unit);
        centroid_grad.row_mut(ci).scaled_add(-scale / cn, &gm);
    }
    for i in 0..p.n {
        let ci = i / p.k;
        grad.row_mut(i).scaled_add(1.0 / k as f64, &centroid_grad.row(ci));
    }
    Ok(grad.into_shape_with_order((c, k, d)).expect("reshape"))
}

/// Batch with every feature scaled to unit length.
pub fn prenormalized(fb: &FeatureBatch) -> FeatureBatch {
    let mut v = fb.values().clone();
    for mut row in v.lanes_mut(Axis(2)) {
        let n = norm(row.view());
        row.mapv_inplace(|x| x / n);
    }
    FeatureBatch::new(v, fb.modality()).expect("unit vectors are valid")
}

/// Loss and gradient honouring the `prenormalize` switch.
pub fn modality_loss_and_grad(fb: &FeatureBatch, tau: f64, prenormalize: bool) -> Result<(f64, Array3<f64>), LossError> {
    if !prenormalize {
        return Ok((modality_consistency_loss(fb, tau)?, modality_consistency_grad(fb, tau)?));
    }
    let u = prenormalized(fb);
    let loss = modality_consistency_loss(&u, tau)?;
    let gu = modality_consistency_grad(&u, tau)?;
    // chain through x -> x/|x|: (I - u u^T) g / |x|
    let mut g = gu;
    for ((mut gl, ul), xl) in g
        .lanes_mut(Axis(2))
        .into_iter()
        .zip(u.values().lanes(Axis(2)))
        .zip(fb.values().lanes(Axis(2)))
    {
        let proj = gl.dot(&ul);
        let n = norm(xl);
        gl.scaled_add(-proj, &ul);
        gl.mapv_inplace(|v| v / n);
    }
    Ok((loss, g))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyTerms {
    pub image: f64,
    /// `None` when the text weight is zero and the term was not evaluated.
    pub text: Option<f64>,
    pub combined: f64,
}

/// `lambda_t * L_text + lambda_i * L_image`; the text term is skipped
/// entirely when its weight is zero.
pub fn consistency_terms(img: &FeatureBatch, txt: Option<&FeatureBatch>, cfg: &LossConfig) -> Result<ConsistencyTerms, LossError> {
    cfg.validate()?;
    let eval = |fb: &FeatureBatch| -> Result<f64, LossError> {
        if cfg.prenormalize {
            modality_consistency_loss(&prenormalized(fb), cfg.tau)
        } else {
            modality_consistency_loss(fb, cfg.tau)
        }
    };
    let image = eval(img)?;
    let text = if cfg.lambda_t > 0.0 {
        Some(eval(txt.ok_or(LossError::MissingTextBatch)?)?)
    } else {
        None
    };
    let combined = cfg.lambda_i * image + text.map_or(0.0, |t| cfg.lambda_t * t);
    Ok(ConsistencyTerms { image, text, combined })
}

pub fn consistency_loss(img: &FeatureBatch, txt: Option<&FeatureBatch>, cfg: &LossConfig) -> Result<f64, LossError> {
    Ok(consistency_terms(img, txt, cfg)?.combined)
}

/// Detector objective: classification + localization + consistency.
pub fn total_loss(l_cls: f64, l_loc: f64, l_cons: f64) -> Result<f64, LossError> {
    if [l_cls, l_loc, l_cons].iter().all(|v| v.is_finite()) {
        Ok(l_cls + l_loc + l_cons)
    } else {
        Err(LossError::NonFinite)
    }
}

/// Random batch for checks and fixtures: each feature has a uniformly random
/// direction and a norm drawn uniformly from `[0.5, 2]`.
pub fn random_batch(c: usize, k: usize, d: usize, seed: u64) -> FeatureBatch {
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut values = Array3::<f64>::zeros((c, k, d));
    for mut lane in values.lanes_mut(Axis(2)) {
        let n = loop {
            for x in lane.iter_mut() {
                *x = rng.sample(StandardNormal);
            }
            let n = norm(lane.view());
            if n > 1e-6 {
                break n;
            }
        };
        let target: f64 = rng.gen_range(0.5..2.0);
        lane.mapv_inplace(|x| x * target / n);
    }
    FeatureBatch::new(values, Modality::Image).expect("non-zero features")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub loss: f64,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    pub entries: usize,
}

/// Denominator floor for the relative error so entries whose true gradient
/// is essentially zero are judged on absolute error.
pub const GRAD_REL_FLOOR: f64 = 1e-6;

/// Compares the analytic gradient with central finite differences of step `h`.
pub fn grad_check(fb: &FeatureBatch, tau: f64, h: f64, prenormalize: bool) -> Result<GradCheckReport, LossError> {
    let (loss, analytic) = modality_loss_and_grad(fb, tau, prenormalize)?;
    let eval = |v: Array3<f64>| -> Result<f64, LossError> {
        let b = FeatureBatch::new(v, Modality::Image)?;
        Ok(modality_loss_and_grad(&b, tau, prenormalize)?.0)
    };
    let mut max_abs: f64 = 0.0;
    let mut max_rel: f64 = 0.0;
    for (idx, &a) in analytic.indexed_iter() {
        let mut plus = fb.values().clone();
        plus[idx] += h;
        let mut minus = fb.values().clone();
        minus[idx] -= h;
        let numeric = (eval(plus)? - eval(minus)?) / (2.0 * h);
        let abs = (a - numeric).abs();
        max_abs = max_abs.max(abs);
        max_rel = max_rel.max(abs / a.abs().max(numeric.abs()).max(GRAD_REL_FLOOR));
    }
    Ok(GradCheckReport {
        loss,
        max_abs_error: max_abs,
        max_rel_error: max_rel,
        entries: analytic.len(),
    })
}


#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_batch(c: usize, k: usize, d: usize, seed: u64) -> FeatureBatch {
        crate::loss::random_batch(c, k, d, seed)
    }

    fn identical(c: usize, k: usize) -> FeatureBatch {
        FeatureBatch::new(Array3::from_shape_fn((c, k, 3), |(_, _, d)| [0.3, -1.2, 2.0][d]), Modality::Image).unwrap()
    }

    #[test]
    fn single_feature_has_zero_loss() {
        let fb = FeatureBatch::from_nested(&[vec![vec![0.4, -2.0, 1.0]]], Modality::Image).unwrap();
        assert_eq!(modality_consistency_loss(&fb, 1.0).unwrap(), 0.0);
        let g = modality_consistency_grad(&fb, 1.0).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-15));
        let fd = oracle::fd_grad(&fb.to_nested(), 1.0, 1e-4);
        assert!(fd.iter().flatten().flatten().all(|v| v.abs() < 1e-9));
        for seed in 0..200 {
            let fb = random_batch(1, 1, 1 + seed as usize % 7, seed);
            assert_eq!(modality_consistency_loss(&fb, 0.5).unwrap(), 0.0, "seed {seed}");
        }
    }

    #[test]
    fn identical_features_give_log_ck() {
        let l = modality_consistency_loss(&identical(2, 2), 1.0).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-12);
        assert!((l - 1.386294).abs() < 1e-6);
    }

    #[test]
    fn matches_scalar_loop_oracle() {
        for seed in 0..10 {
            let fb = random_batch(2, 2, 3, seed);
            let fast = modality_consistency_loss(&fb, 1.0).unwrap();
            let slow = oracle::loss(&fb.to_nested(), 1.0);
            assert!(((fast - slow) / slow).abs() < 1e-6, "{fast} vs {slow}");
        }
    }

    #[test]
    fn small_tau_is_stable() {
        let fb = random_batch(3, 3, 4, 9);
        let l = modality_consistency_loss(&fb, 1e-4).unwrap();
        assert!(l.is_finite() && l >= 0.0);
        assert!(matches!(modality_consistency_loss(&fb, 0.0), Err(LossError::NonPositiveTau(_))));
        assert!(matches!(modality_consistency_loss(&fb, -1.0), Err(LossError::NonPositiveTau(_))));
    }

    #[test]
    fn gradient_matches_independent_finite_differences() {
        for seed in 0..5 {
            let fb = random_batch(3, 2, 4, 100 + seed);
            let g = modality_consistency_grad(&fb, 0.7).unwrap();
            let fd = oracle::fd_grad(&fb.to_nested(), 0.7, 1e-4);
            for ((c, k, d), a) in g.indexed_iter() {
                let n = fd[c][k][d];
                assert!((a - n).abs() / a.abs().max(n.abs()).max(GRAD_REL_FLOOR) < 1e-4, "{a} vs {n}");
            }
        }
    }

    fn radial_dots(g: &Array3<f64>, fb: &FeatureBatch) -> Vec<(f64, f64)> {
        g.lanes(Axis(2))
            .into_iter()
            .zip(fb.values().lanes(Axis(2)))
            .map(|(gv, v)| (gv.dot(&v), norm(gv) * norm(v)))
            .collect()
    }

    #[test]
    fn gradient_is_orthogonal_to_global_scaling() {
        // The loss is invariant to scaling all features together, so the
        // gradient has no component along the full feature tensor.
        let fb = random_batch(4, 3, 5, 77);
        let g = modality_consistency_grad(&fb, 1.0).unwrap();
        let total: f64 = radial_dots(&g, &fb).iter().map(|(d, _)| d).sum();
        let scale: f64 = radial_dots(&g, &fb).iter().map(|(_, n)| n).sum();
        assert!(total.abs() <= 1e-9 * scale, "{total}");
    }

    #[test]
    fn gradient_is_orthogonal_per_vector_when_centroid_direction_is_fixed() {
        // Single-variant categories and prenormalized features make every
        // term scale-invariant in each vector separately.
        for (fb, pre) in [(random_batch(4, 1, 5, 3), false), (random_batch(3, 3, 4, 4), true)] {
            let (_, g) = modality_loss_and_grad(&fb, 1.0, pre).unwrap();
            for (dot, scale) in radial_dots(&g, &fb) {
                assert!(dot.abs() <= 1e-6 * scale.max(1e-12), "{dot} vs {scale}");
            }
        }
    }

    #[test]
    fn raw_centroid_breaks_per_vector_scale_invariance() {
        // Rescaling one member moves its category centroid, so with K > 1
        // the radial gradient component is generally non-zero.
        let fb = random_batch(2, 3, 4, 8);
        let g = modality_consistency_grad(&fb, 1.0).unwrap();
        assert!(radial_dots(&g, &fb).iter().any(|(d, s)| d.abs() > 1e-6 * s));
    }

    #[test]
    fn antipodal_centroid_is_zero() {
        let fb = FeatureBatch::from_nested(&[vec![vec![1.0, 0.0], vec![-1.0, 0.0]]], Modality::Image).unwrap();
        assert_eq!(centroid(&fb, 0).to_vec(), vec![0.0, 0.0]);
        assert_eq!(cosine(fb.values().slice(s![0, 0, ..]), centroid(&fb, 0).view()), 0.0);
        let l = modality_consistency_loss(&fb, 1.0).unwrap();
        assert!((l - oracle::loss(&fb.to_nested(), 1.0)).abs() < 1e-12);
        assert!(modality_consistency_grad(&fb, 1.0).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn centroid_of_one_is_itself() {
        let fb = random_batch(2, 1, 3, 5);
        assert_eq!(centroid(&fb, 1), fb.values().slice(s![1, 0, ..]).to_owned());
    }

    #[test]
    fn prenormalized_gradient_matches_fd() {
        let fb = random_batch(2, 3, 4, 11);
        let r = grad_check(&fb, 1.0, 1e-4, true).unwrap();
        assert!(r.max_rel_error < 1e-4, "{r:?}");
    }

    #[test]
    fn weighted_combination() {
        let fb = identical(2, 2);
        let cfg = LossConfig::default();
        let l = consistency_loss(&fb, Some(&fb), &cfg).unwrap();
        assert!((l - 0.2 * 4f64.ln()).abs() < 1e-12);

        let img = random_batch(2, 2, 3, 1);
        let li = modality_consistency_loss(&img, 1.0).unwrap();
        let t = consistency_terms(&img, None, &LossConfig::decoupled()).unwrap();
        assert_eq!(t.text, None);
        assert!((t.combined - 0.15 * li).abs() < 1e-15);
        assert!(matches!(
            consistency_loss(&img, None, &LossConfig::default()),
            Err(LossError::MissingTextBatch)
        ));
    }

    #[test]
    fn total_loss_sums() {
        assert_eq!(total_loss(1.0, 2.0, 3.0).unwrap(), 6.0);
        assert_eq!(total_loss(0.0, 0.0, 0.25).unwrap(), 0.25);
        assert!(matches!(total_loss(f64::NAN, 0.0, 0.0), Err(LossError::NonFinite)));
        assert!(matches!(total_loss(0.0, f64::INFINITY, 0.0), Err(LossError::NonFinite)));
    }

    #[test]
    fn caaf_examples() {
        let grid = Array3::from_shape_fn((4, 5, 2), |(r, c, d)| if d == 0 { 7.0 } else { -1.5 } + 0.0 * (r + c) as f64);
        let rf = RegionFeatureMap {
            grid,
            region: BBox::new(1, 1, 3, 2).unwrap(),
        };
        assert_eq!(caaf_pool(&rf, PoolMode::Mean).unwrap().to_vec(), vec![7.0, -1.5]);

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let grid = Array3::from_shape_fn((6, 7, 3), |_| rng.gen_range(-5.0..5.0));
        let single = RegionFeatureMap {
            grid: grid.clone(),
            region: BBox::new(2, 4, 1, 1).unwrap(),
        };
        assert_eq!(caaf_pool(&single, PoolMode::Mean).unwrap(), grid.slice(s![4, 2, ..]).to_owned());

        let region = BBox::new(1, 2, 4, 3).unwrap();
        let rf = RegionFeatureMap { grid: grid.clone(), region };
        let pooled = caaf_pool(&rf, PoolMode::Mean).unwrap();
        let mut sum = [0.0; 3];
        let mut n = 0.0;
        for r in 2..5 {
            for c in 1..5 {
                for d in 0..3 {
                    sum[d] += grid[[r, c, d]];
                }
                n += 1.0;
            }
        }
        for d in 0..3 {
            let want = sum[d] / n;
            assert!((pooled[d] - want).abs() <= 1e-6 * want.abs().max(1e-12));
        }
        let mx = caaf_pool(&rf, PoolMode::Max).unwrap();
        assert!(mx.iter().zip(pooled.iter()).all(|(m, p)| m >= p));

        let bad = RegionFeatureMap {
            grid,
            region: BBox::new(5, 0, 4, 1).unwrap(),
        };
        assert!(matches!(caaf_pool(&bad, PoolMode::Mean), Err(LossError::RegionOutOfBounds { .. })));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn invariants(c in 1usize..5, k in 1usize..5, d in 1usize..6, seed in any::<u64>(), scale in prop_oneof![Just(1e-3), Just(1.0), Just(1e3)]) {
            let fb = random_batch(c, k, d, seed);
            let base = modality_consistency_loss(&fb, 1.0).unwrap();
            prop_assert!(base >= 0.0);
            let scaled = FeatureBatch::new(fb.values() * scale, Modality::Image).unwrap();
            let l = modality_consistency_loss(&scaled, 1.0).unwrap();
            prop_assert!((l - base).abs() <= 1e-9 * base.abs().max(1e-300) || (l - base).abs() < 1e-15);
        }
    }
}
