//! Regularizers coupling the image and text branches.
//!
//! CORAL is the primary term. MMD (polynomial kernel) and a cross-modal
//! triplet hinge are provided for ablations. Every term comes with an
//! analytic gradient with respect to both activation batches so the trainer
//! can inject it into the backward passes.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::numerics::{covariance, dot, frob_sq_diff, Matrix, Rng};

pub const DEFAULT_MMD_OFFSET: f64 = 1.0;
pub const DEFAULT_MMD_DEGREE: u32 = 2;
pub const DEFAULT_TRIPLET_MARGIN: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum AlignmentKind {
    None,
    #[default]
    Coral,
    /// Squared MMD with kernel `(xᵀy + offset)^degree`.
    Mmd { offset: f64, degree: u32 },
    Triplet { margin: f64 },
}


impl AlignmentKind {
    pub fn mmd() -> Self {
        AlignmentKind::Mmd {
            offset: DEFAULT_MMD_OFFSET,
            degree: DEFAULT_MMD_DEGREE,
        }
    }

    pub fn triplet() -> Self {
        AlignmentKind::Triplet {
            margin: DEFAULT_TRIPLET_MARGIN,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            AlignmentKind::Mmd { offset, degree } => {
                if degree < 1 || !offset.is_finite() {
                    return Err(Error::Config(format!(
                        "mmd needs degree >= 1 and finite offset (got {degree}, {offset})"
                    )));
                }
            }
            AlignmentKind::Triplet { margin } => {
                if !(margin > 0.0 && margin.is_finite()) {
                    return Err(Error::Config(format!(
                        "triplet margin must be positive, got {margin}"
                    )));
                }
            }
            AlignmentKind::None | AlignmentKind::Coral => {}
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            AlignmentKind::None => "none",
            AlignmentKind::Coral => "coral",
            AlignmentKind::Mmd { .. } => "mmd",
            AlignmentKind::Triplet { .. } => "triplet",
        }
    }
}

impl fmt::Display for AlignmentKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for AlignmentKind {
    type Err = Error;

    /// Parses the kind with default parameters.
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" | "n.a." => Ok(AlignmentKind::None),
            "coral" => Ok(AlignmentKind::Coral),
            "mmd" => Ok(AlignmentKind::mmd()),
            "triplet" => Ok(AlignmentKind::triplet()),
            other => Err(Error::Config(format!("unknown alignment {other:?}"))),
        }
    }
}

fn check_cols(a: &Matrix, b: &Matrix, what: &str) -> Result<()> {
    if a.cols() != b.cols() {
        return Err(Error::Shape(format!(
            "{what}: {} columns vs {} columns",
            a.cols(),
            b.cols()
        )));
    }
    Ok(())
}

/// CORAL loss `‖C_I − C_T‖²_F / (4d²)` between two activation batches.
///
/// The batches need not be paired or of equal size.
pub fn coral_loss(i: &Matrix, t: &Matrix) -> Result<f64> {
    check_cols(i, t, "coral")?;
    let d = i.cols() as f64;
    let ci = covariance(i)?;
    let ct = covariance(t)?;
    Ok(frob_sq_diff(&ci, &ct)? / (4.0 * d * d))
}

/// Gradients of [`coral_loss`] with respect to both batches.
pub fn coral_grad(i: &Matrix, t: &Matrix) -> Result<(Matrix, Matrix)> {
    coral(i, t).map(|(_, gi, gt)| (gi, gt))
}

/// Loss and both gradients, sharing the covariance computation.
///
/// With `D = C_I − C_T`:
///
/// ```text
/// ∂L/∂I =  X_cI · D / (d² (n_I − 1))
/// ∂L/∂T = −X_cT · D / (d² (n_T − 1))
/// ```
///
/// The text side carries the minus sign: descent moves `C_T` toward `C_I`
/// while the image side moves `C_I` toward `C_T`.
pub fn coral(i: &Matrix, t: &Matrix) -> Result<(f64, Matrix, Matrix)> {
    check_cols(i, t, "coral")?;
    let d = i.cols() as f64;
    let ci = covariance(i)?;
    let ct = covariance(t)?;
    let diff = ci.sub(&ct)?;
    let loss = diff.frobenius_sq() / (4.0 * d * d);

    let ni = i.rows() as f64;
    let nt = t.rows() as f64;
    let gi = i
        .center_columns()
        .matmul(&diff)?
        .scale(1.0 / (d * d * (ni - 1.0)));
    let gt = t
        .center_columns()
        .matmul(&diff)?
        .scale(-1.0 / (d * d * (nt - 1.0)));
    Ok((loss, gi, gt))
}

fn poly_kernel(x: &[f64], y: &[f64], offset: f64, degree: u32) -> f64 {
    (dot(x, y) + offset).powi(degree as i32)
}

fn mean_kernel(a: &Matrix, b: &Matrix, offset: f64, degree: u32) -> f64 {
    let mut sum = 0.0;
    for x in a.row_iter() {
        for y in b.row_iter() {
            sum += poly_kernel(x, y, offset, degree);
        }
    }
    sum / (a.rows() * b.rows()) as f64
}

/// Squared MMD with a polynomial kernel, biased (all-pairs) estimator.
///
/// Analytically non-negative; negative rounding residue is clamped to 0.
pub fn mmd_loss(i: &Matrix, t: &Matrix, offset: f64, degree: u32) -> Result<f64> {
    check_cols(i, t, "mmd")?;
    if i.rows() == 0 || t.rows() == 0 {
        return Err(Error::Shape("mmd: empty batch".into()));
    }
    let raw = mean_kernel(i, i, offset, degree) + mean_kernel(t, t, offset, degree)
        - 2.0 * mean_kernel(i, t, offset, degree);
    Ok(raw.max(0.0))
}

/// [`mmd_loss`] with gradients for both batches. When the raw value is
/// clamped the gradients are zero.
pub fn mmd(i: &Matrix, t: &Matrix, offset: f64, degree: u32) -> Result<(f64, Matrix, Matrix)> {
    check_cols(i, t, "mmd")?;
    if i.rows() == 0 || t.rows() == 0 {
        return Err(Error::Shape("mmd: empty batch".into()));
    }
    let raw = mean_kernel(i, i, offset, degree) + mean_kernel(t, t, offset, degree)
        - 2.0 * mean_kernel(i, t, offset, degree);
    if raw <= 0.0 {
        return Ok((0.0, Matrix::zeros(i.rows(), i.cols()), Matrix::zeros(t.rows(), t.cols())));
    }
    let gi = mmd_side_grad(i, t, offset, degree);
    let gt = mmd_side_grad(t, i, offset, degree);
    Ok((raw, gi, gt))
}

// d/dx_a of mean_xx(k) − 2·mean_xy(k), where ∂k(x,y)/∂x = p·(xᵀy + c)^(p−1)·y.
fn mmd_side_grad(own: &Matrix, other: &Matrix, offset: f64, degree: u32) -> Matrix {
    let p = degree as f64;
    let n = own.rows() as f64;
    let m = other.rows() as f64;
    let mut g = Matrix::zeros(own.rows(), own.cols());
    for a in 0..own.rows() {
        let xa = own.row(a);
        let mut acc = vec![0.0; own.cols()];
        for xj in own.row_iter() {
            let w = 2.0 * p * (dot(xa, xj) + offset).powi(degree as i32 - 1) / (n * n);
            crate::numerics::axpy(w, xj, &mut acc);
        }
        for yj in other.row_iter() {
            let w = -2.0 * p * (dot(xa, yj) + offset).powi(degree as i32 - 1) / (n * m);
            crate::numerics::axpy(w, yj, &mut acc);
        }
        g.row_mut(a).copy_from_slice(&acc);
    }
    g
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Mean over rows of `max(0, margin + ‖a − p‖ − ‖a − n‖)`.
pub fn triplet_loss(
    anchors: &Matrix,
    positives: &Matrix,
    negatives: &Matrix,
    margin: f64,
) -> Result<f64> {
    triplet(anchors, positives, negatives, margin).map(|(l, ..)| l)
}

/// [`triplet_loss`] with gradients for anchors, positives and negatives.
pub fn triplet(
    anchors: &Matrix,
    positives: &Matrix,
    negatives: &Matrix,
    margin: f64,
) -> Result<(f64, Matrix, Matrix, Matrix)> {
    if anchors.shape() != positives.shape() || anchors.shape() != negatives.shape() {
        return Err(Error::Shape(format!(
            "triplet: {:?}, {:?}, {:?}",
            anchors.shape(),
            positives.shape(),
            negatives.shape()
        )));
    }
    let (n, d) = anchors.shape();
    let mut ga = Matrix::zeros(n, d);
    let mut gp = Matrix::zeros(n, d);
    let mut gn = Matrix::zeros(n, d);
    if n == 0 {
        return Ok((0.0, ga, gp, gn));
    }
    let scale = 1.0 / n as f64;
    let mut total = 0.0;
    for r in 0..n {
        let (a, p, q) = (anchors.row(r), positives.row(r), negatives.row(r));
        let dp = euclid(a, p);
        let dn = euclid(a, q);
        let hinge = margin + dp - dn;
        if hinge <= 0.0 {
            continue;
        }
        total += hinge;
        // Zero distance has no direction; use the zero subgradient there.
        for c in 0..d {
            let up = if dp > 0.0 { (a[c] - p[c]) / dp } else { 0.0 };
            let un = if dn > 0.0 { (a[c] - q[c]) / dn } else { 0.0 };
            ga.row_mut(r)[c] = scale * (up - un);
            gp.row_mut(r)[c] = -scale * up;
            gn.row_mut(r)[c] = scale * un;
        }
    }
    Ok((total * scale, ga, gp, gn))
}

/// Row indices of one cross-modal triplet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TripletIndex {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

/// Cross-modal triplets for one step: image anchors with text
/// positives/negatives, and text anchors with image positives/negatives.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TripletPlan {
    pub image_anchored: Vec<TripletIndex>,
    pub text_anchored: Vec<TripletIndex>,
}

impl TripletPlan {
    pub fn len(&self) -> usize {
        self.image_anchored.len() + self.text_anchored.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Draws, for each anchor, a random same-label positive and a random
/// different-label negative from the other modality's batch. Anchors
/// lacking either are skipped.
pub fn sample_triplets(y_img: &[usize], y_txt: &[usize], rng: &mut Rng) -> TripletPlan {
    fn side(anchors: &[usize], others: &[usize], rng: &mut Rng) -> Vec<TripletIndex> {
        let mut out = Vec::new();
        let mut pos = Vec::new();
        let mut neg = Vec::new();
        for (a, &label) in anchors.iter().enumerate() {
            pos.clear();
            neg.clear();
            for (j, &l) in others.iter().enumerate() {
                if l == label {
                    pos.push(j)
                } else {
                    neg.push(j)
                }
            }
            if let (Some(&positive), Some(&negative)) = (pos.choose(rng), neg.choose(rng)) {
                out.push(TripletIndex {
                    anchor: a,
                    positive,
                    negative,
                });
            }
        }
        out
    }
    TripletPlan {
        image_anchored: side(y_img, y_txt, rng),
        text_anchored: side(y_txt, y_img, rng),
    }
}

/// Pooled triplet hinge over both directions of `plan`, with gradients
/// scattered back onto the image and text batches.
pub fn triplet_cross(
    i: &Matrix,
    t: &Matrix,
    plan: &TripletPlan,
    margin: f64,
) -> Result<(f64, Matrix, Matrix)> {
    check_cols(i, t, "triplet")?;
    let mut gi = Matrix::zeros(i.rows(), i.cols());
    let mut gt = Matrix::zeros(t.rows(), t.cols());
    let total = plan.len();
    if total == 0 {
        return Ok((0.0, gi, gt));
    }
    let mut loss = 0.0;
    for (triplets, anchor_src, other_src, anchor_is_image) in [
        (&plan.image_anchored, i, t, true),
        (&plan.text_anchored, t, i, false),
    ] {
        if triplets.is_empty() {
            continue;
        }
        let a = anchor_src.select_rows(&triplets.iter().map(|x| x.anchor).collect::<Vec<_>>());
        let p = other_src.select_rows(&triplets.iter().map(|x| x.positive).collect::<Vec<_>>());
        let n = other_src.select_rows(&triplets.iter().map(|x| x.negative).collect::<Vec<_>>());
        let (l, ga, gp, gn) = triplet(&a, &p, &n, margin)?;
        // Rescale from a per-direction mean to the pooled mean.
        let w = triplets.len() as f64 / total as f64;
        loss += w * l;
        let (g_anchor, g_other) = if anchor_is_image {
            (&mut gi, &mut gt)
        } else {
            (&mut gt, &mut gi)
        };
        for (r, tr) in triplets.iter().enumerate() {
            crate::numerics::axpy(w, ga.row(r), g_anchor.row_mut(tr.anchor));
            crate::numerics::axpy(w, gp.row(r), g_other.row_mut(tr.positive));
            crate::numerics::axpy(w, gn.row(r), g_other.row_mut(tr.negative));
        }
    }
    Ok((loss, gi, gt))
}

/// Evaluates the configured alignment term between two activation batches,
/// returning the loss and its gradients. `triplets` is required for
/// [`AlignmentKind::Triplet`] and ignored otherwise.
pub fn alignment_term(
    kind: AlignmentKind,
    i: &Matrix,
    t: &Matrix,
    triplets: Option<&TripletPlan>,
) -> Result<(f64, Matrix, Matrix)> {
    match kind {
        AlignmentKind::None => {
            check_cols(i, t, "alignment")?;
            Ok((
                0.0,
                Matrix::zeros(i.rows(), i.cols()),
                Matrix::zeros(t.rows(), t.cols()),
            ))
        }
        AlignmentKind::Coral => coral(i, t),
        AlignmentKind::Mmd { offset, degree } => mmd(i, t, offset, degree),
        AlignmentKind::Triplet { margin } => {
            if i.rows() != t.rows() {
                return Err(Error::Shape(format!(
                    "triplet alignment needs equal batch sizes, got {} and {}",
                    i.rows(),
                    t.rows()
                )));
            }
            let plan = triplets
                .ok_or_else(|| Error::Config("triplet alignment needs a triplet plan".into()))?;
            triplet_cross(i, t, plan, margin)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;
    use rand::Rng as _;

    fn random(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
    }

    fn max_rel_err(analytic: &Matrix, numeric: &Matrix) -> f64 {
        let floor = 1e-8;
        analytic
            .as_slice()
            .iter()
            .zip(numeric.as_slice())
            .map(|(a, b)| (a - b).abs() / a.abs().max(b.abs()).max(floor))
            .fold(0.0, f64::max)
    }

    fn central_diff(x: &Matrix, eps: f64, f: impl Fn(&Matrix) -> f64) -> Matrix {
        let mut g = Matrix::zeros(x.rows(), x.cols());
        let mut probe = x.clone();
        for k in 0..x.as_slice().len() {
            let orig = probe.as_slice()[k];
            probe.as_mut_slice()[k] = orig + eps;
            let up = f(&probe);
            probe.as_mut_slice()[k] = orig - eps;
            let down = f(&probe);
            probe.as_mut_slice()[k] = orig;
            g.as_mut_slice()[k] = (up - down) / (2.0 * eps);
        }
        g
    }

    #[test]
    fn coral_examples() {
        let mut rng = seeded_rng(1);
        let i = random(&mut rng, 8, 5);
        assert_eq!(coral_loss(&i, &i).unwrap(), 0.0);

        let a = Matrix::from_rows(&[[1.0, 0.0], [-1.0, 0.0]]).unwrap();
        let z = Matrix::zeros(2, 2);
        assert!((coral_loss(&a, &z).unwrap() - 0.25).abs() < 1e-15);

        let mut order: Vec<usize> = (0..8).collect();
        order.reverse();
        order.swap(0, 3);
        let permuted = i.select_rows(&order);
        assert!(coral_loss(&i, &permuted).unwrap() < 1e-12);
    }

    #[test]
    fn coral_errors() {
        let one = Matrix::zeros(1, 3);
        let two = Matrix::zeros(2, 3);
        assert!(matches!(coral_loss(&one, &two), Err(Error::DegenerateBatch { .. })));
        assert!(matches!(coral_loss(&two, &one), Err(Error::DegenerateBatch { .. })));
        assert!(matches!(coral_loss(&two, &Matrix::zeros(2, 4)), Err(Error::Shape(_))));
    }

    #[test]
    fn coral_grad_vanishes_on_equal_covariances() {
        let mut rng = seeded_rng(2);
        let i = random(&mut rng, 6, 4);
        let shifted = i.map(|v| v + 3.0);
        let (gi, gt) = coral_grad(&i, &shifted).unwrap();
        assert!(gi.max_abs() < 1e-14 && gt.max_abs() < 1e-14);

        let (gz, _) = coral_grad(&Matrix::zeros(5, 4), &random(&mut rng, 7, 4)).unwrap();
        assert_eq!(gz, Matrix::zeros(5, 4));
    }

    #[test]
    fn coral_grad_matches_finite_differences() {
        // Also settles the text-side sign: the negative form is the true gradient.
        for seed in 0..20 {
            let mut rng = seeded_rng(100 + seed);
            let i = random(&mut rng, 8, 5);
            let t = random(&mut rng, 6, 5).scale(1.7);
            let (gi, gt) = coral_grad(&i, &t).unwrap();
            let ni = central_diff(&i, 1e-5, |x| coral_loss(x, &t).unwrap());
            let nt = central_diff(&t, 1e-5, |x| coral_loss(&i, x).unwrap());
            assert!(max_rel_err(&gi, &ni) < 1e-4, "seed {seed}");
            assert!(max_rel_err(&gt, &nt) < 1e-4, "seed {seed}");
        }
    }

    #[test]
    fn mmd_examples() {
        let x = Matrix::from_rows(&[[1.0]]).unwrap();
        let y = Matrix::from_rows(&[[0.0]]).unwrap();
        assert_eq!(mmd_loss(&x, &y, 0.0, 2).unwrap(), 1.0);

        let mut rng = seeded_rng(4);
        let i = random(&mut rng, 7, 3);
        let t = random(&mut rng, 5, 3);
        assert!(mmd_loss(&i, &i, 1.0, 2).unwrap() <= 1e-12);
        let (a, b) = (mmd_loss(&i, &t, 1.0, 2).unwrap(), mmd_loss(&t, &i, 1.0, 2).unwrap());
        assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0));
        assert!(mmd_loss(&i, &Matrix::zeros(2, 4), 1.0, 2).is_err());
    }

    #[test]
    fn mmd_grad_matches_finite_differences() {
        for seed in 0..5 {
            let mut rng = seeded_rng(200 + seed);
            let i = random(&mut rng, 6, 4);
            let t = random(&mut rng, 5, 4).map(|v| v + 0.5);
            for degree in [1, 2, 3] {
                let (_, gi, gt) = mmd(&i, &t, 1.0, degree).unwrap();
                let ni = central_diff(&i, 1e-5, |x| mmd_loss(x, &t, 1.0, degree).unwrap());
                let nt = central_diff(&t, 1e-5, |x| mmd_loss(&i, x, 1.0, degree).unwrap());
                assert!(max_rel_err(&gi, &ni) < 1e-5);
                assert!(max_rel_err(&gt, &nt) < 1e-5);
            }
        }
    }

    #[test]
    fn triplet_examples() {
        let a = Matrix::from_rows(&[[0.0]]).unwrap();
        let p = Matrix::from_rows(&[[1.0]]).unwrap();
        assert_eq!(triplet_loss(&a, &p, &p, 0.5).unwrap(), 0.5);
        assert_eq!(triplet_loss(&a, &p, &p, 0.0).unwrap(), 0.0);

        let far = Matrix::from_rows(&[[3.0]]).unwrap();
        assert_eq!(triplet_loss(&a, &a, &far, 2.0).unwrap(), 0.0);
        assert!(triplet_loss(&a, &p, &Matrix::zeros(2, 1), 1.0).is_err());
    }

    #[test]
    fn triplet_grad_matches_finite_differences() {
        let mut rng = seeded_rng(9);
        let a = random(&mut rng, 6, 3);
        let p = random(&mut rng, 6, 3);
        let n = random(&mut rng, 6, 3);
        let (_, ga, gp, gn) = triplet(&a, &p, &n, 1.0).unwrap();
        let na = central_diff(&a, 1e-6, |x| triplet_loss(x, &p, &n, 1.0).unwrap());
        let np = central_diff(&p, 1e-6, |x| triplet_loss(&a, x, &n, 1.0).unwrap());
        let nn = central_diff(&n, 1e-6, |x| triplet_loss(&a, &p, x, 1.0).unwrap());
        assert!(max_rel_err(&ga, &na) < 1e-5);
        assert!(max_rel_err(&gp, &np) < 1e-5);
        assert!(max_rel_err(&gn, &nn) < 1e-5);
    }

    #[test]
    fn triplet_plan_respects_labels() {
        let mut rng = seeded_rng(5);
        let yi = [0, 1, 2, 0, 1];
        let yt = [1, 0, 0, 1, 2];
        let plan = sample_triplets(&yi, &yt, &mut rng);
        assert_eq!(plan.image_anchored.len(), 5);
        for t in &plan.image_anchored {
            assert_eq!(yi[t.anchor], yt[t.positive]);
            assert_ne!(yi[t.anchor], yt[t.negative]);
        }
        for t in &plan.text_anchored {
            assert_eq!(yt[t.anchor], yi[t.positive]);
            assert_ne!(yt[t.anchor], yi[t.negative]);
        }
        // label 3 has no positive anywhere
        let plan = sample_triplets(&[3], &[0, 1], &mut rng);
        assert!(plan.image_anchored.is_empty());
    }

    #[test]
    fn triplet_cross_grad_matches_finite_differences() {
        let mut rng = seeded_rng(6);
        let i = random(&mut rng, 6, 3);
        let t = random(&mut rng, 6, 3);
        let yi = [0, 1, 2, 0, 1, 2];
        let yt = [2, 1, 0, 0, 1, 2];
        let plan = sample_triplets(&yi, &yt, &mut rng);
        let (_, gi, gt) = triplet_cross(&i, &t, &plan, 2.0).unwrap();
        let ni = central_diff(&i, 1e-6, |x| triplet_cross(x, &t, &plan, 2.0).unwrap().0);
        let nt = central_diff(&t, 1e-6, |x| triplet_cross(&i, x, &plan, 2.0).unwrap().0);
        assert!(max_rel_err(&gi, &ni) < 1e-5);
        assert!(max_rel_err(&gt, &nt) < 1e-5);
    }

    #[test]
    fn kind_validation_and_parsing() {
        assert!(AlignmentKind::Triplet { margin: 0.0 }.validate().is_err());
        assert!(AlignmentKind::Mmd { offset: 1.0, degree: 0 }.validate().is_err());
        assert!(AlignmentKind::mmd().validate().is_ok());
        assert_eq!("CORAL".parse::<AlignmentKind>().unwrap(), AlignmentKind::Coral);
        assert!("gan".parse::<AlignmentKind>().is_err());
    }

    proptest::proptest! {
        #[test]
        fn coral_is_non_negative_and_permutation_invariant(
            vals in proptest::collection::vec(-5.0f64..5.0, 24),
            other in proptest::collection::vec(-5.0f64..5.0, 12),
            rot in 0usize..6,
        ) {
            let i = Matrix::new(6, 4, vals).unwrap();
            let t = Matrix::new(3, 4, other).unwrap();
            let base = coral_loss(&i, &t).unwrap();
            proptest::prop_assert!(base >= 0.0);
            let order: Vec<usize> = (0..6).map(|r| (r + rot) % 6).collect();
            let permuted = coral_loss(&i.select_rows(&order), &t.select_rows(&[2, 0, 1])).unwrap();
            proptest::prop_assert!((permuted - base).abs() <= 1e-9 * base.max(1.0));
        }

        #[test]
        fn triplet_non_increasing_in_negative_distance(
            a in -3.0f64..3.0, p in -3.0f64..3.0, n in 0.0f64..3.0, extra in 0.0f64..3.0,
            margin in 0.01f64..2.0,
        ) {
            let am = Matrix::from_rows(&[[a]]).unwrap();
            let pm = Matrix::from_rows(&[[p]]).unwrap();
            let near = Matrix::from_rows(&[[a + n]]).unwrap();
            let far = Matrix::from_rows(&[[a + n + extra]]).unwrap();
            let l_near = triplet_loss(&am, &pm, &near, margin).unwrap();
            let l_far = triplet_loss(&am, &pm, &far, margin).unwrap();
            proptest::prop_assert!(l_near >= 0.0 && l_far >= 0.0);
            proptest::prop_assert!(l_far <= l_near + 1e-12);
        }
    }
}
