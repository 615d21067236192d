#![allow(dead_code)]

use crossalign::alignment::AlignmentKind;
use crossalign::network::{BranchNet, ModelParams};
use crossalign::numerics::{seeded_rng, Rng};
use crossalign::trainer::{joint_gradients, total_loss, Objective};
use crossalign::Matrix;
use rand::Rng as _;

pub fn random_matrix(rng: &mut Rng, rows: usize, cols: usize) -> Matrix {
    Matrix::from_fn(rows, cols, |_, _| rng.gen_range(-1.0..1.0))
}

pub fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

pub fn central_diff(x: &Matrix, eps: f64, f: impl Fn(&Matrix) -> f64) -> Matrix {
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

pub fn max_rel_err(analytic: &Matrix, numeric: &Matrix, floor: f64) -> f64 {
    analytic
        .as_slice()
        .iter()
        .zip(numeric.as_slice())
        .map(|(&a, &b)| rel_err(a, b, floor))
        .fold(0.0, f64::max)
}

/// Straight from the definition: precision at every relevant position,
/// divided by the number of relevant items.
pub fn brute_force_ap(relevance: &[bool]) -> Option<f64> {
    let r = relevance.iter().filter(|&&x| x).count();
    if r == 0 {
        return None;
    }
    let mut total = 0.0;
    for k in 1..=relevance.len() {
        if relevance[k - 1] {
            let hits = relevance[..k].iter().filter(|&&x| x).count();
            total += hits as f64 / k as f64;
        }
    }
    Some(total / r as f64)
}

fn objective_value(params: &ModelParams, xi: &Matrix, xt: &Matrix, yi: &[usize], yt: &[usize], obj: &Objective) -> f64 {
    let img = params.image.forward(xi).unwrap();
    let txt = params.text.forward(xt).unwrap();
    total_loss(&img, &txt, yi, yt, obj.alignment, obj.weight, None).unwrap().total
}

fn branch_mut(params: &mut ModelParams, image: bool) -> &mut BranchNet {
    if image {
        &mut params.image
    } else {
        &mut params.text
    }
}

/// Worst relative error between backprop and central differences over
/// every parameter of both branches, for one random problem.
pub fn full_objective_gradient_error(seed: u64, alignment: AlignmentKind, eps: f64, floor: f64) -> f64 {
    let mut rng = seeded_rng(seed);
    let (d, h, k, n) = (6, 4, 3, 8);
    let params = ModelParams::init(d, d, h, k, &mut rng);
    let xi = random_matrix(&mut rng, n, d).scale(2.0);
    let xt = random_matrix(&mut rng, n, d).scale(2.0);
    let yi: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
    let yt: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
    let obj = Objective { alignment, weight: 1.0 };

    let img = params.image.forward(&xi).unwrap();
    let txt = params.text.forward(&xt).unwrap();
    let (_, grads) = joint_gradients(&params, &img, &txt, &yi, &yt, &obj, None).unwrap();

    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for image in [true, false] {
        let analytic = if image { &grads.image } else { &grads.text };
        let analytic: Vec<f64> = analytic.blocks().iter().flat_map(|b| b.iter().copied()).collect();
        let sizes: Vec<usize> = branch_mut(&mut probe, image).blocks().iter().map(|b| b.len()).collect();
        let mut flat = 0;
        for (block, &size) in sizes.iter().enumerate() {
            for j in 0..size {
                let orig = branch_mut(&mut probe, image).blocks_mut()[block][j];
                branch_mut(&mut probe, image).blocks_mut()[block][j] = orig + eps;
                let up = objective_value(&probe, &xi, &xt, &yi, &yt, &obj);
                branch_mut(&mut probe, image).blocks_mut()[block][j] = orig - eps;
                let down = objective_value(&probe, &xi, &xt, &yi, &yt, &obj);
                branch_mut(&mut probe, image).blocks_mut()[block][j] = orig;
                let numeric = (up - down) / (2.0 * eps);
                worst = worst.max(rel_err(analytic[flat], numeric, floor));
                flat += 1;
            }
        }
    }
    worst
}
