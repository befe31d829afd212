use lowrank_core::adapters::{effective_delta, AdapterPair};
use lowrank_core::linalg::{gaussian_matrix, project_onto_leading_columns, random_orthogonal, randomized_svd, svd};
use lowrank_core::nn::{batch_gradient, initialize_nn, make_task, NnInit, NnInitParams};
use lowrank_core::objective::{gradient, loss};
use lowrank_core::{FactorTarget, HrpConfig, Matrix, RngState, Side};
use proptest::prelude::*;

fn random(rows: usize, cols: usize, seed: u64) -> Matrix {
    gaussian_matrix(rows, cols, 1.0, &mut RngState::new(seed)).unwrap()
}

fn rel(a: &Matrix, b: &Matrix) -> f64 {
    a.try_sub(b).unwrap().frobenius_norm() / b.frobenius_norm().max(f64::MIN_POSITIVE)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn svd_reconstructs_and_orders(rows in 1usize..9, cols in 1usize..9, seed: u64) {
        let m = random(rows, cols, seed);
        let d = svd(&m).unwrap();
        prop_assert!(rel(&d.reconstruct(), &m) <= 1e-8);
        prop_assert!(d.s.windows(2).all(|w| w[0] >= w[1]));
        prop_assert!(d.s.iter().all(|&s| s >= 0.0));
        prop_assert!(d.u.orthonormality_defect() <= 1e-10);
        prop_assert!(d.v.orthonormality_defect() <= 1e-10);
    }

    #[test]
    fn projection_identity(d1 in 2usize..9, d2 in 1usize..9, r_frac in 0.0f64..1.0, seed: u64) {
        let m = random(d1, d2, seed);
        let u = random_orthogonal(d1, d1, &mut RngState::new(seed ^ 0x5eed)).unwrap();
        let r = ((r_frac * d2.min(d1) as f64) as usize).max(1);
        let x = project_onto_leading_columns(&u, r, &m).unwrap();
        let lhs = m.try_sub(&x).unwrap().frobenius_norm_sq();
        let rhs = m.frobenius_norm_sq() - x.frobenius_norm_sq();
        prop_assert!((lhs - rhs).abs() <= 1e-9 * m.frobenius_norm_sq().max(1.0));
    }

    #[test]
    fn projection_does_not_raise_singular_values(d1 in 2usize..9, d2 in 1usize..9, r in 1usize..9, seed: u64) {
        let m = random(d1, d2, seed);
        let u = random_orthogonal(d1, d1, &mut RngState::new(seed.wrapping_add(1))).unwrap();
        let r = r.min(d1);
        let sm = svd(&m).unwrap().s;
        let sx = svd(&project_onto_leading_columns(&u, r, &m).unwrap()).unwrap().s;
        for (a, b) in sx.iter().zip(&sm) {
            prop_assert!(*a <= *b + 1e-9 * sm[0].max(1.0));
        }
    }

    #[test]
    fn factor_gradients_match_finite_differences(b in 1usize..6, a in 1usize..6, r in 1usize..4, alpha in 0.5f64..4.0, seed: u64) {
        let target = FactorTarget::new(random(b, a, seed)).unwrap();
        let pair = AdapterPair::new(random(a, r, seed ^ 1), random(b, r, seed ^ 2), alpha).unwrap();
        let g = gradient(&effective_delta(&pair), &target, alpha, r).unwrap();
        let grad_a = g.tr_matmul(&pair.b).unwrap();
        let grad_b = g.matmul(&pair.a).unwrap();
        let f = |p: &AdapterPair| loss(&effective_delta(p), &target).unwrap();
        let h = 1e-5;
        let mut fd_a = Matrix::zeros(a, r);
        let mut fd_b = Matrix::zeros(b, r);
        for i in 0..a {
            for j in 0..r {
                let (mut p, mut q) = (pair.clone(), pair.clone());
                p.a[(i, j)] += h;
                q.a[(i, j)] -= h;
                fd_a[(i, j)] = (f(&p) - f(&q)) / (2.0 * h);
            }
        }
        for i in 0..b {
            for j in 0..r {
                let (mut p, mut q) = (pair.clone(), pair.clone());
                p.b[(i, j)] += h;
                q.b[(i, j)] -= h;
                fd_b[(i, j)] = (f(&p) - f(&q)) / (2.0 * h);
            }
        }
        let scale = grad_a.frobenius_norm() + grad_b.frobenius_norm();
        prop_assume!(scale > 1e-6);
        let err = fd_a.try_sub(&grad_a).unwrap().frobenius_norm() + fd_b.try_sub(&grad_b).unwrap().frobenius_norm();
        prop_assert!(err <= 1e-6 * scale, "err {err} scale {scale}");
    }

    #[test]
    fn nn_gradient_matches_finite_differences(batch in 1usize..12, noise in 0.0f64..0.5, seed: u64) {
        let task = make_task(5, 4, 2, 12, noise, &mut RngState::new(seed)).unwrap();
        let params = NnInitParams { r: 2, alpha: 2.0, side: Side::Rsi, gaussian_sigma: None, hrp: HrpConfig::new(2, 1, 0.1) };
        let mut model = initialize_nn(NnInit::ZeroPlusGaussian, &task, &params, &mut RngState::new(seed ^ 3)).unwrap();
        model.w_init_offset = random(4, 5, seed ^ 4).scale(0.3);
        let idx: Vec<usize> = (0..batch).collect();
        let g = batch_gradient(&model, &task, &idx).unwrap();
        let batch_loss = |w: &Matrix| -> f64 {
            idx.iter().map(|&j| {
                let x = task.inputs.row(j);
                let y = task.targets.row(j);
                (0..4).map(|i| {
                    let p: f64 = w.row(i).iter().zip(x).map(|(a, b)| a * b).sum();
                    (p - y[i]).powi(2)
                }).sum::<f64>()
            }).sum::<f64>() / (2.0 * batch as f64)
        };
        let w = model.effective_weight();
        let h = 1e-5;
        let mut fd = Matrix::zeros(4, 5);
        for i in 0..4 {
            for k in 0..5 {
                let (mut p, mut q) = (w.clone(), w.clone());
                p[(i, k)] += h;
                q[(i, k)] -= h;
                fd[(i, k)] = (batch_loss(&p) - batch_loss(&q)) / (2.0 * h);
            }
        }
        prop_assume!(g.frobenius_norm() > 1e-6);
        prop_assert!(rel(&fd, &g) <= 1e-6);
    }

    #[test]
    fn randomized_svd_is_exact_on_low_rank(rows in 4usize..12, cols in 4usize..12, k in 1usize..4, seed: u64) {
        let m = random(rows, k, seed).matmul(&random(k, cols, seed ^ 9)).unwrap();
        let approx = randomized_svd(&m, k, 4, 1, &mut RngState::new(seed)).unwrap();
        prop_assert!(rel(&approx.reconstruct(), &m) <= 1e-8);
    }
}

#[test]
fn numerical_rank_of_product() {
    let m = random(8, 3, 1).matmul(&random(3, 5, 2)).unwrap();
    let s = svd(&m).unwrap().s;
    assert_eq!(s.iter().filter(|&&x| x > 1e-10).count(), 3);
}
