use nalgebra::{DMatrix, DVector};
use pipehess::blockmat::{
    dot, BlockDiagonal, BlockLowerBidiagonal, BlockTridiagonal, CommutationPermutation, DenseBlock,
    ShiftOperator,
};
use pipehess::hessian::HessianOperator;
use pipehess::pipeline::{random_spec, RandomPipelineConfig};
use pipehess::solver::unpivot_extract;
use proptest::prelude::*;

fn to_na(a: &DenseBlock) -> DMatrix<f64> {
    DMatrix::from_fn(a.rows(), a.cols(), |i, j| a[(i, j)])
}

fn block(rows: usize, cols: usize, vals: &[f64]) -> DenseBlock {
    DenseBlock::from_fn(rows, cols, |i, j| vals[(i * 7 + j * 3) % vals.len()])
}

fn dims_grid(groups: usize) -> impl Strategy<Value = Vec<Vec<usize>>> {
    (1usize..6).prop_flat_map(move |layers| {
        prop::collection::vec(prop::collection::vec(1usize..5, layers), groups)
    })
}

#[test]
fn shift_examples() {
    let p = ShiftOperator::new(vec![1, 1, 1, 1]).unwrap();
    assert_eq!(p.apply(&[7.0, 8.0, 9.0]).unwrap(), vec![0.0, 7.0, 8.0]);
    assert_eq!(
        p.apply(&p.apply(&[7.0, 8.0, 9.0]).unwrap()).unwrap(),
        vec![0.0, 0.0, 7.0]
    );
    assert_eq!(
        p.apply_transpose(&[0.0, 7.0, 8.0]).unwrap(),
        vec![7.0, 8.0, 0.0]
    );
    let single = ShiftOperator::new(vec![2, 3]).unwrap();
    assert_eq!(single.apply(&[1.0, 2.0, 3.0]).unwrap(), vec![0.0, 0.0]);
}

#[test]
fn permutation_examples() {
    let pi = CommutationPermutation::new(vec![vec![1, 1], vec![1, 1], vec![1, 1]]).unwrap();
    let v = [1.0, 2.0, 10.0, 20.0, 100.0, 200.0];
    assert_eq!(
        pi.apply(&v).unwrap(),
        vec![1.0, 10.0, 100.0, 2.0, 20.0, 200.0]
    );
    let one = CommutationPermutation::new(vec![vec![2], vec![1], vec![3]]).unwrap();
    let w: Vec<f64> = (0..6).map(f64::from).collect();
    assert_eq!(one.apply(&w).unwrap(), w);
    assert_eq!(
        unpivot_extract(&pi.apply(&v).unwrap(), &pi).unwrap(),
        vec![1.0, 2.0]
    );
}

#[test]
fn ldu_scalar_recursion() {
    let t = BlockTridiagonal::new(
        vec![DenseBlock::diagonal(&[2.0]), DenseBlock::diagonal(&[2.0])],
        vec![DenseBlock::diagonal(&[1.0])],
        vec![DenseBlock::diagonal(&[1.0])],
    )
    .unwrap();
    let f = t.factorize(1e-12).unwrap();
    let (l, d, _) = f.dense_factors();
    assert_eq!(l[(1, 0)], 0.5);
    assert_eq!((d[(0, 0)], d[(1, 1)]), (2.0, 1.5));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn permutation_round_trips(dims in dims_grid(3), seed in any::<u64>()) {
        let pi = CommutationPermutation::new(dims).unwrap();
        let v: Vec<f64> = (0..pi.len()).map(|i| ((i as u64 ^ seed) % 97) as f64 - 48.0).collect();
        prop_assert_eq!(pi.apply_inverse(&pi.apply(&v).unwrap()).unwrap(), v.clone());
        let mut sorted = pi.index_map().to_vec();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..pi.len()).collect::<Vec<_>>());
    }

    #[test]
    fn square_permutation_is_involutory(n in 1usize..5, sizes in prop::collection::vec(1usize..4, 16)) {
        let dims: Vec<Vec<usize>> = (0..n)
            .map(|g| (0..n).map(|l| sizes[g.min(l) * 4 + g.max(l)]).collect())
            .collect();
        let pi = CommutationPermutation::new(dims).unwrap();
        prop_assert!(pi.is_square());
        let v: Vec<f64> = (0..pi.len()).map(|i| i as f64).collect();
        prop_assert_eq!(pi.apply(&pi.apply(&v).unwrap()).unwrap(), v);
    }

    #[test]
    fn shift_matches_dense_matrix(dims in prop::collection::vec(1usize..5, 2..7)) {
        let p = ShiftOperator::new(dims).unwrap();
        let v: Vec<f64> = (0..p.input_dim()).map(|i| i as f64 + 1.0).collect();
        let u: Vec<f64> = (0..p.output_dim()).map(|i| 2.0 * i as f64 - 3.0).collect();
        let dense = p.to_dense();
        prop_assert_eq!(p.apply(&v).unwrap(), dense.matvec(&v).unwrap());
        prop_assert_eq!(p.apply_transpose(&u).unwrap(), dense.matvec_t(&u).unwrap());
    }

    #[test]
    fn bidiagonal_solves_invert_the_matrix(
        dims in prop::collection::vec(1usize..4, 1..5),
        vals in prop::collection::vec(-1.0f64..1.0, 11),
    ) {
        let sub: Vec<DenseBlock> = dims.windows(2).map(|w| block(w[1], w[0], &vals)).collect();
        let m = BlockLowerBidiagonal::unit(sub, &dims).unwrap();
        let n = m.dim();
        let rhs: Vec<f64> = (0..n).map(|i| (i as f64).cos()).collect();
        let dense = to_na(&m.to_dense());
        let x = m.solve(&rhs).unwrap();
        let y = m.solve_transpose(&rhs).unwrap();
        let r = DVector::from_vec(rhs);
        prop_assert!((&dense * DVector::from_vec(x) - &r).norm() <= 1e-10 * (1.0 + r.norm()) * dense.norm());
        prop_assert!((dense.transpose() * DVector::from_vec(y) - &r).norm() <= 1e-10 * (1.0 + r.norm()) * dense.norm());
    }

    #[test]
    fn block_diagonal_matches_dense(
        shapes in prop::collection::vec((1usize..4, 1usize..4), 1..5),
        vals in prop::collection::vec(-1.0f64..1.0, 13),
    ) {
        let d = BlockDiagonal::new(shapes.iter().map(|&(r, c)| block(r, c, &vals)).collect());
        let v: Vec<f64> = (0..d.total_cols()).map(|i| i as f64 - 1.5).collect();
        let w: Vec<f64> = (0..d.total_rows()).map(|i| 0.5 * i as f64).collect();
        let dense = d.to_dense();
        prop_assert_eq!(d.matvec(&v).unwrap(), dense.matvec(&v).unwrap());
        prop_assert_eq!(d.matvec_t(&w).unwrap(), dense.matvec_t(&w).unwrap());
    }

    /// Diagonally dominant blocks keep every Schur complement well conditioned.
    #[test]
    fn ldu_reconstructs_and_solves(
        dims in prop::collection::vec(1usize..5, 4),
        vals in prop::collection::vec(-1.0f64..1.0, 17),
    ) {
        let diag: Vec<DenseBlock> = dims
            .iter()
            .map(|&d| {
                let mut b = block(d, d, &vals);
                b.shift_diagonal(12.0);
                b
            })
            .collect();
        let lower: Vec<DenseBlock> = dims.windows(2).map(|w| block(w[1], w[0], &vals[3..])).collect();
        let upper: Vec<DenseBlock> = dims.windows(2).map(|w| block(w[0], w[1], &vals[5..])).collect();
        let t = BlockTridiagonal::new(diag, lower, upper).unwrap();
        let f = t.factorize(1e-12).unwrap();
        let (l, d, u) = f.dense_factors();
        let rebuilt = to_na(&l) * to_na(&d) * to_na(&u);
        let target = to_na(&t.to_dense());
        prop_assert!((&rebuilt - &target).norm() <= 1e-10 * target.norm());

        let b: Vec<f64> = (0..t.dim()).map(|i| (i as f64 * 0.7).sin()).collect();
        let x = f.solve(&b).unwrap();
        let oracle = target.lu().solve(&DVector::from_vec(b)).unwrap();
        let diff = (DVector::from_vec(x) - &oracle).norm();
        prop_assert!(diff <= 1e-10 * oracle.norm().max(1.0));
    }

    #[test]
    fn hvp_is_linear_and_self_adjoint(
        layers in 1usize..6,
        width in 1usize..4,
        params in 1usize..5,
        seed in any::<u64>(),
        alpha in -2.0f64..2.0,
    ) {
        let inst = random_spec(&RandomPipelineConfig::mixed(layers, width, params), seed).build().unwrap();
        let pt = inst.evaluate().unwrap();
        let op = HessianOperator::assemble(&inst.pipeline, &pt).unwrap();
        let n = op.dim();
        let u: Vec<f64> = (0..n).map(|i| ((i as f64) * 1.3 + 0.2).sin()).collect();
        let v: Vec<f64> = (0..n).map(|i| ((i as f64) * 0.4 - 1.0).cos()).collect();
        let (hu, hv) = (op.apply(&u).unwrap(), op.apply(&v).unwrap());
        let combo: Vec<f64> = u.iter().zip(&v).map(|(a, b)| alpha * a + b).collect();
        let h_combo = op.apply(&combo).unwrap();
        let scale = 1.0 + hu.iter().chain(&hv).fold(0.0f64, |m, x| m.max(x.abs()));
        for ((c, a), b) in h_combo.iter().zip(&hu).zip(&hv) {
            prop_assert!((c - (alpha * a + b)).abs() <= 1e-12 * scale * 4.0);
        }
        prop_assert!((dot(&u, &hv) - dot(&v, &hu)).abs() <= 1e-11 * scale * n as f64);
    }
}
