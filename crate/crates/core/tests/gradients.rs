use rand::Rng as _;
use shapool::data::gen_blobs;
use shapool::nn::gradcheck::{flatten_grads, flatten_params, grad_check, unflatten_params};
use shapool::nn::{cross_entropy, cross_entropy_grad, backward_refs, forward_refs, softmax, Matrix};
use shapool::pool::{
    check_batch_gradients, similarity_grad, similarity_regularizer, PoolArchitecture, ShadowPool,
};
use shapool::rng::RandomSource;

fn random_pool(seed: u64) -> ShadowPool {
    let mut rng = RandomSource::new(seed).stream("shape");
    let arch = PoolArchitecture {
        input_dim: rng.random_range(2..5),
        stem: vec![rng.random_range(3..6)],
        expert: vec![rng.random_range(3..6)],
        layers: rng.random_range(1..4),
        experts: rng.random_range(2..4),
        head: vec![],
        classes: rng.random_range(2..5),
    };
    ShadowPool::new(arch, &mut RandomSource::new(seed).stream("init")).unwrap()
}

#[test]
fn pool_loss_gradients_match_finite_differences() {
    for seed in 0..20 {
        let pool = random_pool(seed);
        let data = gen_blobs(seed, 3, pool.arch.classes, pool.arch.input_dim, 1.0).unwrap();
        let x = data.features.select_rows(&[0, 1, 2, 3]);
        let y = &data.labels[..4];
        let k = pool.n_pathways();
        let p1 = pool.pathway(seed as usize % k).unwrap();
        let p2 = pool.pathway((seed as usize + 1) % k).unwrap();
        for (alpha, beta) in [(0.0, 0.0), (5.0, 0.0), (0.0, 5.0), (0.5, 0.3)] {
            let r = check_batch_gradients(&pool, &p1, Some(&p2), &x, y, alpha, beta, 1e-5, 1e-4).unwrap();
            assert!(r.passed && r.max_rel_error < 1e-4, "seed {seed} ({alpha}, {beta}): {r:?}");
        }
    }
}

#[test]
fn similarity_gradient_matches_finite_differences() {
    let mut rng = RandomSource::new(3).stream("probs");
    let logits = Matrix::from_vec(3, 4, (0..12).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap();
    let other = softmax(&Matrix::from_vec(3, 4, (0..12).map(|_| rng.random_range(-2.0..2.0)).collect()).unwrap());
    // gradient with respect to the probabilities of the first argument
    let p = softmax(&logits);
    let analytic = similarity_grad(&p, &other).unwrap();
    let h = 1e-6;
    for i in 0..3 {
        for j in 0..4 {
            let mut up = p.clone();
            let mut down = p.clone();
            up.row_mut(i)[j] += h;
            down.row_mut(i)[j] -= h;
            let fd = (similarity_regularizer(&up, &other).unwrap() - similarity_regularizer(&down, &other).unwrap()) / (2.0 * h);
            let a = analytic.row(i)[j];
            assert!((fd - a).abs() <= 1e-6 * (1.0 + a.abs()), "({i},{j}) {fd} vs {a}");
        }
    }
}

#[test]
fn plain_network_cross_entropy_gradient() {
    let pool = random_pool(7);
    let net = pool.extract(&pool.pathway(0).unwrap()).unwrap();
    let data = gen_blobs(7, 4, pool.arch.classes, pool.arch.input_dim, 1.0).unwrap();
    let (logits, tape) = forward_refs(&net.layers(), &data.features).unwrap();
    let dz = cross_entropy_grad(&softmax(&logits), &data.labels).unwrap();
    let grads = backward_refs(&net.layers(), tape, &dz, &[]).unwrap();
    let analytic = flatten_grads(&grads.layers.iter().collect::<Vec<_>>());
    let params = flatten_params(&net.layers());
    let report = grad_check(
        &params,
        &analytic,
        |theta| {
            let mut probe = net.clone();
            unflatten_params(&mut probe.layers_mut(), theta)?;
            cross_entropy(&probe.predict_proba(&data.features)?, &data.labels)
        },
        1e-6,
        1e-4,
    )
    .unwrap();
    assert!(report.passed, "{report:?}");
}
