use rectidistill_core::data::make_blobs;
use rectidistill_core::model::{
    checkpoint_to_string, evaluate, load_checkpoint, parse_checkpoint, save_checkpoint, Layer, MlpGrads, MlpParams,
};
use rectidistill_core::numerics::finite_difference_gradient;
use rectidistill_core::rng::SplitMix64;
use rectidistill_core::train::{distill_batch_gradient, distill_batch_loss, DistillBatch};
use rectidistill_core::{DistillMode, EpochSchedule, Error, OneHotLabel, ProbVector};

/// Forward pass with explicit index loops.
#[allow(clippy::needless_range_loop)]
fn naive_forward(p: &MlpParams, x: &[f64]) -> Vec<f64> {
    let mut act = x.to_vec();
    for (li, l) in p.layers.iter().enumerate() {
        let mut out = vec![0.0; l.n_out];
        for (r, o) in out.iter_mut().enumerate() {
            let mut acc = l.bias[r];
            for c in 0..l.n_in {
                acc += l.weights[r * l.n_in + c] * act[c];
            }
            *o = acc;
        }
        if li + 1 < p.layers.len() {
            for o in &mut out {
                if *o < 0.0 {
                    *o = 0.0;
                }
            }
        }
        act = out;
    }
    act
}

fn random_params(dims: &[usize], seed: u64) -> MlpParams {
    let mut p = MlpParams::init(dims, seed).unwrap();
    let mut rng = SplitMix64::new(seed ^ 0xabc);
    for l in &mut p.layers {
        for b in &mut l.bias {
            *b = rng.uniform(-0.5, 0.5);
        }
    }
    p
}

#[test]
fn forward_matches_index_loops() {
    let mut rng = SplitMix64::new(3);
    for (k, dims) in [vec![2, 4, 3], vec![5, 7, 7, 2], vec![3, 2]].iter().enumerate() {
        let p = random_params(dims, k as u64);
        for _ in 0..50 {
            let x: Vec<f64> = (0..dims[0]).map(|_| rng.uniform(-3.0, 3.0)).collect();
            let got = p.forward(&x).unwrap();
            let want = naive_forward(&p, &x);
            for (a, b) in got.as_slice().iter().zip(&want) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn backward_matches_finite_differences() {
    let p = random_params(&[3, 6, 5, 4], 9);
    let x = [0.7, -1.2, 0.4];
    let upstream = [0.3, -0.2, 0.5, -0.6];
    let analytic = p.backward(&x, &upstream).unwrap().to_flat();
    let numeric = finite_difference_gradient(
        |flat| {
            let mut q = p.clone();
            q.set_flat(flat).unwrap();
            let z = q.forward(&x).unwrap();
            z.as_slice().iter().zip(&upstream).map(|(a, b)| a * b).sum()
        },
        &p.to_flat(),
        1e-6,
    )
    .unwrap();
    for (a, n) in analytic.iter().zip(numeric.as_slice()) {
        assert!((a - n).abs() < 1e-7, "{a} vs {n}");
    }
}

#[test]
fn distillation_gradient_matches_finite_differences_all_modes() {
    let student = random_params(&[2, 4, 3], 21);
    let mut rng = SplitMix64::new(77);
    let features: Vec<Vec<f64>> = (0..6).map(|_| vec![rng.uniform(-2.0, 2.0), rng.uniform(-2.0, 2.0)]).collect();
    // Three samples the teacher gets right, three it gets wrong.
    let teacher = [
        [0.7, 0.2, 0.1],
        [0.1, 0.6, 0.3],
        [0.25, 0.25, 0.5],
        [0.6, 0.3, 0.1],
        [0.2, 0.2, 0.6],
        [0.1, 0.5, 0.4],
    ];
    let labels = [0, 1, 2, 1, 0, 2];
    let batch = DistillBatch {
        features: features.iter().map(Vec::as_slice).collect(),
        teacher_probs: teacher.iter().map(|t| ProbVector::new(t.to_vec()).unwrap()).collect(),
        labels: labels.iter().map(|&y| OneHotLabel(y)).collect(),
    };
    let sched = EpochSchedule::new(3, 10).unwrap();
    for mode in DistillMode::all_variants() {
        for tau in [1.0, 2.0] {
            let (_, grads) = distill_batch_gradient(&student, &batch, &sched, tau, mode).unwrap();
            let numeric = finite_difference_gradient(
                |flat| {
                    let mut q = student.clone();
                    q.set_flat(flat).unwrap();
                    distill_batch_loss(&q, &batch, &sched, tau, mode).unwrap().l_all
                },
                &student.to_flat(),
                1e-5,
            )
            .unwrap();
            let worst = grads
                .to_flat()
                .iter()
                .zip(numeric.as_slice())
                .map(|(a, n)| (a - n).abs())
                .fold(0.0, f64::max);
            assert!(worst <= 1e-5, "{mode} tau={tau}: max error {worst}");
        }
    }
}

#[test]
fn glorot_bounds_hold() {
    for seed in 0..1000 {
        let p = MlpParams::init(&[2, 8, 4], seed).unwrap();
        for l in &p.layers {
            let bound = (6.0 / (l.n_in + l.n_out) as f64).sqrt();
            assert!(l.weights.iter().all(|w| w.abs() <= bound));
            assert!(l.bias.iter().all(|&b| b == 0.0));
        }
    }
    assert_ne!(MlpParams::init(&[2, 8, 4], 0).unwrap(), MlpParams::init(&[2, 8, 4], 1).unwrap());
    assert_eq!(MlpParams::init(&[2, 8, 4], 5).unwrap(), MlpParams::init(&[2, 8, 4], 5).unwrap());
}

#[test]
fn architecture_errors() {
    assert!(matches!(MlpParams::init(&[2], 0), Err(Error::InvalidArchitecture(_))));
    assert!(MlpParams::init(&[2, 0, 3], 0).is_err());
    let bad = vec![Layer::zeros(2, 3), Layer::zeros(4, 2)];
    assert!(MlpParams::from_layers(bad).is_err());
    let p = MlpParams::zeros(&[2, 3]).unwrap();
    assert!(p.forward(&[1.0]).is_err());
    assert!(p.backward(&[1.0, 2.0], &[1.0]).is_err());
}

#[test]
fn zero_network_gives_uniform_logits() {
    let p = MlpParams::zeros(&[2, 5, 3]).unwrap();
    assert_eq!(p.forward(&[4.0, -1.0]).unwrap().as_slice(), &[0.0, 0.0, 0.0]);
}

#[test]
fn sgd_step_with_momentum() {
    let mut p = MlpParams::from_layers(vec![Layer { n_in: 1, n_out: 2, weights: vec![1.0, 2.0], bias: vec![0.0, 0.0] }]).unwrap();
    let mut g = MlpGrads::zeros_like(&p);
    g.layers[0].weights = vec![0.5, -1.0];
    let mut v = MlpGrads::zeros_like(&p);
    p.sgd_step(&g, &mut v, 0.1, 0.9).unwrap();
    assert_eq!(p.layers[0].weights, vec![1.0 - 0.05, 2.0 + 0.1]);
    p.sgd_step(&g, &mut v, 0.1, 0.9).unwrap();
    // v = 0.9·0.5 + 0.5 = 0.95
    assert!((p.layers[0].weights[0] - (0.95 - 0.095)).abs() < 1e-15);
    g.layers[0].bias[0] = f64::NAN;
    assert!(matches!(p.sgd_step(&g, &mut v, 0.1, 0.9), Err(Error::TrainingDiverged(_))));
}

#[test]
fn checkpoint_round_trip_preserves_evaluation() {
    let p = random_params(&[2, 6, 3], 4);
    let ds = make_blobs(3, 40, 2, 1.0, 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    save_checkpoint(&p, &path).unwrap();
    let q = load_checkpoint(&path).unwrap();
    assert_eq!(p, q);
    assert_eq!(p.checksum(), q.checksum());
    assert_eq!(evaluate(&p, &ds).unwrap(), evaluate(&q, &ds).unwrap());
    assert_eq!(checkpoint_to_string(&q), checkpoint_to_string(&p));
}

#[test]
fn truncated_or_corrupt_checkpoint_is_rejected() {
    let text = checkpoint_to_string(&random_params(&[2, 4, 3], 1));
    let lines: Vec<&str> = text.lines().collect();
    for cut in 0..lines.len() {
        let partial = lines[..cut].join("\n");
        assert!(
            matches!(parse_checkpoint(&partial), Err(Error::CheckpointParse { .. })),
            "accepted a file cut after {cut} lines"
        );
    }
    let corrupt = text.replacen("w ", "w abc ", 1);
    match parse_checkpoint(&corrupt) {
        Err(Error::CheckpointParse { line, .. }) => assert_eq!(line, 4),
        other => panic!("{other:?}"),
    }
}
