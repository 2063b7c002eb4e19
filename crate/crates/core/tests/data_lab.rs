use himoe_core::data::{generate, read_dataset, write_dataset, LatentTrajectory, ModalityStream, ModalitySpec};
use himoe_core::GeneratorConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Least-squares fit of `y` on `[x, 1]` by the normal equations; returns MSE.
fn probe_mse(xs: &[Vec<f64>], ys: &[f64]) -> f64 {
    let p = xs[0].len() + 1;
    let mut a = vec![vec![0.0; p + 1]; p];
    for (x, &y) in xs.iter().zip(ys) {
        let row: Vec<f64> = x.iter().copied().chain([1.0]).collect();
        for i in 0..p {
            for j in 0..p {
                a[i][j] += row[i] * row[j];
            }
            a[i][p] += row[i] * y;
        }
    }
    for (i, r) in a.iter_mut().enumerate() {
        r[i] += 1e-9;
    }
    // Gauss-Jordan with partial pivoting.
    for c in 0..p {
        let piv = (c..p).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs())).unwrap();
        a.swap(c, piv);
        for r in 0..p {
            if r != c {
                let f = a[r][c] / a[c][c];
                for k in c..=p {
                    a[r][k] -= f * a[c][k];
                }
            }
        }
    }
    let beta: Vec<f64> = (0..p).map(|i| a[i][p] / a[i][i]).collect();
    xs.iter()
        .zip(ys)
        .map(|(x, &y)| {
            let pred = x.iter().zip(&beta).map(|(a, b)| a * b).sum::<f64>() + beta[p - 1];
            (pred - y).powi(2)
        })
        .sum::<f64>()
        / ys.len() as f64
}

#[test]
fn unlagged_modality_is_the_best_linear_probe() {
    let cfg = GeneratorConfig::default();
    let maps = cfg.modality_maps(3);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let latents: Vec<LatentTrajectory> = (0..20).map(|_| LatentTrajectory::sample(&cfg, &mut rng)).collect();
    let mut mse_at = |lag: usize, dim: usize| {
        let spec = ModalitySpec::new("probe", 4, lag, 0.0);
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for latent in &latents {
            let s = ModalityStream::observe(&spec, &maps[0], latent, &mut rng);
            for t in 0..latent.len() {
                xs.push(s.raw.row(t).to_vec());
                ys.push(latent.values.get(t, dim));
            }
        }
        probe_mse(&xs, &ys)
    };
    // The first map's home dimensions are 0 and 1.
    for dim in [0, 1] {
        let base = mse_at(0, dim);
        for lag in [1, 3, 6] {
            let lagged = mse_at(lag, dim);
            assert!(base < lagged, "dim {dim}: lag 0 mse {base} vs lag {lag} mse {lagged}");
        }
    }
}

#[test]
fn million_cell_bundle_round_trips_exactly() {
    let cfg = GeneratorConfig {
        train_trials: 250,
        val_trials: 25,
        test_trials: 25,
        missing_rate: 0.2,
        label_missing_rate: 0.1,
        ..GeneratorConfig::default()
    };
    let bundle = generate(&cfg, 9).unwrap();
    assert!(bundle.num_cells() >= 1_000_000, "only {} cells", bundle.num_cells());
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&bundle, dir.path()).unwrap();
    let back = read_dataset(dir.path()).unwrap();
    assert_eq!(back, bundle);

    // Writing the read-back bundle reproduces every file byte for byte.
    let again = tempfile::tempdir().unwrap();
    write_dataset(&back, again.path()).unwrap();
    let mut names: Vec<_> = std::fs::read_dir(dir.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
    names.sort();
    for n in names {
        let a = std::fs::read(dir.path().join(&n)).unwrap();
        let b = std::fs::read(again.path().join(&n)).unwrap();
        assert!(a == b, "{n:?} differs");
    }
}

#[test]
fn generation_is_deterministic_and_seed_sensitive() {
    let cfg = GeneratorConfig::default();
    let a = generate(&cfg, 4).unwrap();
    assert_eq!(a, generate(&cfg, 4).unwrap());
    assert_ne!(a.train.features, generate(&cfg, 5).unwrap().train.features);
}
