use deconfounder::linalg::ols_residuals;
use deconfounder::outcome::fit_logistic;
use deconfounder::rng;
use deconfounder::synth::{
    generate, generate_surrogate, kmeans, lloyd, pca_top2, run_benchmark, simulate_once, sparse_normal,
    spearman, surrogate_causes, table1_grid, BenchmarkConfig, SurrogateConfig, SynthConfig,
};
use deconfounder::plfm::ChainSettings;
use deconfounder::ppc::PpcOptions;
use ndarray::{Array1, Array2, Axis};

fn normal_matrix(n: usize, p: usize, seed: u64) -> Array2<f64> {
    let mut r = rng::stream(seed);
    Array2::from_shape_simple_fn((n, p), || rng::std_normal::<f64, _>(&mut r))
}

/// Cyclic Jacobi eigen-decomposition, independent of the crate's solver.
fn jacobi_eigen(mut a: Array2<f64>) -> (Vec<f64>, Array2<f64>) {
    let n = a.nrows();
    let mut v = Array2::<f64>::eye(n);
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[[i, j]] * a[[i, j]])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[[p, q]].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[[q, q]] - a[[p, p]]) / (2.0 * a[[p, q]]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[[k, p]], a[[k, q]]);
                    a[[k, p]] = c * akp - s * akq;
                    a[[k, q]] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[[p, k]], a[[q, k]]);
                    a[[p, k]] = c * apk - s * aqk;
                    a[[q, k]] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[[k, p]], v[[k, q]]);
                    v[[k, p]] = c * vkp - s * vkq;
                    v[[k, q]] = s * vkp + c * vkq;
                }
            }
        }
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| a[[j, j]].total_cmp(&a[[i, i]]));
    let vals = idx.iter().map(|&i| a[[i, i]]).collect();
    let vecs = Array2::from_shape_fn((n, n), |(r, c)| v[[r, idx[c]]]);
    (vals, vecs)
}

fn minmax(v: Array1<f64>) -> Array1<f64> {
    let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    v.mapv(|x| (x - lo) / (hi - lo))
}

#[test]
fn pca_scores_match_dense_eigensolver() {
    let mut x = normal_matrix(200, 5, 1);
    // give the spectrum a clear gap
    for (j, s) in [3.0, 2.0, 1.0, 0.5, 0.2].iter().enumerate() {
        x.column_mut(j).mapv_inplace(|v| v * s);
    }
    let scores = pca_top2(x.view()).unwrap();
    let centered = &x - &x.mean_axis(Axis(0)).unwrap();
    let cov = centered.t().dot(&centered) / 199.0;
    let (_, vecs) = jacobi_eigen(cov);
    for c in 0..2 {
        let want = minmax(centered.dot(&vecs.column(c)));
        let got = scores.column(c);
        let same = got.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-10);
        // a sign flip of the component maps s to 1 - s after scaling
        let flipped = got.iter().zip(&want).all(|(a, b)| (a - (1.0 - b)).abs() < 1e-10);
        assert!(same || flipped, "component {c}");
        let lo = got.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = got.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((lo, hi), (0.0, 1.0));
    }
}

#[test]
fn pca_on_a_line_gives_constant_second_component() {
    let t = normal_matrix(50, 1, 2);
    let x = Array2::from_shape_fn((50, 3), |(i, j)| t[[i, 0]] * (j as f64 + 1.0) + 2.0);
    let s = pca_top2(x.view()).unwrap();
    assert!(s.column(1).iter().all(|&v| v == 0.0));
    assert!(pca_top2(Array2::<f64>::ones((10, 3)).view()).is_err());
    assert!(pca_top2(Array2::<f64>::zeros((10, 1)).view()).is_err());
}

fn blobs(n_per: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let centres = [[0.0, 0.0], [5.0, 0.0], [0.0, 5.0], [5.0, 5.0]];
    let noise = normal_matrix(4 * n_per, 2, seed);
    let mut x = Array2::zeros((4 * n_per, 2));
    let mut truth = Vec::new();
    for b in 0..4 {
        for i in 0..n_per {
            let r = b * n_per + i;
            x[[r, 0]] = centres[b][0] + 0.5 * noise[[r, 0]];
            x[[r, 1]] = centres[b][1] + 0.5 * noise[[r, 1]];
            truth.push(b);
        }
    }
    (x, truth)
}

#[test]
fn kmeans_recovers_planted_blobs() {
    let (x, truth) = blobs(100, 3);
    let res = kmeans(x.view(), 4, 7).unwrap();
    // best matching of labels to blobs
    let mut agree = 0;
    for b in 0..4 {
        let mut counts = [0usize; 5];
        for (l, t) in res.labels.iter().zip(&truth) {
            if *t == b {
                counts[*l] += 1;
            }
        }
        agree += counts.iter().max().unwrap();
    }
    assert!(agree as f64 / 400.0 >= 0.99, "{agree}");
    assert!(res.labels.iter().all(|&l| (1..=4).contains(&l)));
    // labels numbered by first centroid coordinate
    for w in res.centroids.rows().into_iter().collect::<Vec<_>>().windows(2) {
        assert!(w[0][0] <= w[1][0]);
    }
    assert_eq!(res, kmeans(x.view(), 4, 7).unwrap());
}

#[test]
fn kmeans_degenerate_k_and_monotone_objective() {
    let x = normal_matrix(12, 2, 4);
    let res = kmeans(x.view(), 12, 1).unwrap();
    assert!(res.cost.abs() < 1e-24);
    let mut sorted = res.labels.clone();
    sorted.sort();
    assert_eq!(sorted, (1..=12).collect::<Vec<_>>());
    assert!(kmeans(x.view(), 13, 1).is_err());

    let (x, _) = blobs(60, 5);
    // a poor start so Lloyd has work to do
    let init = x.select(Axis(0), &[0, 1, 2, 3]);
    let (_, _, history, iters) = lloyd(x.view(), init, 300);
    assert!(iters >= 2);
    for w in history.windows(2) {
        assert!(w[1] <= w[0] + 1e-9, "{history:?}");
    }
}

#[test]
fn sparse_normal_zero_mass_threshold_and_scale() {
    let v = sparse_normal(100_000, 1.0, (20.0, 80.0), 11).unwrap();
    let zeros = v.iter().filter(|&&x| x == 0.0).count() as f64 / 1e5;
    assert!((0.59..=0.61).contains(&zeros), "{zeros}");
    assert!(v.iter().filter(|&&x| x != 0.0).all(|x| x.abs() >= 0.8416));
    let v2 = sparse_normal(1000, 2.0, (20.0, 80.0), 11).unwrap();
    for (a, b) in v2.iter().zip(&v[..1000]) {
        assert_eq!(*a, 2.0 * b);
    }
    assert!(sparse_normal(10, 0.0, (20.0, 80.0), 1).is_err());
}

#[test]
fn generated_predictor_has_the_constructed_variance_shares() {
    let cfg = SynthConfig {
        seed: 21,
        ..SynthConfig::from_ratio(1.0, 1.0, 0.1).unwrap()
    };
    let sd = generate_surrogate(10_000, 19, &SurrogateConfig::default(), &cfg).unwrap();
    let var = |v: &Array1<f64>| v.var(1.0);
    assert!((var(&sd.parts.causes) - cfg.nu_x).abs() < 0.02);
    assert!((var(&sd.parts.confounder) - 0.9 * cfg.nu_z).abs() < 0.02);
    assert!((var(&sd.parts.age) - 0.1 * cfg.nu_z * sd.true_gamma.powi(2)).abs() < 0.02);
    assert!((var(&sd.parts.noise) - cfg.nu_eps()).abs() < 0.02);
    assert!((0.48..=0.52).contains(&sd.positive_fraction));
    let y = sd.dataset.outcome();
    assert!((y.sum() / 10_000.0 - sd.positive_fraction).abs() < 1e-12);
    assert!(sd.u.iter().all(|&l| (1..=4).contains(&l)));
    assert_eq!(sd.sigma_k.len(), 4);
    assert!(sd.sigma_k.iter().all(|&s| s > 1.0));
}

#[test]
fn generator_is_deterministic_and_handles_zero_signal() {
    let cfg = SynthConfig {
        seed: 5,
        ..SynthConfig::default()
    };
    let a = generate_surrogate(500, 8, &SurrogateConfig::default(), &cfg).unwrap();
    let b = generate_surrogate(500, 8, &SurrogateConfig::default(), &cfg).unwrap();
    assert_eq!(a, b);
    let other = generate_surrogate(500, 8, &SurrogateConfig::default(), &SynthConfig { seed: 6, ..cfg }).unwrap();
    assert_ne!(a.dataset.outcome(), other.dataset.outcome());

    let none = SynthConfig {
        nu_x: 0.0,
        nu_z: 0.0,
        seed: 5,
        ..SynthConfig::default()
    };
    let z = generate_surrogate(500, 8, &SurrogateConfig::default(), &none).unwrap();
    assert!(z.true_effects.iter().all(|&e| e == 0.0));
    assert!(z.parts.causes.iter().chain(z.parts.confounder.iter()).all(|&v| v == 0.0));
    assert!(SynthConfig { nu_x: 0.6, nu_z: 0.5, ..cfg }.validate().is_err());
}

#[test]
fn generator_accepts_supplied_causes() {
    let (x, f) = surrogate_causes(300, 6, &SurrogateConfig::default(), 9);
    let cfg = SynthConfig { seed: 3, ..SynthConfig::default() };
    let sd = generate(x.view(), f.view(), 0, &cfg).unwrap();
    assert_eq!(sd.dataset.n_causes(), 6);
    assert_eq!(sd.dataset.covariate_names(), &["age".to_string(), "gender".to_string()]);
    let means = sd.dataset.causes().mean_axis(Axis(0)).unwrap();
    assert!(means.iter().all(|m| m.abs() < 1e-12));
}

#[test]
fn non_causal_equals_roa_when_age_is_unrelated_to_the_causes() {
    // causes exactly orthogonal to (centred) age in-sample, γ irrelevant
    let n = 400;
    let age = normal_matrix(n, 1, 30);
    let raw = normal_matrix(n, 5, 31);
    let x = ols_residuals(raw.view(), age.view(), true).unwrap();
    let y: Array1<f64> = (0..n)
        .map(|i| ((x[[i, 0]] - 0.5 * x[[i, 2]] + 0.3 * (i % 7) as f64 - 0.9) > 0.0) as u8 as f64)
        .collect();
    let roa_x = ols_residuals(x.view(), age.view(), true).unwrap();
    let nc = fit_logistic(x.view(), y.view(), 0.0);
    let roa = fit_logistic(roa_x.view(), y.view(), 0.0);
    match (nc, roa) {
        (Ok(a), Ok(b)) => {
            for (u, v) in a.coefficients.iter().zip(b.coefficients.iter()) {
                assert!((u - v).abs() < 1e-8, "{u} vs {v}");
            }
        }
        (a, b) => panic!("fits failed: {:?} {:?}", a.err(), b.err()),
    }
}

#[test]
fn spearman_matches_reference_values() {
    let x: Vec<f64> = (1..=10).map(f64::from).collect();
    let y = [3.1, 2.0, 2.5, 1.0, 1.7, 0.3, 0.9, 0.2, -0.5, 0.1];
    let s = spearman(&x, &y).unwrap();
    assert!((s.rho - -0.9515151515151514).abs() < 1e-12);
    assert!((s.p_value - 2.279854920641689e-05).abs() < 1e-9);
    let y2 = [1.0, 1.0, 2.0, 2.0, 3.0, 5.0, 4.0, 6.0, 7.0, 7.0];
    let s = spearman(&x, &y2).unwrap();
    assert!((s.rho - 0.9786344578900984).abs() < 1e-12);
    assert!((s.p_value - 8.884953987050218e-07).abs() < 1e-9);
}

fn small_benchmark() -> BenchmarkConfig {
    BenchmarkConfig {
        grid: vec![[3.0, 1.0], [1.0, 3.0]],
        n_sims: 1,
        n: 300,
        d: 8,
        k_fit: 2,
        seed: 77,
        chain: ChainSettings {
            n_warmup: 40,
            n_samples: 20,
            thin: 1,
        },
        ppc: PpcOptions {
            n_replicates: 100,
            tau: 0.1,
            seed: 0,
            max_statistic_draws: Some(5),
        },
        ..BenchmarkConfig::default()
    }
}

#[test]
fn benchmark_table_is_reproducible() {
    let cfg = small_benchmark();
    let a = run_benchmark(&cfg).unwrap();
    let b = run_benchmark(&cfg).unwrap();
    assert_eq!(a.to_csv(), b.to_csv());
    assert_eq!(a.records, b.records);
    let csv = a.to_csv();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "ratio,non_causal,roa,ppca,bpmf,oracle,delta_roa,delta_ppca,delta_bpmf,excluded_ppca,excluded_bpmf"
    );
    assert!(lines.next().unwrap().starts_with("3/1,"));
    assert_eq!(a.rows.len(), 2);
    assert!(a.delta_roa_trend.is_none());
    // a single simulation can be re-run in isolation
    assert_eq!(simulate_once(&cfg, 1, 0).unwrap(), a.records[1]);
}

#[test]
fn table1_grid_matches_the_published_rows() {
    let g = table1_grid();
    assert_eq!(g.len(), 15);
    assert_eq!(g[0], [10.0, 1.0]);
    assert_eq!(g[7], [1.0, 1.0]);
    assert_eq!(g[14], [1.0, 10.0]);
    let cfg = SynthConfig::from_ratio(10.0, 1.0, 0.1).unwrap();
    assert!((cfg.nu_x - 0.9 * 10.0 / 11.0).abs() < 1e-15);
    assert!((cfg.nu_eps() - 0.1).abs() < 1e-12);
}
