use paired_adjust::dgp::{draw_pair_covariates, response_surfaces, PotentialPair, PotentialUnit};
use paired_adjust::randomization::median;
use paired_adjust::{
    enumerate_exact, generate_indexed, generate_sample, load_experiment_csv, load_science_csv,
    randomize, reveal, run_monte_carlo, write_experiment_csv, write_science_csv, Domain, Error,
    ExactDistribution, PotentialOutcomeSample, RandomizationOptions, Setting, Statistic, Substream,
    TransformSpec,
};

fn options_without_m() -> RandomizationOptions {
    RandomizationOptions {
        f: TransformSpec::identity(),
        g: TransformSpec::Identity {
            columns: Some(vec![]),
        },
        ..RandomizationOptions::default()
    }
}

#[test]
fn latent_pairs_have_the_stated_moments() {
    let n = 100_000;
    let w = draw_pair_covariates(n, &mut Substream::new(11, Domain::Sample, 0));
    for k in 0..4 {
        let a: Vec<f64> = w.iter().map(|p| p[0][k]).collect();
        let b: Vec<f64> = w.iter().map(|p| p[1][k]).collect();
        let (ma, mb) = (
            a.iter().sum::<f64>() / n as f64,
            b.iter().sum::<f64>() / n as f64,
        );
        let va = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / n as f64;
        let vb = b.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / n as f64;
        let cov = a
            .iter()
            .zip(&b)
            .map(|(x, y)| (x - ma) * (y - mb))
            .sum::<f64>()
            / n as f64;
        let corr = cov / (va * vb).sqrt();
        assert!((va - 1.0).abs() < 0.02, "var w1 {va}");
        assert!((vb - 1.25).abs() < 0.025, "var w2 {vb}");
        assert!((corr - 1.0 / 1.25f64.sqrt()).abs() < 0.01, "corr {corr}");
    }
}

#[test]
fn nonparallel_effects_average_zero() {
    let mut rng = Substream::new(5, Domain::Auxiliary, 0);
    let draws = 1_000_000;
    let mut total = 0.0;
    for _ in 0..draws {
        let w = [
            rng.standard_normal(),
            rng.standard_normal(),
            rng.standard_normal(),
            rng.standard_normal(),
        ];
        let (t, c) = response_surfaces(&w, Setting::Nonparallel);
        total += t - c;
    }
    // sd of tau(w) is about 22, so the mean has se about 0.022.
    assert!((total / draws as f64).abs() < 0.1);

    let sample = generate_sample(100_000, Setting::Nonparallel, 9);
    assert!(sample.sate().abs() < 0.3, "sate {}", sample.sate());
    let parallel = generate_sample(500, Setting::Parallel, 9);
    assert_eq!(parallel.sate(), 0.0);
}

#[test]
fn different_seeds_give_different_samples() {
    let a = generate_sample(10, Setting::Nonparallel, 1);
    let b = generate_sample(10, Setting::Nonparallel, 2);
    assert_ne!(a.pairs()[0].units[0].x, b.pairs()[0].units[0].x);
    assert_eq!(a, generate_sample(10, Setting::Nonparallel, 1));
}

#[test]
fn constant_effects_leave_r1_exactly_unbiased() {
    let base = generate_sample(8, Setting::Parallel, 21);
    let pairs: Vec<PotentialPair> = base
        .pairs()
        .iter()
        .map(|p| PotentialPair {
            units: p.units.clone().map(|u| PotentialUnit {
                r_t: u.r_c + 2.5,
                ..u
            }),
        })
        .collect();
    let sample = PotentialOutcomeSample::from_pairs(pairs).unwrap();
    let options = RandomizationOptions {
        f: TransformSpec::Identity {
            columns: Some(vec![1, 2]),
        },
        ..options_without_m()
    };
    let exact = enumerate_exact(&sample, &options, 16).unwrap();
    assert_eq!(exact.records.len(), 256);
    for stat in [Statistic::C, Statistic::R1] {
        let m = exact.moments(stat).unwrap();
        assert_eq!(m.failures, 0);
        assert!((m.mean - 2.5).abs() < 1e-10, "{stat:?} {}", m.mean);
    }
}

#[test]
fn classical_variance_matches_its_closed_form() {
    for seed in 0..5 {
        let sample = generate_sample(12, Setting::Nonparallel, seed);
        let exact = enumerate_exact(&sample, &options_without_m(), 16).unwrap();
        let c = exact.moments(Statistic::C).unwrap();
        let formula = ExactDistribution::classical_variance_formula(&sample);
        assert!((c.mean - sample.sate()).abs() < 1e-10);
        assert!((c.variance - formula).abs() <= 1e-10 * formula);
        // The classical variance estimate is conservative in expectation.
        assert!(c.mean_s2 >= c.variance * (1.0 - 1e-12));
    }
}

#[test]
fn two_pair_toy_distribution() {
    let unit = |r_t: f64, r_c: f64| PotentialUnit {
        w: vec![],
        x: vec![0.0],
        r_t,
        r_c,
    };
    let sample = PotentialOutcomeSample::from_pairs(vec![
        PotentialPair {
            units: [unit(3.0, 1.0), unit(1.0, 1.0)],
        },
        PotentialPair {
            units: [unit(2.0, 2.0), unit(0.0, 0.0)],
        },
    ])
    .unwrap();
    let options = RandomizationOptions {
        statistics: vec![Statistic::C],
        ..RandomizationOptions::default()
    };
    let exact = enumerate_exact(&sample, &options, 16).unwrap();
    // Y1 = 1 +/- 1 and Y2 = 0 +/- 2, so mean(Y) takes -1, 0, 1, 2 equally often.
    let dist = exact.distribution(Statistic::C);
    let values: Vec<f64> = dist.iter().map(|d| d.0).collect();
    assert_eq!(values, vec![-1.0, 0.0, 1.0, 2.0]);
    assert!(dist.iter().all(|d| (d.1 - 0.25).abs() < 1e-15));
    assert_eq!(exact.sate, 0.5);
    assert!((exact.moments(Statistic::C).unwrap().mean - 0.5).abs() < 1e-15);
}

#[test]
fn enumeration_refuses_large_tables() {
    let sample = generate_sample(17, Setting::Nonparallel, 1);
    assert!(matches!(
        enumerate_exact(&sample, &RandomizationOptions::default(), 16),
        Err(Error::TooLarge { n: 17, cap: 16 })
    ));
}

#[test]
fn monte_carlo_agrees_with_enumeration() {
    let sample = generate_sample(10, Setting::Nonparallel, 4);
    let options = options_without_m();
    let exact = enumerate_exact(&sample, &options, 16).unwrap();
    let mut rng = Substream::new(4, Domain::Assignment, 0);
    let mc = run_monte_carlo(&sample, 20_000, &options, &mut rng, false).unwrap();
    for stat in [Statistic::C, Statistic::R1] {
        let (e, m) = (exact.moments(stat).unwrap(), mc.get(stat).unwrap());
        let mean_se = (e.variance / m.evaluated as f64).sqrt();
        assert!(
            (m.mean - e.mean).abs() < 4.0 * mean_se,
            "{stat:?} mean {} vs {}",
            m.mean,
            e.mean
        );
        let cov_se = (e.coverage * (1.0 - e.coverage) / m.evaluated as f64)
            .sqrt()
            .max(1e-3);
        assert!(
            (m.coverage - e.coverage).abs() < 4.0 * cov_se,
            "{stat:?} coverage"
        );
        assert!(
            (m.variance / e.variance - 1.0).abs() < 0.06,
            "{stat:?} variance"
        );
    }
}

#[test]
fn r1_variance_gap_is_the_effect_heterogeneity() {
    let n = 2000;
    let sample = generate_sample(n, Setting::Nonparallel, 13);
    let options = RandomizationOptions {
        statistics: vec![Statistic::R1],
        ..options_without_m()
    };
    let mut rng = Substream::new(13, Domain::Assignment, 0);
    let mc = run_monte_carlo(&sample, 400, &options, &mut rng, false).unwrap();
    let r1 = mc.get(Statistic::R1).unwrap();
    let nf = n as f64;
    let gap = nf * r1.mean_s2 - nf * r1.variance;
    let sate = sample.sate();
    let heterogeneity = sample
        .pair_effects()
        .iter()
        .map(|d| (d - sate).powi(2))
        .sum::<f64>()
        / nf;
    assert!(
        (gap / heterogeneity - 1.0).abs() < 0.1,
        "gap {gap} heterogeneity {heterogeneity}"
    );
}

#[test]
fn parallel_r1_intervals_cover_near_nominal() {
    let sample = generate_sample(200, Setting::Parallel, 17);
    let mut rng = Substream::new(17, Domain::Assignment, 0);
    let mc = run_monte_carlo(&sample, 2000, &options_without_m(), &mut rng, false).unwrap();
    let cov = mc.get(Statistic::R1).unwrap().coverage;
    assert!((cov - 0.95).abs() < 0.03, "coverage {cov}");
}

#[test]
fn science_table_round_trips_through_csv() {
    let sample = generate_indexed(25, Setting::Nonparallel, 8, 3);
    let mut buf = Vec::new();
    write_science_csv(&sample, &mut buf).unwrap();
    let back = load_science_csv(buf.as_slice()).unwrap();
    assert_eq!(back.n(), 25);
    assert_eq!(back.covariates(), 4);
    for (a, b) in sample.pairs().iter().zip(back.pairs()) {
        for (u, w) in a.units.iter().zip(&b.units) {
            assert_eq!(u.x, w.x);
            assert_eq!(u.r_t, w.r_t);
            assert_eq!(u.r_c, w.r_c);
        }
    }
    assert!((back.sate() - sample.pair_effects().iter().sum::<f64>() / 25.0).abs() < 1e-12);

    let v = randomize(25, &mut Substream::new(8, Domain::Assignment, 3));
    let (exp, _) = reveal(&sample, &v).unwrap();
    let mut buf = Vec::new();
    write_experiment_csv(&exp, &mut buf).unwrap();
    let again = load_experiment_csv(buf.as_slice()).unwrap();
    assert_eq!(again, exp);
    assert_eq!(again.signs(), v);
}

#[test]
fn median_of_even_count_interpolates() {
    assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), 2.5);
}
