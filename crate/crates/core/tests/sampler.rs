use ghjm::diagnostics::{diagnose, split_rhat};
use ghjm::sampler::{run_hmc, Algorithm, GaussianTarget, SamplerConfig};
use ghjm::stats::mean;

fn coordinate(chains: &[ghjm::sampler::PosteriorChain], k: usize) -> Vec<Vec<f64>> {
    chains.iter().map(|c| c.draws.iter().map(|d| d[k]).collect()).collect()
}

#[test]
fn standard_bivariate_normal_moments() {
    let target = GaussianTarget::bivariate(0.0);
    let cfg = SamplerConfig { iterations: 6000, burn_in: 1000, thin: 1, chains: 2, seed: 17, ..Default::default() };
    let chains = run_hmc(&target, &cfg, |_| vec![1.0, -1.0]).unwrap();
    let draws: Vec<&Vec<f64>> = chains.iter().flat_map(|c| &c.draws).collect();
    assert_eq!(draws.len(), 10_000);
    for k in 0..2 {
        let per = coordinate(&chains, k);
        let d = diagnose(&per).unwrap();
        let pooled: Vec<f64> = per.concat();
        assert!(mean(&pooled).abs() <= 3.0 * d.mcse, "coordinate {k}: mean {} mcse {}", mean(&pooled), d.mcse);
    }
    let n = draws.len() as f64;
    let m: Vec<f64> = (0..2).map(|k| draws.iter().map(|d| d[k]).sum::<f64>() / n).collect();
    for i in 0..2 {
        for j in 0..2 {
            let c = draws.iter().map(|d| (d[i] - m[i]) * (d[j] - m[j])).sum::<f64>() / (n - 1.0);
            let expected = if i == j { 1.0 } else { 0.0 };
            assert!((c - expected).abs() < 0.05, "cov[{i}][{j}] = {c}");
        }
    }
}

#[test]
fn correlated_normal_mixes_across_chains() {
    let target = GaussianTarget::bivariate(0.9);
    let cfg = SamplerConfig { iterations: 3000, burn_in: 1000, thin: 1, chains: 4, seed: 23, ..Default::default() };
    let chains = run_hmc(&target, &cfg, |rng| {
        use rand_distr::{Distribution, Uniform};
        let u = Uniform::new(-2.0, 2.0).unwrap();
        vec![u.sample(rng), u.sample(rng)]
    })
    .unwrap();
    for k in 0..2 {
        let r = split_rhat(&coordinate(&chains, k)).unwrap();
        assert!(r <= 1.01, "coordinate {k}: R-hat {r}");
    }
}

#[test]
fn static_hmc_targets_the_same_distribution() {
    let target = GaussianTarget { mean: vec![2.0, -1.0], prec: vec![4.0, 0.0, 0.0, 0.25] };
    let cfg = SamplerConfig {
        iterations: 4000,
        burn_in: 1000,
        thin: 1,
        chains: 2,
        seed: 4,
        algorithm: Algorithm::Hmc,
        ..Default::default()
    };
    let chains = run_hmc(&target, &cfg, |_| vec![0.0, 0.0]).unwrap();
    for (k, (mu, sd)) in [(2.0, 0.5), (-1.0, 2.0)].into_iter().enumerate() {
        let per = coordinate(&chains, k);
        let d = diagnose(&per).unwrap();
        let pooled = per.concat();
        assert!((mean(&pooled) - mu).abs() <= 4.0 * d.mcse);
        let var = ghjm::stats::variance(&pooled);
        assert!((var.sqrt() / sd - 1.0).abs() < 0.08, "sd {}", var.sqrt());
    }
}

#[test]
fn thinning_keeps_the_requested_number_of_draws() {
    let target = GaussianTarget::bivariate(0.3);
    let cfg = SamplerConfig::default();
    let chains = run_hmc(&target, &SamplerConfig { chains: 1, ..cfg.clone() }, |_| vec![0.0, 0.0]).unwrap();
    assert_eq!(chains[0].draws.len(), cfg.retained());
    assert_eq!(cfg.retained(), 200);
}
