//! Nearest-neighbour distances of uniformly placed synthetic towers against
//! an independent reference simulation, by a two-sample Kolmogorov-Smirnov test.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use homedetect::geo::haversine_distance;
use homedetect::synth::{generate_world, SynthConfig};

fn nn_distances(points: &[(f64, f64)]) -> Vec<f64> {
    points
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            points
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, &q)| haversine_distance(p, q).unwrap())
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}

fn ks_statistic(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (n, m) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / n - j as f64 / m).abs());
    }
    d
}

#[test]
fn uniform_layout_matches_reference_nearest_neighbour_distribution() {
    // 100 towers in a one-degree square on the equator
    let n_towers = 100;
    let mut synth = Vec::new();
    let mut cfg = SynthConfig {
        n_towers,
        n_users: 1,
        lon_min: 0.0,
        lon_max: 1.0,
        lat_min: 0.0,
        lat_max: 1.0,
        ..SynthConfig::default()
    };
    for seed in 0..10 {
        cfg.seed = seed;
        let w = generate_world(&cfg).unwrap();
        let pts: Vec<(f64, f64)> = w.net.towers().iter().map(|t| (t.lon, t.lat)).collect();
        synth.extend(nn_distances(&pts));
    }

    let mut rng = ChaCha20Rng::seed_from_u64(2024);
    let mut reference = Vec::new();
    for _ in 0..20 {
        let pts: Vec<(f64, f64)> = (0..n_towers)
            .map(|_| (rng.gen_range(cfg.lon_min..cfg.lon_max), rng.gen_range(cfg.lat_min..cfg.lat_max)))
            .collect();
        reference.extend(nn_distances(&pts));
    }

    let (n, m) = (synth.len() as f64, reference.len() as f64);
    let d = ks_statistic(synth, reference);
    // alpha = 0.05
    let critical = 1.358 * ((n + m) / (n * m)).sqrt();
    assert!(d < critical, "KS D = {d:.4}, critical {critical:.4}");
}
