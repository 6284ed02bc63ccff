use gbs_core::dataset::{CountDataset, Detector, Provenance};
use gbs_core::stats::{
    choose_m_max, handover_gap, pearson_chi2, xeb_protocol, xeb_score, z_from_chi2, UniformModel, XebModel,
    XebOptions, ZMethod,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

/// Exact standard-normal equivalent of the upper chi-square tail.
fn exact_z(chi2: f64, k: usize) -> f64 {
    let tail = ChiSquared::new(k as f64).unwrap().sf(chi2);
    -Normal::standard().inverse_cdf(tail)
}

fn multinomial<R: Rng>(n: u64, p: &[f64], rng: &mut R) -> Vec<u64> {
    let mut left = n;
    let mut mass = 1.0;
    let mut out = Vec::with_capacity(p.len());
    for (i, &pi) in p.iter().enumerate() {
        let c = if i + 1 == p.len() { left } else { Binomial::new(left, (pi / mass).min(1.0)).unwrap().sample(rng) };
        out.push(c);
        left -= c;
        mass -= pi;
    }
    out
}

#[test]
fn hand_values() {
    let wh = z_from_chi2(100.0, 100).unwrap();
    assert_eq!(wh.method, ZMethod::WilsonHilferty);
    assert!((wh.z - 0.0471).abs() <= 1e-3, "{}", wh.z);
    let lr = z_from_chi2(500.0, 50).unwrap();
    assert_eq!(lr.method, ZMethod::LugannaniRice);
    assert!((lr.z - 18.30).abs() <= 0.01, "{}", lr.z);
}

#[test]
fn approximations_track_the_exact_tail() {
    for k in [5usize, 20, 100, 1000] {
        for q in [0.5, 1.0, 1.3, 2.0] {
            let chi2 = q * k as f64;
            let z = z_from_chi2(chi2, k).unwrap().z;
            let e = exact_z(chi2, k);
            if e.is_finite() && e.abs() < 8.0 {
                assert!((z - e).abs() < 0.05 * e.abs().max(1.0), "k={k} chi2={chi2}: {z} vs {e}");
            }
        }
    }
}

#[test]
fn handover_is_continuous_for_large_k() {
    for k in (20..=2000).step_by(10) {
        let gap = handover_gap(k);
        assert!(gap < 0.5, "k = {k}: gap {gap}");
    }
}

#[test]
fn null_experiments_give_standard_normal_z() {
    let p: Vec<f64> = {
        let w: Vec<f64> = (0..12).map(|i| 1.0 + (i as f64 * 0.7).sin().abs() * 3.0).collect();
        let s: f64 = w.iter().sum();
        w.iter().map(|x| x / s).collect()
    };
    let n = 1_000_000u64;
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let zero = vec![0.0; p.len()];
    let mut zs = Vec::new();
    let mut chis = Vec::new();
    for _ in 0..1000 {
        let counts = multinomial(n, &p, &mut rng);
        let sample: Vec<f64> = counts.iter().map(|&c| c as f64 / n as f64).collect();
        let se: Vec<f64> = counts.iter().map(|&c| (c as f64).sqrt() / n as f64).collect();
        let (chi2, k) = pearson_chi2(&p, &zero, &sample, &se).unwrap();
        chis.push((chi2, k));
        zs.push(z_from_chi2(chi2, k).unwrap().z);
    }
    let mean = zs.iter().sum::<f64>() / zs.len() as f64;
    let sd = (zs.iter().map(|z| (z - mean).powi(2)).sum::<f64>() / (zs.len() - 1) as f64).sqrt();
    assert!((-0.2..=0.2).contains(&mean), "mean {mean}");
    assert!((0.85..=1.15).contains(&sd), "sd {sd}");
    let mean_chi = chis.iter().map(|c| c.0).sum::<f64>() / chis.len() as f64;
    let k = chis[0].1 as f64;
    assert!((mean_chi - k).abs() < 0.1 * k, "{mean_chi} vs {k}");
}

#[test]
fn uniform_sector_scores_ln_c() {
    // every record in the n = 3 sector of 8 modes; uniform model inside the sector
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let records: Vec<Vec<u8>> = (0..500)
        .map(|_| {
            let mut r = vec![0u8; 8];
            let mut placed = 0;
            while placed < 3 {
                let j = rng.random_range(0..8);
                if r[j] == 0 {
                    r[j] = 1;
                    placed += 1;
                }
            }
            r
        })
        .collect();
    let refs: Vec<&[u8]> = records.iter().map(|r| r.as_slice()).collect();
    let model = UniformModel;
    let s = xeb_score(&refs, |p| model.pattern_probability(p), model.sector_probability(8, 3).unwrap()).unwrap();
    assert!((s - 56f64.ln()).abs() < 1e-12);
}

#[test]
fn empty_sector_scores_zero() {
    let ds = CountDataset::from_records(Detector::Threshold, 4, 1, &vec![vec![0u8; 4]; 50], Provenance::Experiment).unwrap();
    let model = UniformModel;
    let refs: Vec<&[u8]> = ds.records().collect();
    let s = xeb_score(&refs, |p| model.pattern_probability(p), model.pattern_probability(&[0; 4]).unwrap()).unwrap();
    assert_eq!(s, 0.0);
    let r = xeb_protocol(&ds, &model, XebOptions { n_max: 0, samples_per_sector: 10, seed: 1 }).unwrap();
    assert_eq!(r.per_photon_number.get(&0), Some(&0.0));
}

#[test]
fn protocol_takes_largest_tied_cutoff() {
    // trailing modes never click, so every cutoff from 3 on ties
    let records: Vec<Vec<u8>> = (0..40).map(|i| vec![1, (i % 2) as u8, 1, 0, 0]).collect();
    let ds = CountDataset::from_records(Detector::Threshold, 5, 1, &records, Provenance::Experiment).unwrap();
    assert_eq!(choose_m_max(&ds, 2), 5);
    let r = xeb_protocol(&ds, &UniformModel, XebOptions { n_max: 3, samples_per_sector: 10, seed: 4 }).unwrap();
    assert_eq!(r.m_max, 5);
}

#[test]
fn zero_probability_names_the_record() {
    let rec = [vec![1u8, 0], vec![0, 1]];
    let refs: Vec<&[u8]> = rec.iter().map(|r| r.as_slice()).collect();
    let err = xeb_score(&refs, |p| Ok(if p[0] == 1 { 0.5 } else { 0.0 }), 1.0).unwrap_err();
    assert!(err.to_string().contains("record 1"), "{err}");
}

proptest! {
    #[test]
    fn z_increases_with_chi2(k in 1usize..400, a in 0.0f64..3.0, b in 0.0f64..3.0) {
        let (lo, hi) = if a < b { (a, b) } else { (b, a) };
        let kf = k as f64;
        let zl = z_from_chi2(lo * kf, k).unwrap().z;
        let zh = z_from_chi2(hi * kf, k).unwrap().z;
        prop_assert!(zl <= zh + 1e-12, "{} -> {}, {} -> {}", lo * kf, zl, hi * kf, zh);
    }

    #[test]
    fn xeb_is_shift_invariant(ps in proptest::collection::vec(1e-6f64..1.0, 1..30), pn in 1e-3f64..1.0, scale in 1e-3f64..1e3) {
        let recs: Vec<Vec<u8>> = (0..ps.len()).map(|i| vec![i as u8]).collect();
        let refs: Vec<&[u8]> = recs.iter().map(|r| r.as_slice()).collect();
        let a = xeb_score(&refs, |r| Ok(ps[r[0] as usize]), pn).unwrap();
        let b = xeb_score(&refs, |r| Ok(ps[r[0] as usize] * scale), pn * scale).unwrap();
        prop_assert!((a - b).abs() <= 1e-10 * a.abs().max(1.0));
    }
}
