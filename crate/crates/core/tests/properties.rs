mod common;

use proptest::prelude::*;

use diffusion_crossover::dataio::genotype::{decode_genotype, encode_genotype};
use diffusion_crossover::genome::slerp;
use diffusion_crossover::metrics::{mid_ranks, spearman, Pca, PerceptualMetric, ProxyDistance};
use diffusion_crossover::sampler::Genotype;
use diffusion_crossover::schedule::{forward_diffuse, NoiseSchedule};
use diffusion_crossover::tensor::Tensor;

fn norm(v: &[f32]) -> f64 {
    v.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt()
}

fn angle(a: &[f32], b: &[f32]) -> f64 {
    let dot: f64 = a
        .iter()
        .zip(b)
        .map(|(&x, &y)| f64::from(x) * f64::from(y))
        .sum();
    (dot / (norm(a) * norm(b))).clamp(-1.0, 1.0).acos()
}

fn vec_pair(n: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f32>, Vec<f32>)> {
    n.prop_flat_map(|n| {
        (
            prop::collection::vec(-3.0f32..3.0, n),
            prop::collection::vec(-3.0f32..3.0, n),
        )
    })
    .prop_filter("non-degenerate", |(a, b)| {
        norm(a) > 1e-2
            && norm(b) > 1e-2
            && (0.01..std::f64::consts::PI - 0.01).contains(&angle(a, b))
    })
}

// Pearson correlation of textbook mid-ranks, computed without the library.
fn rank_pearson(x: &[f64], y: &[f64]) -> f64 {
    fn ranks(v: &[f64]) -> Vec<f64> {
        v.iter()
            .map(|a| {
                let below = v.iter().filter(|b| *b < a).count() as f64;
                let equal = v.iter().filter(|b| *b == a).count() as f64;
                below + (equal + 1.0) / 2.0
            })
            .collect()
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    cov / (vx * vy).sqrt()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(n - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, n - 1);
            out.push(q);
        }
    }
    out
}

fn tied_values(n: std::ops::Range<usize>) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    n.prop_flat_map(|n| {
        (
            prop::collection::vec(0u8..5, n),
            prop::collection::vec(0u8..5, n),
        )
    })
    .prop_map(|(a, b)| {
        (
            a.into_iter().map(f64::from).collect(),
            b.into_iter().map(f64::from).collect(),
        )
    })
    .prop_filter("both vary", |(a, b): &(Vec<f64>, Vec<f64>)| {
        a.iter().any(|v| *v != a[0]) && b.iter().any(|v| *v != b[0])
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn slerp_is_symmetric((a, b) in vec_pair(2..40), l in 0.0f64..=1.0) {
        let x = slerp(&a, &b, l, 1e-5).unwrap();
        let y = slerp(&b, &a, 1.0 - l, 1e-5).unwrap();
        for (p, q) in x.iter().zip(&y) {
            prop_assert!((p - q).abs() <= 1e-5 * (1.0 + p.abs()));
        }
    }

    #[test]
    fn slerp_moves_along_the_great_circle((a, b) in vec_pair(2..40), l in 0.0f64..=1.0) {
        let theta = angle(&a, &b);
        let x = slerp(&a, &b, l, 1e-5).unwrap();
        // unit inputs stay on the sphere; the angle splits in proportion to λ
        let (ua, ub): (Vec<f32>, Vec<f32>) = {
            let (na, nb) = (norm(&a), norm(&b));
            (a.iter().map(|v| (f64::from(*v) / na) as f32).collect(), b.iter().map(|v| (f64::from(*v) / nb) as f32).collect())
        };
        let u = slerp(&ua, &ub, l, 1e-5).unwrap();
        prop_assert!((norm(&u) - 1.0).abs() < 1e-5);
        if l > 1e-3 && l < 1.0 - 1e-3 {
            prop_assert!((angle(&u, &ua) - l * theta).abs() < 1e-3);
        }
        prop_assert!(x.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn spearman_matches_rank_pearson((x, y) in tied_values(3..30)) {
        let r = spearman(&x, &y).unwrap();
        prop_assert!((r.rho - rank_pearson(&x, &y)).abs() < 1e-12);
        prop_assert!(r.p_value > 0.0 && r.p_value <= 1.0);
    }

    #[test]
    fn exact_p_matches_enumeration((x, y) in tied_values(3..7)) {
        let r = spearman(&x, &y).unwrap();
        let observed = rank_pearson(&x, &y).abs();
        let perms = permutations(y.len());
        let hits = perms
            .iter()
            .filter(|p| {
                let yp: Vec<f64> = p.iter().map(|&i| y[i]).collect();
                rank_pearson(&x, &yp).abs() >= observed - 1e-9
            })
            .count();
        prop_assert!((r.p_value - hits as f64 / perms.len() as f64).abs() < 1e-12);
    }

    #[test]
    fn mid_ranks_sum_is_triangular(v in prop::collection::vec(0u8..6, 1..40)) {
        let v: Vec<f64> = v.into_iter().map(f64::from).collect();
        let n = v.len() as f64;
        prop_assert!((mid_ranks(&v).iter().sum::<f64>() - n * (n + 1.0) / 2.0).abs() < 1e-9);
    }

    #[test]
    fn pca_components_are_orthonormal(
        pts in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 6), 5..20)
    ) {
        let pca = Pca::fit(&pts, 3).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let d: f64 = pca.components[i].iter().zip(&pca.components[j]).map(|(a, b)| a * b).sum();
                let want = if i == j { 1.0 } else { 0.0 };
                prop_assert!((d - want).abs() < 1e-9);
            }
        }
        let ev = &pca.explained_variance;
        prop_assert!(ev[0] >= ev[1] && ev[1] >= ev[2]);
        prop_assert!(pca.explained_variance_ratio().iter().sum::<f64>() <= 1.0 + 1e-9);
        // projected variance along a component equals its explained variance
        let proj = pca.transform(&pts).unwrap();
        let n = pts.len() as f64;
        for c in 0..3 {
            let m = proj.iter().map(|p| p[c]).sum::<f64>() / n;
            prop_assert!(m.abs() < 1e-9);
            let var = proj.iter().map(|p| (p[c] - m).powi(2)).sum::<f64>() / (n - 1.0);
            prop_assert!((var - ev[c]).abs() < 1e-9 * (1.0 + ev[c]));
        }
    }

    #[test]
    fn alpha_bar_matches_running_product(steps in 2usize..400, lo in 1e-5f64..1e-3, span in 1e-3f64..0.2) {
        let s = NoiseSchedule::linear(steps, lo, lo + span).unwrap();
        let mut prod = 1.0f64;
        for t in 1..=steps {
            let beta = lo + span * (t - 1) as f64 / (steps - 1) as f64;
            prop_assert!((s.beta(t) - beta).abs() < 1e-15);
            prod *= 1.0 - beta;
            prop_assert!((s.alpha_bar(t) - prod).abs() <= 1e-12 * prod);
            if t > 1 {
                prop_assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            }
        }
    }

    #[test]
    fn forward_diffuse_is_affine_in_noise(t in 1usize..50, seed in any::<u64>()) {
        let s = NoiseSchedule::linear(50, 1e-4, 0.05).unwrap();
        let mut r = diffusion_crossover::rng::stream(seed, diffusion_crossover::rng::Purpose::Experiment, &[]);
        let x0 = Tensor::randn(&[1, 4, 4], &mut r);
        let e = Tensor::randn(&[1, 4, 4], &mut r);
        let xt = forward_diffuse(&x0, t, &e, &s).unwrap();
        let (a, b) = (s.alpha_bar(t).sqrt(), (1.0 - s.alpha_bar(t)).sqrt());
        for ((x, e), y) in x0.data().iter().zip(e.data()).zip(xt.data()) {
            prop_assert!((f64::from(*y) - (a * f64::from(*x) + b * f64::from(*e))).abs() < 1e-5);
        }
    }

    #[test]
    fn proxy_distance_is_a_semimetric(
        a in prop::collection::vec(-1.0f32..1.0, 256),
        b in prop::collection::vec(-1.0f32..1.0, 256),
    ) {
        let m = ProxyDistance::default();
        let (a, b) = (Tensor::new(vec![1, 16, 16], a).unwrap(), Tensor::new(vec![1, 16, 16], b).unwrap());
        let ab = m.distance(&a, &b).unwrap();
        prop_assert!(ab >= 0.0 && ab.is_finite());
        prop_assert!((ab - m.distance(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(m.distance(&a, &a).unwrap().abs() < 1e-12);
    }

    #[test]
    fn genotype_container_round_trips(steps in 1usize..6, seed in any::<u64>()) {
        let mut r = diffusion_crossover::rng::stream(seed, diffusion_crossover::rng::Purpose::Experiment, &[]);
        let g = Genotype {
            x_t: Tensor::randn(&[1, 3, 2], &mut r),
            z: (0..steps).map(|_| Tensor::randn(&[1, 3, 2], &mut r)).collect(),
        };
        let bytes = encode_genotype(&g).unwrap();
        let back = decode_genotype(&bytes, Some((&[1, 3, 2], steps))).unwrap();
        prop_assert!(back.x_t.bit_eq(&g.x_t));
        prop_assert!(back.z.iter().zip(&g.z).all(|(p, q)| p.bit_eq(q)));
        prop_assert!(decode_genotype(&bytes, Some((&[1, 3, 2], steps + 1))).is_err());
        prop_assert!(decode_genotype(&bytes[..bytes.len() - 1], None).is_err());
    }
}
