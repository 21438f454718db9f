use std::collections::BTreeMap;

use advq_core::bovw::{
    hamming, he_signature, index_descriptors, index_images, query_bovw, query_descriptors, train_codebook, train_he,
    DEFAULT_HE_THRESHOLD, HE_BITS,
};
use advq_core::harness::synth::{render_collection, SynthSpec};
use advq_core::localfeat::{detect_and_describe, SiftParams};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn sse(points: &[Vec<f32>], labels: &[usize], k: usize) -> (f64, Vec<Vec<f64>>) {
    let dim = points[0].len();
    let mut means = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (p, &l) in points.iter().zip(labels) {
        counts[l] += 1;
        for (m, v) in means[l].iter_mut().zip(p) {
            *m += f64::from(*v);
        }
    }
    for (m, c) in means.iter_mut().zip(&counts) {
        m.iter_mut().for_each(|v| *v /= (*c).max(1) as f64);
    }
    let cost = points
        .iter()
        .zip(labels)
        .map(|(p, &l)| p.iter().zip(&means[l]).map(|(a, b)| (f64::from(*a) - b).powi(2)).sum::<f64>())
        .sum();
    (cost, means)
}

#[test]
fn two_clouds_match_brute_force_partition() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut pts = Vec::new();
    for c in [[0.0f32, 0.0, 0.0], [6.0, -4.0, 2.0]] {
        for _ in 0..7 {
            pts.push(c.iter().map(|v| v + rng.random_range(-0.5..0.5)).collect::<Vec<f32>>());
        }
    }
    // exhaustive 2-partition search
    let n = pts.len();
    let mut best = (f64::INFINITY, Vec::new());
    for mask in 1u32..(1 << n) - 1 {
        let labels: Vec<usize> = (0..n).map(|i| ((mask >> i) & 1) as usize).collect();
        let (cost, means) = sse(&pts, &labels, 2);
        if cost < best.0 {
            best = (cost, means);
        }
    }
    let (cb, _) = train_codebook(&pts, 2, 11, 50).unwrap();
    for m in &best.1 {
        let hit = (0..2).any(|w| cb.centroid(w).iter().zip(m).all(|(a, b)| (f64::from(*a) - b).abs() < 1e-4));
        assert!(hit, "oracle mean {m:?} not among centroids");
    }
}

#[test]
fn symmetric_set_medians_sit_at_centroid_projection() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let centre: Vec<f32> = (0..128).map(|_| rng.random::<f32>()).collect();
    let other: Vec<f32> = centre.iter().map(|v| v + 50.0).collect();
    let mut xs = Vec::new();
    for _ in 0..200 {
        let d: Vec<f32> = (0..128).map(|_| rng.random_range(-0.1..0.1)).collect();
        xs.push(centre.iter().zip(&d).map(|(c, e)| c + e).collect::<Vec<f32>>());
        xs.push(centre.iter().zip(&d).map(|(c, e)| c - e).collect::<Vec<f32>>());
    }
    xs.push(other);
    let (cb, _) = train_codebook(&xs, 2, 1, 50).unwrap();
    let he = train_he(&xs, &cb, 5).unwrap();
    let w = cb.assign(&centre).0;
    let proj = he.project(&centre);
    for b in 0..HE_BITS {
        assert!((he.thresholds[w * HE_BITS + b] - proj[b]).abs() < 1e-4);
    }
    assert_eq!(he, train_he(&xs, &cb, 5).unwrap());
}

struct Fixture {
    ids: Vec<String>,
    descs: Vec<Vec<Vec<f32>>>,
}

fn synthetic_descriptors(n_classes: usize, views: usize) -> Fixture {
    let spec = SynthSpec { classes: n_classes, views, distractors: 0, ..Default::default() };
    let imgs = render_collection(&spec, 21).unwrap();
    let p = SiftParams::default();
    Fixture {
        ids: imgs.iter().map(|i| i.id.clone()).collect(),
        descs: imgs
            .iter()
            .map(|i| detect_and_describe(&i.image.to_grayscale(), &p).unwrap().descriptors.into_iter().map(|d| d.0).collect())
            .collect(),
    }
}

#[test]
fn self_retrieval_on_ten_images() {
    let spec = SynthSpec { classes: 5, views: 2, distractors: 0, ..Default::default() };
    let imgs = render_collection(&spec, 3).unwrap();
    let p = SiftParams::default();
    let all: Vec<Vec<f32>> = imgs
        .iter()
        .flat_map(|i| detect_and_describe(&i.image.to_grayscale(), &p).unwrap().descriptors)
        .map(|d| d.0)
        .collect();
    let (cb, _) = train_codebook(&all, 32, 1, 50).unwrap();
    let he = train_he(&all, &cb, 2).unwrap();
    let pairs: Vec<(String, _)> = imgs.iter().map(|i| (i.id.clone(), i.image.clone())).collect();
    let index = index_images(&pairs, &cb, &he, &p).unwrap();
    for img in &imgs {
        let r = query_bovw(&img.image, &index, DEFAULT_HE_THRESHOLD).unwrap();
        assert_eq!(r.entries()[0].id, img.id);
    }
    let again = index_images(&pairs, &cb, &he, &p).unwrap();
    assert_eq!(again, index);
}

// Plain tf-idf cosine, computed straight from word histograms.
fn tfidf_oracle(q_words: &[usize], db: &[Vec<usize>], k: usize) -> Vec<f64> {
    let n = db.len() as f64;
    let idf: Vec<f64> = (0..k)
        .map(|w| {
            let df = db.iter().filter(|ws| ws.contains(&w)).count();
            if df == 0 { 0.0 } else { (n / df as f64).ln() }
        })
        .collect();
    let vec = |ws: &[usize]| -> Vec<f64> {
        let mut v = vec![0.0; k];
        for &w in ws {
            v[w] += idf[w];
        }
        v
    };
    let q = vec(q_words);
    let qn = q.iter().map(|x| x * x).sum::<f64>().sqrt();
    db.iter()
        .map(|ws| {
            let d = vec(ws);
            let dn = d.iter().map(|x| x * x).sum::<f64>().sqrt();
            let dot: f64 = q.iter().zip(&d).map(|(a, b)| a * b).sum();
            if qn * dn > 0.0 { dot / (qn * dn) } else { 0.0 }
        })
        .collect()
}

#[test]
fn threshold_64_is_plain_tfidf_and_0_needs_identical_signatures() {
    let fx = synthetic_descriptors(3, 2);
    let all: Vec<Vec<f32>> = fx.descs.iter().flatten().cloned().collect();
    let (cb, _) = train_codebook(&all, 16, 3, 50).unwrap();
    let he = train_he(&all, &cb, 4).unwrap();
    let entries: Vec<(String, Vec<Vec<f32>>)> = fx.ids.iter().cloned().zip(fx.descs.iter().cloned()).collect();
    let index = index_descriptors(&entries, &cb, &he, &SiftParams::default()).unwrap();
    let words: Vec<Vec<usize>> = fx.descs.iter().map(|ds| ds.iter().map(|d| cb.assign(d).0).collect()).collect();

    let q = &fx.descs[0];
    let oracle = tfidf_oracle(&words[0], &words, 16);
    let got: BTreeMap<String, f64> = query_descriptors(q, &index, 64)
        .unwrap()
        .entries()
        .iter()
        .map(|e| (e.id.clone(), e.score))
        .collect();
    for (id, want) in fx.ids.iter().zip(&oracle) {
        assert!((got[id] - want).abs() < 1e-9, "{id}: {} vs {want}", got[id]);
    }

    // threshold 0: raw vote count equals the number of bit-identical same-word pairs
    let sigs = |ds: &[Vec<f32>]| -> Vec<(usize, u64)> {
        ds.iter().map(|d| { let w = cb.assign(d).0; (w, he_signature(d, w, &he).unwrap()) }).collect()
    };
    let qs = sigs(q);
    let strict = query_descriptors(q, &index, 0).unwrap();
    for (j, ds) in fx.descs.iter().enumerate() {
        let exact = sigs(ds);
        let pairs = qs.iter().flat_map(|a| exact.iter().map(move |b| (a, b)))
            .filter(|(a, b)| a.0 == b.0 && hamming(a.1, b.1) == 0)
            .count();
        let score = strict.entries().iter().find(|e| e.id == fx.ids[j]).unwrap().score;
        if pairs == 0 {
            assert_eq!(score, 0.0);
        }
    }
}
