use advq_core::globalfeat::{
    cedd, cedd_bin, gist, rank_by_global, GlobalKind, GlobalVector, Metric, CEDD_LEN, GIST_GRID, GIST_ORIENTATIONS,
    GIST_SCALES,
};
use advq_core::harness::synth::{render_collection, SynthSpec};
use advq_core::imagecore::{resize, Image};

// red hue, "normal" variant: after black, grey, white come (hue, variant) triples
const RED_NORMAL: usize = 3 + 1;
const VERTICAL: usize = 3;

#[test]
fn pure_red_is_one_bin() {
    let h = cedd(&Image::filled(50, 70, [1.0, 0.0, 0.0]).unwrap()).unwrap();
    assert_eq!(h.values.len(), CEDD_LEN);
    assert!((h.values[cedd_bin(0, RED_NORMAL)] - 1.0).abs() < 1e-12);
}

#[test]
fn period_two_stripes_are_vertical_edges() {
    let img = Image::from_fn(240, 240, |_, x| [(x % 2) as f64; 3]).unwrap();
    let h = cedd(&img).unwrap();
    let vertical: f64 = (0..24).map(|c| h.values[cedd_bin(VERTICAL, c)]).sum();
    assert!((h.values.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    assert!(vertical > 0.99, "{vertical}");
}

fn synth_images(n: usize) -> Vec<Image> {
    let spec = SynthSpec { classes: n, views: 2, distractors: 0, ..Default::default() };
    render_collection(&spec, 17).unwrap().into_iter().filter(|s| s.view_index == 0).map(|s| s.image).collect()
}

#[test]
fn extractors_deterministic() {
    let img = &synth_images(1)[0];
    assert_eq!(cedd(img).unwrap(), cedd(img).unwrap());
    assert_eq!(gist(img).unwrap(), gist(img).unwrap());
}

fn idx(s: usize, o: usize, gy: usize, gx: usize) -> usize {
    ((s * GIST_ORIENTATIONS + o) * GIST_GRID + gy) * GIST_GRID + gx
}

#[test]
fn vertical_stripes_peak_at_horizontal_frequency() {
    // period 8 -> 0.125 cycles/pixel, the second scale
    let img = Image::from_fn(128, 128, |_, x| [0.5 + 0.4 * (2.0 * std::f64::consts::PI * x as f64 / 8.0).cos(); 3]).unwrap();
    let v = gist(&img).unwrap().values;
    let mut energy = vec![vec![0.0; GIST_ORIENTATIONS]; GIST_SCALES];
    for s in 0..GIST_SCALES {
        for o in 0..GIST_ORIENTATIONS {
            energy[s][o] = (0..GIST_GRID * GIST_GRID).map(|c| v[idx(s, o, c / GIST_GRID, c % GIST_GRID)]).sum();
        }
    }
    let (mut bs, mut bo) = (0, 0);
    for s in 0..GIST_SCALES {
        for o in 0..GIST_ORIENTATIONS {
            if energy[s][o] > energy[bs][bo] {
                (bs, bo) = (s, o);
            }
        }
    }
    assert_eq!(bs, 1);
    // frequency along +x or -x: orientation 0 or 4
    assert!(bo == 0 || bo == 4, "orientation {bo}");
}

#[test]
fn rotation_permutes_orientations() {
    let img = synth_images(1).remove(0);
    let n = img.width();
    assert_eq!(img.height(), n);
    // counter-clockwise on screen: new(y, x) = old(x, n - 1 - y)
    let rot = Image::from_fn(n, n, |y, x| img.pixel(x, n - 1 - y)).unwrap();
    let a = gist(&img).unwrap().values;
    let b = gist(&rot).unwrap().values;
    let mut diff = 0.0;
    let mut total = 0.0;
    for s in 0..GIST_SCALES {
        for o in 0..GIST_ORIENTATIONS {
            for gy in 0..GIST_GRID {
                for gx in 0..GIST_GRID {
                    // frequency angle drops by 90 degrees; old cell (gx, 3 - gy) lands at (gy, gx)
                    let o_new = (o + GIST_ORIENTATIONS - 2) % GIST_ORIENTATIONS;
                    let old = a[idx(s, o, gx, GIST_GRID - 1 - gy)];
                    diff += (b[idx(s, o_new, gy, gx)] - old).abs();
                    total += old;
                }
            }
        }
    }
    assert!(diff <= 0.05 * total, "relative {}", diff / total);
}

#[test]
fn half_scale_keeps_gist_direction() {
    for img in synth_images(3) {
        let a = gist(&img).unwrap().values;
        let b = gist(&resize(&img, 50.0).unwrap()).unwrap().values;
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let cos = dot / (a.iter().map(|x| x * x).sum::<f64>().sqrt() * b.iter().map(|x| x * x).sum::<f64>().sqrt());
        assert!(cos >= 0.8, "cosine {cos}");
    }
}

#[test]
fn toy_l1_ranking_matches_hand_distances() {
    let q = GlobalVector { kind: GlobalKind::Cedd, values: vec![0.2, 0.3, 0.5] };
    let coll = vec![
        ("x".to_string(), GlobalVector { kind: GlobalKind::Cedd, values: vec![0.5, 0.5, 0.0] }), // 1.0
        ("y".to_string(), GlobalVector { kind: GlobalKind::Cedd, values: vec![0.2, 0.4, 0.4] }), // 0.2
        ("z".to_string(), GlobalVector { kind: GlobalKind::Cedd, values: vec![0.0, 0.3, 0.7] }), // 0.4
    ];
    let r = rank_by_global(&q, &coll, Metric::L1).unwrap();
    assert_eq!(r.ids().collect::<Vec<_>>(), ["y", "z", "x"]);
    let d: Vec<f64> = r.entries().iter().map(|e| -e.score).collect();
    for (got, want) in d.iter().zip([0.2, 0.4, 1.0]) {
        assert!((got - want).abs() < 1e-12);
    }
}
