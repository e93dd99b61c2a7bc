use psfcn::geometry::{normalize, Image, Vec3};
use psfcn::net::{build_psfcn, concat_light, Fusion, NetConfig, Observations};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn inputs(seed: u64, q: usize, h: usize, w: usize) -> (Vec<Image>, Vec<Vec3>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let images = (0..q)
        .map(|_| Image {
            height: h,
            width: w,
            data: (0..3 * h * w).map(|_| rng.gen_range(0.0..1.0)).collect(),
        })
        .collect();
    let lights = (0..q)
        .map(|_| normalize([rng.gen_range(-0.7..0.7), rng.gen_range(-0.7..0.7), 1.0]))
        .collect();
    (images, lights)
}

fn quarter(fusion: Fusion) -> NetConfig {
    NetConfig {
        width_scale: 0.25,
        fusion,
        ..NetConfig::default()
    }
}

#[test]
fn light_planes_slice_back_exactly() {
    let (images, lights) = inputs(1, 5, 6, 7);
    for (img, l) in images.iter().zip(&lights) {
        let t = concat_light(img, *l).unwrap();
        for y in 0..6 {
            for x in 0..7 {
                let got = [t.at(0, 3, y, x), t.at(0, 4, y, x), t.at(0, 5, y, x)];
                assert_eq!(got, *l);
                for c in 0..3 {
                    assert_eq!(t.at(0, c, y, x), img.get(c, y, x));
                }
            }
        }
    }
}

#[test]
fn max_fusion_output_ignores_input_order() {
    let net = build_psfcn(&quarter(Fusion::Max), 4).unwrap();
    let (images, lights) = inputs(2, 6, 12, 16);
    let mask = vec![true; 12 * 16];
    let reference = net
        .predict(&Observations { images: &images, lights: Some(&lights) }, &mask)
        .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut order: Vec<usize> = (0..6).collect();
    for _ in 0..10 {
        order.shuffle(&mut rng);
        let imgs: Vec<Image> = order.iter().map(|&i| images[i].clone()).collect();
        let ls: Vec<Vec3> = order.iter().map(|&i| lights[i]).collect();
        let out = net.predict(&Observations { images: &imgs, lights: Some(&ls) }, &mask).unwrap();
        assert_eq!(out, reference);
    }
}

#[test]
fn duplicated_input_matches_single_input() {
    let net = build_psfcn(&quarter(Fusion::Max), 5).unwrap();
    let (images, lights) = inputs(4, 1, 8, 8);
    let mask = vec![true; 64];
    let single = net.predict(&Observations { images: &images, lights: Some(&lights) }, &mask).unwrap();
    for k in [2, 5] {
        let imgs = vec![images[0].clone(); k];
        let ls = vec![lights[0]; k];
        let out = net.predict(&Observations { images: &imgs, lights: Some(&ls) }, &mask).unwrap();
        assert_eq!(out, single);
    }
}

#[test]
fn any_input_count_and_size_divisible_by_four() {
    let net = build_psfcn(&quarter(Fusion::Max), 6).unwrap();
    for (q, h, w) in [(1, 4, 4), (3, 8, 12), (10, 20, 16)] {
        let (images, lights) = inputs(q as u64, q, h, w);
        let out = net.predict(&Observations { images: &images, lights: Some(&lights) }, &vec![true; h * w]).unwrap();
        assert_eq!((out.height, out.width), (h, w));
        for n in &out.normals {
            let len = n.iter().map(|v| v * v).sum::<f32>().sqrt();
            assert!((len - 1.0).abs() < 1e-5);
        }
    }
}

#[test]
fn uncalibrated_network_ignores_lights() {
    let net = build_psfcn(&NetConfig { calibrated: false, ..quarter(Fusion::Max) }, 7).unwrap();
    let (images, lights) = inputs(8, 3, 8, 8);
    let (_, other) = inputs(9, 3, 8, 8);
    let mask = vec![true; 64];
    let a = net.predict(&Observations { images: &images, lights: Some(&lights) }, &mask).unwrap();
    let b = net.predict(&Observations { images: &images, lights: Some(&other) }, &mask).unwrap();
    let c = net.predict(&Observations { images: &images, lights: None }, &mask).unwrap();
    assert_eq!(a, b);
    assert_eq!(a, c);
}
