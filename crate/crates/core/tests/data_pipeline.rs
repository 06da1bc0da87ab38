use lsfd_core::autodiff::Tape;
use lsfd_core::data::{
    batch_rng, bicubic_downscale, bicubic_upscale, flip_pair, from_tensor, generate_synth_corpus, hflip, load_png,
    sample_patch, save_gray_png, save_png, synth_texture, to_tensor, CorpusEntry, CorpusManifest, Dataset, ImageBuffer,
    Pattern, Split, SynthCorpusConfig, SynthSpec,
};
use lsfd_core::{Error, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random_image(w: usize, h: usize, seed: u64) -> ImageBuffer {
    let mut r = rng(seed);
    ImageBuffer::from_fn(w, h, |_, _| [r.random(), r.random(), r.random()])
}

#[test]
fn png_round_trip_is_lossless() {
    let dir = tempfile::tempdir().unwrap();
    let img = random_image(16, 16, 1);
    let path = dir.path().join("a.png");
    save_png(&img, &path).unwrap();
    assert_eq!(load_png(&path).unwrap(), img);
}

#[test]
fn grayscale_png_is_replicated() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.png");
    let data: Vec<u8> = (0..12).map(|v| v * 20).collect();
    let file = std::fs::File::create(&path).unwrap();
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), 4, 3);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().unwrap();
    w.write_image_data(&data).unwrap();
    w.finish().unwrap();
    let img = load_png(&path).unwrap();
    assert_eq!((img.width(), img.height()), (4, 3));
    for (i, px) in img.pixels().chunks(3).enumerate() {
        assert_eq!(px, [data[i]; 3]);
    }
}

#[test]
fn single_red_pixel_decodes() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.png");
    save_png(&ImageBuffer::filled(1, 1, [255, 0, 0]), &path).unwrap();
    assert_eq!(load_png(&path).unwrap().get(0, 0), [255, 0, 0]);
}

#[test]
fn unsupported_pngs_are_format_errors() {
    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str, color, depth, data: &[u8]| {
        let path = dir.path().join(name);
        let file = std::fs::File::create(&path).unwrap();
        let mut enc = png::Encoder::new(std::io::BufWriter::new(file), 2, 2);
        enc.set_color(color);
        enc.set_depth(depth);
        if color == png::ColorType::Indexed {
            enc.set_palette(vec![0, 0, 0, 255, 255, 255]);
        }
        let mut w = enc.write_header().unwrap();
        w.write_image_data(data).unwrap();
        w.finish().unwrap();
        path
    };
    let sixteen = write("16.png", png::ColorType::Rgb, png::BitDepth::Sixteen, &[0u8; 24]);
    assert!(matches!(load_png(sixteen), Err(Error::Format(_))));
    let palette = write("p.png", png::ColorType::Indexed, png::BitDepth::Eight, &[0, 1, 1, 0]);
    assert!(matches!(load_png(palette), Err(Error::Format(_))));
    let garbage = dir.path().join("x.png");
    std::fs::write(&garbage, b"not a png").unwrap();
    assert!(matches!(load_png(garbage), Err(Error::Format(_))));
    assert!(matches!(
        load_png(dir.path().join("missing.png")),
        Err(Error::Io { .. })
    ));
}

#[test]
fn downscale_preserves_constants_and_s1_is_identity() {
    let flat = ImageBuffer::filled(24, 12, [12, 130, 250]);
    for s in [2, 3, 4] {
        let out = bicubic_downscale(&flat, s).unwrap();
        assert_eq!((out.width(), out.height()), (24 / s, 12 / s));
        assert!(out.pixels().chunks(3).all(|p| p == [12, 130, 250]));
    }
    let img = random_image(9, 7, 3);
    assert_eq!(bicubic_downscale(&img, 1).unwrap(), img);
}

#[test]
fn downscale_rejects_indivisible_sizes() {
    let img = random_image(9, 8, 3);
    assert!(matches!(bicubic_downscale(&img, 2), Err(Error::InvalidArgument(_))));
    assert_eq!(img.crop_to_multiple(2).unwrap().width(), 8);
}

#[test]
fn linear_ramp_downscales_to_the_sampled_ramp() {
    // A symmetric kernel with unit sum reproduces a linear signal exactly,
    // so interior outputs equal the ramp at the output pixel centre.
    let img = ImageBuffer::from_fn(64, 8, |x, _| {
        let v = (4 * x) as u8;
        [v, v, v]
    });
    for s in [2usize, 4] {
        let out = bicubic_downscale(&img, s).unwrap();
        let reach = 2 * s; // kernel half-width in input pixels
        for j in 0..out.width() {
            let u = (j as f64 + 0.5) * s as f64 - 0.5;
            if u < reach as f64 || u > (63 - reach) as f64 {
                continue;
            }
            let expected = 4.0 * u;
            for y in 0..out.height() {
                let got = out.get(j, y)[0] as f64;
                assert!((got - expected).abs() <= 1.0, "s={s} j={j}: {got} vs {expected}");
            }
        }
    }
}

#[test]
fn upscale_of_constant_is_constant() {
    let flat = ImageBuffer::filled(5, 4, [7, 8, 9]);
    let up = bicubic_upscale(&flat, 3).unwrap();
    assert_eq!((up.width(), up.height()), (15, 12));
    assert!(up.pixels().chunks(3).all(|p| p == [7, 8, 9]));
}

#[test]
fn tensor_conversion_laws() {
    let white = ImageBuffer::filled(2, 2, [255, 255, 255]);
    let t = to_tensor(&white, [0.0; 3]);
    assert!(t.data().iter().all(|&v| v == 1.0));

    let img = random_image(7, 5, 9);
    let mean = [0.45, 0.43, 0.4];
    assert_eq!(from_tensor(&to_tensor(&img, mean), mean).unwrap(), img);

    let t = Tensor::full([1, 3, 1, 2], -0.5);
    assert!(from_tensor(&t, [0.0; 3]).unwrap().pixels().iter().all(|&v| v == 0));
    let t = Tensor::full([1, 3, 1, 2], 1.7);
    assert!(from_tensor(&t, [0.0; 3]).unwrap().pixels().iter().all(|&v| v == 255));
    assert!(matches!(
        from_tensor(&Tensor::zeros([2, 3, 1, 1]), [0.0; 3]),
        Err(Error::InvalidShape(_))
    ));
}

#[test]
fn patch_alignment_and_edge_cases() {
    let hr = random_image(120, 100, 4);
    let lr = bicubic_downscale(&hr, 2).unwrap();
    let mut r = rng(5);
    for _ in 0..20 {
        let p = sample_patch(&hr, &lr, "img", 2, 12, [0.0; 3], &mut r).unwrap();
        let (x, y) = p.meta.offset;
        assert_eq!(p.lr.shape().dims(), [1, 3, 12, 12]);
        assert_eq!(p.hr.shape().dims(), [1, 3, 24, 24]);
        let expect_hr = to_tensor(&hr.crop(2 * x, 2 * y, 24, 24).unwrap(), [0.0; 3]);
        let expect_lr = to_tensor(&lr.crop(x, y, 12, 12).unwrap(), [0.0; 3]);
        assert_eq!(p.hr.data(), expect_hr.data());
        assert_eq!(p.lr.data(), expect_lr.data());
    }

    let hr = random_image(96, 96, 6);
    let lr = bicubic_downscale(&hr, 2).unwrap();
    let p = sample_patch(&hr, &lr, "exact", 2, 48, [0.0; 3], &mut r).unwrap();
    assert_eq!(p.meta.offset, (0, 0));

    let small = random_image(40, 40, 7);
    let small_lr = bicubic_downscale(&small, 2).unwrap();
    assert!(matches!(
        sample_patch(&small, &small_lr, "s", 2, 48, [0.0; 3], &mut r),
        Err(Error::TooSmall {
            width: 20,
            height: 20,
            patch: 48
        })
    ));
}

#[test]
fn same_rng_state_gives_same_patch() {
    let hr = random_image(64, 64, 8);
    let lr = bicubic_downscale(&hr, 2).unwrap();
    let a = sample_patch(&hr, &lr, "i", 2, 8, [0.1; 3], &mut rng(3)).unwrap();
    let b = sample_patch(&hr, &lr, "i", 2, 8, [0.1; 3], &mut rng(3)).unwrap();
    assert_eq!(a.meta, b.meta);
    assert_eq!(a.lr.data(), b.lr.data());
    assert_eq!(a.hr.data(), b.hr.data());
}

#[test]
fn flip_laws() {
    let hr = random_image(32, 32, 9);
    let lr = bicubic_downscale(&hr, 2).unwrap();
    let p = sample_patch(&hr, &lr, "i", 2, 8, [0.0; 3], &mut rng(1)).unwrap();
    let f = flip_pair(p.clone());
    assert!(f.meta.flipped);
    for c in 0..3 {
        let sum = |t: &Tensor| t.plane(0, c).iter().sum::<f64>();
        assert!((sum(&f.lr) - sum(&p.lr)).abs() < 1e-9);
        assert!((sum(&f.hr) - sum(&p.hr)).abs() < 1e-9);
    }
    assert_eq!(f.lr.at(0, 1, 2, 0), p.lr.at(0, 1, 2, 7));
    let back = flip_pair(f);
    assert!(!back.meta.flipped);
    assert_eq!(back.lr.data(), p.lr.data());
    assert_eq!(back.hr.data(), p.hr.data());
}

#[test]
fn flip_frequency_is_half() {
    let pair = sample_patch(
        &random_image(8, 8, 1),
        &random_image(4, 4, 2),
        "i",
        2,
        2,
        [0.0; 3],
        &mut rng(0),
    )
    .unwrap();
    let mut r = rng(77);
    let draws = 10_000;
    let flips = (0..draws).filter(|_| hflip(pair.clone(), &mut r).meta.flipped).count();
    let freq = flips as f64 / draws as f64;
    assert!((0.48..=0.52).contains(&freq), "flip frequency {freq}");
}

#[test]
fn stripes_are_row_constant_and_periodic() {
    let mut spec = SynthSpec::new(40, Pattern::Stripes, 8);
    spec.contrast = 0.9;
    let img = synth_texture(&spec, &mut rng(2)).unwrap();
    for y in 0..40 {
        for x in 0..40 {
            assert_eq!(img.get(x, y), img.get(x, 0));
            if x + 8 < 40 {
                assert_eq!(img.get(x + 8, y), img.get(x, y));
            }
        }
    }
    let distinct: std::collections::HashSet<[u8; 3]> = (0..8).map(|x| img.get(x, 0)).collect();
    assert!(distinct.len() > 2);
}

#[test]
fn zero_contrast_is_constant() {
    for pattern in Pattern::ALL {
        let mut spec = SynthSpec::new(16, pattern, 5);
        spec.contrast = 0.0;
        spec.angle = 33.0;
        let img = synth_texture(&spec, &mut rng(1)).unwrap();
        let first = img.get(0, 0);
        assert!(img.pixels().chunks(3).all(|p| p == first), "{pattern:?}");
    }
}

#[test]
fn texture_validation() {
    let spec = SynthSpec::new(16, Pattern::Grid, 1);
    assert!(matches!(synth_texture(&spec, &mut rng(0)), Err(Error::Config(_))));
}

/// Magnitude of one 2-D DFT bin of the green channel, divided by pixel count.
fn bin_magnitude(img: &ImageBuffer, u: usize, v: usize) -> f64 {
    let t = to_tensor(img, [0.0; 3]);
    let g = Tensor::from_vec([1, 1, img.height(), img.width()], t.plane(0, 1).to_vec()).unwrap();
    let mut tape = Tape::new();
    let x = tape.constant(g);
    let (re, im) = tape.dft2(x);
    let i = u * img.width() + v;
    tape.value(re).data()[i].hypot(tape.value(im).data()[i]) / (img.width() * img.height()) as f64
}

#[test]
fn downscaling_a_fine_checker_loses_its_energy() {
    // A period-4 checker sits at 16 cycles per side on both axes, which is
    // the LR Nyquist bin. Depending on phase the LR keeps a full-contrast
    // Nyquist pattern or none at all, so compare energy averaged over phases.
    let spec = SynthSpec::new(64, Pattern::Checker, 4);
    let (mut before, mut after) = (0.0, 0.0);
    for seed in 0..32 {
        let hr = synth_texture(&spec, &mut rng(seed)).unwrap();
        let lr = bicubic_downscale(&hr, 2).unwrap();
        before += bin_magnitude(&hr, 16, 16).powi(2);
        after += bin_magnitude(&lr, 16, 16).powi(2);
    }
    assert!(before / 32.0 > 0.01, "hr energy {before}");
    assert!(after < 0.5 * before, "lr {after} vs hr {before}");
}

#[test]
fn synth_corpus_is_reproducible_and_mean_uses_train_only() {
    let cfg = SynthCorpusConfig {
        train: 6,
        val: 3,
        test: 1,
        size: 24,
        seed: 11,
        ..SynthCorpusConfig::default()
    };
    let a = generate_synth_corpus(&cfg).unwrap();
    let b = generate_synth_corpus(&cfg).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.split(Split::Train).count(), 6);
    assert_eq!(a.split(Split::Val).count(), 3);

    let base = std::path::Path::new("");
    let mut sums = [0.0; 3];
    let mut n = 0.0;
    for e in a.split(Split::Train) {
        let img = e.load(base).unwrap();
        for px in img.pixels().chunks(3) {
            for (s, &v) in sums.iter_mut().zip(px) {
                *s += v as f64 / 255.0;
            }
            n += 1.0;
        }
    }
    for (m, s) in a.mean_rgb.iter().zip(sums) {
        assert!((m - s / n).abs() < 1e-12);
    }

    let mut altered = a.clone();
    for e in altered.entries.iter_mut().filter(|e| e.split != Split::Train) {
        e.seed ^= 0xdead;
    }
    assert_eq!(altered.compute_mean(base).unwrap(), a.mean_rgb);
}

#[test]
fn manifest_json_round_trip_and_validation() {
    let dir = tempfile::tempdir().unwrap();
    let img = random_image(10, 10, 3);
    save_png(&img, dir.path().join("p.png")).unwrap();
    let manifest = CorpusManifest {
        entries: vec![
            CorpusEntry {
                id: "photo".into(),
                path: Some("p.png".into()),
                spec: None,
                seed: 0,
                split: Split::Train,
            },
            CorpusEntry {
                id: "tex".into(),
                path: None,
                spec: Some(SynthSpec::new(12, Pattern::Moire, 4)),
                seed: 5,
                split: Split::Val,
            },
        ],
        mean_rgb: [0.5; 3],
    };
    let path = dir.path().join("m.json");
    manifest.save(&path).unwrap();
    let back = CorpusManifest::load(&path).unwrap();
    assert_eq!(back, manifest);
    assert_eq!(back.entries[0].load(dir.path()).unwrap(), img);

    let mut dup = manifest.clone();
    dup.entries[1].id = "photo".into();
    assert!(matches!(dup.validate(), Err(Error::Config(_))));
    let mut both = manifest.clone();
    both.entries[1].path = Some("p.png".into());
    assert!(matches!(both.validate(), Err(Error::Config(_))));

    std::fs::write(&path, r#"{"entries": [], "mean_rgb": [0,0,0], "extra": 1}"#).unwrap();
    assert!(matches!(CorpusManifest::load(&path), Err(Error::Json(_))));
}

#[test]
fn batch_streams_are_deterministic_per_substream() {
    let cfg = SynthCorpusConfig {
        train: 4,
        val: 0,
        size: 32,
        seed: 2,
        ..SynthCorpusConfig::default()
    };
    let m = generate_synth_corpus(&cfg).unwrap();
    let ds = Dataset::from_manifest(&m, Split::Train, 2, std::path::Path::new("")).unwrap();
    assert_eq!(ds.len(), 4);
    let draw = |e, b| {
        ds.sample_batch(3, 8, m.mean_rgb, true, &mut batch_rng(9, e, b))
            .unwrap()
    };
    let (x, y) = (draw(1, 2), draw(1, 2));
    assert_eq!(x.lr.data(), y.lr.data());
    assert_eq!(x.hr.data(), y.hr.data());
    assert_eq!(x.meta, y.meta);
    assert_eq!(x.lr.shape().dims(), [3, 3, 8, 8]);
    assert_eq!(x.hr.shape().dims(), [3, 3, 16, 16]);
    assert_ne!(draw(1, 3).lr.data(), x.lr.data());
    assert_ne!(draw(2, 2).lr.data(), x.lr.data());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn sampled_pairs_stay_aligned(seed in 0u64..5000, s in 2usize..5, patch in 2usize..9) {
        let hr = random_image(patch * s + 3 * s, patch * s + 2 * s, seed);
        let lr = bicubic_downscale(&hr, s).unwrap();
        let p = sample_patch(&hr, &lr, "i", s, patch, [0.0; 3], &mut rng(seed)).unwrap();
        let (x, y) = p.meta.offset;
        prop_assert!(x + patch <= lr.width() && y + patch <= lr.height());
        let expect = to_tensor(&hr.crop(s * x, s * y, s * patch, s * patch).unwrap(), [0.0; 3]);
        prop_assert_eq!(p.hr.data(), expect.data());
    }

    #[test]
    fn downscale_output_dims(seed in 0u64..5000, s in 2usize..4) {
        let img = random_image(6 * s, 4 * s, seed);
        let out = bicubic_downscale(&img, s).unwrap();
        prop_assert_eq!(out.width(), 6);
        prop_assert_eq!(out.height(), 4);
    }
}

#[test]
fn gray_png_reads_back_replicated() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.png");
    let values: Vec<u8> = (0..15).map(|i| (i * 17) as u8).collect();
    save_gray_png(5, 3, &values, &path).unwrap();
    let img = load_png(&path).unwrap();
    assert_eq!((img.width(), img.height()), (5, 3));
    for (i, v) in values.iter().enumerate() {
        assert_eq!(img.get(i % 5, i / 5), [*v; 3]);
    }
    assert!(matches!(
        save_gray_png(5, 3, &values[1..], &path),
        Err(Error::InvalidShape(_))
    ));
}
