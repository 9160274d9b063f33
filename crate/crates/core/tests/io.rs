use dropnoise_core::io::{
    decode_checkpoint, decode_png, encode_checkpoint, encode_images, encode_labels, format_cell, load_checkpoint,
    load_mnist_idx, parse_table, quantize, read_csv_table, render_grid, save_checkpoint, save_image_grid, table_bytes,
    write_csv_table, Checkpoint, GridFormat, IoError, Table, FORMAT_VERSION,
};
use dropnoise_core::models::{build_discriminator, build_generator, generate, sample_latents, ConvBlock, GenerationConfig};
use dropnoise_core::nn::{MaskRng, Probability};
use dropnoise_core::rng::{stream_rng, StreamId};
use dropnoise_core::training::{OptimizerConfig, TrainConfig};
use dropnoise_core::{Architecture, DiscriminatorSpec, GeneratorSpec, ImageShape, Placement};
use dropnoise_tensor::Tensor;
use proptest::prelude::*;
use tempfile::tempdir;

fn p(v: f64) -> Probability {
    Probability::new(v).unwrap()
}

#[test]
fn two_image_fixture_loads_exactly() {
    let dir = tempdir().unwrap();
    let pixels = [0u8, 255, 51, 204, 127, 128, 1, 254];
    std::fs::write(dir.path().join("img"), encode_images(2, 2, 2, &pixels)).unwrap();
    std::fs::write(dir.path().join("lbl"), encode_labels(&[3, 9])).unwrap();
    let ds = load_mnist_idx(&dir.path().join("img"), Some(&dir.path().join("lbl"))).unwrap();
    assert_eq!(ds.images.shape(), &[2, 1, 2, 2]);
    let expected: Vec<f32> = pixels.iter().map(|&b| (b as f64 / 127.5 - 1.0) as f32).collect();
    assert_eq!(ds.images.data(), expected.as_slice());
    assert_eq!(ds.images.data()[..2], [-1.0, 1.0]);
    assert_eq!(ds.labels, Some(vec![3, 9]));
    assert_eq!(ds.provenance.len(), 2);
    assert_eq!(ds.provenance[0].bytes, 24);
    assert_eq!(ds.provenance[0].sha256.len(), 64);
}

#[test]
fn malformed_idx_files_are_rejected_with_specific_errors() {
    let dir = tempdir().unwrap();
    let good = encode_images(2, 2, 2, &[0; 8]);
    let write = |name: &str, bytes: &[u8]| {
        let path = dir.path().join(name);
        std::fs::write(&path, bytes).unwrap();
        path
    };
    let truncated = write("truncated", &good[..good.len() - 3]);
    match load_mnist_idx(&truncated, None) {
        Err(IoError::Truncated { expected, actual, .. }) => assert_eq!((expected, actual), (24, 21)),
        other => panic!("{other:?}"),
    }
    let e = load_mnist_idx(&truncated, None).unwrap_err().to_string();
    assert!(e.contains("24") && e.contains("21"), "{e}");

    let mut magic = good.clone();
    magic[2] = 0x09;
    assert!(matches!(load_mnist_idx(&write("magic", &magic), None), Err(IoError::BadMagic { .. })));
    assert!(matches!(load_mnist_idx(&write("empty", &[]), None), Err(IoError::Truncated { .. })));
    assert!(matches!(load_mnist_idx(&dir.path().join("absent"), None), Err(IoError::File { .. })));

    let img = write("img", &good);
    let three = write("three", &encode_labels(&[1, 2, 3]));
    assert!(matches!(load_mnist_idx(&img, Some(&three)), Err(IoError::CountMismatch { images: 2, labels: 3 })));
    let mut short = encode_labels(&[1, 2]);
    short.pop();
    assert!(matches!(load_mnist_idx(&img, Some(&write("short", &short))), Err(IoError::Truncated { .. })));
    assert!(matches!(load_mnist_idx(&img, Some(&img)), Err(IoError::BadMagic { .. })));
}

#[test]
fn bundled_dataset_has_expected_layout() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist5k");
    let ds = load_mnist_idx(&dir.join("train-images-idx3-ubyte"), Some(&dir.join("train-labels-idx1-ubyte"))).unwrap();
    assert_eq!(ds.images.shape(), &[5000, 1, 28, 28]);
    assert!(ds.images.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    let labels = ds.labels.unwrap();
    assert!((0..10u8).all(|d| labels.iter().filter(|&&l| l == d).count() == 500));
}

fn small_arch(p_train: f64) -> Architecture {
    Architecture {
        generator: GeneratorSpec {
            latent_dim: 4,
            hidden: vec![ConvBlock { out_channels: 3, kernel: 4, stride: 1, padding: 0, batchnorm: true }],
            output: ConvBlock { out_channels: 1, kernel: 4, stride: 2, padding: 1, batchnorm: false },
            image: ImageShape { channels: 1, height: 8, width: 8 },
            dropout: dropnoise_core::DropoutSpec::inverted(p(p_train)),
            placement: Placement::AllHidden,
        },
        discriminator: DiscriminatorSpec {
            image: ImageShape { channels: 1, height: 8, width: 8 },
            hidden: vec![dropnoise_core::models::DiscriminatorBlock {
                conv: ConvBlock { out_channels: 2, kernel: 4, stride: 2, padding: 1, batchnorm: true },
                leaky_slope: 0.2,
            }],
            output: ConvBlock { out_channels: 1, kernel: 4, stride: 1, padding: 0, batchnorm: false },
        },
    }
}

fn checkpoint(arch: Architecture, seed: u64) -> Checkpoint {
    let mut init = stream_rng(seed, StreamId::INIT);
    let gen = build_generator(&arch.generator, &mut init).unwrap();
    let disc = build_discriminator(&arch.discriminator, &mut init).unwrap();
    let cfg = TrainConfig { seed, ..TrainConfig::desk(arch.generator.dropout.p_train, seed) };
    Checkpoint::from_stacks(arch, &gen, &disc, Some(cfg), Some("ab".repeat(32)))
}

fn randomize(c: &mut Checkpoint, values: &[f32]) {
    let mut it = values.iter().cycle();
    for t in c.tensors.values_mut() {
        for v in t.data_mut() {
            *v = *it.next().unwrap();
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn checkpoint_round_trip_is_bit_exact(
        seed in any::<u64>(),
        p_train in 0.0f64..0.95,
        lr in 1e-6f64..1.0,
        values in proptest::collection::vec(any::<f32>(), 1..64),
    ) {
        let mut c = checkpoint(small_arch(p_train), seed);
        if let Some(cfg) = c.train_config.as_mut() {
            cfg.optimizer = OptimizerConfig::Adam { learning_rate: lr, beta1: 0.5, beta2: 0.999, epsilon: 1e-8 };
        }
        randomize(&mut c, &values);
        let bytes = encode_checkpoint(&c).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        prop_assert_eq!(&back.architecture, &c.architecture);
        prop_assert_eq!(&back.train_config, &c.train_config);
        for (k, t) in &c.tensors {
            let b = &back.tensors[k];
            prop_assert_eq!(t.shape(), b.shape());
            let bits = |x: &Tensor<f32>| x.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(t), bits(b));
        }
        prop_assert_eq!(encode_checkpoint(&back).unwrap(), bytes);
    }
}

#[test]
fn save_load_save_is_byte_identical() {
    let dir = tempdir().unwrap();
    let c = checkpoint(Architecture::desk(p(0.8)), 4);
    let (a, b) = (dir.path().join("a.ckpt"), dir.path().join("b.ckpt"));
    save_checkpoint(&c, &a).unwrap();
    let loaded = load_checkpoint(&a).unwrap();
    assert_eq!(loaded, c);
    save_checkpoint(&loaded, &b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn reloaded_generator_generates_identically() {
    let c = checkpoint(Architecture::desk(p(0.8)), 8);
    let before = c.generator().unwrap();
    let after = decode_checkpoint(&encode_checkpoint(&c).unwrap()).unwrap().generator().unwrap();
    let z = sample_latents(4, 64, &mut stream_rng(8, StreamId::LATENTS));
    let cfg = GenerationConfig::new(p(0.8), p(0.8), Placement::AllHidden);
    let x = generate(&before, &z, &cfg, &mut MaskRng::shared(1, StreamId::GENERATION)).unwrap();
    let y = generate(&after, &z, &cfg, &mut MaskRng::shared(1, StreamId::GENERATION)).unwrap();
    assert_eq!(x, y);
}

#[test]
fn corrupted_checkpoints_are_rejected() {
    let c = checkpoint(small_arch(0.2), 1);
    let bytes = encode_checkpoint(&c).unwrap();
    let mut flipped = bytes.clone();
    let n = flipped.len();
    flipped[n - 40] ^= 0x01;
    assert!(matches!(decode_checkpoint(&flipped), Err(IoError::Digest)));

    let mut version = bytes.clone();
    version[8..12].copy_from_slice(&(FORMAT_VERSION + 1).to_le_bytes());
    assert!(matches!(decode_checkpoint(&version), Err(IoError::Version { found, .. }) if found == FORMAT_VERSION + 1));
    assert!(matches!(decode_checkpoint(b"not a checkpoint at all, clearly not one"), Err(IoError::NotCheckpoint)));

    let mut unknown = c.clone();
    unknown.tensors.insert("gen.99.weight".into(), Tensor::zeros(vec![1]).unwrap());
    assert!(matches!(encode_checkpoint(&unknown), Err(IoError::UnknownParam(name)) if name == "gen.99.weight"));
    let mut stray = c.clone();
    stray.tensors.insert("optimizer.m".into(), Tensor::zeros(vec![1]).unwrap());
    assert!(matches!(encode_checkpoint(&stray), Err(IoError::UnknownParam(_))));
    let mut missing = c.clone();
    missing.tensors.remove("gen.2.running_var");
    assert!(encode_checkpoint(&missing).is_err());
}

#[test]
fn png_grid_decodes_to_quantized_pixels() {
    let dir = tempdir().unwrap();
    // Figure layout: 3 repeats × 5 dropout rates.
    let images = Tensor::from_fn(vec![15, 1, 28, 28], |i| ((i as f32) * 0.0137).sin()).unwrap();
    let path = dir.path().join("grid.png");
    save_image_grid(&images, 3, 5, &path, GridFormat::Png).unwrap();
    let decoded = decode_png(&std::fs::read(&path).unwrap()).unwrap();
    assert_eq!((decoded.width, decoded.height), (140, 84));
    let expected = render_grid(&images, 3, 5).unwrap();
    assert_eq!(decoded, expected);
    // Spot check: tile (row 2, col 3) pixel (5, 7) is image 13.
    let v = images.data()[13 * 784 + 5 * 28 + 7];
    assert_eq!(decoded.pixels[(2 * 28 + 5) * 140 + 3 * 28 + 7], quantize(v));
    let again = dir.path().join("again.png");
    save_image_grid(&images, 3, 5, &again, GridFormat::Png).unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&again).unwrap());
    assert!(matches!(
        save_image_grid(&images, 2, 5, &path, GridFormat::Png),
        Err(IoError::GridOverflow { count: 15, rows: 2, cols: 5 })
    ));
}

#[test]
fn black_png_has_zero_payload() {
    let img = render_grid(&Tensor::full(vec![1, 1, 28, 28], -1.0f32).unwrap(), 1, 1).unwrap();
    let dir = tempdir().unwrap();
    let path = dir.path().join("black.pgm");
    save_image_grid(&Tensor::full(vec![1, 1, 28, 28], -1.0f32).unwrap(), 1, 1, &path, GridFormat::Pgm).unwrap();
    let bytes = std::fs::read(&path).unwrap();
    assert!(bytes.starts_with(b"P5\n28 28\n255\n"));
    assert!(bytes[13..].iter().all(|&b| b == 0));
    assert!(img.pixels.iter().all(|&b| b == 0));
}

#[test]
fn csv_table_layout_and_parse_back() {
    let dir = tempdir().unwrap();
    let grid = vec![0.0, 0.2, 0.4, 0.6, 0.8];
    let cells = vec![
        vec![0.0; 5],
        vec![1.258, 1.158, 1.227, 1.342, 1.55],
        vec![2.0921, 1.7159, 1.8044, 1.99449, 2.668],
        vec![3.027, 2.394, 2.55, 2.752, 3.847],
        vec![4.116, 3.468, 3.683, 3.973, 5.213],
    ];
    let t = Table { columns: grid.clone(), row_labels: grid, cells };
    let path = dir.path().join("t.csv");
    write_csv_table(&t, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "generation p \\ training p,0,0.2,0.4,0.6,0.8");
    assert_eq!(lines[1], "0,0,0,0,0,0");
    assert_eq!(lines[5], "0.8,4.116,3.468,3.683,3.973,5.213");
    let back = read_csv_table(&path).unwrap();
    assert_eq!(back.columns, t.columns);
    assert_eq!(back.row_labels, t.row_labels);
    for (rb, rt) in back.cells.iter().zip(&t.cells) {
        for (b, v) in rb.iter().zip(rt) {
            assert_eq!(*b, format_cell(*v).parse::<f64>().unwrap());
        }
    }
    assert_eq!(table_bytes(&back).unwrap(), text.as_bytes());
    assert!(parse_table(b"x,0,0.2\n0,1\n").is_err());
}
