use proptest::prelude::*;
use sshd_core::data::*;
use sshd_core::sshd_tensor::Tensor;
use sshd_core::{CoreError, Heatmap};

fn table_strategy() -> impl Strategy<Value = TensorTable> {
    let tensor = prop::collection::vec(1usize..4, 0..4).prop_flat_map(|shape| {
        let n: usize = shape.iter().product();
        prop::collection::vec(any::<f32>(), n).prop_map(move |data| Tensor::new(shape.clone(), data).unwrap())
    });
    prop::collection::vec(("[a-z][a-z0-9_.]{0,12}", tensor), 0..6).prop_map(|entries| entries.into_iter().collect())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn checkpoints_roundtrip_bit_exact(table in table_strategy()) {
        let bytes = encode_checkpoint(&table).unwrap();
        let back = decode_checkpoint(&bytes).unwrap();
        prop_assert_eq!(back.len(), table.len());
        for ((na, a), (nb, b)) in table.iter().zip(&back) {
            prop_assert_eq!(na, nb);
            prop_assert_eq!(a.shape(), b.shape());
            let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
            prop_assert_eq!(bits(a), bits(b));
        }
        // every strict prefix is rejected
        let cut = bytes.len() / 2;
        let rejected = matches!(decode_checkpoint(&bytes[..cut]), Err(CoreError::Checkpoint { .. }));
        prop_assert!(rejected);
    }

    #[test]
    fn sixteen_bit_images_roundtrip(h in 1usize..9, w in 1usize..9, seed in any::<u64>()) {
        let samples: Vec<u16> = (0..h * w).map(|i| (seed.wrapping_mul(i as u64 + 1) >> 17) as u16).collect();
        let pgm = Pgm { width: w, height: h, maxval: 65535, samples };
        prop_assert_eq!(decode_pgm(&encode_pgm(&pgm), "p").unwrap(), pgm.clone());
        let image = Image::new(h, w, pgm.samples.iter().map(|&s| s as f32 / 65535.0).collect());
        prop_assert_eq!(quantize(&image, 65535), pgm);
    }

    #[test]
    fn raw_heatmaps_roundtrip(h in 1usize..9, w in 1usize..9, values in prop::collection::vec(0f32..=1.0, 64)) {
        let hm = Heatmap::new(h, w, values[..h * w].iter().map(|&v| v as f64).collect()).unwrap();
        prop_assert_eq!(decode_raw_heatmap(&encode_raw_heatmap(&hm), "r").unwrap(), hm);
    }
}

#[test]
fn label_file_example() {
    let pts = parse_labels("3,4\n10,2\n", "s", 16, 16).unwrap();
    assert_eq!(pts.iter().map(|p| (p.x, p.y)).collect::<Vec<_>>(), [(3, 4), (10, 2)]);
    assert_eq!(format_labels(&pts), "3,4\n10,2\n");
}

#[test]
fn heatmap_pgm_rounds_half_up() {
    let half = encode_heatmap_pgm(&Heatmap::new(2, 2, vec![0.5; 4]).unwrap());
    assert!(half.ends_with(&[128, 128, 128, 128]));
    let zero = encode_heatmap_pgm(&Heatmap::zeros(1, 3));
    assert!(zero.ends_with(&[0, 0, 0]));
}

#[test]
fn dataset_directories_roundtrip() {
    let cfg = sshd_core::SynthConfig { height: 16, width: 16, ..Default::default() };
    let samples: Vec<Sample> = synth_dataset(&cfg, 5, "d").unwrap().into_iter().map(|s| s.sample).collect();
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let split = SplitManifest::random(&ids, 9);
    assert_eq!((split.train.len(), split.val.len(), split.test.len()), (3, 1, 1));
    assert_eq!(split, SplitManifest::random(&ids, 9));

    let dir = tempfile::tempdir().unwrap();
    write_dataset_dir(dir.path(), &samples, &split).unwrap();
    let ds = load_dataset_dir(dir.path(), 0).unwrap();
    assert_eq!(ds.split, split);
    for (a, b) in samples.iter().zip(&ds.samples) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.labels, b.labels);
        assert_eq!(quantize(&a.image, 65535), quantize(&b.image, 65535));
    }
    assert_eq!(ds.split("train").unwrap().len(), 3);
    assert!(ds.split("holdout").is_err());
}
