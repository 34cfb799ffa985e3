use std::fs;

use proptest::prelude::*;
use shapebias::codec::{read_image, read_png, read_ppm, write_png, write_ppm};
use shapebias::data::{self, load_cifar10, read_dataset_dir, write_dataset_dir, DataSource, CIFAR_TEST_FILE, CIFAR_TRAIN_FILES};
use shapebias::store::{load_checkpoint, read_eval_csv, save_checkpoint, write_eval_csv, write_train_log, UNDEFINED};
use shapebias::Error;
use shapebias_core::checkpoint::TrainingMetadata;
use shapebias_core::cifar;
use shapebias_core::distort::{Distortion, DistortionSpec};
use shapebias_core::eval::{EvalReport, EvalRow};
use shapebias_core::image::{Image, LabeledDataset};
use shapebias_core::model::{Network, NetworkConfig};
use shapebias_core::train::{EpochRecord, TrainLog};

fn byte_image(h: usize, w: usize, seed: u8) -> Image {
    let bytes: Vec<u8> = (0..h * w * 3).map(|i| (i as u8).wrapping_mul(37).wrapping_add(seed)).collect();
    Image::from_bytes(h, w, &bytes).unwrap()
}

#[test]
fn png_round_trip_is_exact_on_8_bit_values() {
    let dir = tempfile::tempdir().unwrap();
    let img = byte_image(5, 7, 3);
    let path = dir.path().join("a.png");
    write_png(&img, &path).unwrap();
    assert_eq!(read_png(&path).unwrap(), img);
    assert_eq!(read_image(&path).unwrap(), img);
}

#[test]
fn half_gray_quantizes_to_128() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("half.png");
    write_png(&Image::filled(2, 2, 0.5), &path).unwrap();
    let back = read_png(&path).unwrap();
    assert!(back.to_bytes().iter().all(|&b| b == 128));
}

#[test]
fn grayscale_png_is_replicated_to_three_channels() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("g.png");
    image::GrayImage::from_raw(3, 2, vec![0, 50, 100, 150, 200, 255]).unwrap().save(&path).unwrap();
    let img = read_png(&path).unwrap();
    assert_eq!((img.height(), img.width()), (2, 3));
    for y in 0..2 {
        for x in 0..3 {
            let v = img.get(y, x, 0);
            assert_eq!(v, img.get(y, x, 1));
            assert_eq!(v, img.get(y, x, 2));
        }
    }
    assert_eq!(img.get(1, 2, 0), 1.0);
}

#[test]
fn sixteen_bit_png_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("deep.png");
    image::ImageBuffer::<image::Rgb<u16>, _>::from_raw(2, 2, vec![1000u16; 12]).unwrap().save(&path).unwrap();
    match read_png(&path) {
        Err(Error::Format { detail, .. }) => assert!(detail.contains("unsupported"), "{detail}"),
        other => panic!("expected a format error, got {other:?}"),
    }
}

#[test]
fn ppm_round_trip_and_comments() {
    let dir = tempfile::tempdir().unwrap();
    let img = byte_image(3, 4, 9);
    let path = dir.path().join("a.ppm");
    write_ppm(&img, &path).unwrap();
    assert_eq!(read_ppm(&path).unwrap(), img);

    let mut commented = b"P6\n# made by hand\n4 3\n# depth\n255\n".to_vec();
    commented.extend_from_slice(&img.to_bytes());
    let p2 = dir.path().join("c.ppm");
    fs::write(&p2, commented).unwrap();
    assert_eq!(read_image(&p2).unwrap(), img);

    fs::write(&p2, b"P3\n1 1\n255\n0 0 0\n").unwrap();
    assert!(read_ppm(&p2).is_err());
}

#[test]
fn cifar_batches_load_and_missing_files_are_named() {
    let dir = tempfile::tempdir().unwrap();
    let images: Vec<Image> = (0..4).map(|i| byte_image(32, 32, i)).collect();
    let labels = vec![3, 1, 4, 1];
    let bytes = cifar::encode_records(&images, &labels).unwrap();
    for f in CIFAR_TRAIN_FILES.iter().skip(1) {
        fs::write(dir.path().join(f), &bytes).unwrap();
    }
    fs::write(dir.path().join(CIFAR_TEST_FILE), &bytes).unwrap();
    let err = load_cifar10(dir.path()).unwrap_err().to_string();
    assert!(err.contains(CIFAR_TRAIN_FILES[0]), "{err}");

    fs::write(dir.path().join(CIFAR_TRAIN_FILES[0]), &bytes).unwrap();
    let (train, test) = load_cifar10(dir.path()).unwrap();
    assert_eq!(train.len(), 20);
    assert_eq!(test.images(), &images[..]);
    assert_eq!(test.labels(), &labels[..]);
    assert_eq!(test.class_names()[3], "cat");

    let src: DataSource = dir.path().to_str().unwrap().parse().unwrap();
    assert_eq!(src.test().unwrap(), test);
}

#[test]
fn dataset_directory_round_trip_with_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let images: Vec<Image> = (0..3).map(|i| byte_image(4, 4, i)).collect();
    let data = LabeledDataset::new(images, vec![0, 2, 1], vec!["a".into(), "b".into(), "c".into()]).unwrap();
    let spec = DistortionSpec::new(Distortion::Saturation(4.0), 7);
    let manifest = write_dataset_dir(dir.path(), &data, &data, "here", Some(spec)).unwrap();
    assert!(dir.path().join("000002.png").is_file());
    assert_eq!(fs::read_to_string(dir.path().join("labels.csv")).unwrap(), "index,label\n0,0\n1,2\n2,1\n");
    assert_eq!(manifest.images[1].source_sha256, data::source_hash(&data.images()[1]));
    let back = read_dataset_dir(dir.path()).unwrap();
    assert_eq!(back, data);
    let m: data::Manifest = data::read_json(&dir.path().join("manifest.json")).unwrap();
    assert_eq!(m, manifest);
}

#[test]
fn synthetic_source_syntax() {
    let s: DataSource = "synthetic:30:10:4".parse().unwrap();
    assert_eq!(s, DataSource::Synthetic { train: 30, test: 10, seed: 4 });
    assert_eq!(s.to_string(), "synthetic:30:10:4");
    assert_eq!(s.train().unwrap().len(), 30);
    assert_ne!(s.train().unwrap().images()[0], s.test().unwrap().images()[0]);
    assert!("synthetic:1:2".parse::<DataSource>().is_err());
    assert!("/no/such/dir".parse::<DataSource>().is_err());
}

#[test]
fn json_errors_name_the_field() {
    let err = data::parse_json::<NetworkConfig>(r#"{"input": {"channels": 3, "height": 32, "width": 32, "depth": 1}}"#).unwrap_err();
    assert!(err.starts_with("at `input.depth`: unknown field"), "{err}");
    assert!(err.contains("depth"), "{err}");
    let ok: NetworkConfig = data::parse_json(r#"{"class_count": 4}"#).unwrap();
    assert_eq!(ok.class_count, 4);
}

#[test]
fn checkpoint_file_round_trip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let net = Network::build(NetworkConfig::default()).unwrap();
    let meta = TrainingMetadata { epochs: 2, clean_accuracy: 0.5, input_standardized: false };
    save_checkpoint(&path, &net, &meta).unwrap();
    let ck = load_checkpoint(&path).unwrap();
    assert_eq!(ck.network, net);
    assert_eq!(ck.metadata, meta);
    let mut bytes = fs::read(&path).unwrap();
    bytes.truncate(bytes.len() - 3);
    fs::write(&path, bytes).unwrap();
    assert!(load_checkpoint(&path).is_err());
}

#[test]
fn train_log_columns() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("log.csv");
    let log = TrainLog {
        epochs: vec![EpochRecord { epoch: 0, train_loss: 1.5, train_accuracy: 0.25, validation_accuracy: 0.5, seconds: 1.23456 }],
    };
    write_train_log(&path, &log).unwrap();
    assert_eq!(fs::read_to_string(&path).unwrap(), "epoch,loss,train_acc,val_acc,seconds\n0,1.5,0.25,0.5,1.235\n");
}

fn row(model: &str, param: &str, aoc: Option<f64>) -> EvalRow {
    EvalRow { model: model.into(), transform: "saturation".into(), param: param.into(), n: 10, accuracy: 0.3, accuracy_on_correct: aoc }
}

#[test]
fn eval_csv_uses_sentinel_for_undefined() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.csv");
    let report = EvalReport { rows: vec![row("a", "8", Some(0.75)), row("b", "inf", None)] };
    write_eval_csv(&path, &report).unwrap();
    let text = fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("model,transform,param,n,acc,acc_on_correct\n"), "{text}");
    assert!(text.contains(&format!(",{UNDEFINED}\n")));
    assert_eq!(read_eval_csv(&path).unwrap(), report);

    fs::write(&path, "model,acc\na,1\n").unwrap();
    assert!(read_eval_csv(&path).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn png_and_ppm_agree(h in 1usize..6, w in 1usize..6, seed in any::<u8>()) {
        let dir = tempfile::tempdir().unwrap();
        let img = byte_image(h, w, seed);
        write_png(&img, &dir.path().join("x.png")).unwrap();
        write_ppm(&img, &dir.path().join("x.ppm")).unwrap();
        prop_assert_eq!(read_image(&dir.path().join("x.png")).unwrap(), read_image(&dir.path().join("x.ppm")).unwrap());
    }
}
