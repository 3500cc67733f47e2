mod common;

use mir_core::io::*;
use mir_core::trainer::{init_head, EpochRecord, TrainConfig, TrainingCurve};
use mir_core::{Error, Matrix};
use proptest::prelude::*;

#[test]
fn metadata_round_trips() {
    let mut r = common::rng(61);
    let metas = common::random_metas(&mut r, 100);
    let text = metadata_to_string(&metas);
    assert_eq!(text.lines().count(), 100);
    assert_eq!(parse_metadata_str(&text, &memory_path()).unwrap(), metas);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("meta.jsonl");
    write_metadata(&metas, &path).unwrap();
    assert_eq!(parse_metadata(&path).unwrap(), metas);
}

#[test]
fn metadata_errors_name_the_line() {
    let mut r = common::rng(62);
    let good = metadata_to_string(&common::random_metas(&mut r, 2));
    let p = memory_path();

    let missing = format!(
        "{good}{}\n",
        r#"{"clip_id":"x","video_id":"v","t_start":0,"t_end":1}"#
    );
    assert!(matches!(
        parse_metadata_str(&missing, &p),
        Err(Error::MissingKey {
            line: 3,
            key: "nouns",
            ..
        })
    ));

    let span = good
        .lines()
        .next()
        .unwrap()
        .replace("\"t_end\":", "\"t_end\":-1e9,\"x\":");
    assert!(matches!(
        parse_metadata_str(&span, &p),
        Err(Error::BadSpan { line: 1, .. })
    ));

    let negative = good
        .lines()
        .next()
        .unwrap()
        .replace("\"verb_class\":", "\"verb_class\":-1,\"x\":");
    assert!(matches!(
        parse_metadata_str(&negative, &p),
        Err(Error::BadType { line: 1, .. })
    ));

    assert!(matches!(
        parse_metadata_str("\n{oops", &p),
        Err(Error::Parse { line: 2, .. })
    ));
    assert!(matches!(
        parse_metadata("/nonexistent/meta.jsonl"),
        Err(Error::Io { .. })
    ));
}

proptest! {
    #[test]
    fn embeddings_round_trip(rows in 1usize..6, cols in 1usize..6, seed in any::<u64>()) {
        let mut r = common::rng(seed);
        // f32-representable values survive exactly.
        let m = Matrix::from_fn(rows, cols, |i, j| {
            let _ = (i, j);
            common::gaussian(&mut r, 1, 1).get(0, 0) as f32 as f64
        });
        let bytes = encode_matrix(&m).unwrap();
        prop_assert_eq!(bytes.len(), HEADER_LEN + 4 * rows * cols);
        let (back, used) = decode_matrix(&bytes, &memory_path()).unwrap();
        prop_assert_eq!(used, bytes.len());
        prop_assert_eq!(back, m);
    }
}

#[test]
fn embedding_files_and_errors() {
    let mut r = common::rng(63);
    let e = common::unit_rows(&mut r, 7, 5);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("e.bin");
    write_embeddings(&e, &path).unwrap();
    let back = read_embeddings(&path).unwrap();
    assert!(back.max_abs_diff(&e) < 1e-7);

    let bytes = std::fs::read(&path).unwrap();
    let p = memory_path();
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(
        decode_matrix(&bad, &p),
        Err(Error::BadMagic { .. })
    ));
    assert!(matches!(
        decode_matrix(&bytes[..bytes.len() - 1], &p),
        Err(Error::TruncatedFile { .. })
    ));
    let mut v2 = bytes.clone();
    v2[4] = 2;
    assert!(matches!(
        decode_matrix(&v2, &p),
        Err(Error::VersionUnsupported { version: 2, .. })
    ));

    let scaled = Matrix::from_fn(2, 2, |i, j| if i == j { 3.0 } else { 0.0 });
    write_matrix(&scaled, &path).unwrap();
    assert!(matches!(
        read_embeddings(&path),
        Err(Error::NotUnitNorm { .. })
    ));
}

#[test]
fn head_round_trips() {
    let head = init_head(6, 4, 8).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("head.bin");
    write_head(&head, &path).unwrap();
    let back = read_head(&path).unwrap();
    assert!(back.weight_video.max_abs_diff(&head.weight_video) < 1e-7);
    assert!(back.weight_text.max_abs_diff(&head.weight_text) < 1e-7);
    assert_eq!(back.weight_text.shape(), (6, 4));
}

#[test]
fn csv_round_trips_byte_for_byte() {
    let mut r = common::rng(64);
    let mut lm = LabeledMatrix::indexed(common::gaussian(&mut r, 4, 3), "t", "v");
    lm.comments = vec![" config: {\"method\":\"plain\"}".into()];
    let text = lm.to_csv_string();
    assert!(text.starts_with("# config"));
    let back = LabeledMatrix::parse_csv(&text, &memory_path()).unwrap();
    assert_eq!(back, lm);
    assert_eq!(back.to_csv_string(), text);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.csv");
    lm.write(&path).unwrap();
    assert_eq!(std::fs::read_to_string(&path).unwrap(), text);
    assert_eq!(LabeledMatrix::read(&path).unwrap(), lm);

    let ragged = "id,v0,v1\nt0,1,2\nt1,3\n";
    assert!(matches!(
        LabeledMatrix::parse_csv(ragged, &memory_path()),
        Err(Error::Parse { line: 3, .. })
    ));
    let nan_cell = "id,v0\nt0,abc\n";
    assert!(matches!(
        LabeledMatrix::parse_csv(nan_cell, &memory_path()),
        Err(Error::Parse { line: 2, .. })
    ));
}

#[test]
fn curve_embeds_config() {
    let curve = TrainingCurve {
        records: vec![EpochRecord {
            epoch: 0,
            loss: 0.5,
            map_avg: 40.0,
            ndcg_avg: 60.0,
        }],
    };
    let text = curve_to_csv(&curve, &TrainConfig::default());
    let lines: Vec<&str> = text.lines().collect();
    assert!(lines[0].starts_with("# optimizer: plain gradient descent"));
    let json = lines[1].strip_prefix("# config: ").unwrap();
    let cfg: TrainConfig = serde_json::from_str(json).unwrap();
    assert_eq!(cfg, TrainConfig::default().resolved());
    assert_eq!(lines[2], "epoch,loss,map_avg,ndcg_avg");
    assert_eq!(lines[3], "0,0.5,40,60");
}
