//! Replays the checked-in fuzz corpus through the same entry points as the
//! fuzz targets, so seeds stay valid as the formats evolve.

use std::fs;
use std::path::{Path, PathBuf};

use tce_core::config::TrainConfig;
use tce_core::dataforge::{build_dataset, decode_sidecar, parse_manifest};
use tce_core::embedspace::parse_word_vectors;
use tce_core::model::{decode_checkpoint, encode_checkpoint};

fn seeds(target: &str) -> Vec<(String, Vec<u8>)> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut paths: Vec<PathBuf> = fs::read_dir(&dir)
        .unwrap_or_else(|e| panic!("{}: {e}", dir.display()))
        .map(|e| e.unwrap().path())
        .collect();
    paths.sort();
    assert!(!paths.is_empty(), "no seeds for {target}");
    paths
        .into_iter()
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                fs::read(&p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn word_vector_seeds() {
    for (name, bytes) in seeds("word_vectors") {
        let parsed = parse_word_vectors(bytes.as_slice(), None);
        // GloVe layout only: a word2vec count line is malformed
        let valid = !matches!(name.as_str(), "ragged.txt" | "header_line.txt");
        assert_eq!(parsed.is_ok(), valid, "{name}: {parsed:?}");
    }
}

#[test]
fn manifest_seeds() {
    for (name, bytes) in seeds("manifest") {
        let m = parse_manifest(std::str::from_utf8(&bytes).unwrap()).unwrap_or_else(|e| panic!("{name}: {e}"));
        // text manifests carry their features inline
        assert_eq!(build_dataset(&m, None).is_ok(), name == "text_encoding.txt", "{name}");
    }
}

#[test]
fn sidecar_seeds() {
    for (name, bytes) in seeds("sidecar") {
        let decoded = decode_sidecar(&bytes[2..], bytes[0] as usize, bytes[1] as usize);
        assert_eq!(decoded.is_ok(), name == "generated.bin", "{name}");
    }
}

#[test]
fn checkpoint_seeds() {
    for (name, bytes) in seeds("checkpoint") {
        match decode_checkpoint(&bytes) {
            Ok(model) => assert_eq!(encode_checkpoint(&model).unwrap(), bytes, "{name}"),
            Err(e) => assert_eq!(name, "truncated.ckpt", "{e}"),
        }
    }
}

#[test]
fn config_seeds() {
    for (name, bytes) in seeds("config") {
        match TrainConfig::from_text(std::str::from_utf8(&bytes).unwrap()) {
            Ok(c) => assert_eq!(TrainConfig::from_text(&c.render()).unwrap(), c, "{name}"),
            Err(e) => assert_eq!(name, "duplicate.cfg", "{e}"),
        }
    }
}
