use std::time::Instant;

use gprompt::synthetic::{generate, SynthConfig};
use gprompt::tag::{load_bundle, read_bundle, save_bundle, write_bundle, Bundle};
use gprompt::Error;
use proptest::prelude::*;

fn encoded(b: &Bundle) -> Vec<u8> {
    let mut out = Vec::new();
    write_bundle(b, &mut out).unwrap();
    out
}

#[test]
fn synthetic_bundle_loads_quickly_and_validates() {
    let (bundle, _) = generate(&SynthConfig::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("synth.gpb");
    save_bundle(&bundle, &path).unwrap();

    let start = Instant::now();
    let loaded = load_bundle(&path).unwrap();
    let elapsed = start.elapsed().as_secs_f64();
    assert!(elapsed < 1.0, "load took {elapsed} s");
    loaded.validate().unwrap();
    assert_eq!(loaded, bundle);
    assert_eq!(loaded.head.checksum(), bundle.head.checksum());
}

#[test]
fn missing_file_is_an_io_error() {
    let err = load_bundle("/nonexistent/bundle.gpb").unwrap_err();
    assert!(matches!(err, Error::Io(_)));
}

#[test]
fn resave_is_byte_identical() {
    let (bundle, _) = generate(&SynthConfig {
        num_nodes: 60,
        ..SynthConfig::default()
    })
    .unwrap();
    let first = encoded(&bundle);
    let second = encoded(&read_bundle(&first).unwrap());
    assert_eq!(first, second);
}

fn tiny_bytes() -> Vec<u8> {
    let cfg = SynthConfig {
        num_nodes: 12,
        masks_per_node: 1,
        hidden_dim: 6,
        embed_dim: 4,
        ..SynthConfig::default()
    };
    encoded(&generate(&cfg).unwrap().0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    // Header fields are u32/u64 little-endian starting after magic + version.
    #[test]
    fn corrupted_dimensions_never_panic(offset in 8usize..48, value in any::<u32>()) {
        let mut bytes = tiny_bytes();
        bytes[offset..offset + 4].copy_from_slice(&value.to_le_bytes());
        if let Ok(b) = read_bundle(&bytes) {
            prop_assert!(b.validate().is_ok());
        }
    }

    #[test]
    fn truncation_is_always_an_error(cut in 1usize..2000) {
        let bytes = tiny_bytes();
        let keep = bytes.len().saturating_sub(cut);
        prop_assert!(read_bundle(&bytes[..keep]).is_err());
    }
}
