use std::collections::HashSet;

use dcsent::ingest::{self, DatasetFormat, DEFAULT_RATIOS};
use dcsent::{LabeledPassage, Sentiment};
use proptest::prelude::*;

fn passages(n: usize) -> Vec<LabeledPassage> {
    (0..n)
        .map(|i| LabeledPassage::new(format!("p{i}"), format!("text number {i}"), Sentiment::ALL[i % 3]))
        .collect()
}

#[test]
fn jsonl_and_csv_round_trip() {
    let mut ps = passages(5);
    ps[1].token_count = Some(17);
    ps[2].text = "Quoted, \"comma\" text\nwith a newline".into();
    let dir = tempfile::tempdir().unwrap();
    for (name, format) in [("d.jsonl", DatasetFormat::Jsonl), ("d.csv", DatasetFormat::Csv)] {
        let path = dir.path().join(name);
        ingest::save_dataset(&path, &ps, format).unwrap();
        assert_eq!(ingest::load_dataset_auto(&path).unwrap(), ps, "{name}");
    }
}

#[test]
fn errors_name_line_and_field() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.jsonl");
    std::fs::write(&path, "{\"id\":\"a\",\"text\":\"ok\",\"label\":1}\n{\"id\":\"b\",\"text\":\"ok\",\"label\":7}\n").unwrap();
    let msg = ingest::load_dataset_auto(&path).unwrap_err().to_string();
    assert!(msg.contains("line 2") && msg.contains("label"), "{msg}");
}

#[test]
fn headphones_fixture_loads() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../fixtures/headphones.jsonl");
    let ps = ingest::load_dataset_auto(&path).unwrap();
    assert_eq!(ps.len(), 1);
    assert!(ps[0].text.starts_with("If you are the type of person"));
}

proptest! {
    #[test]
    fn split_is_a_partition(n in 3usize..400, seed: u64) {
        let ps = passages(n);
        let split = match ingest::split_dataset(&ps, DEFAULT_RATIOS, seed) {
            Ok(s) => s,
            Err(_) => return Ok(()),
        };
        prop_assert_eq!(split.len(), n);
        let ids: HashSet<&str> = split.parts().iter().flat_map(|(_, p)| p.iter().map(|x| x.id.as_str())).collect();
        prop_assert_eq!(ids.len(), n);
        let (a, b, _) = ingest::split_sizes(n, DEFAULT_RATIOS).unwrap();
        prop_assert!((a as f64 - 0.7 * n as f64).abs() <= 0.5);
        prop_assert!((b as f64 - 0.1 * n as f64).abs() <= 0.5);
    }

    #[test]
    fn split_is_deterministic(n in 10usize..200, seed: u64) {
        let ps = passages(n);
        let a = ingest::split_dataset(&ps, DEFAULT_RATIOS, seed).unwrap();
        let b = ingest::split_dataset(&ps, DEFAULT_RATIOS, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}
