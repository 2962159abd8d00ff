// SPDX-License-Identifier: MIT OR Apache-2.0

use hsprobe::feature_store::{
    decode_dataset, encode_dataset, read_dataset, synth_dataset_with, write_dataset, DatasetHeader, SynthConfig,
};
use hsprobe::Error;

fn dataset(i: u64) -> (DatasetHeader, Vec<hsprobe::feature_store::HiddenStateRecord>) {
    let mut cfg = SynthConfig::new(2 + (i as usize * 7) % 40, 2 + (i as usize) % 9, i as f64 * 0.1, i);
    cfg.answer_len = (0, (i as usize) % 12);
    cfg.question_len = (1, 1 + (i as usize) % 5);
    let records = synth_dataset_with(&cfg).unwrap();
    let header = DatasetHeader::new(format!("model-{i}"), i as usize % 29, cfg.hidden_dim).with_record_count(records.len());
    (header, records)
}

#[test]
fn hundred_files_round_trip_bit_exactly() {
    let dir = tempfile::tempdir().unwrap();
    for i in 0..100 {
        let (header, records) = dataset(i);
        let path = dir.path().join(format!("{i}.hsds"));
        write_dataset(&records, &header, &path).unwrap();
        let (h, back) = read_dataset(&path).unwrap();
        assert_eq!(h, header);
        assert_eq!(back.len(), records.len());
        for (a, b) in back.iter().zip(&records) {
            assert_eq!((&a.id, a.label, a.n_question, a.n_answer), (&b.id, b.label, b.n_question, b.n_answer));
            assert!(a.states.iter().zip(&b.states).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
        assert_eq!(std::fs::read(&path).unwrap(), encode_dataset(&h, &back).unwrap());
    }
}

#[test]
fn file_size_follows_the_layout() {
    let cfg = SynthConfig::new(1000, 16, 2.0, 3);
    let records = synth_dataset_with(&cfg).unwrap();
    let header = DatasetHeader::new("m", 4, 16).with_record_count(1000);
    let bytes = encode_dataset(&header, &records).unwrap();
    let header_json = br#"{"model_name":"m","layer_index":4,"hidden_dim":16,"record_count":1000}"#;
    let per_record: usize = records
        .iter()
        .map(|r| 2 + r.id.len() + 1 + 4 + 4 + 4 * 16 * (r.n_question + r.n_answer))
        .sum();
    assert_eq!(&bytes[12..12 + header_json.len()], header_json);
    assert_eq!(bytes.len(), 4 + 4 + 4 + header_json.len() + per_record);
}

#[test]
fn every_truncation_is_reported() {
    let (header, records) = dataset(3);
    let good = encode_dataset(&header, &records).unwrap();
    for cut in 0..good.len() {
        match decode_dataset(&good[..cut]) {
            Err(Error::Truncated { .. }) => {}
            other => panic!("prefix {cut}: {other:?}"),
        }
    }
}

#[test]
fn corruptions_map_to_distinct_errors() {
    let (header, records) = dataset(5);
    let good = encode_dataset(&header, &records).unwrap();
    let header_len = u32::from_le_bytes(good[8..12].try_into().unwrap()) as usize;
    let first = 12 + header_len;

    let mut bad = good.clone();
    bad[..4].copy_from_slice(b"HSDX");
    assert!(matches!(decode_dataset(&bad), Err(Error::BadMagic { .. })));

    let mut bad = good.clone();
    bad[4..8].copy_from_slice(&2u32.to_le_bytes());
    assert!(matches!(decode_dataset(&bad), Err(Error::VersionMismatch { found: 2, .. })));

    let mut bad = good.clone();
    bad[12] = b'[';
    assert!(matches!(decode_dataset(&bad), Err(Error::Corrupt(_))));

    let id_len = u16::from_le_bytes(good[first..first + 2].try_into().unwrap()) as usize;
    let mut bad = good.clone();
    bad[first + 2 + id_len] = 7;
    assert!(matches!(decode_dataset(&bad), Err(Error::Corrupt(_))));

    let mut bad = good.clone();
    bad[first + 2] = 0xff;
    assert!(matches!(decode_dataset(&bad), Err(Error::Corrupt(_))));

    let mut bad = good.clone();
    let n = bad.len();
    bad[n - 4..].copy_from_slice(&f32::INFINITY.to_le_bytes());
    assert!(matches!(decode_dataset(&bad), Err(Error::NonFinite(_))));

    let mut bad = good.clone();
    bad.extend_from_slice(&[0, 0]);
    assert!(matches!(decode_dataset(&bad), Err(Error::Corrupt(_))));

    assert!(matches!(read_dataset("/nonexistent/none.hsds"), Err(Error::Io { .. })));
}
