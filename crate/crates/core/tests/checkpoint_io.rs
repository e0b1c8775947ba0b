use avsync::checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint};
use avsync::data::{build_dataset, SyntheticConfig};
use avsync::train::Trainer;
use avsync::{Error, FusionConfig, SyncModel, Variant};

fn trained(variant: Variant) -> (SyncModel, Vec<avsync::data::AvClip>) {
    let fusion = FusionConfig::default();
    let (train, test) = build_dataset(&SyntheticConfig::default(), &fusion, 16, 10, 2).unwrap();
    let mut model = SyncModel::new(variant, fusion, 5).unwrap();
    let mut trainer = Trainer::new(1e-3, 5).unwrap();
    trainer.epoch(&mut model, &train, 8, 1).unwrap();
    (model, test)
}

#[test]
fn reloaded_models_predict_bit_identically() {
    let dir = tempfile::tempdir().unwrap();
    for variant in Variant::ALL {
        let (model, clips) = trained(variant);
        let path = dir.path().join(format!("{variant}.avck"));
        save_checkpoint(&model, &path, false).unwrap();
        let back = load_checkpoint(&path).unwrap();
        assert_eq!(back.variant(), variant);
        assert_eq!(back.config(), model.config());
        for clip in &clips {
            let (a, b) = (model.predict(clip).unwrap(), back.predict(clip).unwrap());
            assert_eq!(a.logits[0].to_bits(), b.logits[0].to_bits());
            assert_eq!(a.logits[1].to_bits(), b.logits[1].to_bits());
            assert_eq!(a.attention, b.attention);
        }
    }
}

#[test]
fn optimizer_state_survives_a_round_trip() {
    let (model, _) = trained(Variant::Temporal);
    let back = decode_checkpoint(&encode_checkpoint(&model, true).unwrap()).unwrap();
    assert_eq!(back.store().step(), model.store().step());
    for (a, b) in model.store().iter().zip(back.store().iter()) {
        assert_eq!(a.first_moment(), b.first_moment());
        assert_eq!(a.second_moment(), b.second_moment());
    }
}

#[test]
fn a_mislabelled_variant_is_a_format_error() {
    let model = SyncModel::new(Variant::Uniform, FusionConfig::default(), 1).unwrap();
    let mut bytes = encode_checkpoint(&model, false).unwrap();
    // magic (4) + version (2), then the variant code
    bytes[6] = Variant::Temporal.code();
    assert!(matches!(decode_checkpoint(&bytes), Err(Error::Format { .. })));
    bytes[6] = 9;
    assert!(matches!(decode_checkpoint(&bytes), Err(Error::Format { offset: 6, .. })));
}

#[test]
fn truncated_or_padded_checkpoints_are_format_errors() {
    let model = SyncModel::new(Variant::SpatioTemporal, FusionConfig::default(), 1).unwrap();
    let bytes = encode_checkpoint(&model, false).unwrap();
    for cut in [3, 40, bytes.len() / 2, bytes.len() - 1] {
        match decode_checkpoint(&bytes[..cut]) {
            Err(Error::Format { offset, .. }) => assert!(offset as usize <= cut),
            other => panic!("cut at {cut}: expected a format error, got {:?}", other.map(|_| ())),
        }
    }
    let mut padded = bytes.clone();
    padded.extend_from_slice(&[0, 0]);
    assert!(matches!(
        decode_checkpoint(&padded),
        Err(Error::Format { offset, .. }) if offset as usize == bytes.len()
    ));
}
