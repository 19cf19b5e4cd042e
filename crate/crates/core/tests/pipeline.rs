use most_core::encoder::{checkpoint_bytes, checkpoint_from_bytes, encode_windows};
use most_core::probes::{classify, forecast, last_timestamp, max_pool_time, to_matrix, ProbeConfig};
use most_core::trainer::{split_forecast, train, TrainConfig};
use most_core::ttsdata::{generate_synthetic, ingest, write_csv_long, DatasetSpec, Layout, SeriesTensor, SplitAxis, Splits, SyntheticSpec};
use most_core::{EncoderVariant, MostConfig, MostModel};

fn small_model(variant: EncoderVariant) -> MostModel {
    let cfg = MostConfig {
        h: 8,
        levels: 2,
        max_window: 64,
        variant,
        ..Default::default()
    };
    MostModel::new(cfg, 3, 3).unwrap()
}

#[test]
fn synthetic_train_checkpoint_probe() {
    let windows = generate_synthetic(&SyntheticSpec {
        windows_per_cell: 4,
        ..Default::default()
    })
    .unwrap();
    let (train_w, test_w) = windows.split_at(27);
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 9,
        ..Default::default()
    };
    let (model, report) = train(train_w, small_model(EncoderVariant::Full), &cfg, None).unwrap();
    assert_eq!(report.epochs.len(), 3);

    let restored = checkpoint_from_bytes(&checkpoint_bytes(&model).unwrap()).unwrap();
    assert_eq!(restored.fingerprint(), model.fingerprint());

    let feats = |ws: &[most_core::TtsWindow]| {
        let reps = encode_windows(&restored, ws).unwrap();
        to_matrix(&reps.iter().map(|r| max_pool_time(&r.v)).collect::<Vec<_>>()).unwrap()
    };
    let labels = |ws: &[most_core::TtsWindow]| ws.iter().map(|w| w.label.unwrap()).collect::<Vec<_>>();
    let (xtr, xte) = (feats(train_w), feats(test_w));
    let (ytr, yte) = (labels(train_w), labels(test_w));
    let m = classify((&xtr, &ytr), None, (&xte, &yte), &ProbeConfig::default()).unwrap();
    assert!((0.0..=1.0).contains(&m.acc.unwrap()));

    let horizon = 2;
    let fc = |ws: &[most_core::TtsWindow]| {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for w in ws {
            let (ctx, fut) = split_forecast(w, horizon).unwrap();
            xs.push(last_timestamp(&most_core::encoder::forward(&restored, &ctx, 0).unwrap().v));
            ys.push(fut);
        }
        (to_matrix(&xs).unwrap(), to_matrix(&ys).unwrap())
    };
    let (ftr, gtr) = fc(train_w);
    let (fte, gte) = fc(test_w);
    let f = forecast((&ftr, &gtr), None, (&fte, &gte), horizon, &ProbeConfig::default(), None).unwrap();
    assert_eq!(f.mse_per_step.len(), horizon);
    assert!(f.mse.unwrap().is_finite());
}

#[test]
fn every_variant_trains_one_epoch() {
    let windows = generate_synthetic(&SyntheticSpec {
        windows_per_cell: 1,
        ..Default::default()
    })
    .unwrap();
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 9,
        ..Default::default()
    };
    for v in EncoderVariant::ALL {
        let (_, report) = train(&windows, small_model(v), &cfg, None).unwrap();
        assert!(report.final_loss().unwrap().is_finite(), "{v}");
    }
}

#[test]
fn csv_series_ingests_into_time_splits() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("series.csv");
    let len = 120;
    let values = (0..2 * 3 * len).map(|k| ((k % len) as f64 * 0.3).sin() + (k / len) as f64).collect();
    write_csv_long(&path, &SeriesTensor::new(2, 3, len, values).unwrap()).unwrap();
    let spec = DatasetSpec {
        path,
        layout: Layout::CsvLong,
        window: 16,
        stride: 4,
        splits: Splits::default(),
        split_axis: SplitAxis::Time,
        labels: None,
    };
    let ds = ingest(&spec).unwrap();
    assert!(!ds.train.is_empty() && !ds.valid.is_empty() && !ds.test.is_empty());
    assert!(ds.windows.iter().all(|w| (w.d1(), w.d2(), w.len()) == (2, 3, 16)));
    // windows never straddle a split boundary
    let t_train = (len as f64 * 0.6) as usize;
    assert!(ds.windows[ds.train.clone()].iter().all(|w| w.sample_id + 16 <= t_train));
    assert!(ds.windows[ds.valid.clone()].iter().all(|w| w.sample_id >= t_train));
}
