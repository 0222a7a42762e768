use mdfsc::autoencoder::{train, ArchSpec, Autoencoder, TrainConfig};
use mdfsc::pipeline::random_crop;
use mdfsc::pipeline::synth::{synth_dataset, SynthConfig};
use mdfsc::pipeline::NormStats;
use mdfsc::rng::stream;

fn small_synth() -> SynthConfig {
    SynthConfig { n_train: 10, n_test_normal: 0, n_test_anomalous: 0, size: 64, ..SynthConfig::default() }
}

#[test]
fn holdout_loss_decreases_at_desk_scale() {
    for seed in 0..5 {
        let ds = synth_dataset(&small_synth(), seed).unwrap();
        let raw: Vec<_> = ds.train.into_iter().map(|i| i.record).collect();
        let stats = NormStats::fit(&raw).unwrap();
        let imgs: Vec<_> = raw.iter().map(|i| stats.apply(i).unwrap()).collect();
        let (fit, held) = imgs.split_at(8);
        let mut rng = stream(seed, "holdout");
        let holdout: Vec<_> = held
            .iter()
            .flat_map(|i| (0..4).map(|_| random_crop(i, 32, &mut rng).unwrap()).collect::<Vec<_>>())
            .collect();

        let arch = ArchSpec { head_input_side: 32, ..ArchSpec::desk(3) };
        let mut model = Autoencoder::build(arch, &mut stream(seed, "init")).unwrap();
        let cfg = TrainConfig { epochs: 6, batch_size: 8, lr: 1e-3, crop: 32, crops_per_image: 4 };
        let report = train(&mut model, fit, &holdout, &cfg, seed).unwrap();
        let h = &report.holdout_losses;
        assert_eq!(h.len(), 7);
        assert!(h[6] < h[0], "seed {seed}: {h:?}");
    }
}
