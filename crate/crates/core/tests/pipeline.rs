use debris_core::classifiers::{load_model, save_model, train_rf, train_svm, RfHyperParams, SvmHyperParams, TrainedClassifier};
use debris_core::dataset::{load_samples, split, write_samples};
use debris_core::experiment::{classify_scene, LabelGrid, PixelClass};
use debris_core::raster::{compute_index_raster, read_stack, write_stack};
use debris_core::spectra::{FeatureSet, IndexKind};
use debris_core::synth::{gen_dataset, gen_scene, Patch, SynthConfig};
use debris_core::{BandStackF32, BandStackF64, Label};

#[test]
fn files_round_trip_through_training_and_scene_classification() {
    let dir = tempfile::tempdir().unwrap();
    let table = gen_dataset(&SynthConfig::default()).unwrap();
    let csv = dir.path().join("samples.csv");
    write_samples(&table, &csv).unwrap();
    let reloaded = load_samples(&csv).unwrap();
    assert_eq!(reloaded.len(), table.len());
    for (a, b) in table.rows().iter().zip(reloaded.rows()) {
        assert_eq!(a.label, b.label);
        assert_eq!(a.plastic_fraction, b.plastic_fraction);
        assert_eq!(a.spectrum.get(debris_core::spectra::BandId::B8), b.spectrum.get(debris_core::spectra::BandId::B8));
    }

    let parts = split(&reloaded, 0.7, 0).unwrap();
    let rf = train_rf(&parts.train, FeatureSet::Model3, &RfHyperParams::final_model()).unwrap();
    let svm = train_svm(&parts.train, FeatureSet::Model5, &SvmHyperParams::default()).unwrap();

    let patch = Patch { row: 1, col: 2, height: 3, width: 10, fraction: 0.7, kind: None };
    let (stack, truth) = gen_scene::<f32>(&SynthConfig { seed: 5, ..SynthConfig::default() }, 16, 8, &[patch]).unwrap();
    let header = dir.path().join("scene.bsqf.json");
    write_stack(&stack, &header).unwrap();
    let scene: BandStackF32 = read_stack(&header).unwrap();
    assert_eq!(scene, stack);

    for model in [TrainedClassifier::from(rf), TrainedClassifier::from(svm)] {
        let path = dir.path().join(format!("{}.json", model.algo()));
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        let a = classify_scene(&scene, &model).unwrap();
        let b = classify_scene(&scene, &loaded).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.count(PixelClass::Plastic), 30, "{}", model.algo());
        assert_eq!(a.agreement(&truth).unwrap(), 1.0);

        let pgm = dir.path().join("labels.pgm");
        a.write_pgm(&pgm).unwrap();
        assert_eq!(LabelGrid::read_pgm(&pgm).unwrap(), a);
    }
}

#[test]
fn index_rasters_agree_across_precisions() {
    let (stack, _) = gen_scene::<f64>(&SynthConfig::default(), 9, 7, &[]).unwrap();
    let stack: BandStackF64 = stack;
    let narrow: BandStackF32 = stack.cast();
    for index in [IndexKind::Fdi, IndexKind::Pi, IndexKind::Ndvi, IndexKind::Kndvi] {
        let wide = compute_index_raster(&stack, index).unwrap();
        let thin = compute_index_raster(&narrow, index).unwrap();
        for (a, b) in wide.values().iter().zip(thin.values()) {
            assert!((a - *b as f64).abs() < 1e-4 * a.abs().max(1.0), "{index}: {a} vs {b}");
        }
    }
}

#[test]
fn water_only_scene_has_no_plastic() {
    let table = gen_dataset(&SynthConfig::default()).unwrap();
    let model = train_rf(&table, FeatureSet::Model1, &RfHyperParams::final_model()).unwrap();
    let (stack, _) = gen_scene::<f32>(&SynthConfig { seed: 2, ..SynthConfig::default() }, 20, 20, &[]).unwrap();
    let labels = classify_scene(&stack, &TrainedClassifier::from(model)).unwrap();
    assert_eq!(labels.count(PixelClass::Water), 400);
    assert_eq!(table.count(Label::Plastic), 54);
}
