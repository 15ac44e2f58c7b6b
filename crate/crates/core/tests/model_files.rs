use qvnn::autograd::random_batch;
use qvnn::io::{load_model, save_model};
use qvnn::layers::Layer;
use qvnn::presets;
use qvnn::QvnnError;

#[test]
fn saved_models_reload_with_matching_outputs() {
    let dir = tempfile::tempdir().unwrap();
    for name in ["mnist-qcnn-bn", "cifar-qcnn-lite"] {
        let mut model = presets::build(name, 7, 0.3).unwrap();
        for layer in &mut model.layers {
            if let Layer::BatchNorm(bn) = layer {
                bn.gamma.iter_mut().enumerate().for_each(|(n, g)| *g = 0.5 + 0.1 * n as f64);
                bn.running_var.iter_mut().for_each(|v| *v = 1.7);
            }
        }
        let path = dir.path().join(format!("{name}.qvnn"));
        save_model(&model, &path).unwrap();
        let loaded = load_model(&path).unwrap();
        assert_eq!(loaded.input_shape, model.input_shape);
        assert_eq!(loaded.classes, model.classes);
        let names = |m: &qvnn::Model| m.layers.iter().map(|l| l.name()).collect::<Vec<_>>();
        assert_eq!(names(&loaded), names(&model));
        for (a, b) in model.layers.iter().zip(&loaded.layers) {
            for ((_, pa), (_, pb)) in a.params().into_iter().zip(b.params()) {
                for (x, y) in pa.iter().zip(pb) {
                    assert_eq!(*x as f32 as f64, *y);
                }
            }
        }
        let (x, _) = random_batch(&model, 2, 1);
        let (a, b) = (model.forward(&x).unwrap(), loaded.forward(&x).unwrap());
        for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
            assert!((u - v).abs() <= 1e-6 * u.abs().max(1.0), "{u} vs {v}");
        }
    }
}

#[test]
fn damaged_files_give_distinct_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.qvnn");
    std::fs::write(&path, b"").unwrap();
    assert!(matches!(load_model(&path), Err(QvnnError::Truncated { .. })));

    save_model(&presets::build("mnist-qcnn", 0, 0.2).unwrap(), &path).unwrap();
    let good = std::fs::read(&path).unwrap();

    let mut bytes = good.clone();
    bytes[4..8].copy_from_slice(&9999u32.to_le_bytes());
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_model(&path), Err(QvnnError::UnsupportedVersion(9999))));

    let mut bytes = good.clone();
    bytes[..4].copy_from_slice(b"QVNM");
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_model(&path), Err(QvnnError::WrongMagic { .. })));

    for cut in [9, 30, good.len() / 2, good.len() - 1] {
        std::fs::write(&path, &good[..cut]).unwrap();
        assert!(matches!(load_model(&path), Err(QvnnError::Truncated { .. })), "cut at {cut}");
    }

    let mut bytes = good;
    bytes.push(0);
    std::fs::write(&path, &bytes).unwrap();
    assert!(matches!(load_model(&path), Err(QvnnError::Format(_))));
}
