mod common;

use common::{dot, fd_rel_error_step};
use invnet3d::accounting::memory_ledger;
use invnet3d::arch::{build_model, desk_profile, ArchProfile, InputGeometry, ModelVariant, VariantKind};
use invnet3d::nn::NormMode;
use invnet3d::tensor::{randn, Rng, Tensor};
use invnet3d::train::{load_checkpoint, save_checkpoint};

fn tiny() -> ArchProfile {
    desk_profile(16, InputGeometry { channels: 4, dims: [24, 4, 4] }, [6, 6, 6]).unwrap()
}

#[test]
fn tape_matches_memory_ledger() {
    let profile = tiny();
    for kind in VariantKind::ALL {
        for n in 1..=3 {
            let variant = ModelVariant::new(kind, n);
            let mut rng = Rng::new(n as u64);
            let mut model = build_model::<f32>(variant, &profile, &mut rng).unwrap();
            let x = randn(&mut rng, &[3, 4, 24, 4, 4], 0.0, 1.0).unwrap();
            let (_, tape) = model.forward_train(&x).unwrap();
            let ledger = memory_ledger(model.plan(), 3);
            let want: Vec<(String, usize)> =
                ledger.events.iter().map(|e| (e.layer.clone(), e.elements as usize)).collect();
            assert_eq!(tape.events(), want, "{kind} x{n}");
            assert_eq!(tape.stored_elements() as u64, ledger.total_elements);
        }
    }
}

#[test]
fn whole_model_gradients_match_finite_differences() {
    // wide enough that no batch-norm population collapses to two values
    let profile = desk_profile(16, InputGeometry { channels: 4, dims: [24, 8, 8] }, [6, 6, 6]).unwrap();
    for kind in VariantKind::ALL {
        let mut rng = Rng::new(17);
        let mut model = build_model::<f64>(ModelVariant::new(kind, 2), &profile, &mut rng).unwrap();
        let x: Tensor<f64> = randn(&mut rng, &[3, 4, 24, 8, 8], 0.0, 1.0).unwrap();
        let (y, tape) = model.forward_train(&x).unwrap();
        let w: Tensor<f64> = randn(&mut rng, y.dims(), 0.0, 1.0).unwrap();
        model.zero_grad();
        let gx = model.backward(&w, tape).unwrap();

        let mut probe = model.clone();
        let mut loss = |x: &Tensor<f64>| dot(&probe.forward(x, NormMode::RECOMPUTE).unwrap(), &w);
        let e = fd_rel_error_step(1e-7, &mut loss, &x, &gx, 40, &mut rng, &|_| false);
        assert!(e < 1e-4, "{kind} input gradient: {e:.2e}");

        let grads: Vec<(String, Tensor<f64>, Tensor<f64>)> =
            model.params_mut().into_iter().map(|p| (p.name, p.value.clone(), p.grad.clone())).collect();
        // first and last layers plus a coupling sub-layer
        for (name, value, grad) in grads.iter().filter(|(n, ..)| {
            n.starts_with("enc.conv1_1.weight") || n.starts_with("dec.conv7.") || n.contains(".0.f.weight")
        }) {
            let mut loss = |v: &Tensor<f64>| {
                let mut m = model.clone();
                for p in m.params_mut() {
                    if &p.name == name {
                        *p.value = v.clone();
                    }
                }
                dot(&m.forward(&x, NormMode::RECOMPUTE).unwrap(), &w)
            };
            let e = fd_rel_error_step(1e-7, &mut loss, value, grad, 12, &mut rng, &|_| false);
            assert!(e < 1e-4, "{kind} {name}: {e:.2e}");
        }
    }
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let profile = tiny();
    let mut rng = Rng::new(5);
    let mut model = build_model::<f32>(ModelVariant::new(VariantKind::Full, 2), &profile, &mut rng).unwrap();
    let x = randn(&mut rng, &[2, 4, 24, 4, 4], 0.0, 1.0).unwrap();
    model.forward(&x, NormMode::TRAIN).unwrap();
    save_checkpoint(dir.path(), &mut model, &profile, None).unwrap();
    let (mut loaded, p, opt) = load_checkpoint(dir.path()).unwrap();
    assert_eq!(p, profile);
    assert!(opt.is_none());
    assert_eq!(loaded.plan(), model.plan());
    assert_eq!(loaded.forward(&x, NormMode::Eval).unwrap(), model.forward(&x, NormMode::Eval).unwrap());
}

#[test]
fn corrupt_checkpoint_is_a_format_error() {
    let dir = tempfile::tempdir().unwrap();
    let profile = tiny();
    let mut model = build_model::<f32>(ModelVariant::new(VariantKind::S, 1), &profile, &mut Rng::new(1)).unwrap();
    save_checkpoint(dir.path(), &mut model, &profile, None).unwrap();
    let manifest = dir.path().join("params.manifest");
    let text = std::fs::read_to_string(&manifest).unwrap();
    std::fs::write(&manifest, text.lines().skip(1).collect::<Vec<_>>().join("\n")).unwrap();
    assert!(matches!(load_checkpoint(dir.path()), Err(invnet3d::Error::Format(_))));
}
