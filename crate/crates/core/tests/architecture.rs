use neonext_core::autodiff::Tape;
use neonext_core::nn::{space_to_depth, InitMethod, Mode, Model, ModelSpec};
use neonext_core::{Rng, Tensor4};

#[test]
fn tiny_preset_parameter_count_near_reference() {
    let spec = ModelSpec::preset("T", 224, 1000).unwrap();
    let m = Model::build(&spec, InitMethod::NeoInit, &mut Rng::new(0)).unwrap();
    let n = m.param_count() as f64;
    let rel = (n - 27.7e6).abs() / 27.7e6;
    assert!(rel <= 0.02, "{n} params, {rel:.4} off");
    assert_eq!(m.param_count(), m.formula_param_count());
    // 14x14 stage maps cannot take 4x4 matrices.
    assert!(m
        .substitutions()
        .iter()
        .any(|s| s.starts_with("stage 3: 4x4 groups replaced by 7x7")));
}

#[test]
fn stem_shape_chain() {
    let spec = ModelSpec::preset("T", 224, 1000).unwrap();
    assert_eq!(spec.stage_sizes(), [56, 28, 14, 7]);
    let m = Model::build(&spec, InitMethod::NeoInit, &mut Rng::new(1)).unwrap();
    let mut rng = Rng::new(2);
    let x = Tensor4::from_fn([1, 3, 224, 224], |_, _, _, _| rng.uniform());
    let [s2d, pw, bn] = m.stem_trace(&x).unwrap();
    assert_eq!(s2d, space_to_depth(&x, 4).unwrap());
    assert_eq!(s2d.dims(), [1, 48, 56, 56]);
    assert_eq!(pw.dims(), [1, 96, 56, 56]);
    assert_eq!(bn.dims(), [1, 96, 56, 56]);
}

#[test]
fn zeroed_residual_branches_make_blocks_identity() {
    let mut spec = ModelSpec::preset("micro", 32, 10).unwrap();
    spec.drop_path = 0.0;
    let mut m = Model::build(&spec, InitMethod::NeoInit, &mut Rng::new(2)).unwrap();
    let ids: Vec<_> = m
        .params
        .iter()
        .filter(|(_, p)| p.name.starts_with("stage") && !p.name.contains(".bn."))
        .map(|(id, _)| id)
        .collect();
    let mut rng = Rng::new(3);
    let x = Tensor4::from_fn([2, 3, 32, 32], |_, _, _, _| rng.uniform());

    for id in ids {
        m.params
            .get_mut(id)
            .value
            .data_mut()
            .iter_mut()
            .for_each(|v| *v = 0.0);
    }
    let full = m.predict(&x).unwrap();

    // Stage 3 holds two blocks; a copy with one block per stage and the
    // same surviving weights must give bit-identical logits.
    let mut shallow_spec = spec.clone();
    shallow_spec.depths = [1, 1, 1, 1];
    let mut shallow = Model::build(&shallow_spec, InitMethod::NeoInit, &mut Rng::new(9)).unwrap();
    let names: Vec<String> = shallow.params.iter().map(|(_, p)| p.name.clone()).collect();
    for (sid, name) in shallow.params.ids().zip(names) {
        let src = m
            .params
            .iter()
            .find(|(_, p)| p.name == name)
            .unwrap()
            .1
            .value
            .clone();
        shallow.params.get_mut(sid).value = src;
    }
    assert_eq!(shallow.predict(&x).unwrap(), full);
}

#[test]
fn train_mode_is_seed_deterministic() {
    let spec = ModelSpec::preset("micro", 32, 10).unwrap();
    let m = Model::build(&spec, InitMethod::NeoInit, &mut Rng::new(4)).unwrap();
    let x = Tensor4::from_fn([4, 3, 32, 32], |n, c, i, j| {
        ((n * 7 + c * 3 + i + 2 * j) % 11) as f64 / 11.0
    });
    let run = |seed| {
        let mut t = Tape::new();
        let f = m
            .forward(&mut t, &m.params, &x, Mode::Train { drop_seed: seed })
            .unwrap();
        t.value(f.logits).clone()
    };
    assert_eq!(run(1), run(1));
}
