mod common;

use common::*;

#[test]
fn every_op_matches_central_differences() {
    let mut failures = Vec::new();
    for case in op_cases(17) {
        let err = gradcheck(&case.inputs, &case.build, 5);
        if !(err < 1e-6) {
            failures.push(format!("{}: {err:.3e}", case.name));
        }
    }
    assert!(failures.is_empty(), "{failures:?}");
}

#[test]
fn op_cases_cover_the_tape() {
    let names: Vec<&str> = op_cases(0).iter().map(|c| c.name).collect();
    for op in ["matmul", "conv2d_stride2", "grid_sample", "sample_rows", "layer_norm", "softmax_rows", "upsample", "l1_loss"] {
        assert!(names.contains(&op), "{op}");
    }
}

#[test]
fn end_to_end_sequence_loss_gradient() {
    let r = end_to_end_gradcheck(3, 24);
    assert!(r.loss.is_finite() && r.loss > 0.0);
    assert!(r.worst < 1e-3, "worst relative error {:.3e}", r.worst);
}

#[test]
fn replay_with_own_states_reproduces_forward() {
    use tma_core::model::TmaModel;
    use tma_core::tensor::Tape;
    let cfg = toy_gradcheck_config();
    let mut model = TmaModel::<f32>::new(cfg.clone(), 2).unwrap().cast::<f64>();
    model.params.perturb(&mut rng(1), 0.1);
    let mut r = rng(4);
    let grids: Vec<_> = (0..=cfg.segments).map(|_| rand_tensor(&mut r, &[2, 16, 16], -1.0, 1.0)).collect();
    let mut a = Tape::new();
    let ia: Vec<_> = grids.iter().map(|g| a.constant(g.clone())).collect();
    let oa = model.forward(&mut a, &ia).unwrap();
    let mut b = Tape::new();
    let ib: Vec<_> = grids.iter().map(|g| b.constant(g.clone())).collect();
    let ob = model.forward_replay(&mut b, &ib, &oa.detached).unwrap();
    for (x, y) in oa.flows.iter().zip(&ob.flows) {
        assert_eq!(a.value(*x), b.value(*y));
    }
    assert!(model.forward_replay(&mut b, &ib, &oa.detached[..1]).is_err());
}
