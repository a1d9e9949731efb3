use crate::error::{dim_err, Result};
use crate::flow::FlowField;
use crate::tensor::{Float, Tape, Var};

/// Stage weights `gamma^(n-j)` for `j = 1..=n`; the last stage weighs 1.
pub fn sequence_weights(n: usize, gamma: f64) -> Vec<f64> {
    (1..=n).map(|j| gamma.powi((n - j) as i32)).collect()
}

/// `Σ_j gamma^(n-j) · L1(pred_j, gt)` over valid pixels.
pub fn sequence_loss<T: Float>(tape: &mut Tape<T>, predictions: &[Var], gt: &FlowField, gamma: f64) -> Result<Var> {
    if predictions.is_empty() {
        return dim_err("sequence loss needs at least one prediction");
    }
    let target = tape.constant(gt.values.cast());
    let mask = gt.mask_tensor::<T>();
    let weights = sequence_weights(predictions.len(), gamma);
    let mut total: Option<Var> = None;
    for (&p, &w) in predictions.iter().zip(&weights) {
        if tape.shape(p) != gt.values.shape() {
            return dim_err(format!("prediction {:?} vs ground truth {:?}", tape.shape(p), gt.values.shape()));
        }
        let l = tape.l1_loss(p, target, &mask)?;
        let l = tape.scale(l, T::from_f64_lossy(w))?;
        total = Some(match total {
            Some(t) => tape.add(t, l)?,
            None => l,
        });
    }
    Ok(total.expect("non-empty"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn weights_for_six_stages() {
        let w = sequence_weights(6, 0.8);
        let want = [0.32768, 0.4096, 0.512, 0.64, 0.8, 1.0];
        for (a, b) in w.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn loss_of_constant_offsets() {
        let gt = FlowField::zeros(2, 2);
        let mut tape = Tape::<f64>::new();
        let a = tape.constant(Tensor::full(&[2, 2, 2], 1.0));
        let b = tape.constant(Tensor::full(&[2, 2, 2], 2.0));
        let l = sequence_loss(&mut tape, &[a, b], &gt, 0.5).unwrap();
        assert!((tape.value(l).item() - 2.5).abs() < 1e-12);
    }
}
