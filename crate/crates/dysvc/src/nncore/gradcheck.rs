//! Finite-difference validation of the backward pass. Run with `f64`
//! engines; central differences at f32 precision are too noisy to certify
//! anything.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nncore::engine::{Engine, Var};
use crate::nncore::Scalar;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub probes: usize,
    pub max_rel_error: f64,
}

/// Compare analytic gradients against central differences on `probes`
/// randomly chosen trainable coordinates. `build` must construct the loss
/// from the engine's current parameter values; it is called repeatedly, each
/// time on a freshly reset tape.
///
/// The per-coordinate relative error is `|a - n| / max(|a|, |n|, 1e-8)`; a
/// parameter the loss never touches has analytic and numeric gradient both
/// zero and therefore error zero.
pub fn gradient_check<S, F>(
    eng: &mut Engine<S>,
    build: F,
    probes: usize,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    S: Scalar,
    F: FnMut(&mut Engine<S>) -> Result<Var>,
{
    gradient_check_in(eng, |e| e, build, probes, eps, seed)
}

/// Generalization of [`gradient_check`] for models that own their engine:
/// `ctx` is the model, `engine` borrows its engine, and `build` runs a full
/// forward pass through the model. This lets composite models (with helper
/// state beyond raw parameters) be certified end to end.
pub fn gradient_check_in<C, S, EF, BF>(
    ctx: &mut C,
    mut engine: EF,
    mut build: BF,
    probes: usize,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport>
where
    S: Scalar,
    EF: FnMut(&mut C) -> &mut Engine<S>,
    BF: FnMut(&mut C) -> Result<Var>,
{
    // coordinate space: (param index, flat offset) over trainable params
    let mut coords: Vec<(usize, usize)> = Vec::new();
    {
        let eng = engine(ctx);
        for idx in 0..eng.param_count() {
            if eng.param(idx).trainable {
                for off in 0..eng.param_tensor(idx).len() {
                    coords.push((idx, off));
                }
            }
        }
    }
    if coords.is_empty() {
        return Err(Error::InvalidArgument(
            "gradient check needs at least one trainable parameter".into(),
        ));
    }

    // analytic pass
    engine(ctx).reset();
    let loss = build(ctx)?;
    let analytic: Vec<Vec<f64>> = {
        let eng = engine(ctx);
        if eng.value(loss).len() != 1 {
            return Err(Error::Shape("gradient check loss must be scalar".into()));
        }
        eng.backward(loss)?;
        (0..eng.param_count())
            .map(|idx| {
                let n = eng.param_tensor(idx).len();
                match eng.param_tensor(idx).grad() {
                    Some(g) => g.iter().map(|&v| v.to_f64()).collect(),
                    None => vec![0.0; n],
                }
            })
            .collect()
    };
    engine(ctx).reset();

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = S::from_f64(eps);
    let mut max_rel = 0.0f64;
    for _ in 0..probes {
        let (idx, off) = coords[rng.random_range(0..coords.len())];
        let orig = engine(ctx).param_tensor(idx).data()[off];

        {
            let eng = engine(ctx);
            eng.param_tensor_mut(idx).data_mut()[off] = orig + h;
            eng.reset();
        }
        let lp = {
            let l = build(ctx)?;
            engine(ctx).scalar_value(l).to_f64()
        };
        {
            let eng = engine(ctx);
            eng.param_tensor_mut(idx).data_mut()[off] = orig - h;
            eng.reset();
        }
        let lm = {
            let l = build(ctx)?;
            engine(ctx).scalar_value(l).to_f64()
        };
        {
            let eng = engine(ctx);
            eng.param_tensor_mut(idx).data_mut()[off] = orig;
            eng.reset();
        }

        let numeric = (lp - lm) / (2.0 * eps);
        let a = analytic[idx][off];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(GradCheckReport {
        probes,
        max_rel_error: max_rel,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::Tensor;

    #[test]
    fn quadratic_loss_checks_out() {
        let mut eng = Engine::<f64>::new();
        let w = eng
            .add_param(
                "w",
                Tensor::from_vec(2, 2, vec![0.4, -0.7, 1.2, 0.1]).unwrap(),
                true,
            )
            .unwrap();
        let report = gradient_check(
            &mut eng,
            |eng| {
                let sq = eng.mul(w, w)?;
                eng.sum_all(sq)
            },
            16,
            1e-6,
            3,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-6, "{}", report.max_rel_error);
    }

    #[test]
    fn untouched_parameter_reports_zero_error() {
        let mut eng = Engine::<f64>::new();
        let _unused = eng
            .add_param("unused", Tensor::from_vec(1, 1, vec![5.0]).unwrap(), true)
            .unwrap();
        let report = gradient_check(
            &mut eng,
            |eng| {
                let c = eng.leaf(Tensor::scalar(2.0))?;
                eng.sum_all(c)
            },
            8,
            1e-6,
            11,
        )
        .unwrap();
        assert_eq!(report.max_rel_error, 0.0);
    }
}
