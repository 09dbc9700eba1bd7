//! Central-difference verification of analytic gradients.

use rand::seq::SliceRandom;
use rand::Rng;

use super::params::ParamSet;
use super::NnError;

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub worst_param: String,
    pub worst_coord: (usize, usize),
    pub coords_checked: usize,
}

/// Compares the analytic gradients already stored in `params` against central
/// finite differences of `loss`.
///
/// `loss` must be a deterministic pure function of the parameter values
/// (dropout disabled, no hidden state); determinism is verified by evaluating
/// it twice at the unperturbed point. When `max_coords_per_param` is set,
/// at most that many coordinates per parameter are sampled with `rng`;
/// otherwise every coordinate is checked.
///
/// Relative error per coordinate is `|a - n| / max(|a|, |n|, 1e-6)` where `a`
/// is the analytic and `n` the numerical derivative.
pub fn finite_diff_gradcheck(
    params: &mut ParamSet,
    loss: impl Fn(&ParamSet) -> f64,
    h: f64,
    max_coords_per_param: Option<usize>,
    rng: &mut impl Rng,
) -> Result<GradcheckReport, NnError> {
    let base1 = loss(params);
    let base2 = loss(params);
    if base1.to_bits() != base2.to_bits() {
        return Err(NnError::CheckInvalid(format!(
            "loss is not deterministic: {base1} vs {base2}"
        )));
    }

    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        worst_param: String::new(),
        worst_coord: (0, 0),
        coords_checked: 0,
    };

    for id in params.ids().collect::<Vec<_>>() {
        let (rows, cols) = params.value(id).shape();
        let mut coords: Vec<(usize, usize)> = (0..rows)
            .flat_map(|i| (0..cols).map(move |j| (i, j)))
            .collect();
        if let Some(limit) = max_coords_per_param {
            coords.shuffle(rng);
            coords.truncate(limit);
        }
        for (i, j) in coords {
            let original = params.value(id).get(i, j);
            params.get_mut(id).value.set(i, j, original + h);
            let plus = loss(params);
            params.get_mut(id).value.set(i, j, original - h);
            let minus = loss(params);
            params.get_mut(id).value.set(i, j, original);

            let numeric = (plus - minus) / (2.0 * h);
            let analytic = params.grad(id).get(i, j);
            let denom = analytic.abs().max(numeric.abs()).max(1e-6);
            let rel = (analytic - numeric).abs() / denom;
            report.coords_checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_param = params.get(id).name.clone();
                report.worst_coord = (i, j);
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Matrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn quadratic_loss_matches_closed_form_gradient() {
        let mut params = ParamSet::new();
        let theta = params.add("theta", Matrix::from_vec(1, 3, vec![0.7, -1.3, 2.0]));
        // loss = 0.5 * sum(theta^2), gradient = theta
        params.get_mut(theta).grad = params.value(theta).clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let report = finite_diff_gradcheck(
            &mut params,
            |p| 0.5 * p.value(theta).data().iter().map(|x| x * x).sum::<f64>(),
            1e-4,
            None,
            &mut rng,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-8, "{}", report.max_rel_error);
        assert_eq!(report.coords_checked, 3);
    }

    #[test]
    fn nondeterministic_loss_invalidates_the_check() {
        let mut params = ParamSet::new();
        params.add("w", Matrix::zeros(1, 1));
        let counter = std::cell::Cell::new(0.0f64);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = finite_diff_gradcheck(
            &mut params,
            |_| {
                counter.set(counter.get() + 1.0);
                counter.get()
            },
            1e-4,
            None,
            &mut rng,
        )
        .unwrap_err();
        assert!(matches!(err, NnError::CheckInvalid(_)));
    }

    #[test]
    fn sampling_limits_checked_coordinates() {
        let mut params = ParamSet::new();
        let theta = params.add("theta", Matrix::zeros(10, 10));
        params.get_mut(theta).grad = Matrix::zeros(10, 10);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let report =
            finite_diff_gradcheck(&mut params, |_| 0.0, 1e-4, Some(7), &mut rng).unwrap();
        assert_eq!(report.coords_checked, 7);
    }
}
