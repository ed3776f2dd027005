//! Loss functions and their sensitivities with respect to model outputs.

use rand::Rng;

use crate::batching::{self, BatchSet};
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::{self, DenseMatrix, Projection};
use crate::model::{self, ForwardCache, ModelParams};
use crate::rng::{self, Purpose, StreamRng};

/// Relative singular-value cutoff for every batch projection.
pub const DEFAULT_RTOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    pub value: f64,
    /// Derivative of `value` with respect to each evaluated output.
    pub dl_dh: DenseMatrix,
}

fn check_same(op: &'static str, h: &DenseMatrix, y: &DenseMatrix) -> Result<()> {
    if h.shape() != y.shape() {
        return Err(Error::shape(
            op,
            format!("outputs {:?} vs labels {:?}", h.shape(), y.shape()),
        ));
    }
    Ok(())
}

/// Mean over rows of `‖hᵢ − yᵢ‖²`.
pub fn mse(h: &DenseMatrix, y: &DenseMatrix) -> Result<LossOutput> {
    check_same("mse", h, y)?;
    let n = h.rows().max(1) as f64;
    let diff = h.sub(y)?;
    let value = diff.data().iter().map(|v| v * v).sum::<f64>() / n;
    Ok(LossOutput {
        value,
        dl_dh: diff.scale(2.0 / n),
    })
}

/// Mean softmax cross-entropy of `logits` against one-hot (or soft) targets.
pub fn cross_entropy(logits: &DenseMatrix, targets: &DenseMatrix) -> Result<LossOutput> {
    check_same("cross_entropy", logits, targets)?;
    let n = logits.rows().max(1) as f64;
    let mut grad = DenseMatrix::zeros(logits.rows(), logits.cols());
    let mut value = 0.0;
    for r in 0..logits.rows() {
        let z = logits.row(r);
        let peak = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_norm = peak + z.iter().map(|v| (v - peak).exp()).sum::<f64>().ln();
        for (c, (&zc, &yc)) in z.iter().zip(targets.row(r)).enumerate() {
            let log_p = zc - log_norm;
            value -= yc * log_p;
            grad.set(r, c, (log_p.exp() - yc) / n);
        }
    }
    Ok(LossOutput {
        value: value / n,
        dl_dh: grad,
    })
}

/// Hyperplane-difference loss at `probe` for a batch whose design-matrix
/// projection `proj` (d × M) is already known.
///
/// With residual `R = Yb − Hb`, `w = projᵀ·probe` and `v = Rᵀ·w`, the value is
/// `‖v‖²` and the sensitivity with respect to `Hb` is `−2·w·vᵀ`.
pub fn rlp_with_projection(
    proj: &DenseMatrix,
    yb: &DenseMatrix,
    hb: &DenseMatrix,
    probe: &[f64],
) -> Result<LossOutput> {
    check_same("rlp_batch", hb, yb)?;
    if proj.cols() != yb.rows() || proj.rows() != probe.len() {
        return Err(Error::shape(
            "rlp_batch",
            format!(
                "projection {:?}, batch of {} rows, probe of length {}",
                proj.shape(),
                yb.rows(),
                probe.len()
            ),
        ));
    }
    let w = proj.t_mul_vec(probe)?;
    let residual = yb.sub(hb)?;
    let v = residual.t_mul_vec(&w)?;
    let value: f64 = v.iter().map(|x| x * x).sum();
    if !value.is_finite() {
        return Err(Error::Numeric("hyperplane loss is not finite".into()));
    }
    let mut dl_dh = DenseMatrix::zeros(hb.rows(), hb.cols());
    for (r, &wr) in w.iter().enumerate() {
        for (g, &vc) in dl_dh.row_mut(r).iter_mut().zip(&v) {
            *g = -2.0 * wr * vc;
        }
    }
    Ok(LossOutput { value, dl_dh })
}

/// Squared difference, at `probe`, between the least-squares hyperplanes
/// fitted to `(xb, yb)` and to `(xb, hb)`.
pub fn rlp_batch(
    xb: &DenseMatrix,
    yb: &DenseMatrix,
    hb: &DenseMatrix,
    probe: &[f64],
) -> Result<LossOutput> {
    check_batch_inputs(xb, yb)?;
    let proj = linalg::pseudo_inverse(xb, DEFAULT_RTOL)?;
    rlp_with_projection(&proj.operator, yb, hb, probe)
}

fn check_batch_inputs(xb: &DenseMatrix, yb: &DenseMatrix) -> Result<()> {
    if xb.rows() != yb.rows() {
        return Err(Error::shape(
            "rlp_batch",
            format!("{} feature rows vs {} label rows", xb.rows(), yb.rows()),
        ));
    }
    if !xb.is_finite() || !yb.is_finite() {
        return Err(Error::Data("batch contains non-finite values".into()));
    }
    Ok(())
}

/// Column sums of `x` as a vector.
fn row_sum(x: &DenseMatrix) -> Vec<f64> {
    let mut s = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        for (a, b) in s.iter_mut().zip(x.row(r)) {
            *a += b;
        }
    }
    s
}

/// `‖Σₖ Dᵀ xₖ‖²` over the batch's own rows `xₖ`, where `D` is the hyperplane
/// difference fitted on `xb`. Equivalent to a single probe equal to the sum
/// of the rows.
pub fn rlp_sum_form(xb: &DenseMatrix, yb: &DenseMatrix, hb: &DenseMatrix) -> Result<LossOutput> {
    check_batch_inputs(xb, yb)?;
    let proj = linalg::pseudo_inverse(xb, DEFAULT_RTOL)?;
    rlp_with_projection(&proj.operator, yb, hb, &row_sum(xb))
}

/// `(λ·xa + (1−λ)·xb, λ·ya + (1−λ)·yb)`.
pub fn mixup_pairs(
    xa: &DenseMatrix,
    ya: &DenseMatrix,
    xb: &DenseMatrix,
    yb: &DenseMatrix,
    lambda: f64,
) -> Result<(DenseMatrix, DenseMatrix)> {
    let mix = |a: &DenseMatrix, b: &DenseMatrix| -> Result<DenseMatrix> {
        check_same("mixup_pairs", a, b)?;
        let mut out = a.scale(lambda);
        out.add_scaled_assign(1.0 - lambda, b)?;
        Ok(out)
    };
    Ok((mix(xa, xb)?, mix(ya, yb)?))
}

/// Result of one mixed-batch evaluation: the loss on the model outputs and
/// the forward cache needed to back-propagate it.
#[derive(Debug, Clone)]
pub struct MixupEvaluation {
    pub loss: LossOutput,
    pub cache: ForwardCache,
}

/// Mixes two batches with weight `lambda`, evaluates `model` on the mixed
/// features and scores the outputs with [`rlp_sum_form`]. Returns `None`
/// when the batches differ in size, which callers treat as "skip".
pub fn rlp_mixup_batch(
    xa: &DenseMatrix,
    ya: &DenseMatrix,
    xb: &DenseMatrix,
    yb: &DenseMatrix,
    lambda: f64,
    model: &ModelParams,
) -> Result<Option<MixupEvaluation>> {
    if xa.shape() != xb.shape() || ya.shape() != yb.shape() {
        return Ok(None);
    }
    let (x_mix, y_mix) = mixup_pairs(xa, ya, xb, yb, lambda)?;
    let cache = model::forward(model, &x_mix)?;
    let loss = rlp_sum_form(&x_mix, &y_mix, cache.output())?;
    Ok(Some(MixupEvaluation { loss, cache }))
}

/// Picks a probe row index, avoiding the batch's own rows whenever the
/// dataset has rows outside the batch.
pub fn draw_probe(rng: &mut StreamRng, n: usize, batch: &[usize]) -> usize {
    if n > batch.len() {
        loop {
            let i = rng.gen_range(0..n);
            if !batch.contains(&i) {
                return i;
            }
        }
    }
    rng.gen_range(0..n)
}

/// Batch design matrices, labels and projections for a fixed [`BatchSet`],
/// computed once and reused across epochs.
#[derive(Debug, Clone)]
pub struct PreparedBatches {
    pub batch_set: BatchSet,
    pub features: Vec<DenseMatrix>,
    pub labels: Vec<DenseMatrix>,
    pub projections: Vec<Projection>,
}

impl PreparedBatches {
    pub fn new(ds: &Dataset, batch_set: BatchSet) -> Result<Self> {
        if batch_set.n != ds.len() {
            return Err(Error::shape(
                "PreparedBatches::new",
                format!("batch set over {} rows, dataset has {}", batch_set.n, ds.len()),
            ));
        }
        let mut features = Vec::with_capacity(batch_set.len());
        let mut labels = Vec::with_capacity(batch_set.len());
        let mut projections = Vec::with_capacity(batch_set.len());
        for (j, idx) in batch_set.batches.iter().enumerate() {
            let x = ds.features.select_rows(idx);
            let proj = linalg::pseudo_inverse(&x, DEFAULT_RTOL).map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("batch {j}: {msg}")),
                other => other,
            })?;
            features.push(x);
            labels.push(ds.labels.select_rows(idx));
            projections.push(proj);
        }
        Ok(Self {
            batch_set,
            features,
            labels,
            projections,
        })
    }

    pub fn len(&self) -> usize {
        self.batch_set.len()
    }

    pub fn is_empty(&self) -> bool {
        self.batch_set.is_empty()
    }
}

/// Mean hyperplane loss of `model` on `ds` over `k` fresh batches of size `m`
/// with one fresh probe per batch. Batches and probes are drawn from `seed`.
pub fn rlp_metric(model: &ModelParams, ds: &Dataset, m: usize, k: usize, seed: u64) -> Result<f64> {
    let mut batch_rng = rng::stream(seed, Purpose::Metric);
    let batch_set = batching::balanced_batches_with(ds.len(), m, k, seed, &mut batch_rng)?;
    let prepared = PreparedBatches::new(ds, batch_set)?;
    rlp_metric_prepared(model, ds, &prepared, seed)
}

/// As [`rlp_metric`] with batches prepared in advance.
pub fn rlp_metric_prepared(
    model: &ModelParams,
    ds: &Dataset,
    prepared: &PreparedBatches,
    seed: u64,
) -> Result<f64> {
    let predictions = model::predict(model, &ds.features)?;
    let mut probe_rng = rng::stream_lane(seed, Purpose::Metric, 1);
    let mut total = 0.0;
    for (j, idx) in prepared.batch_set.batches.iter().enumerate() {
        let probe = draw_probe(&mut probe_rng, ds.len(), idx);
        let hb = predictions.select_rows(idx);
        let out = rlp_with_projection(
            &prepared.projections[j].operator,
            &prepared.labels[j],
            &hb,
            ds.features.row(probe),
        )?;
        total += out.value;
    }
    Ok(total / prepared.len().max(1) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, Layer};
    use proptest::prelude::{prop_assert, proptest};

    fn random(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut rng = rng::stream(seed, Purpose::Theory);
        let data = (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect();
        DenseMatrix::from_vec(rows, cols, data).unwrap()
    }

    fn m(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(rows).unwrap()
    }

    /// Builds the d × c hyperplane difference explicitly and evaluates it.
    fn explicit_value(xb: &DenseMatrix, yb: &DenseMatrix, hb: &DenseMatrix, probe: &[f64]) -> f64 {
        let d = linalg::least_squares_project(xb, &yb.sub(hb).unwrap(), DEFAULT_RTOL)
            .unwrap()
            .solution;
        d.t_mul_vec(probe).unwrap().iter().map(|v| v * v).sum()
    }

    #[test]
    fn mse_cases() {
        let y = random(3, 2, 1);
        let out = mse(&y, &y).unwrap();
        assert_eq!(out.value, 0.0);
        let out = mse(&m(&[&[0.0]]), &m(&[&[2.0]])).unwrap();
        assert_eq!(out.value, 4.0);
        assert_eq!(out.dl_dh.data(), &[-4.0]);
    }

    #[test]
    fn mse_matches_scalar_loop() {
        let (h, y) = (random(5, 2, 2), random(5, 2, 3));
        let mut want = 0.0;
        for r in 0..5 {
            for c in 0..2 {
                want += (h.get(r, c) - y.get(r, c)).powi(2);
            }
        }
        assert!((mse(&h, &y).unwrap().value - want / 5.0).abs() < 1e-15);
    }

    #[test]
    fn hand_example() {
        let xb = m(&[&[1.0], &[2.0]]);
        let yb = m(&[&[1.0], &[2.0]]);
        let hb = DenseMatrix::zeros(2, 1);
        let out = rlp_batch(&xb, &yb, &hb, &[3.0]).unwrap();
        assert!((out.value - 9.0).abs() < 1e-12);
    }

    #[test]
    fn equality_case() {
        let xb = random(6, 3, 4);
        let yb = random(6, 2, 5);
        let out = rlp_batch(&xb, &yb, &yb, &[0.3, -1.0, 2.0]).unwrap();
        assert_eq!(out.value, 0.0);
        assert!(out.dl_dh.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn fast_route_matches_explicit_route() {
        for seed in 0..5 {
            for (mm, d) in [(7, 5), (3, 6)] {
                let xb = random(mm, d, seed);
                let yb = random(mm, 2, seed + 10);
                let hb = random(mm, 2, seed + 20);
                let probe = random(1, d, seed + 30).into_vec();
                let fast = rlp_batch(&xb, &yb, &hb, &probe).unwrap().value;
                let slow = explicit_value(&xb, &yb, &hb, &probe);
                assert!((fast - slow).abs() <= 1e-10 * slow.max(1.0));
            }
        }
    }

    #[test]
    fn sensitivity_matches_finite_differences() {
        for seed in 0..3 {
            let xb = random(6, 4, seed);
            let yb = random(6, 2, seed + 1);
            let hb = random(6, 2, seed + 2);
            let probe = random(1, 4, seed + 3).into_vec();
            let out = rlp_batch(&xb, &yb, &hb, &probe).unwrap();
            for i in 0..hb.data().len() {
                let mut up = hb.clone();
                up.data_mut()[i] += 1e-6;
                let mut down = hb.clone();
                down.data_mut()[i] -= 1e-6;
                let numeric = (rlp_batch(&xb, &yb, &up, &probe).unwrap().value
                    - rlp_batch(&xb, &yb, &down, &probe).unwrap().value)
                    / 2e-6;
                let analytic = out.dl_dh.data()[i];
                assert!((analytic - numeric).abs() <= 1e-6 * numeric.abs().max(1.0));
            }
        }
    }

    #[test]
    fn shape_errors() {
        let xb = random(4, 2, 0);
        assert!(rlp_batch(&xb, &random(3, 1, 1), &random(3, 1, 2), &[0.0, 1.0]).is_err());
        assert!(rlp_batch(&xb, &random(4, 1, 1), &random(4, 1, 2), &[0.0]).is_err());
        assert!(mse(&random(2, 1, 0), &random(2, 2, 0)).is_err());
    }

    #[test]
    fn cross_entropy_values() {
        let logits = m(&[&[0.0, 0.0]]);
        let out = cross_entropy(&logits, &m(&[&[1.0, 0.0]])).unwrap();
        assert!((out.value - 2f64.ln()).abs() < 1e-15);
        assert_eq!(out.dl_dh.data(), &[-0.5, 0.5]);
        let big = cross_entropy(&m(&[&[1000.0, 0.0]]), &m(&[&[1.0, 0.0]])).unwrap();
        assert!(big.value.abs() < 1e-12);
    }

    #[test]
    fn mixup_pair_endpoints_and_midpoint() {
        let (xa, ya, xb, yb) = (random(3, 2, 1), random(3, 1, 2), random(3, 2, 3), random(3, 1, 4));
        let (x1, y1) = mixup_pairs(&xa, &ya, &xb, &yb, 1.0).unwrap();
        assert_eq!((x1, y1), (xa.clone(), ya.clone()));
        let (x0, _) = mixup_pairs(&xa, &ya, &xb, &yb, 0.0).unwrap();
        assert_eq!(x0, xb);
        let (xh, _) = mixup_pairs(&xa, &ya, &xb, &yb, 0.5).unwrap();
        let mean = xa.add(&xb).unwrap().scale(0.5);
        assert!(xh.sub(&mean).unwrap().max_abs() < 1e-15);
    }

    fn linear_model(d: usize, seed: u64) -> ModelParams {
        ModelParams::init_uniform(&[d, 1], &[Activation::Identity], seed)
    }

    #[test]
    fn mixup_loss_endpoints() {
        let model = linear_model(3, 2);
        let (xa, ya, xb, yb) = (random(5, 3, 1), random(5, 1, 2), random(5, 3, 3), random(5, 1, 4));
        let at_a = rlp_mixup_batch(&xa, &ya, &xb, &yb, 1.0, &model).unwrap().unwrap();
        let ha = model::predict(&model, &xa).unwrap();
        let direct = rlp_sum_form(&xa, &ya, &ha).unwrap();
        assert!((at_a.loss.value - direct.value).abs() <= 1e-12 * direct.value.max(1.0));
        let at_b = rlp_mixup_batch(&xa, &ya, &xb, &yb, 0.0, &model).unwrap().unwrap();
        let hb = model::predict(&model, &xb).unwrap();
        let direct = rlp_sum_form(&xb, &yb, &hb).unwrap();
        assert!((at_b.loss.value - direct.value).abs() <= 1e-12 * direct.value.max(1.0));
        assert!(rlp_mixup_batch(&xa, &ya, &random(4, 3, 0), &random(4, 1, 0), 0.5, &model)
            .unwrap()
            .is_none());
    }

    #[test]
    fn mixup_loss_vanishes_when_outputs_match_labels() {
        let model = linear_model(3, 9);
        let (xa, xb) = (random(5, 3, 1), random(5, 3, 2));
        let ya = model::predict(&model, &xa).unwrap();
        let yb = model::predict(&model, &xb).unwrap();
        let out = rlp_mixup_batch(&xa, &ya, &xb, &yb, 0.3, &model).unwrap().unwrap();
        assert!(out.loss.value < 1e-24);
    }

    #[test]
    fn sum_form_sensitivity_matches_finite_differences() {
        let xb = random(6, 3, 0);
        let yb = random(6, 1, 1);
        let hb = random(6, 1, 2);
        let out = rlp_sum_form(&xb, &yb, &hb).unwrap();
        for i in 0..6 {
            let mut up = hb.clone();
            up.data_mut()[i] += 1e-6;
            let mut down = hb.clone();
            down.data_mut()[i] -= 1e-6;
            let numeric = (rlp_sum_form(&xb, &yb, &up).unwrap().value
                - rlp_sum_form(&xb, &yb, &down).unwrap().value)
                / 2e-6;
            assert!((out.dl_dh.data()[i] - numeric).abs() <= 1e-6 * numeric.abs().max(1.0));
        }
    }

    fn exact_linear_model() -> ModelParams {
        ModelParams::from_layers(vec![Layer {
            weight: DenseMatrix::from_rows(&[crate::data::LINEAR_COEFFICIENTS]).unwrap(),
            bias: vec![0.0],
            activation: Activation::Identity,
        }])
        .unwrap()
    }

    #[test]
    fn metric_of_perfect_model_vanishes_and_is_deterministic() {
        let ds = crate::data::gen_linear(200, 1);
        let model = exact_linear_model();
        let v = rlp_metric(&model, &ds, 7, 50, 3).unwrap();
        assert!(v < 1e-12, "{v}");
        let other = linear_model(5, 1);
        let a = rlp_metric(&other, &ds, 7, 50, 3).unwrap();
        assert_eq!(a, rlp_metric(&other, &ds, 7, 50, 3).unwrap());
        assert!(a > 0.0);
    }

    #[test]
    fn metric_is_quadratic_in_coefficient_error() {
        // y = 2x on 1-d data, model y = (2 + δ)x.
        let x: Vec<f64> = (0..50).map(|i| i as f64 / 50.0).collect();
        let features = DenseMatrix::column_vector(&x);
        let labels = features.scale(2.0);
        let ds = Dataset::new(features, labels, crate::data::DatasetMeta::new("line", None)).unwrap();
        let metric = |delta: f64| {
            let model = ModelParams::from_layers(vec![Layer {
                weight: DenseMatrix::from_rows(&[[2.0 + delta]]).unwrap(),
                bias: vec![0.0],
                activation: Activation::Identity,
            }])
            .unwrap();
            rlp_metric(&model, &ds, 3, 20, 5).unwrap()
        };
        let base = metric(1e-3);
        for s in [2.0, 4.0, 8.0] {
            let ratio = metric(s * 1e-3) / base;
            assert!((ratio - s * s).abs() < 1e-6 * s * s, "ratio {ratio} at scale {s}");
        }
    }

    #[test]
    fn probe_avoids_batch_rows_when_possible() {
        let mut r = rng::stream(0, Purpose::Probe);
        for _ in 0..200 {
            assert!(![1, 2, 3].contains(&draw_probe(&mut r, 5, &[1, 2, 3])));
        }
        assert!(draw_probe(&mut r, 3, &[0, 1, 2]) < 3);
    }

    proptest! {
        #[test]
        fn invariants(seed in 0u64..10_000, mm in 2usize..9, d in 1usize..6, c in 1usize..3, s in -3.0f64..3.0) {
            let xb = random(mm, d, seed);
            let yb = random(mm, c, seed + 1);
            let hb = random(mm, c, seed + 2);
            let probe = random(1, d, seed + 3).into_vec();
            let base = rlp_batch(&xb, &yb, &hb, &probe).unwrap().value;
            prop_assert!(base >= 0.0);

            let perm: Vec<usize> = (0..mm).rev().collect();
            let permuted = rlp_batch(
                &xb.select_rows(&perm),
                &yb.select_rows(&perm),
                &hb.select_rows(&perm),
                &probe,
            ).unwrap().value;
            prop_assert!((permuted - base).abs() <= 1e-10 * base.max(1.0));

            let scaled_probe: Vec<f64> = probe.iter().map(|v| v * s).collect();
            let scaled = rlp_batch(&xb, &yb, &hb, &scaled_probe).unwrap().value;
            prop_assert!((scaled - s * s * base).abs() <= 1e-10 * (s * s * base).max(1.0));
        }
    }
}
