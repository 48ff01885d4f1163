//! TT-ICE with three cost-saving heuristics:
//!
//! - *skip*: if the existing cores already represent the batch within
//!   `eps_des`, only append its coefficients;
//! - *subselect*: expand the cores with just the poorly represented
//!   observations, at a relaxed tolerance that spends the error budget the
//!   well-represented ones leave unused;
//! - *occupancy*: leave a core alone once it uses at least a fraction `tau` of
//!   its maximal rank.
//!
//! The last core is always extended with the projections of the full batch.

use serde::Serialize;

use crate::cputime::Stopwatch;
use crate::error::{Error, Result};
use crate::ice::{append_observations, check_eps, check_update_inputs, expand, UpdateReport};
use crate::stream::StreamIncrement;
use crate::tt::{project_onto, TensorTrain};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SkipStatistic {
    /// Mean of the per-observation relative errors.
    Mean,
    /// Relative error of the whole batch; makes the skip decision exact.
    FullBatch,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeuristicConfig {
    pub occupancy_threshold: f64,
    pub skip_enabled: bool,
    pub subselect_enabled: bool,
    pub skip_statistic: SkipStatistic,
    /// Use the observation-count approximation for the relaxed tolerance.
    pub count_approx: bool,
}

impl Default for HeuristicConfig {
    fn default() -> Self {
        Self {
            occupancy_threshold: 0.8,
            skip_enabled: true,
            subselect_enabled: true,
            skip_statistic: SkipStatistic::Mean,
            count_approx: false,
        }
    }
}

impl HeuristicConfig {
    pub fn validate(&self) -> Result<()> {
        let tau = self.occupancy_threshold;
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::Argument(format!(
                "occupancy threshold {tau} outside (0, 1]"
            )));
        }
        Ok(())
    }
}

/// Per-observation approximation quality of a batch under the current cores.
#[derive(Debug, Clone)]
pub struct ObservationErrors {
    /// Relative error per observation; 0 for zero-norm observations.
    pub relative: Vec<f64>,
    pub residual_sq: Vec<f64>,
    pub norm_sq: Vec<f64>,
    /// `r_d x n_obs` projections onto the current cores.
    pub coefficients: nalgebra::DMatrix<f64>,
}

impl ObservationErrors {
    /// Mean relative error over observations with nonzero norm.
    pub fn mean(&self) -> f64 {
        let (sum, count) = self
            .relative
            .iter()
            .zip(&self.norm_sq)
            .filter(|(_, &n)| n > 0.0)
            .fold((0.0, 0usize), |(s, c), (e, _)| (s + e, c + 1));
        if count == 0 {
            0.0
        } else {
            sum / count as f64
        }
    }

    /// Relative error of the batch as a whole.
    pub fn full_batch(&self) -> f64 {
        let norm: f64 = self.norm_sq.iter().sum();
        if norm > 0.0 {
            (self.residual_sq.iter().sum::<f64>() / norm).sqrt()
        } else {
            0.0
        }
    }
}

/// Projects and reconstructs each observation with the current cores.
pub fn observation_errors(tt: &TensorTrain, y: &StreamIncrement) -> Result<ObservationErrors> {
    let coefficients = tt.project(&y.tensor)?;
    let approx = tt.expand_coefficients(&coefficients)?;
    let step = y.tensor.slice_len();
    let n = y.n_obs();
    let mut relative = Vec::with_capacity(n);
    let mut residual_sq = Vec::with_capacity(n);
    let mut norm_sq = Vec::with_capacity(n);
    for (obs, fit) in y.tensor.data().chunks(step).zip(approx.data().chunks(step)) {
        let r: f64 = obs.iter().zip(fit).map(|(a, b)| (a - b) * (a - b)).sum();
        let nrm: f64 = crate::tensor::sum_of_squares(obs);
        relative.push(if nrm > 0.0 { (r / nrm).sqrt() } else { 0.0 });
        residual_sq.push(r);
        norm_sq.push(nrm);
    }
    Ok(ObservationErrors {
        relative,
        residual_sq,
        norm_sq,
        coefficients,
    })
}

pub fn per_obs_errors(tt: &TensorTrain, y: &StreamIncrement) -> Result<Vec<f64>> {
    Ok(observation_errors(tt, y)?.relative)
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Subselection {
    /// Observations with error strictly above the bound.
    pub selected: Vec<usize>,
    pub rejected: Vec<usize>,
}

pub fn subselect(y: &StreamIncrement, errs: &[f64], eps_des: f64) -> Result<Subselection> {
    if errs.len() != y.n_obs() {
        return Err(Error::Dimension(format!(
            "{} errors for a batch of {}",
            errs.len(),
            y.n_obs()
        )));
    }
    let (selected, rejected) = (0..errs.len()).partition(|&i| errs[i] > eps_des);
    Ok(Subselection { selected, rejected })
}

/// Norms entering the relaxed tolerance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitNorms {
    pub batch_norm: f64,
    pub selected_count: usize,
    pub selected_norm: f64,
    pub rejected_count: usize,
    /// `||D_C - approx(D_C)||_F` under the current cores.
    pub rejected_residual_norm: f64,
}

impl SplitNorms {
    pub fn from_errors(errs: &ObservationErrors, split: &Subselection) -> Self {
        let sum = |idx: &[usize], v: &[f64]| idx.iter().map(|&i| v[i]).sum::<f64>();
        Self {
            batch_norm: errs.norm_sq.iter().sum::<f64>().sqrt(),
            selected_count: split.selected.len(),
            selected_norm: sum(&split.selected, &errs.norm_sq).sqrt(),
            rejected_count: split.rejected.len(),
            rejected_residual_norm: sum(&split.rejected, &errs.residual_sq).sqrt(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaxedTolerance {
    pub eps_upd: f64,
    /// The radicand came out negative and was clamped to zero.
    pub clamped: bool,
}

/// `sqrt(((eps_des ||Y||)^2 - ||D_C - approx(D_C)||^2) / ||D||^2)`.
pub fn relaxed_tolerance(norms: &SplitNorms, eps_des: f64) -> Result<RelaxedTolerance> {
    if norms.selected_count == 0 || norms.selected_norm <= 0.0 {
        return Err(Error::Precondition(
            "relaxed tolerance needs a nonempty selection with nonzero norm".into(),
        ));
    }
    if norms.rejected_count == 0 {
        return Ok(RelaxedTolerance {
            eps_upd: eps_des,
            clamped: false,
        });
    }
    let budget = eps_des * norms.batch_norm;
    let radicand = (budget * budget - norms.rejected_residual_norm.powi(2))
        / (norms.selected_norm * norms.selected_norm);
    if radicand < 0.0 {
        log::warn!("relaxed tolerance radicand {radicand:e} clamped to 0");
        return Ok(RelaxedTolerance {
            eps_upd: 0.0,
            clamped: true,
        });
    }
    Ok(RelaxedTolerance {
        eps_upd: radicand.sqrt(),
        clamped: false,
    })
}

/// Count-based approximation `(eps_des n - mean_rej |D_C|) / |D|`, valid when
/// observations have similar norms.
pub fn relaxed_tolerance_approx(
    n_batch: usize,
    n_selected: usize,
    n_rejected: usize,
    mean_rej_error: f64,
    eps_des: f64,
) -> Result<f64> {
    if n_selected == 0 {
        return Err(Error::Precondition("empty selection".into()));
    }
    Ok(((eps_des * n_batch as f64 - mean_rej_error * n_rejected as f64) / n_selected as f64).max(0.0))
}

/// TT-ICE* update.
pub fn tt_ice_star_update(
    tt: &TensorTrain,
    y: &StreamIncrement,
    eps_des: f64,
    cfg: &HeuristicConfig,
) -> Result<(TensorTrain, UpdateReport)> {
    let clock = Stopwatch::start();
    check_update_inputs(tt, y)?;
    check_eps(eps_des)?;
    cfg.validate()?;
    let d = tt.spatial_dims();
    let errs = observation_errors(tt, y)?;
    let batch_err = errs.full_batch();
    let statistic = match cfg.skip_statistic {
        SkipStatistic::Mean => errs.mean(),
        SkipStatistic::FullBatch => batch_err,
    };
    let split = if cfg.subselect_enabled {
        subselect(y, &errs.relative, eps_des)?
    } else {
        Subselection {
            selected: (0..y.n_obs()).collect(),
            rejected: Vec::new(),
        }
    };

    let mut report = UpdateReport {
        increment_index: y.increment_index,
        obs_in_batch: y.n_obs(),
        obs_used: 0,
        ranks_before: tt.ranks(),
        ranks_after: Vec::new(),
        eps_target: 0.0,
        eps_upd: None,
        batch_rel_error_estimate: batch_err,
        skipped: true,
        occupied_modes: Vec::new(),
        wall_time: Default::default(),
        cpu_seconds: 0.0,
    };

    let skip = (cfg.skip_enabled && statistic <= eps_des) || split.selected.is_empty();
    let out = if skip {
        append_observations(tt.cores().to_vec(), &errs.coefficients, tt.batch_boundaries().to_vec())?
    } else {
        let norms = SplitNorms::from_errors(&errs, &split);
        let eps_upd = if split.rejected.is_empty() {
            eps_des
        } else if cfg.count_approx {
            let mean_rej = split.rejected.iter().map(|&i| errs.relative[i]).sum::<f64>()
                / split.rejected.len() as f64;
            relaxed_tolerance_approx(y.n_obs(), split.selected.len(), split.rejected.len(), mean_rej, eps_des)?
        } else {
            relaxed_tolerance(&norms, eps_des)?.eps_upd
        };
        let data = if split.rejected.is_empty() {
            y.tensor.clone()
        } else {
            y.tensor.select_last(&split.selected)?
        };
        let tol = eps_upd / (d as f64).sqrt() * norms.selected_norm;
        let ex = expand(tt, &data, &vec![tol; d], Some(cfg.occupancy_threshold))?;
        let latent = if split.rejected.is_empty() {
            ex.latent
        } else {
            project_onto(&ex.cores[..d], &y.tensor)?
        };
        let tails_sq: f64 = ex.tails.iter().map(|t| t * t).sum();
        let bound_sq = tails_sq + norms.rejected_residual_norm.powi(2);
        report.obs_used = split.selected.len();
        report.eps_target = tol;
        report.eps_upd = Some(eps_upd);
        report.skipped = false;
        report.occupied_modes = ex.occupied;
        report.batch_rel_error_estimate = if norms.batch_norm > 0.0 {
            bound_sq.sqrt() / norms.batch_norm
        } else {
            0.0
        };
        append_observations(ex.cores, &latent, tt.batch_boundaries().to_vec())?
    };
    report.ranks_after = out.ranks();
    (report.wall_time, report.cpu_seconds) = clock.stop();
    Ok((out, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ice::tt_ice_update;
    use crate::tensor::DenseTensor;
    use crate::tt_svd::tt_svd;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_batch(shape: &[usize], rng: &mut ChaCha8Rng) -> DenseTensor {
        let len = shape.iter().product();
        DenseTensor::new(shape.to_vec(), (0..len).map(|_| rng.sample(StandardNormal)).collect()).unwrap()
    }

    fn inc(t: DenseTensor, k: usize) -> StreamIncrement {
        StreamIncrement::new(t, k, "test").unwrap()
    }

    fn base_train(rng: &mut ChaCha8Rng) -> TensorTrain {
        tt_svd(&random_batch(&[4, 5, 6, 3], rng), 1e-12).unwrap()
    }

    fn in_span(tt: &TensorTrain, m: usize, rng: &mut ChaCha8Rng) -> DenseTensor {
        let r = tt.ranks()[tt.spatial_dims()];
        tt.expand_coefficients(&DMatrix::from_fn(r, m, |_, _| rng.sample(StandardNormal)))
            .unwrap()
    }

    #[test]
    fn errors_for_span_and_orthogonal_observations() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tt = base_train(&mut rng);
        let y = inc(in_span(&tt, 3, &mut rng), 1);
        assert!(per_obs_errors(&tt, &y).unwrap().iter().all(|&e| e <= 1e-12));

        // a unit observation orthogonal to every basis vector of the first core
        let u1 = tt.cores()[0].left_unfolding().clone_owned();
        let probe = DMatrix::from_fn(4, 1, |i, _| (i + 1) as f64);
        let mut v = &probe - &u1 * (u1.tr_mul(&probe));
        if v.norm() < 1e-8 {
            return;
        }
        v /= v.norm();
        let mut data = vec![0.0; 4 * 30];
        data[..4].copy_from_slice(v.as_slice());
        let y = inc(DenseTensor::new(vec![4, 5, 6, 1], data).unwrap(), 1);
        let e = per_obs_errors(&tt, &y).unwrap();
        if tt.ranks()[1] < 4 {
            assert!((e[0] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn energy_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let tt = base_train(&mut rng);
        let y = inc(random_batch(&[4, 5, 6, 4], &mut rng), 1);
        let errs = observation_errors(&tt, &y).unwrap();
        for i in 0..4 {
            let c = errs.coefficients.column(i).norm_squared();
            let lhs = errs.relative[i].powi(2);
            let rhs = 1.0 - c / errs.norm_sq[i];
            assert!((lhs - rhs).abs() < 1e-10);
        }
    }

    #[test]
    fn zero_observation_has_zero_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let tt = base_train(&mut rng);
        let y = inc(DenseTensor::zeros(vec![4, 5, 6, 2]).unwrap(), 1);
        let errs = observation_errors(&tt, &y).unwrap();
        assert_eq!(errs.relative, vec![0.0, 0.0]);
        assert_eq!(errs.mean(), 0.0);
        assert_eq!(errs.full_batch(), 0.0);
    }

    #[test]
    fn subselect_partitions() {
        let y = inc(DenseTensor::zeros(vec![2, 2]).unwrap(), 0);
        let s = subselect(&y, &[0.05, 0.1], 0.1).unwrap();
        assert!(s.selected.is_empty());
        assert_eq!(s.rejected, vec![0, 1]);
        let s = subselect(&y, &[0.2, 0.3], 0.1).unwrap();
        assert_eq!(s.selected, vec![0, 1]);
        assert!(s.rejected.is_empty());
        let s = subselect(&y, &[0.2, 0.05], 0.1).unwrap();
        assert_eq!((s.selected, s.rejected), (vec![0], vec![1]));
        assert!(subselect(&y, &[0.2], 0.1).is_err());
    }

    #[test]
    fn relaxed_tolerance_cases() {
        let base = SplitNorms {
            batch_norm: 2.0,
            selected_count: 2,
            selected_norm: 2.0,
            rejected_count: 0,
            rejected_residual_norm: 0.0,
        };
        assert_eq!(relaxed_tolerance(&base, 0.1).unwrap().eps_upd, 0.1);

        // rejected part represented exactly, selected carries the whole norm
        let exact = SplitNorms {
            rejected_count: 3,
            selected_norm: 2.0,
            ..base
        };
        let r = relaxed_tolerance(&exact, 0.1).unwrap();
        assert!((r.eps_upd - 0.1 * 2.0 / 2.0).abs() < 1e-15);

        let partial = SplitNorms {
            batch_norm: 3.0,
            selected_norm: 1.5,
            rejected_count: 2,
            rejected_residual_norm: 0.1,
            ..base
        };
        let r = relaxed_tolerance(&partial, 0.1).unwrap();
        assert!((r.eps_upd - ((0.09 - 0.01) / 2.25f64).sqrt()).abs() < 1e-15);
        assert!(r.eps_upd >= 0.1);

        let negative = SplitNorms {
            rejected_residual_norm: 10.0,
            ..partial
        };
        let r = relaxed_tolerance(&negative, 0.1).unwrap();
        assert!(r.clamped && r.eps_upd == 0.0);

        let empty = SplitNorms {
            selected_count: 0,
            ..base
        };
        assert!(matches!(relaxed_tolerance(&empty, 0.1), Err(Error::Precondition(_))));
    }

    #[test]
    fn count_approximation() {
        assert_eq!(relaxed_tolerance_approx(10, 10, 0, 0.0, 0.1).unwrap(), 0.1);
        let v = relaxed_tolerance_approx(10, 5, 5, 0.05, 0.1).unwrap();
        assert!((v - 0.15).abs() < 1e-15);
        assert!(relaxed_tolerance_approx(3, 0, 3, 0.0, 0.1).is_err());
    }

    fn exact_equal_norm(n: usize, rej_errs: &[f64], eps: f64) -> f64 {
        let k = rej_errs.len();
        relaxed_tolerance(
            &SplitNorms {
                batch_norm: (n as f64).sqrt(),
                selected_count: n - k,
                selected_norm: ((n - k) as f64).sqrt(),
                rejected_count: k,
                rejected_residual_norm: rej_errs.iter().map(|e| e * e).sum::<f64>().sqrt(),
            },
            eps,
        )
        .unwrap()
        .eps_upd
    }

    #[test]
    fn count_approximation_close_on_equal_norm_batches() {
        // few rejections, or rejected errors near the bound
        let eps = 0.1;
        let cases: [(usize, Vec<f64>); 5] = [
            (10, vec![0.05]),
            (20, vec![0.02, 0.0, 0.07]),
            (8, vec![0.09]),
            (10, vec![0.09; 5]),
            (12, vec![0.08, 0.095, 0.085, 0.1]),
        ];
        for (n, rej) in cases {
            let exact = exact_equal_norm(n, &rej, eps);
            let mean = rej.iter().sum::<f64>() / rej.len() as f64;
            let approx = relaxed_tolerance_approx(n, n - rej.len(), rej.len(), mean, eps).unwrap();
            assert!((approx - exact).abs() <= 0.1 * exact, "{approx} vs {exact}");
        }
    }

    #[test]
    fn count_approximation_drifts_with_many_exact_rejections() {
        let exact = exact_equal_norm(10, &[0.05; 5], 0.1);
        assert!((exact - 0.0175f64.sqrt()).abs() < 1e-15);
        let approx = relaxed_tolerance_approx(10, 5, 5, 0.05, 0.1).unwrap();
        assert!(approx > 1.1 * exact);
    }

    #[test]
    fn in_span_batch_takes_skip_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let tt = base_train(&mut rng);
        let y = inc(in_span(&tt, 3, &mut rng), 1);
        let (a, rep) = tt_ice_star_update(&tt, &y, 1e-6, &HeuristicConfig::default()).unwrap();
        let (b, _) = tt_ice_update(&tt, &y, 1e-6).unwrap();
        assert!(rep.skipped);
        assert_eq!(rep.obs_used, 0);
        assert_eq!(a.ranks(), tt.ranks());
        assert_eq!(a.ranks(), b.ranks());
        assert!((a.coefficients() - b.coefficients()).amax() < 1e-12);
        assert_eq!(a.cores()[..3], tt.cores()[..3]);
    }

    #[test]
    fn full_occupancy_blocks_expansion() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        // first core 4 x 4: full rank after the first batch
        let tt = tt_svd(&random_batch(&[4, 3, 2, 6], &mut rng), 0.0).unwrap();
        assert_eq!(crate::tt::occupancy(&tt.cores()[0]), 1.0);
        let cfg = HeuristicConfig {
            occupancy_threshold: 1.0,
            skip_statistic: SkipStatistic::FullBatch,
            ..Default::default()
        };
        let y = inc(random_batch(&[4, 3, 2, 2], &mut rng), 1);
        let (out, rep) = tt_ice_star_update(&tt, &y, 0.01, &cfg).unwrap();
        assert!(rep.occupied_modes.contains(&0));
        assert_eq!(out.cores()[0], tt.cores()[0]);
    }

    #[test]
    fn subselected_update_meets_batch_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let tt = tt_svd(&random_batch(&[5, 6, 7, 2], &mut rng), 1e-12).unwrap();
        let cfg = HeuristicConfig {
            occupancy_threshold: 1.0,
            skip_statistic: SkipStatistic::FullBatch,
            ..Default::default()
        };
        for k in 0..5 {
            let spanned = in_span(&tt, 3, &mut rng);
            let fresh = random_batch(&[5, 6, 7, 2], &mut rng);
            let y = inc(crate::tensor::stack_last(&[spanned, fresh]).unwrap(), k + 1);
            let (out, rep) = tt_ice_star_update(&tt, &y, 0.1, &cfg).unwrap();
            assert_eq!(rep.obs_used, 2);
            let got = out.reconstruct(Some(2..7)).unwrap();
            let err: f64 = got
                .data()
                .iter()
                .zip(y.tensor.data())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt()
                / y.tensor.frobenius_norm();
            assert!(err <= 0.1 + 1e-9, "{err}");
            assert!(err <= rep.batch_rel_error_estimate + 1e-9);
            assert!(rep.eps_upd.unwrap() >= 0.1);
        }
    }

    #[test]
    fn rejects_bad_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let tt = base_train(&mut rng);
        let y = inc(random_batch(&[4, 5, 6, 1], &mut rng), 1);
        for tau in [0.0, 1.5, f64::NAN] {
            let cfg = HeuristicConfig {
                occupancy_threshold: tau,
                ..Default::default()
            };
            assert!(tt_ice_star_update(&tt, &y, 0.1, &cfg).is_err());
        }
    }
}
