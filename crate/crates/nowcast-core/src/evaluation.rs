//! Skill scores, the recursive feedback-loop forecaster, and per-lead-time
//! aggregation over a test set.
//!
//! Categorical scores come from pooled contingency counts against a rain /
//! no-rain threshold; continuous scores pool pixels across samples. All
//! scores are computed on physical rates (mm/h) after the inverse transform.
//! Undefined ratios (zero denominators) surface as explicit `None` markers,
//! never NaN.

use std::fmt::Write as _;

use crate::baselines::{BmForecaster, LrModel, RfModel};
use crate::error::{Error, Result};
use crate::grid::{inverse_transform, sample_to_tensors, Sample};
use crate::models::{Forecaster, Model};
use crate::nn::Checkpoint;
use crate::tensor::Tensor;

// ---------------------------------------------------------------------------
// Contingency table and categorical scores.
// ---------------------------------------------------------------------------

/// Pixel counts of hits (both wet), false alarms (forecast wet, observed
/// dry), misses (forecast dry, observed wet), and correct negatives.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ContingencyTable {
    pub hits: u64,
    pub false_alarms: u64,
    pub misses: u64,
    pub correct_negatives: u64,
}

impl ContingencyTable {
    pub fn total(&self) -> u64 {
        self.hits + self.false_alarms + self.misses + self.correct_negatives
    }

    pub fn add(&mut self, other: &ContingencyTable) {
        self.hits += other.hits;
        self.false_alarms += other.false_alarms;
        self.misses += other.misses;
        self.correct_negatives += other.correct_negatives;
    }
}

/// Counts one forecast/observation frame pair against a wet threshold
/// (a pixel is "wet" when its rate is >= threshold).
pub fn contingency(pred: &[f64], obs: &[f64], threshold: f64) -> Result<ContingencyTable> {
    if pred.len() != obs.len() {
        return Err(Error::Dim(format!(
            "frame lengths differ: {} vs {}",
            pred.len(),
            obs.len()
        )));
    }
    if !(threshold > 0.0) {
        return Err(Error::Config("threshold must be positive".into()));
    }
    let mut t = ContingencyTable::default();
    for (&p, &o) in pred.iter().zip(obs.iter()) {
        match (p >= threshold, o >= threshold) {
            (true, true) => t.hits += 1,
            (true, false) => t.false_alarms += 1,
            (false, true) => t.misses += 1,
            (false, false) => t.correct_negatives += 1,
        }
    }
    Ok(t)
}

/// POD, FAR, HSS, ACC. `None` marks an undefined ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CategoricalScores {
    pub pod: Option<f64>,
    pub far: Option<f64>,
    pub hss: Option<f64>,
    pub acc: Option<f64>,
}

pub fn categorical_scores(t: &ContingencyTable) -> CategoricalScores {
    let (h, f, m, z) = (
        t.hits as f64,
        t.false_alarms as f64,
        t.misses as f64,
        t.correct_negatives as f64,
    );
    let n = h + f + m + z;
    let ratio = |num: f64, den: f64| (den > 0.0).then(|| num / den);
    CategoricalScores {
        pod: ratio(h, h + m),
        far: ratio(f, h + f),
        hss: ratio(2.0 * (h * z - f * m), (h + m) * (m + z) + (h + f) * (f + z)),
        acc: ratio(h + z, n),
    }
}

// ---------------------------------------------------------------------------
// Continuous scores.
// ---------------------------------------------------------------------------

/// MSE, bias ratio, coefficient of determination, Pearson correlation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuousScores {
    pub mse: f64,
    pub bias: Option<f64>,
    pub r2: Option<f64>,
    pub cc: Option<f64>,
}

/// Streaming accumulator over (estimate, observation) pairs, so pooled
/// scores never materialize the full pixel vectors.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ScoreAccumulator {
    pub n: u64,
    sum_est: f64,
    sum_obs: f64,
    sum_est_sq: f64,
    sum_obs_sq: f64,
    sum_cross: f64,
    sum_sq_err: f64,
}

impl ScoreAccumulator {
    pub fn push(&mut self, est: f64, obs: f64) {
        self.n += 1;
        self.sum_est += est;
        self.sum_obs += obs;
        self.sum_est_sq += est * est;
        self.sum_obs_sq += obs * obs;
        self.sum_cross += est * obs;
        let d = obs - est;
        self.sum_sq_err += d * d;
    }

    pub fn merge(&mut self, other: &ScoreAccumulator) {
        self.n += other.n;
        self.sum_est += other.sum_est;
        self.sum_obs += other.sum_obs;
        self.sum_est_sq += other.sum_est_sq;
        self.sum_obs_sq += other.sum_obs_sq;
        self.sum_cross += other.sum_cross;
        self.sum_sq_err += other.sum_sq_err;
    }

    /// Finalizes the scores. `appendix_literal` switches BIAS to the printed
    /// difference quotient `sum(obs - est)/sum(obs)` and the R^2 denominator
    /// to deviations from the estimate mean; the default follows the ratio
    /// definition (optimum 1, >1 overestimation) and the standard R^2.
    pub fn scores(&self, appendix_literal: bool) -> ContinuousScores {
        let n = self.n as f64;
        let mse = self.sum_sq_err / n;
        let bias = if self.sum_obs != 0.0 {
            Some(if appendix_literal {
                (self.sum_obs - self.sum_est) / self.sum_obs
            } else {
                self.sum_est / self.sum_obs
            })
        } else {
            None
        };
        let obs_var_n = self.sum_obs_sq - self.sum_obs * self.sum_obs / n;
        let est_var_n = self.sum_est_sq - self.sum_est * self.sum_est / n;
        let r2_denom = if appendix_literal {
            // Deviations of the observations from the *estimate* mean.
            let est_mean = self.sum_est / n;
            self.sum_obs_sq - 2.0 * est_mean * self.sum_obs + n * est_mean * est_mean
        } else {
            obs_var_n
        };
        let r2 = (r2_denom > 0.0).then(|| 1.0 - self.sum_sq_err / r2_denom);
        let cc = (obs_var_n > 0.0 && est_var_n > 0.0).then(|| {
            (self.sum_cross - self.sum_est * self.sum_obs / n) / (obs_var_n * est_var_n).sqrt()
        });
        ContinuousScores { mse, bias, r2, cc }
    }
}

/// Direct evaluation over full vectors.
pub fn continuous_scores(est: &[f64], obs: &[f64], appendix_literal: bool) -> Result<ContinuousScores> {
    if est.len() != obs.len() {
        return Err(Error::Dim(format!(
            "score vectors differ in length: {} vs {}",
            est.len(),
            obs.len()
        )));
    }
    if est.len() < 2 {
        return Err(Error::Data("need at least two pairs to score".into()));
    }
    let mut acc = ScoreAccumulator::default();
    for (&e, &o) in est.iter().zip(obs.iter()) {
        acc.push(e, o);
    }
    Ok(acc.scores(appendix_literal))
}

// ---------------------------------------------------------------------------
// Feedback loop.
// ---------------------------------------------------------------------------

/// Feedback-loop configuration: each cycle re-feeds the model the most
/// recent `n_in` frames of observations plus its own predictions, extending
/// the lead time by `n_out` steps per cycle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FeedbackConfig {
    pub cycles: usize,
}

impl Default for FeedbackConfig {
    fn default() -> Self {
        Self { cycles: 3 }
    }
}

impl FeedbackConfig {
    pub fn validate(&self) -> Result<()> {
        if self.cycles == 0 {
            return Err(Error::Config("cycles must be >= 1".into()));
        }
        Ok(())
    }
}

/// Runs the model recursively on its own predictions: cycle 1 consumes `x`,
/// each later cycle consumes the trailing `n_in` frames of the concatenated
/// history, and the output stacks all `cycles * n_out` predicted frames in
/// lead order.
pub fn feedback_forecast(
    model: &mut dyn Forecaster,
    x: &Tensor,
    fc: &FeedbackConfig,
) -> Result<Tensor> {
    fc.validate()?;
    let n_in = model.input_len();
    let n_out = model.output_len();
    let [_, t, h, w, _] = x.dims5()?;
    if t != n_in {
        return Err(Error::Dim(format!(
            "feedback input has {} frames, model consumes {}",
            t, n_in
        )));
    }
    let mut history: Vec<Tensor> = (0..n_in).map(|i| x.time_slice(i)).collect::<Result<_>>()?;
    let mut predictions = Vec::with_capacity(fc.cycles * n_out);
    for _ in 0..fc.cycles {
        let window = Tensor::stack_time(&history[history.len() - n_in..])?;
        let pred = model.forecast(&window)?;
        let [pb, pt, ph, pw, pc] = pred.dims5()?;
        if (pb, pt, ph, pw, pc) != (1, n_out, h, w, 1) {
            return Err(Error::Contract(format!(
                "model emitted {:?}, expected [1, {}, {}, {}, 1]",
                pred.shape(),
                n_out,
                h,
                w
            )));
        }
        for k in 0..n_out {
            let frame = pred.time_slice(k)?;
            history.push(frame.clone());
            predictions.push(frame);
        }
    }
    Tensor::stack_time(&predictions)
}

// ---------------------------------------------------------------------------
// Test-set evaluation.
// ---------------------------------------------------------------------------

/// Scores at one lead time.
#[derive(Debug, Clone, PartialEq)]
pub struct LeadMetrics {
    pub lead_minutes: u32,
    pub mse: f64,
    pub bias: Option<f64>,
    pub r2: Option<f64>,
    pub cc: Option<f64>,
    pub pod: Option<f64>,
    pub far: Option<f64>,
    pub hss: Option<f64>,
    pub acc: Option<f64>,
    pub n_samples: usize,
}

/// Per-lead-time metrics pooled over a sample set.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricReport {
    pub leads: Vec<LeadMetrics>,
    /// Samples skipped because their targets were too short for the
    /// requested lead range.
    pub skipped: usize,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{:e}", x)).unwrap_or_else(|| "NA".into())
}

impl MetricReport {
    /// CSV layout: `lead_minutes,mse,bias,r2,cc,pod,far,hss,acc,n_samples`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("lead_minutes,mse,bias,r2,cc,pod,far,hss,acc,n_samples\n");
        for l in &self.leads {
            let _ = writeln!(
                out,
                "{},{:e},{},{},{},{},{},{},{},{}",
                l.lead_minutes,
                l.mse,
                fmt_opt(l.bias),
                fmt_opt(l.r2),
                fmt_opt(l.cc),
                fmt_opt(l.pod),
                fmt_opt(l.far),
                fmt_opt(l.hss),
                fmt_opt(l.acc),
                l.n_samples
            );
        }
        out
    }
}

/// Per-sample scores at one lead (the distributional view of the pooled
/// report).
#[derive(Debug, Clone, PartialEq)]
pub struct SampleLeadScore {
    pub sample: usize,
    pub lead_minutes: u32,
    pub continuous: ContinuousScores,
    pub categorical: CategoricalScores,
}

pub fn per_sample_csv(rows: &[SampleLeadScore]) -> String {
    let mut out = String::from("sample,lead_minutes,mse,bias,r2,cc,pod,far,hss,acc\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:e},{},{},{},{},{},{},{}",
            r.sample,
            r.lead_minutes,
            r.continuous.mse,
            fmt_opt(r.continuous.bias),
            fmt_opt(r.continuous.r2),
            fmt_opt(r.continuous.cc),
            fmt_opt(r.categorical.pod),
            fmt_opt(r.categorical.far),
            fmt_opt(r.categorical.hss),
            fmt_opt(r.categorical.acc)
        );
    }
    out
}

/// Full evaluation output: pooled per-lead metrics plus the per-sample
/// distribution, and optionally the predicted frames for dumping.
#[derive(Debug, Clone, Default)]
pub struct EvalOutput {
    pub pooled: MetricReport,
    pub per_sample: Vec<SampleLeadScore>,
    pub threshold: f64,
}

/// Evaluation options. `dt_seconds` labels the lead axis (1800 s steps by
/// default); `appendix_literal` switches BIAS/R^2 to the printed formulas.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalConfig {
    pub threshold: f64,
    pub feedback: FeedbackConfig,
    pub dt_seconds: u32,
    pub appendix_literal: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            threshold: 0.1,
            feedback: FeedbackConfig { cycles: 1 },
            dt_seconds: crate::grid::DEFAULT_DT_SECONDS,
            appendix_literal: false,
        }
    }
}

/// Evaluates a forecaster over samples: runs the feedback loop per sample,
/// converts predictions and targets to physical rates, and aggregates all
/// eight scores per lead time. Samples whose targets do not reach the
/// requested lead are skipped and counted.
pub fn evaluate(
    model: &mut dyn Forecaster,
    samples: &[Sample],
    cfg: &EvalConfig,
) -> Result<EvalOutput> {
    if samples.is_empty() {
        return Err(Error::Data("no samples to evaluate".into()));
    }
    if !(cfg.threshold > 0.0) {
        return Err(Error::Config("threshold must be positive".into()));
    }
    cfg.feedback.validate()?;
    let n_out = model.output_len();
    let leads = cfg.feedback.cycles * n_out;
    let mut pooled_cont = vec![ScoreAccumulator::default(); leads];
    let mut pooled_cat = vec![ContingencyTable::default(); leads];
    let mut n_samples = vec![0usize; leads];
    let mut per_sample = Vec::new();
    let mut skipped = 0usize;

    for (si, sample) in samples.iter().enumerate() {
        if sample.target.len() < leads {
            skipped += 1;
            continue;
        }
        let (x, _) = sample_to_tensors(sample)?;
        let pred = feedback_forecast(model, &x, &cfg.feedback)?;
        let [_, _, h, w, _] = pred.dims5()?;
        let pixels = h * w;
        for lead in 0..leads {
            // Physical space on both sides.
            let pred_phys: Vec<f64> = pred.data()[lead * pixels..(lead + 1) * pixels]
                .iter()
                .map(|&v| inverse_transform(v))
                .collect();
            let obs_phys = sample.target[lead].values();
            let mut acc = ScoreAccumulator::default();
            for (&e, &o) in pred_phys.iter().zip(obs_phys.iter()) {
                acc.push(e, o);
            }
            pooled_cont[lead].merge(&acc);
            let table = contingency(&pred_phys, obs_phys, cfg.threshold)?;
            pooled_cat[lead].add(&table);
            n_samples[lead] += 1;
            per_sample.push(SampleLeadScore {
                sample: si,
                lead_minutes: lead_minutes(lead, cfg.dt_seconds),
                continuous: acc.scores(cfg.appendix_literal),
                categorical: categorical_scores(&table),
            });
        }
    }
    if n_samples.iter().all(|&n| n == 0) {
        return Err(Error::Data(format!(
            "every sample was skipped: targets shorter than {} leads",
            leads
        )));
    }
    let mut report = MetricReport {
        leads: Vec::with_capacity(leads),
        skipped,
    };
    for lead in 0..leads {
        let cont = pooled_cont[lead].scores(cfg.appendix_literal);
        let cat = categorical_scores(&pooled_cat[lead]);
        report.leads.push(LeadMetrics {
            lead_minutes: lead_minutes(lead, cfg.dt_seconds),
            mse: cont.mse,
            bias: cont.bias,
            r2: cont.r2,
            cc: cont.cc,
            pod: cat.pod,
            far: cat.far,
            hss: cat.hss,
            acc: cat.acc,
            n_samples: n_samples[lead],
        });
    }
    Ok(EvalOutput {
        pooled: report,
        per_sample,
        threshold: cfg.threshold,
    })
}

fn lead_minutes(lead_index: usize, dt_seconds: u32) -> u32 {
    ((lead_index as u32 + 1) * dt_seconds) / 60
}

// ---------------------------------------------------------------------------
// Forecaster loading and PGM dumps (the CLI surface of this module).
// ---------------------------------------------------------------------------

/// Any serializable forecaster, dispatched by the checkpoint kind tag.
pub enum AnyForecaster {
    Network(Box<Model>),
    Persistence(BmForecaster),
    Linear(LrModel),
    Forest(RfModel),
}

impl AnyForecaster {
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        match ck.kind.as_str() {
            "BM" => {
                let n_in = ck.config_value("n_in").and_then(|v| v.parse().ok()).unwrap_or(9);
                let n_out = ck.config_value("n_out").and_then(|v| v.parse().ok()).unwrap_or(3);
                Ok(AnyForecaster::Persistence(BmForecaster { n_in, n_out }))
            }
            "LR" => Ok(AnyForecaster::Linear(LrModel::from_checkpoint(ck)?)),
            "RF" => Ok(AnyForecaster::Forest(RfModel::from_checkpoint(ck)?)),
            _ => Ok(AnyForecaster::Network(Box::new(Model::from_checkpoint(ck)?))),
        }
    }

    pub fn kind_tag(&self) -> String {
        match self {
            AnyForecaster::Network(m) => m.kind().tag().to_string(),
            AnyForecaster::Persistence(_) => "BM".into(),
            AnyForecaster::Linear(_) => "LR".into(),
            AnyForecaster::Forest(_) => "RF".into(),
        }
    }

    pub fn as_forecaster(&mut self) -> &mut dyn Forecaster {
        match self {
            AnyForecaster::Network(m) => m.as_mut(),
            AnyForecaster::Persistence(b) => b,
            AnyForecaster::Linear(l) => l,
            AnyForecaster::Forest(r) => r,
        }
    }
}

/// Checkpoint for the parameter-free persistence benchmark.
pub fn bm_checkpoint(n_in: usize, n_out: usize) -> Checkpoint {
    Checkpoint::new("BM", format!("n_in={}\nn_out={}\n", n_in, n_out))
}

/// Renders one physical frame as a binary (P5) PGM with the fixed scaling
/// `round(255 * min(rate, 20) / 20)`.
pub fn frame_to_pgm(values: &[f64], height: usize, width: usize) -> Result<Vec<u8>> {
    if values.len() != height * width {
        return Err(Error::Dim(format!(
            "frame has {} values for {}x{} grid",
            values.len(),
            height,
            width
        )));
    }
    let mut out = format!("P5\n{} {}\n255\n", width, height).into_bytes();
    out.extend(values.iter().map(|&v| (255.0 * v.min(20.0) / 20.0).round() as u8));
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridFrame;

    #[test]
    fn contingency_enumerated_two_by_two() {
        // Hand enumeration: pred [[1,0],[1,0]], obs [[1,1],[0,0]], thr 0.5:
        // pixel (0,0) hit, (0,1) miss, (1,0) false alarm, (1,1) correct neg.
        let t = contingency(&[1.0, 0.0, 1.0, 0.0], &[1.0, 1.0, 0.0, 0.0], 0.5).unwrap();
        assert_eq!(
            t,
            ContingencyTable {
                hits: 1,
                false_alarms: 1,
                misses: 1,
                correct_negatives: 1
            }
        );
    }

    #[test]
    fn contingency_partitions_every_pixel() {
        let pred = [0.0, 0.2, 3.0, 0.05, 1.0, 0.0];
        let obs = [0.1, 0.0, 2.0, 0.2, 0.0, 0.0];
        let t = contingency(&pred, &obs, 0.1).unwrap();
        assert_eq!(t.total(), 6);
    }

    #[test]
    fn perfect_wet_field_scores() {
        let ones = [1.0; 8];
        let t = contingency(&ones, &ones, 0.5).unwrap();
        let s = categorical_scores(&t);
        assert_eq!(s.pod, Some(1.0));
        // F = 0 with H > 0: FAR defined and zero.
        assert_eq!(s.far, Some(0.0));
        assert_eq!(s.acc, Some(1.0));
        // Degenerate all-hit table: HSS denominator is zero.
        assert_eq!(s.hss, None);
    }

    #[test]
    fn all_dry_field_is_all_correct_negatives() {
        let zeros = [0.0; 10];
        let t = contingency(&zeros, &zeros, 0.1).unwrap();
        assert_eq!(t.correct_negatives, 10);
        let s = categorical_scores(&t);
        assert_eq!(s.acc, Some(1.0));
        assert_eq!(s.pod, None);
        assert_eq!(s.far, None);
    }

    #[test]
    fn worked_table_matches_formula_evaluation() {
        let t = ContingencyTable {
            hits: 40,
            misses: 10,
            false_alarms: 20,
            correct_negatives: 30,
        };
        let s = categorical_scores(&t);
        assert!((s.pod.unwrap() - 0.8).abs() < 1e-15);
        assert!((s.far.unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!((s.acc.unwrap() - 0.7).abs() < 1e-15);
        assert!((s.hss.unwrap() - 0.4).abs() < 1e-15);
    }

    #[test]
    fn perfect_forecast_scores_are_fixed_points() {
        let t = ContingencyTable {
            hits: 25,
            misses: 0,
            false_alarms: 0,
            correct_negatives: 75,
        };
        let s = categorical_scores(&t);
        assert_eq!(s.pod, Some(1.0));
        assert_eq!(s.far, Some(0.0));
        assert_eq!(s.hss, Some(1.0));
        assert_eq!(s.acc, Some(1.0));
    }

    #[test]
    fn undefined_markers_for_zero_denominators() {
        let t = ContingencyTable {
            hits: 0,
            false_alarms: 0,
            misses: 5,
            correct_negatives: 5,
        };
        let s = categorical_scores(&t);
        assert_eq!(s.far, None);
        assert_eq!(s.pod, Some(0.0));
    }

    #[test]
    fn continuous_identity_case() {
        let obs = [0.5, 1.0, 2.0, 4.0];
        let s = continuous_scores(&obs, &obs, false).unwrap();
        assert_eq!(s.mse, 0.0);
        assert!((s.bias.unwrap() - 1.0).abs() < 1e-15);
        assert!((s.cc.unwrap() - 1.0).abs() < 1e-12);
        assert!((s.r2.unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn continuous_doubled_estimate() {
        let obs = [1.0, 2.0, 3.0, 4.0];
        let est: Vec<f64> = obs.iter().map(|v| 2.0 * v).collect();
        let s = continuous_scores(&est, &obs, false).unwrap();
        assert!((s.bias.unwrap() - 2.0).abs() < 1e-15);
        assert!((s.cc.unwrap() - 1.0).abs() < 1e-12);
        // R^2 = 1 - sum(obs^2)/sum((obs-mean)^2) for est = 2*obs.
        let mean = 2.5;
        let denom: f64 = obs.iter().map(|o| (o - mean) * (o - mean)).sum();
        let num: f64 = obs.iter().map(|o| o * o).sum();
        assert!((s.r2.unwrap() - (1.0 - num / denom)).abs() < 1e-12);
        assert!(s.r2.unwrap() < 0.0);
    }

    #[test]
    fn constant_estimate_at_obs_mean_gives_zero_r2() {
        let obs = [1.0, 2.0, 3.0];
        let est = [2.0, 2.0, 2.0];
        let s = continuous_scores(&est, &obs, false).unwrap();
        assert!(s.r2.unwrap().abs() < 1e-15);
        // Zero estimate variance: CC undefined.
        assert_eq!(s.cc, None);
    }

    #[test]
    fn zero_variance_obs_yields_undefined_markers() {
        let obs = [1.0, 1.0, 1.0];
        let est = [0.5, 1.0, 1.5];
        let s = continuous_scores(&est, &obs, false).unwrap();
        assert_eq!(s.cc, None);
        assert_eq!(s.r2, None);
        // Sum of observations nonzero: bias defined.
        assert!((s.bias.unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn appendix_literal_bias_is_difference_quotient() {
        let obs = [2.0, 2.0, 4.0];
        let est = [1.0, 2.0, 3.0];
        let s = continuous_scores(&est, &obs, true).unwrap();
        assert!((s.bias.unwrap() - (8.0 - 6.0) / 8.0).abs() < 1e-15);
        let s2 = continuous_scores(&est, &obs, false).unwrap();
        assert!((s2.bias.unwrap() - 6.0 / 8.0).abs() < 1e-15);
    }

    fn ramp_sample(pixels: usize) -> Sample {
        // 12 frames of a rising constant field on a pixels x 1 grid.
        let frame = |v: f64, i: i64| GridFrame::new(vec![v; pixels], pixels, 1, i * 1800).unwrap();
        Sample {
            input: (0..9).map(|i| frame(i as f64 * 0.1, i as i64)).collect(),
            target: (9..12).map(|i| frame(i as f64 * 0.1, i as i64)).collect(),
        }
    }

    #[test]
    fn feedback_single_cycle_equals_plain_forward() {
        let sample = ramp_sample(4);
        let (x, _) = sample_to_tensors(&sample).unwrap();
        let mut bm = BmForecaster::default();
        let direct = bm.forecast(&x).unwrap();
        let looped = feedback_forecast(&mut bm, &x, &FeedbackConfig { cycles: 1 }).unwrap();
        assert_eq!(direct, looped);
    }

    #[test]
    fn feedback_bm_emits_identical_frames() {
        let sample = ramp_sample(4);
        let (x, _) = sample_to_tensors(&sample).unwrap();
        let mut bm = BmForecaster::default();
        let out = feedback_forecast(&mut bm, &x, &FeedbackConfig { cycles: 3 }).unwrap();
        assert_eq!(out.shape()[1], 9);
        let last = x.time_slice(8).unwrap();
        for t in 0..9 {
            assert_eq!(out.time_slice(t).unwrap(), last);
        }
    }

    /// A forecaster that predicts frame values equal to a per-call counter,
    /// for tracing which frames enter each cycle.
    struct Labeler {
        calls: usize,
        seen_windows: Vec<Vec<f64>>,
    }

    impl Forecaster for Labeler {
        fn input_len(&self) -> usize {
            9
        }
        fn output_len(&self) -> usize {
            3
        }
        fn forecast(&mut self, x: &Tensor) -> Result<Tensor> {
            let [_, t, h, w, _] = x.dims5()?;
            // Record the first pixel of every input frame.
            let pixels = h * w;
            self.seen_windows
                .push((0..t).map(|k| x.data()[k * pixels]).collect());
            self.calls += 1;
            let v = 100.0 * self.calls as f64;
            Ok(Tensor::from_elem(vec![1, 3, h, w, 1], v))
        }
    }

    #[test]
    fn feedback_window_slides_over_history() {
        // Label input frames 1..=9 by value; cycle-2 input must be frames
        // 4..9 followed by the three cycle-1 predictions.
        let frames: Vec<Tensor> = (1..=9)
            .map(|i| Tensor::from_elem(vec![1, 1, 2, 2, 1], i as f64))
            .collect();
        let x = Tensor::stack_time(&frames).unwrap();
        let mut labeler = Labeler {
            calls: 0,
            seen_windows: Vec::new(),
        };
        feedback_forecast(&mut labeler, &x, &FeedbackConfig { cycles: 3 }).unwrap();
        assert_eq!(labeler.seen_windows.len(), 3);
        assert_eq!(
            labeler.seen_windows[1],
            vec![4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 100.0, 100.0, 100.0]
        );
        assert_eq!(
            labeler.seen_windows[2],
            vec![7.0, 8.0, 9.0, 100.0, 100.0, 100.0, 200.0, 200.0, 200.0]
        );
    }

    #[test]
    fn evaluate_bm_against_its_own_last_frame_is_perfect() {
        // Constant sequence: persistence is exact at every lead.
        let frame = |i: i64| GridFrame::new(vec![1.0; 4], 2, 2, i * 1800).unwrap();
        let sample = Sample {
            input: (0..9).map(frame).collect(),
            target: (9..12).map(frame).collect(),
        };
        let mut bm = BmForecaster::default();
        let out = evaluate(&mut bm, &[sample], &EvalConfig::default()).unwrap();
        assert_eq!(out.pooled.leads.len(), 3);
        for l in &out.pooled.leads {
            assert!(l.mse < 1e-12);
            assert_eq!(l.pod, Some(1.0));
            assert_eq!(l.acc, Some(1.0));
        }
    }

    #[test]
    fn evaluate_lead_axis_and_labels() {
        let sample = {
            let frame = |i: i64| GridFrame::new(vec![0.5; 4], 2, 2, i * 1800).unwrap();
            Sample {
                input: (0..9).map(frame).collect(),
                target: (9..18).map(frame).collect(),
            }
        };
        let mut bm = BmForecaster::default();
        let cfg = EvalConfig {
            feedback: FeedbackConfig { cycles: 3 },
            ..EvalConfig::default()
        };
        let out = evaluate(&mut bm, &[sample], &cfg).unwrap();
        assert_eq!(out.pooled.leads.len(), 9);
        let minutes: Vec<u32> = out.pooled.leads.iter().map(|l| l.lead_minutes).collect();
        assert_eq!(minutes, vec![30, 60, 90, 120, 150, 180, 210, 240, 270]);
    }

    #[test]
    fn evaluate_skips_short_samples_with_count() {
        let frame = |i: i64| GridFrame::new(vec![0.5; 4], 2, 2, i * 1800).unwrap();
        let long = Sample {
            input: (0..9).map(frame).collect(),
            target: (9..18).map(frame).collect(),
        };
        let short = Sample {
            input: (0..9).map(frame).collect(),
            target: (9..12).map(frame).collect(),
        };
        let mut bm = BmForecaster::default();
        let cfg = EvalConfig {
            feedback: FeedbackConfig { cycles: 3 },
            ..EvalConfig::default()
        };
        let out = evaluate(&mut bm, &[long, short], &cfg).unwrap();
        assert_eq!(out.pooled.skipped, 1);
        assert_eq!(out.pooled.leads[0].n_samples, 1);
    }

    #[test]
    fn pooled_contingency_is_additive_over_samples() {
        // Pooling tables then scoring equals scoring the pooled counts.
        let mut rng = crate::nn::RngState::new(3);
        let mut pooled = ContingencyTable::default();
        let mut frames = Vec::new();
        for _ in 0..10 {
            let pred: Vec<f64> = (0..16).map(|_| rng.uniform(0.0, 0.3)).collect();
            let obs: Vec<f64> = (0..16).map(|_| rng.uniform(0.0, 0.3)).collect();
            let t = contingency(&pred, &obs, 0.1).unwrap();
            pooled.add(&t);
            frames.push((pred, obs));
        }
        let mut joined_pred = Vec::new();
        let mut joined_obs = Vec::new();
        for (p, o) in &frames {
            joined_pred.extend_from_slice(p);
            joined_obs.extend_from_slice(o);
        }
        let direct = contingency(&joined_pred, &joined_obs, 0.1).unwrap();
        assert_eq!(pooled, direct);
    }

    #[test]
    fn pgm_scaling_and_header() {
        let bytes = frame_to_pgm(&[0.0, 10.0, 20.0, 40.0], 2, 2).unwrap();
        let header_end = bytes.windows(4).position(|w| w == b"255\n").unwrap() + 4;
        assert_eq!(&bytes[..3], b"P5\n");
        let pix = &bytes[header_end..];
        assert_eq!(pix, &[0u8, 128, 255, 255]);
    }

    #[test]
    fn cc_affine_invariance_and_bias_equivariance() {
        let obs = [0.3, 1.2, 0.7, 2.5, 0.1];
        let est = [0.5, 1.0, 0.9, 2.0, 0.3];
        let s = continuous_scores(&est, &obs, false).unwrap();
        let est_scaled: Vec<f64> = est.iter().map(|v| 3.0 * v + 2.0).collect();
        let s2 = continuous_scores(&est_scaled, &obs, false).unwrap();
        assert!((s.cc.unwrap() - s2.cc.unwrap()).abs() < 1e-12);
        let est_scaled_only: Vec<f64> = est.iter().map(|v| 3.0 * v).collect();
        let s3 = continuous_scores(&est_scaled_only, &obs, false).unwrap();
        assert!((s3.bias.unwrap() - 3.0 * s.bias.unwrap()).abs() < 1e-12);
        // Symmetry of CC.
        let s4 = continuous_scores(&obs, &est, false).unwrap();
        assert!((s.cc.unwrap() - s4.cc.unwrap()).abs() < 1e-12);
    }

    #[test]
    fn hss_boundary_identities() {
        // HSS = 1 iff F = M = 0 (H, Z > 0).
        let perfect = ContingencyTable {
            hits: 3,
            misses: 0,
            false_alarms: 0,
            correct_negatives: 7,
        };
        assert_eq!(categorical_scores(&perfect).hss, Some(1.0));
        // HSS = 0 when HZ = FM.
        let chance = ContingencyTable {
            hits: 2,
            misses: 4,
            false_alarms: 3,
            correct_negatives: 6,
        };
        assert_eq!(categorical_scores(&chance).hss, Some(0.0));
    }
}
