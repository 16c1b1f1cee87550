//! Detection metrics: equal error rate, DET operating points, the tandem
//! detection cost function with a fixed ASV operating point, and the paired
//! two-tailed t-test.
//!
//! Scores are oriented so that higher means "accept" (genuine, target). A trial
//! whose score equals the threshold is accepted.

use std::fmt;
use std::io::{BufRead, Write};
use std::path::Path;
use std::str::FromStr;

use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::codec;
use crate::error::{Error, Result};

/// One operating point of a score threshold sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub far: f64,
    pub frr: f64,
    pub threshold: f64,
}

fn check_scores(xs: &[f64], what: &str) -> Result<()> {
    if xs.is_empty() {
        return Err(Error::Data(format!("no {what} scores")));
    }
    if let Some(v) = xs.iter().find(|v| !v.is_finite()) {
        return Err(Error::Data(format!("non-finite {what} score {v}")));
    }
    Ok(())
}

fn sorted(xs: &[f64]) -> Vec<f64> {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Candidate thresholds: the smallest score (accept everything), the midpoints
/// between consecutive distinct scores, and the next float above the largest
/// score (reject everything).
pub fn sweep_thresholds(scores: &[f64]) -> Vec<f64> {
    let mut s = sorted(scores);
    s.dedup();
    let Some(&first) = s.first() else {
        return Vec::new();
    };
    let mut t = Vec::with_capacity(s.len() + 1);
    t.push(first);
    t.extend(s.windows(2).map(|p| p[0] + (p[1] - p[0]) / 2.0));
    t.push(s.last().expect("nonempty").next_up());
    t
}

/// Number of sorted values `≥ t`.
fn count_at_least(sorted: &[f64], t: f64) -> usize {
    sorted.len() - sorted.partition_point(|&v| v < t)
}

/// All operating points, thresholds ascending: FAR non-increasing, FRR
/// non-decreasing.
pub fn det_points(positive: &[f64], negative: &[f64]) -> Result<Vec<OperatingPoint>> {
    check_scores(positive, "positive")?;
    check_scores(negative, "negative")?;
    let (pos, neg) = (sorted(positive), sorted(negative));
    let pooled: Vec<f64> = pos.iter().chain(&neg).copied().collect();
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    Ok(sweep_thresholds(&pooled)
        .into_iter()
        .map(|t| OperatingPoint {
            far: count_at_least(&neg, t) as f64 / nn,
            frr: (pos.len() - count_at_least(&pos, t)) as f64 / np,
            threshold: t,
        })
        .collect())
}

/// Equal error rate and its threshold. The sweep stops at the first operating
/// point with FRR ≥ FAR; the rate and the threshold are interpolated linearly
/// between that point and its predecessor where FAR − FRR changes sign.
pub fn eer(positive: &[f64], negative: &[f64]) -> Result<(f64, f64)> {
    let pts = det_points(positive, negative)?;
    let i = pts
        .iter()
        .position(|p| p.frr >= p.far)
        .expect("the last point has FRR 1, FAR 0");
    let q = pts[i];
    if i == 0 || q.frr == q.far {
        return Ok((q.far, q.threshold));
    }
    let p = pts[i - 1];
    let (dp, dq) = (p.frr - p.far, q.frr - q.far);
    let lambda = -dp / (dq - dp);
    let rate = p.far + lambda * (q.far - p.far);
    let threshold = p.threshold + lambda * (q.threshold - p.threshold);
    Ok((rate, threshold))
}

/// Class of a scored trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TrialClass {
    Target,
    Nontarget,
    Spoof,
    Genuine,
    Playback,
}

impl TrialClass {
    pub fn as_str(self) -> &'static str {
        match self {
            TrialClass::Target => "target",
            TrialClass::Nontarget => "nontarget",
            TrialClass::Spoof => "spoof",
            TrialClass::Genuine => "genuine",
            TrialClass::Playback => "playback",
        }
    }
}

impl fmt::Display for TrialClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrialClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "target" => TrialClass::Target,
            "nontarget" => TrialClass::Nontarget,
            "spoof" => TrialClass::Spoof,
            "genuine" => TrialClass::Genuine,
            "playback" => TrialClass::Playback,
            other => return Err(Error::Parse(format!("unknown trial class {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial_id: String,
    pub class: TrialClass,
    pub cm_score: f64,
    pub asv_score: Option<f64>,
}

/// Scored trials, either CM-only (genuine/playback) or tandem
/// (target/nontarget/spoof with ASV scores).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrialScoreSet {
    pub records: Vec<TrialRecord>,
}

impl TrialScoreSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, trial_id: impl Into<String>, class: TrialClass, cm_score: f64, asv_score: Option<f64>) -> Result<()> {
        let trial_id = trial_id.into();
        if !cm_score.is_finite() || asv_score.is_some_and(|s| !s.is_finite()) {
            return Err(Error::Data(format!("trial {trial_id}: non-finite score")));
        }
        if trial_id.is_empty() || trial_id.contains(['\t', '\n']) {
            return Err(Error::Data(format!("invalid trial id {trial_id:?}")));
        }
        self.records.push(TrialRecord {
            trial_id,
            class,
            cm_score,
            asv_score,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn cm_scores(&self, class: TrialClass) -> Vec<f64> {
        self.records.iter().filter(|r| r.class == class).map(|r| r.cm_score).collect()
    }

    /// ASV scores of a class; an error if any record of that class lacks one.
    pub fn asv_scores(&self, class: TrialClass) -> Result<Vec<f64>> {
        self.records
            .iter()
            .filter(|r| r.class == class)
            .map(|r| {
                r.asv_score
                    .ok_or_else(|| Error::Data(format!("trial {} has no ASV score", r.trial_id)))
            })
            .collect()
    }

    fn require(&self, class: TrialClass) -> Result<()> {
        if self.records.iter().any(|r| r.class == class) {
            Ok(())
        } else {
            Err(Error::Data(format!("no {class} trials")))
        }
    }

    /// CM equal error rate of one accepted class against one rejected class.
    pub fn cm_eer(&self, positive: TrialClass, negative: TrialClass) -> Result<f64> {
        self.require(positive)?;
        self.require(negative)?;
        Ok(eer(&self.cm_scores(positive), &self.cm_scores(negative))?.0)
    }
}

/// Writes `trial-id<TAB>class<TAB>cm_score[<TAB>asv_score]` lines.
pub fn write_scores(set: &TrialScoreSet, path: impl AsRef<Path>) -> Result<()> {
    codec::write_atomic(path.as_ref(), |w| {
        for r in &set.records {
            write!(w, "{}\t{}\t{}", r.trial_id, r.class, r.cm_score)?;
            if let Some(a) = r.asv_score {
                write!(w, "\t{a}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    })
}

pub fn read_scores(path: impl AsRef<Path>) -> Result<TrialScoreSet> {
    let path = path.as_ref();
    let r = codec::open_read(path)?;
    let mut set = TrialScoreSet::new();
    for (n, line) in r.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let at = |m: String| Error::Parse(format!("{}:{}: {m}", path.display(), n + 1));
        let fields: Vec<&str> = line.split('\t').collect();
        if !(3..=4).contains(&fields.len()) {
            return Err(at(format!("expected 3 or 4 fields, got {}", fields.len())));
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|e| at(format!("bad score {s:?}: {e}")));
        let class = fields[1].parse().map_err(|e: Error| at(e.to_string()))?;
        let asv = fields.get(3).map(|s| num(s)).transpose()?;
        set.push(fields[0], class, num(fields[2])?, asv).map_err(|e| at(e.to_string()))?;
    }
    Ok(set)
}

/// Costs and priors of the tandem detection cost function.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TdcfParams {
    pub c_miss_asv: f64,
    pub c_fa_asv: f64,
    pub c_fa_cm: f64,
    pub c_miss_cm: f64,
    pub pi_tar: f64,
    pub pi_non: f64,
    pub pi_spoof: f64,
}

impl Default for TdcfParams {
    fn default() -> Self {
        Self {
            c_miss_asv: 1.0,
            c_fa_asv: 10.0,
            c_fa_cm: 10.0,
            c_miss_cm: 1.0,
            pi_tar: 0.9801,
            pi_non: 0.0099,
            pi_spoof: 0.0100,
        }
    }
}

impl TdcfParams {
    pub fn validate(&self) -> Result<()> {
        let costs = [self.c_miss_asv, self.c_fa_asv, self.c_fa_cm, self.c_miss_cm];
        if costs.iter().any(|c| !(*c > 0.0) || !c.is_finite()) {
            return Err(Error::Config(format!("t-DCF costs must be positive, got {costs:?}")));
        }
        let priors = [self.pi_tar, self.pi_non, self.pi_spoof];
        if priors.iter().any(|p| !(0.0..=1.0).contains(p)) || (priors.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("t-DCF priors must sum to 1, got {priors:?}")));
        }
        Ok(())
    }
}

/// The fixed ASV threshold: the EER threshold of target against nontarget
/// ASV scores.
pub fn asv_operating_point(scores: &TrialScoreSet) -> Result<f64> {
    scores.require(TrialClass::Target)?;
    scores.require(TrialClass::Nontarget)?;
    let tar = scores.asv_scores(TrialClass::Target)?;
    let non = scores.asv_scores(TrialClass::Nontarget)?;
    Ok(eer(&tar, &non)?.1)
}

/// One point of the t-DCF curve with its four error rates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TdcfPoint {
    pub cm_threshold: f64,
    pub tdcf: f64,
    /// Target passes the CM but is rejected by the ASV.
    pub p_a: f64,
    /// Nontarget accepted by both.
    pub p_b: f64,
    /// Spoof accepted by both.
    pub p_c: f64,
    /// Target rejected by the CM.
    pub p_d: f64,
}

/// Tandem cost at every CM threshold of the sweep over all CM scores. A trial
/// is accepted only if both the CM and the ASV accept it.
pub fn tdcf_curve(scores: &TrialScoreSet, p: &TdcfParams, asv_threshold: f64) -> Result<Vec<TdcfPoint>> {
    p.validate()?;
    if !asv_threshold.is_finite() {
        return Err(Error::Domain(format!("ASV threshold {asv_threshold}")));
    }
    for c in [TrialClass::Target, TrialClass::Nontarget, TrialClass::Spoof] {
        scores.require(c)?;
    }
    let pairs = |c: TrialClass| -> Result<Vec<(f64, f64)>> {
        let cm = scores.cm_scores(c);
        Ok(cm.into_iter().zip(scores.asv_scores(c)?).collect())
    };
    let (tar, non, spf) = (pairs(TrialClass::Target)?, pairs(TrialClass::Nontarget)?, pairs(TrialClass::Spoof)?);

    // CM scores of trials on each side of the ASV threshold, sorted
    let split = |v: &[(f64, f64)]| -> (Vec<f64>, Vec<f64>) {
        let acc = sorted(&v.iter().filter(|x| x.1 >= asv_threshold).map(|x| x.0).collect::<Vec<_>>());
        let rej = sorted(&v.iter().filter(|x| x.1 < asv_threshold).map(|x| x.0).collect::<Vec<_>>());
        (acc, rej)
    };
    let (tar_acc, tar_rej) = split(&tar);
    let (non_acc, _) = split(&non);
    let (spf_acc, _) = split(&spf);
    let (nt, nn, ns) = (tar.len() as f64, non.len() as f64, spf.len() as f64);

    let pooled: Vec<f64> = scores
        .records
        .iter()
        .filter(|r| matches!(r.class, TrialClass::Target | TrialClass::Nontarget | TrialClass::Spoof))
        .map(|r| r.cm_score)
        .collect();
    Ok(sweep_thresholds(&pooled)
        .into_iter()
        .map(|t| {
            let p_a = count_at_least(&tar_rej, t) as f64 / nt;
            let p_b = count_at_least(&non_acc, t) as f64 / nn;
            let p_c = count_at_least(&spf_acc, t) as f64 / ns;
            let p_d = (tar.len() - count_at_least(&tar_acc, t) - count_at_least(&tar_rej, t)) as f64 / nt;
            let tdcf = p.c_miss_asv * p.pi_tar * p_a
                + p.c_fa_asv * p.pi_non * p_b
                + p.c_fa_cm * p.pi_spoof * p_c
                + p.c_miss_cm * p.pi_tar * p_d;
            TdcfPoint {
                cm_threshold: t,
                tdcf,
                p_a,
                p_b,
                p_c,
                p_d,
            }
        })
        .collect())
}

/// Minimum of the t-DCF curve over CM thresholds.
pub fn min_tdcf(scores: &TrialScoreSet, p: &TdcfParams, asv_threshold: f64) -> Result<f64> {
    let curve = tdcf_curve(scores, p, asv_threshold)?;
    Ok(curve.iter().map(|q| q.tdcf).fold(f64::INFINITY, f64::min))
}

/// Paired two-tailed t-test on `a − b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    pub df: usize,
}

/// Classical paired t-test. Identical sequences give `t = 0, p = 1`; constant
/// nonzero differences give an infinite statistic with `p = 0`.
pub fn paired_ttest(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() != b.len() {
        return Err(Error::DimMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    if a.len() < 2 {
        return Err(Error::Data(format!("a paired t-test needs at least 2 pairs, got {}", a.len())));
    }
    let d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite paired difference".into()));
    }
    let n = d.len() as f64;
    let df = d.len() - 1;
    let mean = d.iter().sum::<f64>() / n;
    let var = d.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var == 0.0 {
        return Ok(if mean == 0.0 {
            TTest { t: 0.0, p: 1.0, df }
        } else {
            TTest {
                t: mean.signum() * f64::INFINITY,
                p: 0.0,
                df,
            }
        });
    }
    let t = mean / (var / n).sqrt();
    let dist = StudentsT::new(0.0, 1.0, df as f64).map_err(|e| Error::Numeric(format!("t distribution: {e}")))?;
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(TTest { t, p, df })
}

/// Writes `threshold,far,frr` rows for plotting.
pub fn write_det_csv(points: &[OperatingPoint], path: impl AsRef<Path>) -> Result<()> {
    codec::write_atomic(path.as_ref(), |w| {
        writeln!(w, "threshold,far,frr")?;
        for p in points {
            writeln!(w, "{},{},{}", p.threshold, p.far, p.frr)?;
        }
        Ok(())
    })
}

/// Writes `cm_threshold,tdcf,p_a,p_b,p_c,p_d` rows for plotting.
pub fn write_tdcf_csv(curve: &[TdcfPoint], path: impl AsRef<Path>) -> Result<()> {
    codec::write_atomic(path.as_ref(), |w| {
        writeln!(w, "cm_threshold,tdcf,p_a,p_b,p_c,p_d")?;
        for q in curve {
            writeln!(w, "{},{},{},{},{},{}", q.cm_threshold, q.tdcf, q.p_a, q.p_b, q.p_c, q.p_d)?;
        }
        Ok(())
    })
}
