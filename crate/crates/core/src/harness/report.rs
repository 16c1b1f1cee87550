//! Evaluation matrices: per countermeasure, attack condition and replay
//! channel, the CM EER and the minimum t-DCF against a fixed ASV system, with
//! channel averages and paired t-tests of enhanced against plain spoof scores.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, PLAIN};
use super::pipeline::{
    ensure_dir, read_asv_scores, read_utterance_scores, spoof_sets, write_json, Layout, Partition,
};
use crate::codec::write_atomic;
use crate::error::{Error, Result};
use crate::metrics::{
    asv_operating_point, det_points, eer, min_tdcf, paired_ttest, tdcf_curve, write_det_csv, write_scores,
    write_tdcf_csv, TrialClass, TrialScoreSet,
};

/// Column label of the channel average.
pub const AVERAGE: &str = "Average";

/// One countermeasure under one attack condition, across channels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub cm: String,
    pub condition: String,
    /// CM equal error rate of all evaluation genuine utterances against the
    /// spoofed ones, per channel in configuration order.
    pub eer: Vec<f64>,
    pub eer_average: f64,
    pub min_tdcf: Vec<f64>,
    pub min_tdcf_average: f64,
    /// Mean CM score of the spoofed trials per channel.
    pub spoof_mean: Vec<f64>,
    pub genuine_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TTestRow {
    pub cm: String,
    pub condition: String,
    /// A channel name or [`AVERAGE`] for all channels pooled.
    pub channel: String,
    pub pairs: usize,
    /// Mean of enhanced minus plain CM scores.
    pub mean_difference: f64,
    pub t: f64,
    pub p: f64,
    pub df: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub channels: Vec<String>,
    pub asv_eer: f64,
    pub asv_threshold: f64,
    pub rows: Vec<ReportRow>,
    pub ttests: Vec<TTestRow>,
}

impl Report {
    pub fn row(&self, cm: &str, condition: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.cm == cm && r.condition == condition)
    }

    pub fn ttest(&self, cm: &str, condition: &str, channel: &str) -> Option<&TTestRow> {
        self.ttests
            .iter()
            .find(|t| t.cm == cm && t.condition == condition && t.channel == channel)
    }
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Builds the report from the score files and writes CSV, text, JSON and
/// per-cell score sets and curves under `report/`.
pub fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<Report> {
    cfg.validate()?;
    let lay = Layout::new(cfg);
    let genuine = super::manifest::read_manifest(lay.manifest("genuine"))?;
    let part = Partition::from_manifest(&genuine, cfg)?;
    let spoofs = spoof_sets(cfg, &part.eval)?;
    let genuine_eval: Vec<&str> = genuine
        .for_speakers(&part.eval)
        .into_iter()
        .map(|r| r.utterance_id.as_str())
        .collect();
    let asv = read_asv_scores(&lay.asv_scores())?;
    let channels: Vec<String> = cfg.channels.iter().map(|c| c.name.clone()).collect();
    let conditions: Vec<String> = std::iter::once(PLAIN.to_string())
        .chain(cfg.enhancers.iter().map(|e| e.name.clone()))
        .collect();
    let dir = lay.report_dir();
    ensure_dir(&dir.join("scores"))?;
    ensure_dir(&dir.join("curves"))?;

    let mut bona = TrialScoreSet::new();
    for a in asv.iter().filter(|a| a.trial.class != TrialClass::Spoof) {
        bona.push(format!("{}|{}", a.trial.model_id, a.trial.utterance_id), a.trial.class, 0.0, Some(a.score))?;
    }
    let asv_threshold = asv_operating_point(&bona)?;
    let asv_eer = eer(
        &bona.asv_scores(TrialClass::Target)?,
        &bona.asv_scores(TrialClass::Nontarget)?,
    )?
    .0;

    let mut rows = Vec::new();
    let mut ttests = Vec::new();
    for kind in &cfg.countermeasures {
        let cm_name = kind.as_str();
        let cm = read_utterance_scores(&lay.cm_scores(*kind))?;
        let lookup = |id: &str| {
            cm.get(id)
                .copied()
                .ok_or_else(|| Error::Data(format!("no {cm_name} score for utterance {id:?}")))
        };
        for cond in &conditions {
            let mut row = ReportRow {
                cm: cm_name.into(),
                condition: cond.clone(),
                eer: vec![],
                eer_average: 0.0,
                min_tdcf: vec![],
                min_tdcf_average: 0.0,
                spoof_mean: vec![],
                genuine_mean: 0.0,
            };
            for ch in &channels {
                let set = spoofs
                    .iter()
                    .find(|s| &s.condition == cond && &s.channel == ch)
                    .expect("spoof sets cover every condition and channel");
                let mut scores = TrialScoreSet::new();
                for a in &asv {
                    let keep = a.trial.class != TrialClass::Spoof || set.source.contains_key(&a.trial.utterance_id);
                    if keep {
                        let id = format!("{}|{}", a.trial.model_id, a.trial.utterance_id);
                        scores.push(id, a.trial.class, lookup(&a.trial.utterance_id)?, Some(a.score))?;
                    }
                }
                let tag = format!("{cm_name}_{cond}_{ch}");
                write_scores(&scores, dir.join("scores").join(format!("{tag}.tsv")))?;
                let pos = genuine_eval.iter().map(|id| lookup(id)).collect::<Result<Vec<_>>>()?;
                let neg = set.rows.iter().map(|r| lookup(&r.utterance_id)).collect::<Result<Vec<_>>>()?;
                if pos.is_empty() || neg.is_empty() {
                    return Err(Error::Data(format!("{tag}: missing genuine or spoof scores")));
                }
                let det = det_points(&pos, &neg)?;
                write_det_csv(&det, dir.join("curves").join(format!("{tag}_det.csv")))?;
                write_tdcf_csv(
                    &tdcf_curve(&scores, &cfg.tdcf, asv_threshold)?,
                    dir.join("curves").join(format!("{tag}_tdcf.csv")),
                )?;
                row.eer.push(eer(&pos, &neg)?.0);
                row.min_tdcf.push(min_tdcf(&scores, &cfg.tdcf, asv_threshold)?);
                row.spoof_mean.push(mean(&neg));
                row.genuine_mean = mean(&pos);
            }
            row.eer_average = mean(&row.eer);
            row.min_tdcf_average = mean(&row.min_tdcf);
            rows.push(row);
        }

        for cond in conditions.iter().filter(|c| *c != PLAIN) {
            let mut pooled = (Vec::new(), Vec::new());
            for ch in &channels {
                let find = |c: &str| spoofs.iter().find(|s| s.condition == c && &s.channel == ch).expect("present");
                let (plain, enh) = (find(PLAIN), find(cond));
                let plain_by_source: HashMap<&str, &str> =
                    plain.source.iter().map(|(id, src)| (src.as_str(), id.as_str())).collect();
                let (mut a, mut b) = (Vec::new(), Vec::new());
                for r in &enh.rows {
                    let src = enh.source[&r.utterance_id].as_str();
                    let p = plain_by_source
                        .get(src)
                        .ok_or_else(|| Error::Data(format!("no plain replay of {src:?} on {ch}")))?;
                    a.push(lookup(&r.utterance_id)?);
                    b.push(lookup(p)?);
                }
                pooled.0.extend(&a);
                pooled.1.extend(&b);
                ttests.push(ttest_row(cm_name, cond, ch, &a, &b)?);
            }
            ttests.push(ttest_row(cm_name, cond, AVERAGE, &pooled.0, &pooled.1)?);
        }
    }
    let report = Report {
        channels,
        asv_eer,
        asv_threshold,
        rows,
        ttests,
    };
    write_report_files(&report, &lay)?;
    Ok(report)
}

fn ttest_row(cm: &str, cond: &str, ch: &str, enhanced: &[f64], plain: &[f64]) -> Result<TTestRow> {
    let t = paired_ttest(enhanced, plain)?;
    Ok(TTestRow {
        cm: cm.into(),
        condition: cond.into(),
        channel: ch.into(),
        pairs: enhanced.len(),
        mean_difference: mean(enhanced) - mean(plain),
        t: t.t,
        p: t.p,
        df: t.df,
    })
}

fn write_report_files(r: &Report, lay: &Layout) -> Result<()> {
    let dir = lay.report_dir();
    write_atomic(&dir.join("summary.csv"), |w| {
        write!(w, "cm,condition,metric")?;
        for c in &r.channels {
            write!(w, ",{c}")?;
        }
        writeln!(w, ",{AVERAGE}")?;
        for row in &r.rows {
            for (metric, vals, avg) in [
                ("eer", &row.eer, row.eer_average),
                ("min_tdcf", &row.min_tdcf, row.min_tdcf_average),
                ("spoof_mean", &row.spoof_mean, mean(&row.spoof_mean)),
            ] {
                write!(w, "{},{},{metric}", row.cm, row.condition)?;
                for v in vals {
                    write!(w, ",{v:.6}")?;
                }
                writeln!(w, ",{avg:.6}")?;
            }
        }
        Ok(())
    })?;
    write_atomic(&dir.join("ttest.csv"), |w| {
        writeln!(w, "cm,condition,channel,pairs,mean_difference,t,p,df")?;
        for t in &r.ttests {
            writeln!(
                w,
                "{},{},{},{},{:.6},{:.6},{:.6e},{}",
                t.cm, t.condition, t.channel, t.pairs, t.mean_difference, t.t, t.p, t.df
            )?;
        }
        Ok(())
    })?;
    let text = render(r);
    write_atomic(&dir.join("summary.txt"), |w| w.write_all(text.as_bytes()))?;
    write_json(r, &dir.join("report.json"))
}

/// Human-readable tables: conditions as rows, channels as columns, the
/// channel average last.
pub fn render(r: &Report) -> String {
    let mut s = String::new();
    let width = r.channels.iter().map(String::len).chain([AVERAGE.len(), 10]).max().unwrap_or(10) + 2;
    let header = |s: &mut String, title: &str| {
        let _ = write!(s, "{title:<18}");
        for c in r.channels.iter().map(String::as_str).chain([AVERAGE]) {
            let _ = write!(s, "{c:>width$}");
        }
        s.push('\n');
    };
    let _ = writeln!(s, "ASV EER {:.2}% at threshold {:.4}\n", 100.0 * r.asv_eer, r.asv_threshold);
    let mut cms: Vec<&str> = r.rows.iter().map(|x| x.cm.as_str()).collect();
    cms.dedup();
    for cm in cms {
        let rows: Vec<&ReportRow> = r.rows.iter().filter(|x| x.cm == cm).collect();
        for (title, pick) in [
            ("CM EER (%)", (|x: &ReportRow| (x.eer.clone(), x.eer_average, 100.0)) as fn(&ReportRow) -> (Vec<f64>, f64, f64)),
            ("min t-DCF", |x: &ReportRow| (x.min_tdcf.clone(), x.min_tdcf_average, 1.0)),
            ("spoof mean score", |x: &ReportRow| (x.spoof_mean.clone(), mean(&x.spoof_mean), 1.0)),
        ] {
            let _ = writeln!(s, "[{cm}] {title}");
            header(&mut s, "condition");
            for x in &rows {
                let (vals, avg, scale) = pick(x);
                let _ = write!(s, "{:<18}", x.condition);
                for v in vals.iter().chain([&avg]) {
                    let _ = write!(s, "{:>width$.4}", v * scale);
                }
                s.push('\n');
            }
            s.push('\n');
        }
        if let Some(x) = rows.first() {
            let _ = writeln!(s, "[{cm}] genuine mean score {:.4}\n", x.genuine_mean);
        }
        let tt: Vec<&TTestRow> = r.ttests.iter().filter(|t| t.cm == cm).collect();
        if !tt.is_empty() {
            let _ = writeln!(s, "[{cm}] paired t-test, enhanced vs plain spoof scores");
            let _ = writeln!(s, "{:<18}{:>14}{:>8}{:>12}{:>10}{:>12}", "condition", "channel", "pairs", "mean diff", "t", "p");
            for t in tt {
                let _ = writeln!(
                    s,
                    "{:<18}{:>14}{:>8}{:>12.4}{:>10.3}{:>12.3e}",
                    t.condition, t.channel, t.pairs, t.mean_difference, t.t, t.p
                );
            }
            s.push('\n');
        }
    }
    s
}

/// Re-renders the text tables from a finished evaluation.
pub fn cmd_report(cfg: &ExperimentConfig) -> Result<String> {
    let path = Layout::new(cfg).report_dir().join("report.json");
    if !path.is_file() {
        return Err(Error::Data(format!("{} not found; run evaluate first", path.display())));
    }
    let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let r: Report = serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    Ok(render(&r))
}

/// Every stage in order.
pub fn run_all(cfg: &ExperimentConfig) -> Result<Report> {
    use super::pipeline::*;
    cmd_simulate_corpus(cfg)?;
    cmd_train_cm(cfg)?;
    cmd_train_asv(cfg)?;
    cmd_train_segan(cfg)?;
    cmd_attack(cfg, true)?;
    cmd_score(cfg)?;
    cmd_evaluate(cfg)
}
