//! Pipeline stages. Each stage reads what earlier stages wrote under the
//! output directory, writes its own artefacts atomically and can be rerun;
//! identical configurations give byte-identical outputs.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::config::{derive_seed, CmKind, ExperimentConfig, PLAIN};
use super::manifest::{read_manifest, write_manifest, Label, Manifest, ManifestRow};
use super::synth::{synthesize, Phrase, Voice};
use crate::asv::{
    asv_features, enroll, model_id, read_speaker_model, train_ubm, write_speaker_model, write_trials, Trial,
};
use crate::audio::{read_wav, write_wav_with, Waveform};
use crate::codec::{config_digest, open_read, write_atomic};
use crate::detectors::{
    cm_train_cqcc_gmm, cm_train_lcnn, read_cqcc_gmm, write_cqcc_gmm, LcnnCm, LcnnData,
};
use crate::enhancer::{enhance, segan_train, Enhancer, PairedCorpus};
use crate::error::{Error, Result};
use crate::gmm::{read_gmm, write_gmm};
use crate::matrix::Matrix;
use crate::metrics::TrialClass;
use crate::signal::{simulate_replay, ReplayChannel};

/// File locations inside the output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(cfg: &ExperimentConfig) -> Self {
        Self {
            root: cfg.output_dir.clone(),
        }
    }

    pub fn manifest(&self, name: &str) -> PathBuf {
        self.root.join("manifests").join(format!("{name}.tsv"))
    }

    pub fn replay_manifest(&self, channel: &str) -> PathBuf {
        self.manifest(&format!("replay_{channel}"))
    }

    pub fn attack_manifest(&self, condition: &str, channel: &str) -> PathBuf {
        self.manifest(&format!("attack_{condition}_{channel}"))
    }

    pub fn audio_dir(&self, parts: &[&str]) -> PathBuf {
        parts.iter().fold(self.root.join("audio"), |p, s| p.join(s))
    }

    pub fn models(&self) -> PathBuf {
        self.root.join("models")
    }

    pub fn cm_model(&self, kind: CmKind) -> PathBuf {
        self.models().join(match kind {
            CmKind::CqccGmm => "cqcc_gmm.skcg",
            CmKind::Lcnn => "lcnn.sknn",
        })
    }

    pub fn ubm(&self) -> PathBuf {
        self.models().join("ubm.gmm")
    }

    pub fn speaker_model(&self, speaker: &str, phrase: &str) -> PathBuf {
        self.models().join("speakers").join(format!("{speaker}__{phrase}.sksm"))
    }

    pub fn enhancer(&self, name: &str) -> PathBuf {
        self.models().join(format!("segan_{name}.skgn"))
    }

    pub fn cm_scores(&self, kind: CmKind) -> PathBuf {
        self.root.join("scores").join(format!("cm_{}.tsv", kind.as_str()))
    }

    pub fn asv_scores(&self) -> PathBuf {
        self.root.join("scores").join("asv.tsv")
    }

    pub fn trials(&self) -> PathBuf {
        self.root.join("trials").join("trials.tsv")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

pub(crate) fn ensure_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn ensure_parent(p: &Path) -> Result<()> {
    match p.parent() {
        Some(d) => ensure_dir(d),
        None => Ok(()),
    }
}

pub(crate) fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))?;
    write_atomic(path, |w| writeln!(w, "{text}"))
}

fn load_manifest(path: &Path, stage: &str) -> Result<Manifest> {
    if !path.is_file() {
        return Err(Error::Data(format!("{} not found; run {stage} first", path.display())));
    }
    read_manifest(path)
}

fn load_wave(row: &ManifestRow, rate: u32) -> Result<Waveform> {
    let w = read_wav(&row.path)?;
    if w.sample_rate() != rate {
        return Err(Error::Data(format!(
            "{}: {} Hz audio in a {rate} Hz experiment",
            row.path.display(),
            w.sample_rate()
        )));
    }
    Ok(w)
}

fn load_waves(rows: &[&ManifestRow], rate: u32) -> Result<Vec<Waveform>> {
    rows.iter().map(|r| load_wave(r, rate)).collect()
}

/// Speaker roles derived from the sorted speaker list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Partition {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub eval: Vec<String>,
}

impl Partition {
    pub fn from_manifest(m: &Manifest, cfg: &ExperimentConfig) -> Result<Self> {
        let speakers = m.speakers();
        let (t, d) = (cfg.split.train_speakers, cfg.split.dev_speakers);
        if speakers.len() <= t + d {
            return Err(Error::Data(format!(
                "{} speakers cannot cover {t} training and {d} development speakers plus an evaluation set",
                speakers.len()
            )));
        }
        Ok(Self {
            train: speakers[..t].to_vec(),
            dev: speakers[t..t + d].to_vec(),
            eval: speakers[t + d..].to_vec(),
        })
    }

    pub fn train_and_dev(&self) -> Vec<String> {
        self.train.iter().chain(&self.dev).cloned().collect()
    }
}

/// Groups rows by (speaker, phrase), each group sorted by session then id.
fn by_speaker_phrase<'a>(rows: &[&'a ManifestRow]) -> BTreeMap<(String, String), Vec<&'a ManifestRow>> {
    let mut g: BTreeMap<(String, String), Vec<&ManifestRow>> = BTreeMap::new();
    for r in rows {
        g.entry((r.speaker_id.clone(), r.phrase_id.clone())).or_default().push(r);
    }
    for v in g.values_mut() {
        v.sort_by(|a, b| (a.session, &a.utterance_id).cmp(&(b.session, &b.utterance_id)));
    }
    g
}

/// Enrollment and test rows of each evaluation speaker and phrase.
pub fn enrollment_split<'a>(
    genuine: &'a Manifest,
    eval_speakers: &[String],
    sessions: usize,
) -> BTreeMap<(String, String), (Vec<&'a ManifestRow>, Vec<&'a ManifestRow>)> {
    by_speaker_phrase(&genuine.for_speakers(eval_speakers))
        .into_iter()
        .map(|(k, rows)| {
            let n = sessions.min(rows.len());
            let (a, b) = rows.split_at(n);
            (k, (a.to_vec(), b.to_vec()))
        })
        .collect()
}

struct Channels {
    recording: ReplayChannel,
    stolen: ReplayChannel,
    replay: Vec<(String, ReplayChannel)>,
}

fn build_channels(cfg: &ExperimentConfig) -> Result<Channels> {
    let rate = cfg.sample_rate;
    let seed = cfg.seeds.channels;
    Ok(Channels {
        recording: cfg.recording.build(rate, seed)?,
        stolen: cfg.stolen.build(rate, seed)?,
        replay: cfg
            .channels
            .iter()
            .map(|c| Ok((c.name.clone(), c.build(rate, seed)?)))
            .collect::<Result<_>>()?,
    })
}

/// Loudspeaker playback over a replay channel, then the verification
/// microphone. Seeds depend only on the stolen utterance and the channel, so
/// plain and enhanced attacks share noise realisations.
fn play(w: &Waveform, ch: &Channels, channel: usize, stolen_id: &str, seed: u64) -> Result<Waveform> {
    let (name, replay) = &ch.replay[channel];
    let y = simulate_replay(w, replay, derive_seed(seed, &format!("replay/{name}/{stolen_id}")))?;
    simulate_replay(&y, &ch.recording, derive_seed(seed, &format!("rec/{stolen_id}@{name}")))
}

fn write_audio(cfg: &ExperimentConfig, w: &Waveform, path: &Path) -> Result<()> {
    ensure_parent(path)?;
    write_wav_with(w, path, cfg.wav_encoding)?;
    Ok(())
}

struct Source {
    id: String,
    speaker: String,
    phrase: String,
    session: u32,
    wave: Waveform,
}

fn synthetic_sources(cfg: &ExperimentConfig) -> Result<Vec<Source>> {
    let c = &cfg.corpus;
    let seed = cfg.seeds.corpus;
    let phrases: Vec<Phrase> = (0..c.phrases)
        .map(|p| Phrase::random(derive_seed(seed, &format!("phrase/{p}")), c.syllables))
        .collect();
    let mut out = Vec::new();
    for s in 0..c.speakers {
        let speaker = format!("spk{s:02}");
        let voice = Voice::random(derive_seed(seed, &format!("voice/{speaker}")));
        for (p, phrase) in phrases.iter().enumerate() {
            let phrase_id = format!("ph{p}");
            for session in 0..c.sessions {
                let id = format!("{speaker}_{phrase_id}_s{session:02}");
                let wave = synthesize(&voice, phrase, cfg.sample_rate, derive_seed(seed, &format!("utt/{id}")))?;
                out.push(Source {
                    id,
                    speaker: speaker.clone(),
                    phrase: phrase_id.clone(),
                    session: session as u32,
                    wave,
                });
            }
        }
    }
    Ok(out)
}

fn manifest_sources(cfg: &ExperimentConfig, path: &Path) -> Result<Vec<Source>> {
    read_manifest(path)?
        .rows
        .iter()
        .map(|r| {
            Ok(Source {
                id: r.utterance_id.clone(),
                speaker: r.speaker_id.clone(),
                phrase: r.phrase_id.clone(),
                session: r.session,
                wave: load_wave(r, cfg.sample_rate)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorpusSummary {
    pub genuine: usize,
    pub stolen: usize,
    pub replayed: usize,
}

fn row(id: String, path: PathBuf, s: &Source, label: Label) -> ManifestRow {
    ManifestRow {
        utterance_id: id,
        path,
        speaker_id: s.speaker.clone(),
        phrase_id: s.phrase.clone(),
        label,
        session: s.session,
    }
}

/// Splits clean sources into equal genuine and stolen halves (alternate
/// sessions of every speaker and phrase), records the genuine half through
/// the verification microphone, the stolen half through the covert channel,
/// and replays the stolen half over every channel.
pub fn cmd_simulate_corpus(cfg: &ExperimentConfig) -> Result<CorpusSummary> {
    cfg.validate()?;
    let sources = match &cfg.corpus.source_manifest {
        Some(p) => manifest_sources(cfg, p)?,
        None => synthetic_sources(cfg)?,
    };
    if sources.is_empty() {
        return Err(Error::Data("no clean source utterances".into()));
    }
    let ch = build_channels(cfg)?;
    let lay = Layout::new(cfg);
    let seed = cfg.seeds.channels;

    let mut groups: BTreeMap<(&str, &str), Vec<&Source>> = BTreeMap::new();
    for s in &sources {
        if s.id.contains('@') {
            return Err(Error::Data(format!("utterance id {:?} may not contain '@'", s.id)));
        }
        groups.entry((&s.speaker, &s.phrase)).or_default().push(s);
    }
    let (mut clean, mut genuine, mut stolen) = (Manifest::default(), Manifest::default(), Manifest::default());
    let mut replay: Vec<Manifest> = vec![Manifest::default(); ch.replay.len()];
    for group in groups.values_mut() {
        group.sort_by(|a, b| (a.session, &a.id).cmp(&(b.session, &b.id)));
        for (i, s) in group.iter().enumerate() {
            if i % 2 == 0 {
                let p = lay.audio_dir(&["clean"]).join(format!("{}.wav", s.id));
                write_audio(cfg, &s.wave, &p)?;
                clean.push(row(s.id.clone(), p, s, Label::Genuine))?;
                let rec = simulate_replay(&s.wave, &ch.recording, derive_seed(seed, &format!("rec/{}", s.id)))?;
                let p = lay.audio_dir(&["genuine"]).join(format!("{}.wav", s.id));
                write_audio(cfg, &rec, &p)?;
                genuine.push(row(s.id.clone(), p, s, Label::Genuine))?;
            } else {
                let st = simulate_replay(&s.wave, &ch.stolen, derive_seed(seed, &format!("stolen/{}", s.id)))?;
                let p = lay.audio_dir(&["stolen"]).join(format!("{}.wav", s.id));
                write_audio(cfg, &st, &p)?;
                // replay what was stored, as the attack stage will
                let st = read_wav(&p)?;
                stolen.push(row(s.id.clone(), p, s, Label::Genuine))?;
                for (c, (name, _)) in ch.replay.iter().enumerate() {
                    let y = play(&st, &ch, c, &s.id, seed)?;
                    let id = format!("{}@{name}", s.id);
                    let p = lay.audio_dir(&["replay", name]).join(format!("{id}.wav"));
                    write_audio(cfg, &y, &p)?;
                    replay[c].push(row(id, p, s, Label::Playback))?;
                }
            }
        }
    }
    ensure_dir(&lay.root.join("manifests"))?;
    write_manifest(&clean, lay.manifest("clean"))?;
    write_manifest(&genuine, lay.manifest("genuine"))?;
    write_manifest(&stolen, lay.manifest("stolen"))?;
    for ((name, _), m) in ch.replay.iter().zip(&replay) {
        write_manifest(m, lay.replay_manifest(name))?;
    }
    let summary = CorpusSummary {
        genuine: genuine.len(),
        stolen: stolen.len(),
        replayed: replay.iter().map(Manifest::len).sum(),
    };
    log::info!("corpus: {summary:?}");
    Ok(summary)
}

fn replay_rows<'a>(replays: &'a [Manifest], speakers: &[String]) -> Vec<&'a ManifestRow> {
    replays.iter().flat_map(|m| m.for_speakers(speakers)).collect()
}

fn load_replays(cfg: &ExperimentConfig, lay: &Layout) -> Result<Vec<Manifest>> {
    cfg.channels
        .iter()
        .map(|c| load_manifest(&lay.replay_manifest(&c.name), "simulate-corpus"))
        .collect()
}

/// Trains the configured countermeasures on training-speaker genuine speech
/// against their replayed stolen speech over all channels.
pub fn cmd_train_cm(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    let lay = Layout::new(cfg);
    let genuine = load_manifest(&lay.manifest("genuine"), "simulate-corpus")?;
    let replays = load_replays(cfg, &lay)?;
    let part = Partition::from_manifest(&genuine, cfg)?;
    let rate = cfg.sample_rate;
    let gen_train = load_waves(&genuine.for_speakers(&part.train), rate)?;
    let pb_train = load_waves(&replay_rows(&replays, &part.train), rate)?;
    ensure_dir(&lay.models())?;
    for kind in &cfg.countermeasures {
        match kind {
            CmKind::CqccGmm => {
                let cm = cm_train_cqcc_gmm(&gen_train, &pb_train, &cfg.cqcc_gmm)?;
                write_cqcc_gmm(&cm, lay.cm_model(*kind))?;
            }
            CmKind::Lcnn => {
                let input = &cfg.lcnn.input;
                let train = LcnnData::from_waveforms(&gen_train, &pb_train, input)?;
                let dev = LcnnData::from_waveforms(
                    &load_waves(&genuine.for_speakers(&part.dev), rate)?,
                    &load_waves(&replay_rows(&replays, &part.dev), rate)?,
                    input,
                )?;
                let (cm, history) = cm_train_lcnn(&train, &dev, &cfg.lcnn, derive_seed(cfg.seeds.cm, "lcnn"))?;
                cm.save(lay.cm_model(*kind))?;
                write_json(&history, &lay.models().join("lcnn_history.json"))?;
            }
        }
        log::info!("trained {} countermeasure", kind.as_str());
    }
    Ok(())
}

/// Trains the UBM on training and development speakers and enrolls every
/// evaluation speaker and phrase.
pub fn cmd_train_asv(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    let lay = Layout::new(cfg);
    let genuine = load_manifest(&lay.manifest("genuine"), "simulate-corpus")?;
    let part = Partition::from_manifest(&genuine, cfg)?;
    let ubm = train_ubm(
        &load_waves(&genuine.for_speakers(&part.train_and_dev()), cfg.sample_rate)?,
        &cfg.asv,
    )?;
    ensure_dir(&lay.models().join("speakers"))?;
    write_gmm(&ubm, &config_digest(&cfg.asv), lay.ubm())?;
    for ((spk, phrase), (enrol, _)) in enrollment_split(&genuine, &part.eval, cfg.split.enroll_sessions) {
        let feats = load_waves(&enrol, cfg.sample_rate)?
            .iter()
            .map(|w| asv_features(w, &cfg.asv.mfcc))
            .collect::<Result<Vec<_>>>()?;
        let model = enroll(&ubm, &spk, &phrase, &feats, cfg.asv.relevance)?;
        write_speaker_model(&model, lay.speaker_model(&spk, &phrase))?;
    }
    log::info!("trained UBM and enrolled {} evaluation speakers", part.eval.len());
    Ok(())
}

/// Trains one enhancer per configured degradation on pairs made from the
/// clean training-speaker sources.
pub fn cmd_train_segan(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    let lay = Layout::new(cfg);
    let clean = load_manifest(&lay.manifest("clean"), "simulate-corpus")?;
    let part = Partition::from_manifest(&clean, cfg)?;
    let rows = clean.for_speakers(&part.train_and_dev());
    let waves = load_waves(&rows, cfg.sample_rate)?;
    ensure_dir(&lay.models())?;
    for e in &cfg.enhancers {
        let seed = cfg.seeds.segan;
        let ch = e.train_channel.build(cfg.sample_rate, derive_seed(seed, &format!("channel/{}", e.name)))?;
        let mut corpus = PairedCorpus::new();
        for (r, w) in rows.iter().zip(&waves) {
            let noisy = simulate_replay(w, &ch, derive_seed(seed, &format!("pair/{}/{}", e.name, r.utterance_id)))?;
            corpus.push(noisy, w.clone())?;
        }
        let trained = segan_train(&corpus, &cfg.segan, derive_seed(seed, &format!("train/{}", e.name)))?;
        write_json(&trained.traces, &lay.models().join(format!("segan_{}_traces.json", e.name)))?;
        Enhancer::from(trained.model).save(lay.enhancer(&e.name))?;
        log::info!("trained enhancer {}", e.name);
    }
    Ok(())
}

/// Replays the stolen set over every channel, through each trained enhancer
/// first when `enhancement` is on. With enhancement off the output is the
/// conventional attack, identical to the simulated replay set.
pub fn cmd_attack(cfg: &ExperimentConfig, enhancement: bool) -> Result<usize> {
    cfg.validate()?;
    let lay = Layout::new(cfg);
    let stolen = load_manifest(&lay.manifest("stolen"), "simulate-corpus")?;
    let ch = build_channels(cfg)?;
    let conditions: Vec<(String, Option<Enhancer>)> = if enhancement {
        cfg.enhancers
            .iter()
            .map(|e| {
                let p = lay.enhancer(&e.name);
                if !p.is_file() {
                    return Err(Error::Data(format!(
                        "enhancer checkpoint {} not found; run train-segan first",
                        p.display()
                    )));
                }
                Ok((e.name.clone(), Some(Enhancer::load(&p)?)))
            })
            .collect::<Result<_>>()?
    } else {
        vec![(PLAIN.to_string(), None)]
    };
    let mut written = 0;
    for (cond, model) in &conditions {
        let mut out: Vec<Manifest> = vec![Manifest::default(); ch.replay.len()];
        for r in &stolen.rows {
            let mut w = load_wave(r, cfg.sample_rate)?;
            if let Some(m) = model {
                w = enhance(m, &w, derive_seed(cfg.seeds.attack, &format!("enh/{cond}/{}", r.utterance_id)))?;
            }
            for (c, (name, _)) in ch.replay.iter().enumerate() {
                let y = play(&w, &ch, c, &r.utterance_id, cfg.seeds.channels)?;
                let id = match model {
                    Some(_) => format!("{}@{cond}@{name}", r.utterance_id),
                    None => format!("{}@{name}", r.utterance_id),
                };
                let p = lay.audio_dir(&["attack", cond, name]).join(format!("{id}.wav"));
                write_audio(cfg, &y, &p)?;
                out[c].push(ManifestRow {
                    utterance_id: id,
                    path: p,
                    label: if model.is_some() { Label::EnhancedPlayback } else { Label::Playback },
                    ..r.clone()
                })?;
                written += 1;
            }
        }
        for ((name, _), m) in ch.replay.iter().zip(&out) {
            write_manifest(m, lay.attack_manifest(cond, name))?;
        }
        log::info!("attack condition {cond}: {} files", out.iter().map(Manifest::len).sum::<usize>());
    }
    Ok(written)
}

/// Spoofed utterances of one condition and channel, keyed by utterance id
/// and mapped to the stolen utterance they came from.
#[derive(Debug, Clone)]
pub struct SpoofSet {
    pub condition: String,
    pub channel: String,
    pub rows: Vec<ManifestRow>,
    pub source: HashMap<String, String>,
}

/// The plain replay set and every enhanced attack set, restricted to the
/// given speakers.
pub fn spoof_sets(cfg: &ExperimentConfig, speakers: &[String]) -> Result<Vec<SpoofSet>> {
    let lay = Layout::new(cfg);
    let mut out = Vec::new();
    let conditions = std::iter::once(PLAIN.to_string()).chain(cfg.enhancers.iter().map(|e| e.name.clone()));
    for cond in conditions {
        for c in &cfg.channels {
            let (m, suffix) = if cond == PLAIN {
                (load_manifest(&lay.replay_manifest(&c.name), "simulate-corpus")?, format!("@{}", c.name))
            } else {
                (
                    load_manifest(&lay.attack_manifest(&cond, &c.name), "attack")?,
                    format!("@{cond}@{}", c.name),
                )
            };
            let rows: Vec<ManifestRow> = m.for_speakers(speakers).into_iter().cloned().collect();
            let source = rows
                .iter()
                .map(|r| {
                    let base = r.utterance_id.strip_suffix(&suffix).ok_or_else(|| {
                        Error::Data(format!("attack utterance {:?} lacks suffix {suffix:?}", r.utterance_id))
                    })?;
                    Ok((r.utterance_id.clone(), base.to_string()))
                })
                .collect::<Result<_>>()?;
            out.push(SpoofSet {
                condition: cond.clone(),
                channel: c.name.clone(),
                rows,
                source,
            });
        }
    }
    Ok(out)
}

fn write_utterance_scores(scores: &[(String, f64)], path: &Path) -> Result<()> {
    ensure_parent(path)?;
    write_atomic(path, |w| {
        for (id, s) in scores {
            writeln!(w, "{id}\t{s:e}")?;
        }
        Ok(())
    })
}

/// Reads `utterance-id<TAB>score` lines.
pub fn read_utterance_scores(path: &Path) -> Result<HashMap<String, f64>> {
    if !path.is_file() {
        return Err(Error::Data(format!("score file {} not found; run score first", path.display())));
    }
    let mut out = HashMap::new();
    for (n, line) in open_read(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Parse(format!("{}:{}: malformed score line", path.display(), n + 1));
        let (id, s) = line.split_once('\t').ok_or_else(bad)?;
        let s: f64 = s.trim().parse().map_err(|_| bad())?;
        if out.insert(id.to_string(), s).is_some() {
            return Err(Error::Data(format!("{}: duplicate utterance {id:?}", path.display())));
        }
    }
    Ok(out)
}

/// One scored verification trial.
#[derive(Debug, Clone, PartialEq)]
pub struct AsvTrialScore {
    pub trial: Trial,
    pub score: f64,
}

fn write_asv_scores(scores: &[AsvTrialScore], path: &Path) -> Result<()> {
    ensure_parent(path)?;
    write_atomic(path, |w| {
        for s in scores {
            writeln!(w, "{}\t{}\t{}\t{:e}", s.trial.model_id, s.trial.utterance_id, s.trial.class, s.score)?;
        }
        Ok(())
    })
}

/// Reads `model-id<TAB>utterance-id<TAB>class<TAB>score` lines.
pub fn read_asv_scores(path: &Path) -> Result<Vec<AsvTrialScore>> {
    if !path.is_file() {
        return Err(Error::Data(format!("score file {} not found; run score first", path.display())));
    }
    let mut out = Vec::new();
    for (n, line) in open_read(path)?.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::Parse(format!("{}:{}: malformed ASV score line", path.display(), n + 1));
        let f: Vec<&str> = line.split('\t').collect();
        if f.len() != 4 {
            return Err(bad());
        }
        out.push(AsvTrialScore {
            trial: Trial {
                model_id: f[0].into(),
                utterance_id: f[1].into(),
                class: f[2].parse()?,
            },
            score: f[3].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

/// Scores every evaluation utterance with each countermeasure, builds the
/// verification trial list and scores it with the enrolled models.
pub fn cmd_score(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    let lay = Layout::new(cfg);
    let rate = cfg.sample_rate;
    let genuine = load_manifest(&lay.manifest("genuine"), "simulate-corpus")?;
    let part = Partition::from_manifest(&genuine, cfg)?;
    let spoofs = spoof_sets(cfg, &part.eval)?;
    let mut eval_rows: Vec<&ManifestRow> = genuine.for_speakers(&part.eval);
    for s in &spoofs {
        eval_rows.extend(&s.rows);
    }

    for kind in &cfg.countermeasures {
        let path = lay.cm_model(*kind);
        if !path.is_file() {
            return Err(Error::Data(format!("{} not found; run train-cm first", path.display())));
        }
        let scorer: Box<dyn Fn(&Waveform) -> Result<f64>> = match kind {
            CmKind::CqccGmm => {
                let cm = read_cqcc_gmm(&path)?;
                Box::new(move |w| cm.score(w))
            }
            CmKind::Lcnn => {
                let cm = LcnnCm::load(&path)?;
                Box::new(move |w| cm.score(w))
            }
        };
        let scores = eval_rows
            .iter()
            .map(|r| Ok((r.utterance_id.clone(), scorer(&load_wave(r, rate)?)?)))
            .collect::<Result<Vec<_>>>()?;
        write_utterance_scores(&scores, &lay.cm_scores(*kind))?;
        log::info!("{}: scored {} utterances", kind.as_str(), scores.len());
    }

    if !lay.ubm().is_file() {
        return Err(Error::Data(format!("{} not found; run train-asv first", lay.ubm().display())));
    }
    let (ubm, _) = read_gmm(lay.ubm())?;
    let split = enrollment_split(&genuine, &part.eval, cfg.split.enroll_sessions);
    let mut trials = Vec::new();
    for ((spk, phrase), (_, test)) in &split {
        let id = model_id(spk, phrase);
        let mut add = |utt: &str, class| {
            trials.push(Trial {
                model_id: id.clone(),
                utterance_id: utt.to_string(),
                class,
            })
        };
        for r in test {
            add(&r.utterance_id, TrialClass::Target);
        }
        for ((other, p), (_, t)) in &split {
            if other != spk && p == phrase {
                for r in t {
                    add(&r.utterance_id, TrialClass::Nontarget);
                }
            }
        }
        for s in &spoofs {
            for r in s.rows.iter().filter(|r| &r.speaker_id == spk && &r.phrase_id == phrase) {
                add(&r.utterance_id, TrialClass::Spoof);
            }
        }
    }
    ensure_parent(&lay.trials())?;
    write_trials(&trials, lay.trials())?;

    let by_id: HashMap<&str, &ManifestRow> = eval_rows.iter().map(|r| (r.utterance_id.as_str(), *r)).collect();
    let mut features: HashMap<String, Matrix> = HashMap::new();
    let mut models = HashMap::new();
    let mut out = Vec::with_capacity(trials.len());
    for t in trials {
        if !models.contains_key(&t.model_id) {
            let (spk, phrase) = t.model_id.split_once('/').expect("model ids join speaker and phrase");
            let p = lay.speaker_model(spk, phrase);
            if !p.is_file() {
                return Err(Error::Data(format!("{} not found; run train-asv first", p.display())));
            }
            models.insert(t.model_id.clone(), read_speaker_model(&p)?);
        }
        let model = &models[&t.model_id];
        if !features.contains_key(&t.utterance_id) {
            let r = by_id[t.utterance_id.as_str()];
            features.insert(t.utterance_id.clone(), asv_features(&load_wave(r, rate)?, &cfg.asv.mfcc)?);
        }
        let score = crate::asv::asv_score(model, &ubm, &features[&t.utterance_id])?;
        out.push(AsvTrialScore { trial: t, score });
    }
    write_asv_scores(&out, &lay.asv_scores())?;
    log::info!("scored {} verification trials", out.len());
    Ok(())
}
