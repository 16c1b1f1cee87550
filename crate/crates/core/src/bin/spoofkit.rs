//! Command-line front end.
//!
//! Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric failure.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use spoofkit::audio::{read_wav, write_wav};
use spoofkit::detectors::{cm_score_cqcc_gmm, cm_score_lcnn, read_cqcc_gmm, LcnnCm};
use spoofkit::enhancer::{enhance, Enhancer};
use spoofkit::harness::{self, ExperimentConfig};
use spoofkit::{Error, Result};

#[derive(Parser)]
#[command(name = "spoofkit", version, about = "Replay-spoofing attack and countermeasure experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Experiment configuration (TOML).
    #[arg(short, long)]
    config: PathBuf,
    /// Overrides `output_dir` from the configuration.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize (or import) sources and emit genuine, stolen and replayed sets.
    SimulateCorpus(ConfigArgs),
    /// Train the configured countermeasures.
    TrainCm(ConfigArgs),
    /// Train the UBM and enroll evaluation speakers.
    TrainAsv(ConfigArgs),
    /// Train one enhancer per configured degradation.
    TrainSegan(ConfigArgs),
    /// Replay the stolen set, enhanced first unless --no-enhance.
    Attack {
        #[command(flatten)]
        config: ConfigArgs,
        /// Conventional playback attack without enhancement.
        #[arg(long)]
        no_enhance: bool,
    },
    /// Score evaluation utterances and verification trials.
    Score(ConfigArgs),
    /// Compute EER / min t-DCF matrices and paired t-tests.
    Evaluate(ConfigArgs),
    /// Print the tables of a finished evaluation.
    Report(ConfigArgs),
    /// Run every stage in order.
    Run(ConfigArgs),
    /// Print the bundled desk-scale configuration.
    PrintConfig,
    /// Enhance one file with a trained generator.
    Enhance {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long = "out")]
        output: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Countermeasure training and scoring.
    #[command(subcommand)]
    Cm(CmCommand),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    CqccGmm,
    Lcnn,
}

#[derive(Subcommand)]
enum CmCommand {
    /// Same as train-cm.
    Train(ConfigArgs),
    /// Score every utterance of a manifest; writes `utterance-id<TAB>score`.
    Score {
        #[arg(long, value_enum)]
        kind: Kind,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        /// Output file; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn cm_score(kind: Kind, model: &PathBuf, manifest: &PathBuf, out: Option<&PathBuf>) -> Result<()> {
    let m = harness::read_manifest(manifest)?;
    let score: Box<dyn Fn(&spoofkit::audio::Waveform) -> Result<f64>> = match kind {
        Kind::CqccGmm => {
            let cm = read_cqcc_gmm(model)?;
            Box::new(move |w| cm_score_cqcc_gmm(&cm, w))
        }
        Kind::Lcnn => {
            let cm = LcnnCm::load(model)?;
            Box::new(move |w| cm_score_lcnn(&cm, w))
        }
    };
    let mut text = String::new();
    for r in &m.rows {
        let s = score(&read_wav(&r.path)?)?;
        text.push_str(&format!("{}\t{s:e}\n", r.utterance_id));
    }
    match out {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::SimulateCorpus(c) => {
            let s = harness::cmd_simulate_corpus(&c.load()?)?;
            println!("genuine {} stolen {} replayed {}", s.genuine, s.stolen, s.replayed);
        }
        Command::TrainCm(c) | Command::Cm(CmCommand::Train(c)) => harness::cmd_train_cm(&c.load()?)?,
        Command::TrainAsv(c) => harness::cmd_train_asv(&c.load()?)?,
        Command::TrainSegan(c) => harness::cmd_train_segan(&c.load()?)?,
        Command::Attack { config, no_enhance } => {
            let n = harness::cmd_attack(&config.load()?, !no_enhance)?;
            println!("wrote {n} attack files");
        }
        Command::Score(c) => harness::cmd_score(&c.load()?)?,
        Command::Evaluate(c) => print!("{}", harness::render(&harness::cmd_evaluate(&c.load()?)?)),
        Command::Report(c) => print!("{}", harness::cmd_report(&c.load()?)?),
        Command::Run(c) => print!("{}", harness::render(&harness::run_all(&c.load()?)?)),
        Command::PrintConfig => print!("{}", harness::DESK_CONFIG),
        Command::Enhance {
            model,
            input,
            output,
            seed,
        } => {
            let m = Enhancer::load(&model)?;
            write_wav(&enhance(&m, &read_wav(&input)?, seed)?, &output)?;
        }
        Command::Cm(CmCommand::Score {
            kind,
            model,
            manifest,
            out,
        }) => cm_score(kind, &model, &manifest, out.as_ref())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
