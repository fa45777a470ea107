//! `cws`: train, segment, eval and generate.
//!
//! Exit statuses: 0 success, 1 usage, 2 I/O, 3 data or model format.

use std::ffi::OsString;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use cws_core::dictgen::{self, Dictionary, WordCount};
use cws_core::encoder::{PretrainedEmbeddings, Vocab};
use cws_core::eval;
use cws_core::modelfile;
use cws_core::trainer::{self, Mode, PseudoMixing, TrainConfig, TrainData};
use cws_core::wordclf::WordSample;
use cws_core::{LabeledSentence, Model, ModelConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_DATA: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] cws_core::Error),
    #[error("write failed: {0}")]
    Output(#[from] io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        use cws_core::Error as E;
        match self {
            CliError::Usage(_) | CliError::Core(E::InvalidInput(_)) => EXIT_USAGE,
            CliError::Core(E::Io { .. }) | CliError::Output(_) => EXIT_IO,
            CliError::Core(_) => EXIT_DATA,
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "cws", version, about = "CNN-CRF Chinese word segmentation", args_override_self = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model and write it to --out.
    Train(TrainArgs),
    /// Segment raw text, one sentence per line.
    Segment(SegmentArgs),
    /// Score a predicted segmentation against gold.
    Eval(EvalArgs),
    /// Generate auxiliary training data from dictionaries.
    #[command(subcommand)]
    Generate(GenerateCommand),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Baseline,
    Pseudo,
    Multitask,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MixingArg {
    Paired,
    Pooled,
}

#[derive(Debug, Clone, Args)]
pub struct DictArgs {
    /// Word list, one word per line. Repeatable; lists are unioned.
    #[arg(long = "dict", value_name = "FILE")]
    pub dicts: Vec<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    /// Segmented training corpus (words separated by spaces).
    #[arg(long, value_name = "FILE")]
    pub train: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub dev: PathBuf,
    /// Output model file.
    #[arg(long, value_name = "FILE")]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "baseline")]
    pub mode: ModeArg,
    #[command(flatten)]
    pub dict: DictArgs,
    /// Add the training corpus vocabulary to the dictionary.
    #[arg(long)]
    pub internal_dict: bool,
    /// Pretrained character vectors in word2vec text format.
    #[arg(long, value_name = "FILE")]
    pub embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    pub lambda1: f64,
    #[arg(long, default_value_t = 0.3)]
    pub lambda2: f64,
    /// Pseudo sentences to generate. Defaults to the training-set size.
    #[arg(long)]
    pub np: Option<usize>,
    /// Negative words to generate. Defaults to the dictionary size.
    #[arg(long)]
    pub nneg: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub p_replace: f64,
    #[arg(long, default_value_t = 3)]
    pub u_min: usize,
    #[arg(long, default_value_t = 8)]
    pub u_max: usize,
    #[arg(long, env = "CWS_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 0.001)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub batch: usize,
    #[arg(long, default_value_t = 0.3)]
    pub dropout: f64,
    #[arg(long, default_value_t = 3)]
    pub patience: usize,
    #[arg(long, default_value_t = 50)]
    pub max_epochs: usize,
    #[arg(long, value_enum, default_value = "on")]
    pub mask: Switch,
    /// Embedding dimension. Defaults to 200, or to the --embeddings file's.
    #[arg(long)]
    pub dim: Option<usize>,
    #[arg(long, value_delimiter = ',', default_value = "2,3,4,5")]
    pub kernels: Vec<usize>,
    #[arg(long, default_value_t = 100)]
    pub filters_per_kernel: usize,
    #[arg(long)]
    pub freeze_embeddings: bool,
    #[arg(long, value_enum, default_value = "paired")]
    pub pseudo_mixing: MixingArg,
}

#[derive(Debug, Clone, Args)]
pub struct SegmentArgs {
    #[arg(long, value_name = "FILE")]
    pub model: PathBuf,
    /// Raw text, one sentence per line.
    #[arg(long, value_name = "FILE")]
    pub input: PathBuf,
    /// Write here instead of standard output.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "FILE")]
    pub gold: PathBuf,
    #[arg(long, value_name = "FILE")]
    pub pred: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum GenerateCommand {
    /// Pseudo labeled sentences in segmented-corpus format.
    Pseudo(PseudoArgs),
    /// Word classification samples, "+1<TAB>word" or "-1<TAB>word".
    Clfdata(ClfdataArgs),
}

#[derive(Debug, Clone, Args)]
pub struct PseudoArgs {
    #[command(flatten)]
    pub dict: DictArgs,
    #[arg(long)]
    pub np: usize,
    #[arg(long, default_value_t = 3)]
    pub u_min: usize,
    #[arg(long, default_value_t = 8)]
    pub u_max: usize,
    #[arg(long, env = "CWS_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct ClfdataArgs {
    #[command(flatten)]
    pub dict: DictArgs,
    /// Defaults to the dictionary size.
    #[arg(long)]
    pub nneg: Option<usize>,
    #[arg(long, default_value_t = 0.5)]
    pub p_replace: f64,
    #[arg(long, env = "CWS_SEED", default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

/// Parses `args` (program name first), runs the command and returns the
/// exit status. Diagnostics go to `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = write!(out, "{text}");
                    EXIT_OK
                }
                _ => {
                    let _ = write!(err, "{text}");
                    EXIT_USAGE
                }
            };
        }
    };
    match execute(&cli.command, out, err) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "cws: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(cmd: &Command, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    match cmd {
        Command::Train(a) => cmd_train(a, out, err),
        Command::Segment(a) => cmd_segment(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Generate(GenerateCommand::Pseudo(a)) => cmd_generate_pseudo(a, out),
        Command::Generate(GenerateCommand::Clfdata(a)) => cmd_generate_clfdata(a, out),
    }
}

/// Lines of a UTF-8 text file with `\r\n` or `\n` endings. A final newline
/// does not start an extra empty line.
pub fn read_lines(path: &Path) -> cws_core::Result<Vec<String>> {
    let bytes = fs::read(path).map_err(|source| cws_core::Error::Io {
        path: path.to_owned(),
        source,
    })?;
    let mut raw: Vec<&[u8]> = bytes.split(|&b| b == b'\n').collect();
    if raw.last().is_some_and(|l| l.is_empty()) {
        raw.pop();
    }
    raw.into_iter()
        .enumerate()
        .map(|(i, line)| {
            let line = line.strip_suffix(b"\r").unwrap_or(line);
            String::from_utf8(line.to_vec()).map_err(|_| cws_core::Error::Encoding {
                path: path.to_owned(),
                line: i + 1,
            })
        })
        .collect()
}

/// Every line of a segmented corpus, blank lines included, as word lists.
pub fn read_segmented(path: &Path) -> cws_core::Result<Vec<Vec<String>>> {
    Ok(read_lines(path)?
        .iter()
        .map(|l| l.split_whitespace().map(str::to_owned).collect())
        .collect())
}

/// Non-blank lines of a segmented corpus as tagged sentences.
pub fn read_labeled(path: &Path) -> cws_core::Result<Vec<LabeledSentence>> {
    let mut out = Vec::new();
    for (i, words) in read_segmented(path)?.into_iter().enumerate() {
        if words.is_empty() {
            continue;
        }
        let s = LabeledSentence::from_words(&words).map_err(|e| {
            cws_core::Error::Data(format!("{}: line {}: {e}", path.display(), i + 1))
        })?;
        out.push(s);
    }
    Ok(out)
}

fn load_dictionaries(paths: &[PathBuf]) -> CliResult<Dictionary> {
    let mut dict = Dictionary::new();
    for p in paths {
        dict.union_with(&dictgen::load_dictionary(p)?);
    }
    Ok(dict)
}

fn open_output(path: Option<&Path>) -> CliResult<Option<io::BufWriter<fs::File>>> {
    path.map(|p| {
        fs::File::create(p)
            .map(io::BufWriter::new)
            .map_err(|source| cws_core::Error::Io { path: p.to_owned(), source }.into())
    })
    .transpose()
}

fn word_count(min: usize, max: usize) -> CliResult<WordCount> {
    if min == 0 || min > max {
        return Err(CliError::Usage(format!("--u-min {min} / --u-max {max} is not a valid range")));
    }
    Ok(if min == max { WordCount::Fixed(min) } else { WordCount::Uniform { min, max } })
}

fn generation_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

pub fn cmd_train(a: &TrainArgs, out: &mut dyn Write, err: &mut dyn Write) -> CliResult {
    let mode = match a.mode {
        ModeArg::Baseline => Mode::Baseline,
        ModeArg::Pseudo => Mode::Pseudo,
        ModeArg::Multitask => Mode::Multitask,
    };
    let needs_dict = mode != Mode::Baseline;
    if needs_dict && a.dict.dicts.is_empty() && !a.internal_dict {
        return Err(CliError::Usage(format!(
            "--mode {} needs --dict or --internal-dict",
            a.mode.to_possible_value().map_or("?".into(), |v| v.get_name().to_owned())
        )));
    }
    let kernels_ok = !a.kernels.is_empty() && a.kernels.windows(2).all(|w| w[0] < w[1]);
    if !kernels_ok || a.kernels.contains(&0) || a.filters_per_kernel == 0 {
        return Err(CliError::Usage(
            "--kernels must be distinct ascending sizes and --filters-per-kernel positive".into(),
        ));
    }
    let policy = word_count(a.u_min, a.u_max)?;

    let train = read_labeled(&a.train)?;
    let dev = read_labeled(&a.dev)?;
    if train.is_empty() {
        return Err(cws_core::Error::Data(format!("{}: no sentences", a.train.display())).into());
    }
    if dev.is_empty() {
        return Err(cws_core::Error::Data(format!("{}: no sentences", a.dev.display())).into());
    }

    let mut dict = load_dictionaries(&a.dict.dicts)?;
    if a.internal_dict {
        let words: Vec<Vec<String>> = train.iter().map(LabeledSentence::words).collect();
        let internal = dictgen::build_internal_dictionary(&words);
        dict.union_with(&internal);
    }
    if needs_dict && dict.is_empty() {
        return Err(CliError::Usage("the combined dictionary is empty".into()));
    }
    let pretrained = a.embeddings.as_deref().map(PretrainedEmbeddings::load).transpose()?;

    let mut vocab = Vocab::new();
    for s in &train {
        s.chars.iter().for_each(|&c| {
            vocab.insert(c);
        });
    }
    if needs_dict {
        dict.words().flat_map(str::chars).for_each(|c| {
            vocab.insert(c);
        });
    }
    if let Some(p) = &pretrained {
        p.vectors.iter().for_each(|(c, _)| {
            vocab.insert(*c);
        });
    }

    let dim = a.dim.or(pretrained.as_ref().map(|p| p.dim)).unwrap_or(200);
    let mut config = ModelConfig::uniform(dim, &a.kernels, a.filters_per_kernel);
    config.mask = a.mask == Switch::On;
    let mut model = Model::new(config, vocab, &mut ChaCha8Rng::seed_from_u64(a.seed))?;
    if let Some(p) = &pretrained {
        let n = p.apply(&mut model)?;
        writeln!(err, "loaded {n} pretrained character vectors")?;
    }

    let mut rng = generation_rng(a.seed);
    let pseudo = match mode {
        Mode::Pseudo => {
            let np = a.np.unwrap_or(train.len());
            dictgen::gen_pseudo_corpus(&dict, np, policy, &mut rng)?
        }
        _ => Vec::new(),
    };
    let words: Vec<WordSample> = match mode {
        Mode::Multitask => {
            let nneg = a.nneg.unwrap_or(dict.len());
            dictgen::gen_classification_set(&dict, nneg, a.p_replace, &dict.charset(), &mut rng)?
        }
        _ => Vec::new(),
    };

    let cfg = TrainConfig {
        mode,
        lambda1: a.lambda1,
        lambda2: a.lambda2,
        learning_rate: a.lr,
        batch_size: a.batch,
        dropout: a.dropout,
        patience: a.patience,
        max_epochs: a.max_epochs,
        seed: a.seed,
        pseudo_mixing: match a.pseudo_mixing {
            MixingArg::Paired => PseudoMixing::Paired,
            MixingArg::Pooled => PseudoMixing::Pooled,
        },
        freeze_embeddings: a.freeze_embeddings,
    };
    let data = TrainData { train: &train, dev: &dev, pseudo: &pseudo, words: &words };
    let mut write_err = None;
    let report = trainer::train_with_progress(&mut model, data, &cfg, |e| {
        if write_err.is_none() {
            write_err = writeln!(out, "{e}").and_then(|_| out.flush()).err();
        }
    })?;
    if let Some(e) = write_err {
        return Err(e.into());
    }
    modelfile::save_model(&model, &a.out)?;
    writeln!(
        err,
        "best epoch {} of {}, model written to {}",
        report.best_epoch,
        report.stopping_epoch,
        a.out.display()
    )?;
    Ok(())
}

/// Segments one raw line. Whitespace already in the line is kept as a word
/// boundary and each chunk is decoded separately.
pub fn segment_line(model: &Model, line: &str) -> String {
    let mut words = Vec::new();
    for chunk in line.split_whitespace() {
        let chars: Vec<char> = chunk.chars().collect();
        words.extend(model.segment(&chars));
    }
    words.join(" ")
}

pub fn cmd_segment(a: &SegmentArgs, out: &mut dyn Write) -> CliResult {
    let model = modelfile::load_model(&a.model)?;
    let lines = read_lines(&a.input)?;
    let mut file = open_output(a.out.as_deref())?;
    let sink: &mut dyn Write = match file.as_mut() {
        Some(f) => f,
        None => out,
    };
    for line in &lines {
        writeln!(sink, "{}", segment_line(&model, line))?;
    }
    sink.flush()?;
    Ok(())
}

pub fn cmd_eval(a: &EvalArgs, out: &mut dyn Write) -> CliResult {
    let gold = read_segmented(&a.gold)?;
    let pred = read_segmented(&a.pred)?;
    if gold.len() != pred.len() {
        return Err(cws_core::Error::Data(format!(
            "{} has {} lines but {} has {}",
            a.gold.display(),
            gold.len(),
            a.pred.display(),
            pred.len()
        ))
        .into());
    }
    for (i, (g, p)) in gold.iter().zip(&pred).enumerate() {
        if !g.iter().flat_map(|w| w.chars()).eq(p.iter().flat_map(|w| w.chars())) {
            return Err(cws_core::Error::Data(format!(
                "line {}: gold and prediction differ in characters",
                i + 1
            ))
            .into());
        }
    }
    writeln!(out, "{}", eval::score(&gold, &pred)?)?;
    Ok(())
}

fn generation_dict(d: &DictArgs) -> CliResult<Dictionary> {
    if d.dicts.is_empty() {
        return Err(CliError::Usage("at least one --dict is required".into()));
    }
    let dict = load_dictionaries(&d.dicts)?;
    if dict.is_empty() {
        return Err(CliError::Usage("the dictionary is empty".into()));
    }
    Ok(dict)
}

pub fn cmd_generate_pseudo(a: &PseudoArgs, out: &mut dyn Write) -> CliResult {
    let dict = generation_dict(&a.dict)?;
    let policy = word_count(a.u_min, a.u_max)?;
    let corpus = dictgen::gen_pseudo_corpus(&dict, a.np, policy, &mut generation_rng(a.seed))?;
    let mut file = open_output(a.out.as_deref())?;
    let sink: &mut dyn Write = match file.as_mut() {
        Some(f) => f,
        None => out,
    };
    for s in &corpus {
        writeln!(sink, "{}", s.words().join(" "))?;
    }
    sink.flush()?;
    Ok(())
}

pub fn cmd_generate_clfdata(a: &ClfdataArgs, out: &mut dyn Write) -> CliResult {
    let dict = generation_dict(&a.dict)?;
    let nneg = a.nneg.unwrap_or(dict.len());
    let samples = dictgen::gen_classification_set(
        &dict,
        nneg,
        a.p_replace,
        &dict.charset(),
        &mut generation_rng(a.seed),
    )?;
    let mut file = open_output(a.out.as_deref())?;
    let sink: &mut dyn Write = match file.as_mut() {
        Some(f) => f,
        None => out,
    };
    for s in &samples {
        let label = if s.label > 0 { "+1" } else { "-1" };
        writeln!(sink, "{label}\t{}", s.word())?;
    }
    sink.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(args: &[&str]) -> Result<Cli, clap::Error> {
        Cli::try_parse_from(std::iter::once("cws").chain(args.iter().copied()))
    }

    #[test]
    fn train_defaults() {
        let cli = parse(&["train", "--train", "a", "--dev", "b", "--out", "m"]).unwrap();
        let Command::Train(a) = cli.command else { panic!() };
        assert_eq!(a.lr, 0.001);
        assert_eq!(a.batch, 64);
        assert_eq!(a.dropout, 0.3);
        assert_eq!(a.patience, 3);
        assert_eq!(a.kernels, vec![2, 3, 4, 5]);
        assert_eq!(a.filters_per_kernel * a.kernels.len(), 400);
        assert_eq!(a.dim, None);
        assert_eq!(a.mask, Switch::On);
        assert_eq!(a.mode, ModeArg::Baseline);
    }

    #[test]
    fn repeated_dicts_and_kernel_list() {
        let cli = parse(&[
            "train", "--train", "a", "--dev", "b", "--out", "m", "--dict", "x", "--dict", "y",
            "--kernels", "1,3", "--mask", "off",
        ])
        .unwrap();
        let Command::Train(a) = cli.command else { panic!() };
        assert_eq!(a.dict.dicts, vec![PathBuf::from("x"), PathBuf::from("y")]);
        assert_eq!(a.kernels, vec![1, 3]);
        assert_eq!(a.mask, Switch::Off);
    }

    #[test]
    fn missing_required_flag_is_usage() {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        assert_eq!(run(["cws", "train", "--train", "a"], &mut out, &mut err), EXIT_USAGE);
        assert!(!err.is_empty());
        assert_eq!(run(["cws", "--help"], &mut out, &mut err), EXIT_OK);
    }

    #[test]
    fn exit_codes() {
        let io = cws_core::Error::Io { path: "x".into(), source: io::ErrorKind::NotFound.into() };
        assert_eq!(CliError::from(io).exit_code(), EXIT_IO);
        let fmt = cws_core::Error::Format { offset: 0, msg: "m".into() };
        assert_eq!(CliError::from(fmt).exit_code(), EXIT_DATA);
        assert_eq!(CliError::Usage("u".into()).exit_code(), EXIT_USAGE);
    }

    #[test]
    fn word_count_ranges() {
        assert_eq!(word_count(3, 8).unwrap(), WordCount::Uniform { min: 3, max: 8 });
        assert_eq!(word_count(4, 4).unwrap(), WordCount::Fixed(4));
        assert!(word_count(0, 2).is_err());
        assert!(word_count(5, 2).is_err());
    }
}
