use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flowlab::arch::{ArchError, Arch, Checkpoint, ForwardOptions, DEFAULT_ALLPAIRS_BUDGET};
use flowlab::data::{build_splits, motion_histogram, uniform_edges, DataError, Manifest};
use flowlab::experiment::{run_grid, ExperimentConfig, ExperimentError};
use flowlab::io::{flow_to_color, read_flo, read_kitti_png, write_flo, write_png8, write_ppm, FlowField, FlowIoError};
use flowlab::metrics::{evaluate, identity_report, table_row, EvalError};
use flowlab::profile::{profile, ProfileError};
use flowlab::train::{TrainError, TrainRecord, Trainer};

/// Overrides the all-pairs cost-volume element budget.
const BUDGET_ENV: &str = "FLOWLAB_ALLPAIRS_BUDGET";

#[derive(Parser)]
#[command(name = "flowlab", version, about = "Desk-scale optical flow experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a dataset manifest, optionally with the samples themselves.
    Datagen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        count: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Also write .flo flow and PNG frames per sample.
        #[arg(long)]
        materialize: bool,
    },
    /// Pre-train one model, or every cell of the config's grid.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Continue from `<out>/checkpoints/latest.flck` if present.
        #[arg(long)]
        resume: bool,
    },
    /// Fine-tune a checkpoint with the config's [finetune] phase.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Evaluate a checkpoint on the config's evaluation sets.
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// Required unless --identity is given.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Score ground truth against itself.
        #[arg(long)]
        identity: bool,
    },
    /// Time and account cost-volume memory across resolutions.
    Profile {
        /// Comma-separated `HEIGHTxWIDTH` list.
        #[arg(long, value_delimiter = ',', default_value = "64x96,128x192,256x384")]
        resolutions: Vec<String>,
        #[arg(long, default_value_t = 20)]
        repeats: usize,
        #[arg(long, value_delimiter = ',', default_value = "pwc,irr,raft")]
        archs: Vec<Arch>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Color-code a .flo or KITTI PNG flow file.
    Render {
        flow: PathBuf,
        /// .png or .ppm
        out: PathBuf,
        /// Magnitude mapped to full saturation; defaults to a robust maximum.
        #[arg(long)]
        max: Option<f64>,
    },
}

/// Error carrying the process exit status.
struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    const CONFIG: u8 = 2;
    const DATA: u8 = 3;
    const DIVERGED: u8 = 4;
    const BUDGET: u8 = 5;

    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }
}

impl From<ArchError> for Failure {
    fn from(e: ArchError) -> Self {
        let code = match &e {
            _ if e.is_budget() => Self::BUDGET,
            ArchError::Checkpoint(_) | ArchError::Parameters { .. } => Self::DATA,
            ArchError::Tensor(_) => 1,
            _ => Self::CONFIG,
        };
        Self::new(code, e.to_string())
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        Self::new(Self::DATA, e.to_string())
    }
}

impl From<FlowIoError> for Failure {
    fn from(e: FlowIoError) -> Self {
        Self::new(Self::DATA, e.to_string())
    }
}

impl From<EvalError> for Failure {
    fn from(e: EvalError) -> Self {
        Self::new(if e.is_budget() { Self::BUDGET } else { Self::DATA }, e.to_string())
    }
}

impl From<TrainError> for Failure {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Diverged { .. } => Self::new(Self::DIVERGED, e.to_string()),
            TrainError::Plan(_) | TrainError::Mismatch(_) | TrainError::Step { .. } => Self::new(Self::CONFIG, e.to_string()),
            TrainError::Arch(a) => a.into(),
            TrainError::Data(d) => d.into(),
            TrainError::Eval(v) => v.into(),
            TrainError::Tensor(t) => ArchError::Tensor(t).into(),
            other => Self::new(1, other.to_string()),
        }
    }
}

impl From<ExperimentError> for Failure {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::Config(m) => Self::new(Self::CONFIG, m),
            ExperimentError::Train(t) => t.into(),
            ExperimentError::Data(d) => d.into(),
            ExperimentError::Arch(a) => a.into(),
            ExperimentError::Eval(v) => v.into(),
            ExperimentError::Io(io) => Self::new(1, io.to_string()),
        }
    }
}

impl From<ProfileError> for Failure {
    fn from(e: ProfileError) -> Self {
        match e {
            ProfileError::Arch(a) => a.into(),
            other => Self::new(Self::CONFIG, other.to_string()),
        }
    }
}

type Result<T> = std::result::Result<T, Failure>;

fn io_at(path: &Path) -> impl FnOnce(std::io::Error) -> Failure + '_ {
    move |e| Failure::new(1, format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(io_at(path))
}

fn out_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Failure::new(Failure::CONFIG, format!("output directory {}: {e}", path.display())))
}

fn forward_options() -> Result<ForwardOptions> {
    let budget = match std::env::var(BUDGET_ENV) {
        Ok(v) => v
            .parse()
            .map_err(|_| Failure::new(Failure::CONFIG, format!("{BUDGET_ENV}={v} is not an element count")))?,
        Err(_) => DEFAULT_ALLPAIRS_BUDGET,
    };
    Ok(ForwardOptions { allpairs_budget: budget })
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut c = ExperimentConfig::load(path)?;
    if let Some(s) = seed {
        c.seed = s;
    }
    Ok(c)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Failure::new(Failure::DATA, format!("{}: {e}", path.display())))?;
    Ok(Checkpoint::from_bytes(&bytes)?)
}

fn json<T: serde::Serialize>(v: &T) -> String {
    serde_json::to_string_pretty(v).expect("reports serialize")
}

fn datagen(config: &Path, count: u64, out: &Path, seed: Option<u64>, materialize: bool) -> Result<()> {
    let c = load_config(config, seed)?;
    out_dir(out)?;
    let phase = c.data_phase();
    let size = (phase.size[0], phase.size[1]);
    let manifest = Manifest::build(&phase.data.mixture(), c.seed, count, size);
    write_file(&out.join("manifest.json"), manifest.to_json())?;
    if materialize {
        let dir = out.join("samples");
        fs::create_dir_all(&dir).map_err(io_at(&dir))?;
        for i in 0..manifest.records.len() {
            let s = manifest.regenerate(i)?;
            write_file(&dir.join(format!("{i:06}.flo")), write_flo(&s.flow)?)?;
            for (name, frame) in [("img1", &s.frame1), ("img2", &s.frame2)] {
                write_file(&dir.join(format!("{i:06}_{name}.png")), write_png8(&frame_image(frame))?)?;
            }
        }
    }
    if let Some(sp) = &c.splits {
        let splits = build_splits(sp.mode, sp.train, sp.val, (sp.size[0], sp.size[1]), c.seed)?;
        let edges = uniform_edges(sp.bin_width, sp.bin_max);
        let train = motion_histogram(splits.train.iter().map(|s| &s.flow), &edges)?;
        let val = motion_histogram(splits.val.iter().map(|s| &s.flow), &edges)?;
        let report = serde_json::json!({
            "seed": c.seed,
            "mode": sp.mode,
            "overlap": train.overlap(&val)?,
            "train": train,
            "val": val,
        });
        write_file(&out.join("histograms.json"), json(&report))?;
    }
    println!("wrote {} records to {}", manifest.records.len(), out.display());
    Ok(())
}

fn frame_image(frame: &flowlab::tensor::Tensor<f32>) -> flowlab::io::RgbImage {
    let s = frame.shape();
    let (h, w) = (s[1], s[2]);
    let d = frame.data();
    let mut img = flowlab::io::RgbImage::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let px = |c: usize| (d[c * h * w + y * w + x].clamp(0.0, 1.0) * 255.0).round() as u8;
            img.set(x, y, [px(0), px(1), px(2)]);
        }
    }
    img
}

struct RecordLog(fs::File);

impl RecordLog {
    fn create(path: &Path) -> Result<Self> {
        Ok(Self(fs::File::create(path).map_err(io_at(path))?))
    }

    fn append(path: &Path) -> Result<Self> {
        let f = fs::OpenOptions::new().create(true).append(true).open(path).map_err(io_at(path))?;
        Ok(Self(f))
    }

    fn push(&mut self, r: &TrainRecord) {
        // a failed log write must not abort training; the checkpoint is authoritative
        let _ = writeln!(self.0, "{}", r.to_line());
    }
}

fn eval_table(records: &[TrainRecord]) -> String {
    let mut out = String::from("| set | AEPE | Fl-all | WAUC |\n|---|---|---|---|\n");
    for r in records {
        if let TrainRecord::Eval {
            set, aepe, fl_all, wauc, ..
        } = r
        {
            out.push_str(&format!("| {set} | {aepe:.3} | {fl_all:.2} | {wauc:.2} |\n"));
        }
    }
    out
}

fn last_evals(records: &[TrainRecord]) -> Vec<TrainRecord> {
    let last = records
        .iter()
        .filter_map(|r| match r {
            TrainRecord::Eval { step, .. } => Some(*step),
            _ => None,
        })
        .max();
    records
        .iter()
        .filter(|r| matches!(r, TrainRecord::Eval { step, .. } if Some(*step) == last))
        .cloned()
        .collect()
}

fn train(config: &Path, out: &Path, seed: Option<u64>, resume: bool) -> Result<()> {
    let c = load_config(config, seed)?;
    out_dir(out)?;
    let opts = forward_options()?;
    write_file(&out.join("config.toml"), c.to_toml())?;
    if c.grid.is_some() {
        let mut logs = Vec::new();
        let cells = c.grid_cells()?;
        for i in 0..cells.len() {
            logs.push(RecordLog::create(&out.join(format!("records-{i:03}.jsonl")))?);
        }
        let report = run_grid(&c, &mut |i, r| logs[i].push(r))?;
        write_file(&out.join("grid.json"), json(&report))?;
        write_file(&out.join("grid.md"), report.table())?;
        print!("{}", report.table());
        return Ok(());
    }
    let plan = c.pretrain_plan()?;
    let ckdir = out.join("checkpoints");
    let latest = ckdir.join("latest.flck");
    let (mut trainer, mut log) = if resume && latest.exists() {
        let t = Trainer::resume(load_checkpoint(&latest)?, plan)?;
        (t, RecordLog::append(&out.join("records.jsonl"))?)
    } else {
        let state = flowlab::arch::build_model(&c.model, flowlab::seed::derive(c.seed, "init", 0))?;
        (Trainer::new(state, plan)?, RecordLog::create(&out.join("records.jsonl"))?)
    };
    trainer = trainer.with_checkpoints(&ckdir).with_options(opts);
    let mut records = Vec::new();
    trainer.run(None, &mut |r| {
        log.push(r);
        records.push(r.clone());
    })?;
    write_file(&out.join("final.flck"), trainer.checkpoint().to_bytes())?;
    let table = eval_table(&last_evals(&records));
    write_file(&out.join("report.md"), &table)?;
    print!("{table}");
    Ok(())
}

fn finetune(config: &Path, checkpoint: &Path, out: &Path, seed: Option<u64>) -> Result<()> {
    let c = load_config(config, seed)?;
    out_dir(out)?;
    let ck = load_checkpoint(checkpoint)?;
    if ck.state.config().fingerprint() != c.model.fingerprint() {
        return Err(Failure::new(
            Failure::CONFIG,
            format!(
                "checkpoint model {} does not match config model {}",
                ck.state.config().fingerprint(),
                c.model.fingerprint()
            ),
        ));
    }
    let plan = c.finetune_plan()?;
    let mut log = RecordLog::create(&out.join("records.jsonl"))?;
    let mut records = Vec::new();
    let mut t = Trainer::new(ck.state, plan)?
        .with_checkpoints(out.join("checkpoints"))
        .with_options(forward_options()?);
    t.run(None, &mut |r| {
        log.push(r);
        records.push(r.clone());
    })?;
    write_file(&out.join("final.flck"), t.checkpoint().to_bytes())?;
    let table = eval_table(&last_evals(&records));
    write_file(&out.join("report.md"), &table)?;
    print!("{table}");
    Ok(())
}

fn eval(config: &Path, checkpoint: Option<&Path>, out: &Path, seed: Option<u64>, identity: bool) -> Result<()> {
    let c = load_config(config, seed)?;
    out_dir(out)?;
    if c.eval.is_empty() {
        return Err(Failure::new(Failure::CONFIG, "config has no [[eval]] sets"));
    }
    let state = match (identity, checkpoint) {
        (true, _) => None,
        (false, Some(p)) => Some(load_checkpoint(p)?.state),
        (false, None) => return Err(Failure::new(Failure::CONFIG, "--checkpoint is required without --identity")),
    };
    let opts = forward_options()?;
    let size = c.eval_size();
    let mut table = String::from("| set | AEPE | Fl-all | WAUC |\n|---|---|---|---|\n");
    let mut reports = serde_json::Map::new();
    for set in c.eval_sets() {
        let samples = set.samples(size)?;
        let value = match &state {
            None => {
                let r = identity_report(&samples)?;
                table.push_str(&table_row(&set.name, &r));
                serde_json::json!({ "report": r })
            }
            Some(s) => {
                let o = evaluate(s, &samples, &opts)?;
                table.push_str(&table_row(&set.name, &o.report));
                serde_json::to_value(&o).expect("reports serialize")
            }
        };
        table.push('\n');
        reports.insert(set.name.clone(), value);
    }
    let doc = serde_json::json!({ "seed": c.seed, "size": [size.0, size.1], "sets": reports });
    write_file(&out.join("report.json"), json(&doc))?;
    write_file(&out.join("report.md"), &table)?;
    print!("{table}");
    Ok(())
}

fn parse_resolution(s: &str) -> Result<(usize, usize)> {
    let bad = || Failure::new(Failure::CONFIG, format!("resolution {s:?} is not HEIGHTxWIDTH"));
    let (h, w) = s.split_once('x').ok_or_else(bad)?;
    Ok((h.trim().parse().map_err(|_| bad())?, w.trim().parse().map_err(|_| bad())?))
}

fn profile_cmd(resolutions: &[String], repeats: usize, archs: &[Arch], out: &Path, seed: u64) -> Result<()> {
    let res = resolutions.iter().map(|s| parse_resolution(s)).collect::<Result<Vec<_>>>()?;
    out_dir(out)?;
    let report = profile(archs, &res, repeats, &forward_options()?, seed)?;
    write_file(&out.join("profile.json"), json(&report))?;
    write_file(&out.join("profile.md"), report.table())?;
    print!("{}", report.table());
    Ok(())
}

fn read_flow(path: &Path) -> Result<FlowField> {
    let bytes = fs::read(path).map_err(|e| Failure::new(Failure::DATA, format!("{}: {e}", path.display())))?;
    let is_png = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"));
    Ok(if is_png { read_kitti_png(&bytes)? } else { read_flo(&bytes)? })
}

fn render(flow: &Path, out: &Path, max: Option<f64>) -> Result<()> {
    if let Some(m) = max {
        if !(m > 0.0 && m.is_finite()) {
            return Err(Failure::new(Failure::CONFIG, format!("--max {m} must be positive")));
        }
    }
    let f = read_flow(flow)?;
    let img = flow_to_color(&f, max);
    let is_ppm = out.extension().is_some_and(|e| e.eq_ignore_ascii_case("ppm"));
    let bytes = if is_ppm { write_ppm(&img) } else { write_png8(&img)? };
    write_file(out, bytes)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Datagen {
            config,
            count,
            out,
            seed,
            materialize,
        } => datagen(&config, count, &out, seed, materialize),
        Command::Train {
            config,
            out,
            seed,
            resume,
        } => train(&config, &out, seed, resume),
        Command::Finetune {
            config,
            checkpoint,
            out,
            seed,
        } => finetune(&config, &checkpoint, &out, seed),
        Command::Eval {
            config,
            checkpoint,
            out,
            seed,
            identity,
        } => eval(&config, checkpoint.as_deref(), &out, seed, identity),
        Command::Profile {
            resolutions,
            repeats,
            archs,
            out,
            seed,
        } => profile_cmd(&resolutions, repeats, &archs, &out, seed),
        Command::Render { flow, out, max } => render(&flow, &out, max),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("flowlab: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
