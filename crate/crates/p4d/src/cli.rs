//! Command-line pipeline: data synthesis, teacher pretraining, distillation
//! training, evaluation, ablation sweeps, self-verification, and visual
//! snapshots. Every command resolves one [`ExperimentConfig`], writes all
//! outputs under a run-scoped directory named by the manifest identity hash,
//! and records a [`RunManifest`] before exiting — also on failure, after
//! removing partial outputs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use clap::{ArgAction, Parser, Subcommand};

use crate::config::ExperimentConfig;
use crate::distill::train::{student_hash, subset_store};
use crate::distill::{
    ablation_config, train, DistillConfig, PerceptionDecoder, TeacherCache, TrainSample,
};
use crate::evalkit::{self, mcq_accuracy, EvalReport, ReportFormat};
use crate::manifest::RunManifest;
use crate::nnkit::checkpoint;
use crate::nnkit::ParamStore;
use crate::scenegen::io::{read_jsonl, write_jsonl};
use crate::scenegen::{
    generate_scene, make_vqa, sample_scene, Modality, SceneSpec, SignalSet, TemplateSet,
    VQASample, VideoTensor,
};
use crate::student::{StudentModel, Variant};
use crate::teacher4d::{pretrain_teacher, PretrainConfig, TeacherLatent, TeacherModel};
use crate::{P4dError, Result};

#[derive(Parser, Debug)]
#[command(name = "p4d", version, about = "perceptual 4D distillation pipeline")]
pub struct Cli {
    /// Experiment config file; defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed; every stage derives its own stream from it.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Root directory for run-scoped output directories.
    #[arg(long, global = true, default_value = "runs")]
    pub out: PathBuf,
    /// Numeric mode; only 64-bit exists, `--float64 false` is an error.
    #[arg(long, global = true, default_value_t = true, action = ArgAction::Set)]
    pub float64: bool,
    /// Override the student variant from the config.
    #[arg(long, global = true)]
    pub variant: Option<String>,
    /// Parallel worker count for sweeps.
    #[arg(long, global = true, default_value_t = 1)]
    pub jobs: usize,
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Sample scenes and emit train/val scene specs plus VQA datasets.
    Synth,
    /// Pretrain the 4D teacher on a synth run's ground truth.
    TrainTeacher {
        /// Run directory produced by `synth`.
        #[arg(long)]
        data: PathBuf,
    },
    /// Train the student, optionally under a named ablation recipe.
    Train {
        #[arg(long)]
        data: PathBuf,
        /// Run directory produced by `train-teacher`; required whenever the
        /// recipe distills or uses a 4D-conditioned variant.
        #[arg(long)]
        teacher: Option<PathBuf>,
        /// Ablation row name, e.g. `LD+ED` or `Zero-shot`.
        #[arg(long)]
        ablation: Option<String>,
    },
    /// Evaluate a trained student on a synth run's held-out VQA set.
    Eval {
        #[arg(long)]
        data: PathBuf,
        /// Run directory produced by `train`.
        #[arg(long)]
        student: PathBuf,
        #[arg(long)]
        teacher: Option<PathBuf>,
    },
    /// Train and evaluate a matrix of ablation rows over several seeds.
    Sweep {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
        /// Comma-separated row names; all rows when omitted.
        #[arg(long)]
        rows: Option<String>,
        /// Seeds per row, starting at `--seed`.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
    },
    /// Run the quick self-check suite and print one line per check.
    Verify,
    /// Render student-decoded and teacher maps for one sampled scene.
    Snapshot {
        #[arg(long)]
        student: PathBuf,
        #[arg(long)]
        teacher: PathBuf,
        #[arg(long, default_value = "depth")]
        modality: String,
        /// Scene stream index to render.
        #[arg(long, default_value_t = 0)]
        scene: u64,
    },
}

/// Exit codes by failure class: 2 usage/config, 3 missing prerequisite,
/// 4 numeric, 5 artifact I/O, 1 anything else.
pub fn exit_code(e: &P4dError) -> i32 {
    match e {
        P4dError::Config(_)
        | P4dError::InvalidArgument(_)
        | P4dError::InvalidScene(_)
        | P4dError::InvalidRecord { .. }
        | P4dError::OutOfVocabulary(_) => 2,
        P4dError::MissingPrerequisite(_) | P4dError::FrozenViolation(_) => 3,
        P4dError::NonFinite(_) => 4,
        P4dError::Io(_) | P4dError::Checkpoint(_) | P4dError::Serde(_) => 5,
        _ => 1,
    }
}

pub fn run() -> i32 {
    let args: Vec<String> = std::env::args().collect();
    run_from(&args)
}

/// Parse and dispatch; returns the process exit code.
pub fn run_from<S: AsRef<str>>(args: &[S]) -> i32 {
    let cli = match Cli::try_parse_from(args.iter().map(|s| s.as_ref())) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    if !cli.float64 {
        return Err(P4dError::Config(
            "this build is 64-bit only; 32-bit mode is not implemented".into(),
        ));
    }
    let mut config = match &cli.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(v) = &cli.variant {
        config.distill.variant = v.parse()?;
        config.finalize()?;
    }
    let ctx = Ctx {
        config,
        config_path: cli.config.clone(),
        seed: cli.seed,
        out: cli.out.clone(),
        jobs: cli.jobs.max(1),
    };
    match &cli.cmd {
        Cmd::Synth => ctx.synth().map(|_| ()),
        Cmd::TrainTeacher { data } => ctx.train_teacher(data).map(|_| ()),
        Cmd::Train { data, teacher, ablation } => {
            ctx.train(data, teacher.as_deref(), ablation.as_deref(), ctx.seed).map(|_| ())
        }
        Cmd::Eval { data, student, teacher } => {
            ctx.eval(data, student, teacher.as_deref()).map(|_| ())
        }
        Cmd::Sweep { data, teacher, rows, seeds } => {
            ctx.sweep(data, teacher, rows.as_deref(), *seeds).map(|_| ())
        }
        Cmd::Verify => verify(),
        Cmd::Snapshot { student, teacher, modality, scene } => {
            ctx.snapshot(student, teacher, modality, *scene).map(|_| ())
        }
    }
}

/// Resolved invocation context shared by the commands.
pub struct Ctx {
    pub config: ExperimentConfig,
    pub config_path: Option<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
    pub jobs: usize,
}

const SCENES_TRAIN: &str = "scenes-train.jsonl";
const SCENES_VAL: &str = "scenes-val.jsonl";
const VQA_TRAIN: &str = "vqa-train.jsonl";
const VQA_VAL: &str = "vqa-val.jsonl";
const TEACHER_CKPT: &str = "teacher.ckpt";
const STUDENT_CKPT: &str = "student.ckpt";
const D4DP_CKPT: &str = "d4dp.ckpt";

impl Ctx {
    fn manifest(&self, command: &[&str], seed: u64) -> Result<RunManifest> {
        let command: Vec<String> = command.iter().map(|s| s.to_string()).collect();
        let mut m = RunManifest::new(&command, &self.config, seed);
        if let Some(path) = &self.config_path {
            m.add_input("config", path)?;
        }
        Ok(m)
    }

    /// Create the run dir, execute `body`, and guarantee a manifest on disk:
    /// on failure every partial output is removed first and the failure is
    /// recorded in the manifest status.
    fn scoped_run(
        &self,
        mut manifest: RunManifest,
        body: impl FnOnce(&Path, &mut RunManifest) -> Result<()>,
    ) -> Result<PathBuf> {
        let run_dir = manifest.run_dir(&self.out);
        std::fs::create_dir_all(&run_dir)?;
        match body(&run_dir, &mut manifest) {
            Ok(()) => {
                manifest.save(&run_dir)?;
                Ok(run_dir)
            }
            Err(e) => {
                for entry in std::fs::read_dir(&run_dir)?.flatten() {
                    let p = entry.path();
                    if p.is_dir() {
                        let _ = std::fs::remove_dir_all(&p);
                    } else {
                        let _ = std::fs::remove_file(&p);
                    }
                }
                manifest.outputs.clear();
                manifest.status = format!("failed: {e}");
                manifest.save(&run_dir)?;
                Err(e)
            }
        }
    }

    /// Sample the scene stream for one split. Validation scenes use stream
    /// indices past every train index so the splits never overlap.
    fn sample_split(&self, val: bool) -> Result<Vec<SceneSpec>> {
        let (offset, count) = if val {
            (self.config.train_scenes as u64, self.config.val_scenes)
        } else {
            (0, self.config.train_scenes)
        };
        (0..count as u64)
            .map(|i| sample_scene(self.seed, offset + i, &self.config.sampler))
            .collect()
    }

    pub fn synth(&self) -> Result<PathBuf> {
        let manifest = self.manifest(&["synth"], self.seed)?;
        let seed = self.seed;
        self.scoped_run(manifest, |run_dir, m| {
            for (scene_file, vqa_file, val) in
                [(SCENES_TRAIN, VQA_TRAIN, false), (SCENES_VAL, VQA_VAL, true)]
            {
                let scenes = self.sample_split(val)?;
                let mut vqa: Vec<VQASample> = Vec::new();
                m.time_stage(&format!("synth-{}", if val { "val" } else { "train" }), || {
                    for spec in &scenes {
                        let (_, _, meta) = generate_scene(spec)?;
                        let out = make_vqa(&meta, &TemplateSet::default(), seed)?;
                        vqa.extend(out.samples);
                    }
                    Ok(())
                })?;
                let sp = run_dir.join(scene_file);
                let vp = run_dir.join(vqa_file);
                write_jsonl(&sp, &scenes)?;
                write_jsonl(&vp, &vqa)?;
                m.add_output(scene_file, &sp)?;
                m.add_output(vqa_file, &vp)?;
            }
            Ok(())
        })
    }

    pub fn train_teacher(&self, data: &Path) -> Result<PathBuf> {
        let scenes_train = load_scenes(data, SCENES_TRAIN)?;
        let scenes_val = load_scenes(data, SCENES_VAL)?;
        let mut manifest = self.manifest(&["train-teacher"], self.seed)?;
        manifest.add_input(SCENES_TRAIN, &data.join(SCENES_TRAIN))?;
        manifest.add_input(SCENES_VAL, &data.join(SCENES_VAL))?;

        let train_data = regenerate_signals(&scenes_train)?;
        let val_data = regenerate_signals(&scenes_val)?;
        let cfg = PretrainConfig { seed: self.seed, ..self.config.pretrain.clone() };

        self.scoped_run(manifest, |run_dir, m| {
            let (mut teacher, report) = m.time_stage("pretrain", || {
                pretrain_teacher(&train_data, &val_data, self.config.teacher.clone(), &cfg)
            })?;
            teacher.freeze();
            let ckpt = run_dir.join(TEACHER_CKPT);
            checkpoint::save(&ckpt, "teacher4d", &teacher.params)?;
            m.add_output(TEACHER_CKPT, &ckpt)?;
            let rp = run_dir.join("pretrain_report.json");
            std::fs::write(&rp, serde_json::to_string_pretty(&report)?)?;
            m.add_output("pretrain_report.json", &rp)?;
            Ok(())
        })
    }

    pub fn train(
        &self,
        data: &Path,
        teacher_dir: Option<&Path>,
        ablation: Option<&str>,
        seed: u64,
    ) -> Result<PathBuf> {
        let mut config = self.config.clone();
        if let Some(name) = ablation {
            config.distill = ablation_config(name, &config.distill)?;
            if name == "TPE-off" {
                config.student.tpe_enabled = false;
            }
            config.finalize()?;
        }
        let distill_cfg = config.distill.clone();

        let teacher = if distill_cfg.needs_teacher() {
            let dir = teacher_dir.ok_or_else(|| {
                P4dError::MissingPrerequisite(format!(
                    "recipe `{}` distills from the teacher; pass --teacher <run dir from train-teacher>",
                    ablation.unwrap_or("default")
                ))
            })?;
            Some(load_teacher(dir, &config)?)
        } else {
            None
        };

        let scenes = load_scenes(data, SCENES_TRAIN)?;
        let vqa: Vec<VQASample> = read_jsonl(&data.join(VQA_TRAIN))?;
        let samples = pair_samples(&scenes, &vqa)?;

        let mut cmd: Vec<&str> = vec!["train"];
        if let Some(name) = ablation {
            cmd.push(name);
        }
        let mut manifest = RunManifest::new(
            &cmd.iter().map(|s| s.to_string()).collect::<Vec<_>>(),
            &config,
            seed,
        );
        if let Some(path) = &self.config_path {
            manifest.add_input("config", path)?;
        }
        manifest.add_input(SCENES_TRAIN, &data.join(SCENES_TRAIN))?;
        manifest.add_input(VQA_TRAIN, &data.join(VQA_TRAIN))?;
        if let Some(dir) = teacher_dir {
            if teacher.is_some() {
                manifest.add_input(TEACHER_CKPT, &dir.join(TEACHER_CKPT))?;
            }
        }

        self.scoped_run(manifest, |run_dir, m| {
            let mut student = StudentModel::new(config.student.clone(), seed)?;
            let cache = TeacherCache::new(&run_dir.join("teacher-cache"))?;
            let report = m.time_stage("train", || {
                train(&distill_cfg, &samples, teacher.as_ref(), &mut student, Some(&cache), seed)
            })?;

            let ckpt = run_dir.join(STUDENT_CKPT);
            checkpoint::save(&ckpt, "student", &subset_store(&student.params, "student."))?;
            m.add_output(STUDENT_CKPT, &ckpt)?;
            let d4dp = subset_store(&student.params, "d4dp.");
            if !d4dp.is_empty() {
                let dp = run_dir.join(D4DP_CKPT);
                checkpoint::save(&dp, "d4dp", &d4dp)?;
                m.add_output(D4DP_CKPT, &dp)?;
            }
            let rp = run_dir.join("train_report.json");
            std::fs::write(&rp, serde_json::to_string_pretty(&report)?)?;
            m.add_output("train_report.json", &rp)?;
            Ok(())
        })
    }

    pub fn eval(
        &self,
        data: &Path,
        student_dir: &Path,
        teacher_dir: Option<&Path>,
    ) -> Result<PathBuf> {
        let student_manifest = RunManifest::load(student_dir)?;
        student_manifest.verify_outputs()?;
        // The student must be evaluated under the geometry and variant it
        // was trained with; replay its config snapshot.
        let mut config = ExperimentConfig::default();
        for (k, v) in &student_manifest.config {
            config.apply(k, v)?;
        }
        config.finalize()?;
        let tpe_off = student_manifest.command.iter().any(|c| c == "TPE-off");
        if tpe_off {
            config.student.tpe_enabled = false;
        }
        let student = load_student(student_dir, &config)?;

        let teacher = if config.student.variant != Variant::Plain {
            let dir = teacher_dir.ok_or_else(|| {
                P4dError::MissingPrerequisite(format!(
                    "variant `{}` conditions on the teacher latent; pass --teacher",
                    config.student.variant.name()
                ))
            })?;
            Some(load_teacher(dir, &config)?)
        } else {
            None
        };

        let dataset = evalkit::load_dataset(&data.join(VQA_VAL))?;
        if dataset.empty_warning {
            eprintln!("warning: evaluation dataset {} is empty", data.join(VQA_VAL).display());
        }
        let scenes = load_scenes(data, SCENES_VAL)?;
        let videos = regenerate_videos(&scenes)?;

        let mut manifest = self.manifest(&["eval"], self.seed)?;
        manifest.add_input(VQA_VAL, &data.join(VQA_VAL))?;
        manifest.add_input(SCENES_VAL, &data.join(SCENES_VAL))?;
        manifest.add_input(STUDENT_CKPT, &student_dir.join(STUDENT_CKPT))?;

        let eval_format = self.config.eval_format;
        self.scoped_run(manifest, |run_dir, m| {
            let report = m.time_stage("eval", || {
                evaluate_student(&student, teacher.as_ref(), &dataset, &videos, self.seed)
            })?;
            let ext = match eval_format {
                ReportFormat::Csv => "csv",
                ReportFormat::Json => "json",
                ReportFormat::Table => "txt",
            };
            let path = run_dir.join(format!("report.{ext}"));
            evalkit::write_report(&report, eval_format, &path)?;
            m.add_output("report", &path)?;
            let jp = run_dir.join("eval_report.json");
            evalkit::write_report(&report, ReportFormat::Json, &jp)?;
            m.add_output("eval_report.json", &jp)?;
            println!("{}", evalkit::emit_report(&report, ReportFormat::Table)?);
            Ok(())
        })
    }

    pub fn sweep(
        &self,
        data: &Path,
        teacher_dir: &Path,
        rows: Option<&str>,
        seeds_per_row: u64,
    ) -> Result<PathBuf> {
        let rows: Vec<String> = match rows {
            Some(list) => list.split(',').map(|s| s.trim().to_string()).collect(),
            None => crate::distill::train::ablation_names().iter().map(|s| s.to_string()).collect(),
        };
        for row in &rows {
            // reject unknown rows before spending any compute
            ablation_config(row, &self.config.distill)?;
        }
        let seeds_per_row = seeds_per_row.max(1);

        let mut tasks: Vec<(String, u64)> = Vec::new();
        for row in &rows {
            for s in 0..seeds_per_row {
                tasks.push((row.clone(), self.seed + s));
            }
        }
        // Each task trains and evaluates in its own run directory; the
        // combined table is a pure aggregation of the per-run reports.
        let results: Vec<Result<(String, u64, f64)>> = run_parallel(self.jobs, tasks, |(row, seed)| {
            let train_dir = self.train(data, Some(teacher_dir), Some(&row), seed)?;
            let eval_dir = self.eval(data, &train_dir, Some(teacher_dir))?;
            let report: EvalReport =
                serde_json::from_str(&std::fs::read_to_string(eval_dir.join("eval_report.json"))?)?;
            Ok((row, seed, report.overall.accuracy()))
        });

        let mut by_row: BTreeMap<String, Vec<(u64, f64)>> = BTreeMap::new();
        for r in results {
            let (row, seed, acc) = r?;
            by_row.entry(row).or_default().push((seed, acc));
        }

        let manifest = self.manifest(&["sweep"], self.seed)?;
        self.scoped_run(manifest, |run_dir, m| {
            let mut table = String::new();
            table.push_str(&format!("{:<12}{:>8}{:>8}\n", "row", "mean", "seeds"));
            for row in &rows {
                let accs = &by_row[row];
                let mean = accs.iter().map(|(_, a)| a).sum::<f64>() / accs.len() as f64;
                table.push_str(&format!("{:<12}{:>8.3}{:>8}\n", row, mean, accs.len()));
            }
            print!("{table}");
            let tp = run_dir.join("sweep.txt");
            std::fs::write(&tp, &table)?;
            m.add_output("sweep.txt", &tp)?;
            let jp = run_dir.join("sweep.json");
            std::fs::write(&jp, serde_json::to_string_pretty(&by_row)?)?;
            m.add_output("sweep.json", &jp)?;
            Ok(())
        })
    }

    pub fn snapshot(
        &self,
        student_dir: &Path,
        teacher_dir: &Path,
        modality: &str,
        scene_index: u64,
    ) -> Result<PathBuf> {
        let m: Modality = modality.parse()?;
        let student_manifest = RunManifest::load(student_dir)?;
        let mut config = ExperimentConfig::default();
        for (k, v) in &student_manifest.config {
            config.apply(k, v)?;
        }
        config.finalize()?;
        let mut student = load_student(student_dir, &config)?;
        let d4dp_path = student_dir.join(D4DP_CKPT);
        if !d4dp_path.exists() {
            return Err(P4dError::MissingPrerequisite(format!(
                "snapshot needs the perception decoder weights; {} was not produced (recipe without distillation?)",
                d4dp_path.display()
            )));
        }
        let (_, d4dp) = checkpoint::load(&d4dp_path)?;
        for p in d4dp.iter() {
            student.params.add(&p.name, p.value.clone())?;
        }
        let teacher = load_teacher(teacher_dir, &config)?;

        let spec = sample_scene(self.seed, scene_index, &self.config.sampler)?;
        let (video, _, _) = generate_scene(&spec)?;

        let manifest = self.manifest(&["snapshot", modality], self.seed)?;
        let d4dp_hidden = config.distill.d4dp_hidden;
        self.scoped_run(manifest, |run_dir, man| {
            let sp = crate::distill::snapshot::snapshot_explicit(
                &student, &teacher, d4dp_hidden, &video, m, "final", run_dir,
            )?;
            man.add_output("student_map", &sp)?;
            let tp = crate::distill::snapshot::snapshot_teacher(&teacher, &video, m, "final", run_dir)?;
            man.add_output("teacher_map", &tp)?;
            Ok(())
        })
    }
}

/// Bounded-parallel map over tasks, preserving no particular order. Each
/// task is independent and writes only to its own run directory.
fn run_parallel<T, R>(jobs: usize, tasks: Vec<T>, f: impl Fn(T) -> R + Sync) -> Vec<R>
where
    T: Send,
    R: Send,
{
    if jobs <= 1 || tasks.len() <= 1 {
        return tasks.into_iter().map(f).collect();
    }
    let queue = std::sync::Mutex::new(tasks.into_iter().enumerate().collect::<Vec<_>>());
    let results = std::sync::Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let task = queue.lock().unwrap().pop();
                match task {
                    Some((i, t)) => {
                        let r = f(t);
                        results.lock().unwrap().push((i, r));
                    }
                    None => break,
                }
            });
        }
    });
    let mut out = results.into_inner().unwrap();
    out.sort_by_key(|(i, _)| *i);
    out.into_iter().map(|(_, r)| r).collect()
}

fn load_scenes(data: &Path, file: &str) -> Result<Vec<SceneSpec>> {
    let path = data.join(file);
    if !path.exists() {
        return Err(P4dError::MissingPrerequisite(format!(
            "{} not found; run `p4d synth` first and pass its run directory via --data",
            path.display()
        )));
    }
    read_jsonl(&path)
}

fn regenerate_signals(scenes: &[SceneSpec]) -> Result<Vec<(String, VideoTensor, SignalSet)>> {
    scenes
        .iter()
        .map(|spec| {
            let (video, signals, meta) = generate_scene(spec)?;
            Ok((meta.video_id, video, signals))
        })
        .collect()
}

fn regenerate_videos(scenes: &[SceneSpec]) -> Result<BTreeMap<String, VideoTensor>> {
    scenes
        .iter()
        .map(|spec| {
            let (video, _, meta) = generate_scene(spec)?;
            Ok((meta.video_id, video))
        })
        .collect()
}

fn pair_samples(scenes: &[SceneSpec], vqa: &[VQASample]) -> Result<Vec<TrainSample>> {
    let videos = regenerate_videos(scenes)?;
    vqa.iter()
        .map(|sample| {
            let video = videos.get(&sample.video_id).ok_or_else(|| {
                P4dError::MissingPrerequisite(format!(
                    "VQA sample references video {} absent from the scene file",
                    sample.video_id
                ))
            })?;
            Ok(TrainSample { video: video.clone(), sample: sample.clone() })
        })
        .collect()
}

/// Copy checkpoint values into a freshly constructed store; name sets and
/// shapes must match exactly.
fn load_params_into(target: &mut ParamStore, loaded: &ParamStore, what: &str) -> Result<()> {
    for p in loaded.iter() {
        let slot = target.get_mut(&p.name).ok_or_else(|| {
            P4dError::Checkpoint(format!("{what}: unexpected param `{}`", p.name))
        })?;
        if slot.value.shape() != p.value.shape() {
            return Err(P4dError::Checkpoint(format!(
                "{what}: param `{}` has shape {:?}, expected {:?}",
                p.name,
                p.value.shape(),
                slot.value.shape()
            )));
        }
        slot.value = p.value.clone();
    }
    if target.len() != loaded.len() {
        for name in target.names() {
            if loaded.get(&name).is_none() {
                return Err(P4dError::Checkpoint(format!("{what}: missing param `{name}`")));
            }
        }
    }
    Ok(())
}

pub fn load_teacher(dir: &Path, config: &ExperimentConfig) -> Result<TeacherModel> {
    let path = dir.join(TEACHER_CKPT);
    if !path.exists() {
        return Err(P4dError::MissingPrerequisite(format!(
            "{} not found; run `p4d train-teacher` first and pass its run directory via --teacher",
            path.display()
        )));
    }
    let (section, store) = checkpoint::load(&path)?;
    if section != "teacher4d" {
        return Err(P4dError::Checkpoint(format!(
            "{} holds section `{section}`, expected `teacher4d`",
            path.display()
        )));
    }
    let mut teacher = TeacherModel::new(config.teacher.clone(), 0)?;
    load_params_into(&mut teacher.params, &store, "teacher checkpoint")?;
    teacher.freeze();
    Ok(teacher)
}

pub fn load_student(dir: &Path, config: &ExperimentConfig) -> Result<StudentModel> {
    let path = dir.join(STUDENT_CKPT);
    if !path.exists() {
        return Err(P4dError::MissingPrerequisite(format!(
            "{} not found; run `p4d train` first and pass its run directory via --student",
            path.display()
        )));
    }
    let (section, store) = checkpoint::load(&path)?;
    if section != "student" {
        return Err(P4dError::Checkpoint(format!(
            "{} holds section `{section}`, expected `student`",
            path.display()
        )));
    }
    let mut student = StudentModel::new(config.student.clone(), 0)?;
    load_params_into(&mut student.params, &store, "student checkpoint")?;
    Ok(student)
}

/// Answer every sample in dataset order and score. Non-plain variants fetch
/// one teacher latent per video.
pub fn evaluate_student(
    student: &StudentModel,
    teacher: Option<&TeacherModel>,
    dataset: &evalkit::EvalDataset,
    videos: &BTreeMap<String, VideoTensor>,
    seed: u64,
) -> Result<EvalReport> {
    let mut latents: BTreeMap<String, TeacherLatent> = BTreeMap::new();
    let mut predictions = Vec::with_capacity(dataset.samples.len());
    for sample in &dataset.samples {
        let video = videos.get(&sample.video_id).ok_or_else(|| {
            P4dError::MissingPrerequisite(format!(
                "no scene for video {} in the evaluation set",
                sample.video_id
            ))
        })?;
        let latent = match (student.config.variant, teacher) {
            (Variant::Plain, _) => None,
            (_, Some(t)) => {
                if !latents.contains_key(&sample.video_id) {
                    latents.insert(sample.video_id.clone(), t.teacher_encode(video, &sample.video_id)?);
                }
                latents.get(&sample.video_id)
            }
            (v, None) => {
                return Err(P4dError::MissingPrerequisite(format!(
                    "variant `{}` needs the teacher at evaluation time",
                    v.name()
                )))
            }
        };
        predictions.push(student.answer_mcq(video, sample, latent)?);
    }
    mcq_accuracy(&predictions, dataset, &student_hash(student), seed)
}

/// Quick self-checks, one printed line each. Returns an error (nonzero
/// exit) if any check fails; the full suites live in `cargo test`.
pub fn verify() -> Result<()> {
    let mut failures = 0usize;
    let mut check = |name: &str, ok: bool| {
        println!("{} {}", if ok { "PASS" } else { "FAIL" }, name);
        if !ok {
            failures += 1;
        }
    };

    let d = DistillConfig::default();
    check(
        "loss constants (alpha, beta, lambda)",
        d.alpha == 0.5 && d.beta == 0.1 && d.lambda == [1.0, 0.1, 0.05, 0.05],
    );
    check(
        "timestamp-encoding timescale",
        crate::student::StudentConfig::default().tpe_timescale == 10_000.0,
    );
    check(
        "modality channels (1, 2, 1, 6)",
        Modality::all().map(|m| m.channels()) == [1, 2, 1, 6],
    );
    check(
        "perception decoder structure",
        PerceptionDecoder::new(64, 256, 64).training_only,
    );

    // frame-count arithmetic: duration = (N - 1) / fps
    let spec = sample_scene(0, 0, &crate::scenegen::SamplerConfig::default())?;
    check("scene duration formula", {
        let d = spec.duration();
        (d - (spec.n_frames as f64 - 1.0) / spec.fps).abs() == 0.0
    });

    // scene oracle spot-check on a few random scenes
    let mut oracle_ok = true;
    for i in 0..3 {
        let spec = sample_scene(1, i, &crate::scenegen::SamplerConfig::default())?;
        let (_, signals, _) = generate_scene(&spec)?;
        let n = signals.camray.shape()[0];
        for fi in 0..n {
            for y in 0..signals.camray.shape()[1] {
                for x in 0..signals.camray.shape()[2] {
                    let d: f64 = (0..3).map(|c| signals.camray[[fi, y, x, c]].powi(2)).sum();
                    if (d.sqrt() - 1.0).abs() > 1e-9 {
                        oracle_ok = false;
                    }
                }
            }
        }
    }
    check("camera rays unit-norm", oracle_ok);

    if failures > 0 {
        return Err(P4dError::InvalidArgument(format!("{failures} verification check(s) failed")));
    }
    println!("all checks passed");
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_ctx(dir: &Path) -> Ctx {
        let mut config = ExperimentConfig::default();
        config.train_scenes = 2;
        config.val_scenes = 1;
        config.pretrain.steps = 2;
        config.distill.steps = 2;
        config.sampler.image_size = (16, 16);
        config.sampler.n_frames = 4;
        config.finalize().unwrap();
        Ctx { config, config_path: None, seed: 1, out: dir.to_path_buf(), jobs: 1 }
    }

    #[test]
    fn float32_mode_is_rejected() {
        let code = run_from(&["p4d", "--float64", "false", "verify"]);
        assert_eq!(code, 2);
    }

    #[test]
    fn unknown_flag_is_a_usage_error() {
        assert_eq!(run_from(&["p4d", "--bogus", "synth"]), 2);
    }

    #[test]
    fn missing_prerequisite_names_the_artifact() {
        let dir = tempfile::tempdir().unwrap();
        let ctx = tiny_ctx(dir.path());
        let err = ctx.train_teacher(&dir.path().join("nope")).unwrap_err();
        assert!(matches!(err, P4dError::MissingPrerequisite(_)), "{err}");
        assert!(err.to_string().contains("scenes-train.jsonl"));
    }

    #[test]
    fn synth_writes_manifested_outputs_and_is_reproducible() {
        let dir = tempfile::tempdir().unwrap();
        let ctx = tiny_ctx(dir.path());
        let run = ctx.synth().unwrap();
        let m = RunManifest::load(&run).unwrap();
        assert_eq!(m.outputs.len(), 4);
        m.verify_outputs().unwrap();

        // identical invocation reuses the same run dir with identical hashes
        let again = ctx.synth().unwrap();
        assert_eq!(run, again);
        let m2 = RunManifest::load(&again).unwrap();
        assert_eq!(m.outputs, m2.outputs);
    }

    #[test]
    fn pipeline_runs_end_to_end_on_a_tiny_config() {
        let dir = tempfile::tempdir().unwrap();
        let ctx = tiny_ctx(dir.path());
        let data = ctx.synth().unwrap();
        let teacher = ctx.train_teacher(&data).unwrap();
        let student = ctx.train(&data, Some(&teacher), None, 1).unwrap();
        assert!(student.join(STUDENT_CKPT).exists());
        assert!(student.join(D4DP_CKPT).exists());
        let eval = ctx.eval(&data, &student, Some(&teacher)).unwrap();
        assert!(eval.join("eval_report.json").exists());
        let snap = ctx.snapshot(&student, &teacher, "depth", 0).unwrap();
        assert!(snap.join("final-student-depth.pgm").exists() || std::fs::read_dir(&snap).unwrap().count() >= 2);
    }

    #[test]
    fn zero_shot_recipe_needs_no_teacher_and_saves_no_decoder() {
        let dir = tempfile::tempdir().unwrap();
        let ctx = tiny_ctx(dir.path());
        let data = ctx.synth().unwrap();
        let run = ctx.train(&data, None, Some("Zero-shot"), 1).unwrap();
        assert!(run.join(STUDENT_CKPT).exists());
        assert!(!run.join(D4DP_CKPT).exists());
    }

    #[test]
    fn failed_run_removes_outputs_but_writes_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let ctx = tiny_ctx(dir.path());
        let manifest = ctx.manifest(&["train"], 1).unwrap();
        let run_dir = manifest.run_dir(&ctx.out);
        let err = ctx
            .scoped_run(manifest, |rd, m| {
                let partial = rd.join("partial.ckpt");
                std::fs::write(&partial, "half-written").unwrap();
                m.add_output("partial", &partial)?;
                Err(P4dError::NonFinite("loss diverged".into()))
            })
            .unwrap_err();
        assert_eq!(exit_code(&err), 4);
        assert!(!run_dir.join("partial.ckpt").exists());
        let m = RunManifest::load(&run_dir).unwrap();
        assert!(m.status.starts_with("failed:"), "{}", m.status);
        assert!(m.outputs.is_empty());
    }

    #[test]
    fn verify_suite_passes() {
        verify().unwrap();
    }

    #[test]
    fn exit_codes_cover_failure_classes() {
        assert_eq!(exit_code(&P4dError::Config("x".into())), 2);
        assert_eq!(exit_code(&P4dError::MissingPrerequisite("x".into())), 3);
        assert_eq!(exit_code(&P4dError::NonFinite("x".into())), 4);
        assert_eq!(exit_code(&P4dError::Checkpoint("x".into())), 5);
    }

    #[test]
    fn run_parallel_preserves_task_results() {
        let out = run_parallel(3, (0..10).collect(), |i: i32| i * 2);
        assert_eq!(out, (0..10).map(|i| i * 2).collect::<Vec<_>>());
    }
}
