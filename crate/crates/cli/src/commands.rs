//! One function per subcommand. Each writes its artifacts under `out` and
//! returns the run manifest describing them.

use std::path::{Path, PathBuf};

use specgrad::adv_train::{adversarial_train, dataset_errors, eval_ood, OodPool};
use specgrad::attack::{batch_attack, Dictionary, Pipeline, TeacherStudent};
use specgrad::dataset::{build_dataset, Dataset};
use specgrad::diagnostics::{avg_perturbation, correlate, mean_spectral_report, periodicity_check, RunManifest};
use specgrad::io::{num, read_field, write_field, write_pgm, CsvTable};
use specgrad::operators::{load_checkpoint, samples_from, save_checkpoint, train, ArchSpec, Model, Normalizer};
use specgrad::solvers::{forcing_pattern, Solver, SolverConfig};
use specgrad::spectral::Field;
use specgrad::{Error, Result};

use crate::config::{self, parse};

/// Subcommand names as they appear on the command line and in manifests.
pub const COMMANDS: [&str; 6] = ["gen-data", "train", "attack", "adv-train", "eval-ood", "diagnose"];

/// Run `command` with the configuration `text` read from `source`.
pub fn run(command: &str, source: &Path, text: &str, out: &Path) -> Result<RunManifest> {
    let mut manifest = RunManifest::new(command, text);
    match command {
        "gen-data" => gen_data(&parse(source, text)?, out, &mut manifest)?,
        "train" => train_cmd(&parse(source, text)?, out, &mut manifest)?,
        "attack" => attack_cmd(&parse(source, text)?, out, &mut manifest)?,
        "adv-train" => adv_train_cmd(&parse(source, text)?, out, &mut manifest)?,
        "eval-ood" => eval_ood_cmd(&parse(source, text)?, out, &mut manifest)?,
        "diagnose" => diagnose(&parse(source, text)?, out, &mut manifest)?,
        other => return Err(Error::Config(format!("unknown command {other:?}"))),
    }
    Ok(manifest)
}

fn write_csv(t: &CsvTable, path: PathBuf, m: &mut RunManifest) -> Result<()> {
    t.write(&path)?;
    m.add_artifact(path);
    Ok(())
}

/// Solver that labelled `data`; truncated datasets cannot be re-solved.
fn data_solver(data: &Dataset, dir: &Path) -> Result<SolverConfig> {
    if data.manifest.store_n.is_some() {
        return Err(Error::Config(format!(
            "{} stores truncated fields; its teacher cannot be re-run on them",
            dir.display()
        )));
    }
    Ok(data.manifest.solver.clone())
}

fn gen_data(cfg: &config::GenData, out: &Path, m: &mut RunManifest) -> Result<()> {
    let d = build_dataset(&cfg.name, &cfg.generator, &cfg.solver, cfg.count, cfg.seed, cfg.store_n)?;
    for p in d.save(out)? {
        m.add_artifact(p);
    }
    m.seeds = vec![cfg.seed];
    Ok(())
}

fn history_csv(train: &[f64], val: &[f64]) -> CsvTable {
    let mut t = CsvTable::new(&["epoch", "train", "val"]);
    for (e, l) in train.iter().enumerate() {
        let v = val.get(e).map(|v| num(*v)).unwrap_or_default();
        t.push(vec![(e + 1).to_string(), num(*l), v]);
    }
    t
}

fn train_cmd(cfg: &config::Train, out: &Path, m: &mut RunManifest) -> Result<()> {
    let data = Dataset::load(&cfg.data)?;
    let first = data
        .inputs
        .first()
        .ok_or_else(|| Error::Config(format!("{} holds no samples", cfg.data.display())))?;
    let samples = samples_from(&cfg.arch, &data)?;
    let val = match &cfg.val {
        Some(p) => samples_from(&cfg.arch, &Dataset::load(p)?)?,
        None => Vec::new(),
    };
    let mut model = Model::init(cfg.arch.clone(), first.grid().n(), cfg.init_seed)?;
    if cfg.normalize {
        model.set_normalizer(Some(Normalizer::fit(&samples, cfg.shared_normalizer)));
    }
    let (model, h) = train(&model, &samples, &val, &cfg.train)?;
    let path = out.join("model.sgno");
    save_checkpoint(&path, &model)?;
    m.add_artifact(path);
    write_csv(&history_csv(&h.train, &h.val), out.join("history.csv"), m)?;
    m.seeds = vec![cfg.init_seed, cfg.train.seed];
    Ok(())
}

fn pipeline(model: &Model, cfg: &config::Attack) -> Result<Pipeline> {
    match (model.arch(), &cfg.frame_modes) {
        (ArchSpec::Fno2d { t_in, direct: false, .. }, modes) => Ok(Pipeline::Frames {
            modes: modes.clone().unwrap_or_else(|| vec![cfg.mode; *t_in]),
        }),
        (_, None) => Ok(Pipeline::Direct { mode: cfg.mode }),
        (_, Some(_)) => Err(Error::Config("frame_modes needs a recurrent FNO-2D student".into())),
    }
}

fn attack_cmd(cfg: &config::Attack, out: &Path, m: &mut RunManifest) -> Result<()> {
    let model = load_checkpoint(&cfg.model)?;
    let data = Dataset::load(&cfg.data)?;
    let solver_cfg = match &cfg.solver {
        Some(s) => s.clone(),
        None => data_solver(&data, &cfg.data)?,
    };
    let solver = Solver::new(&solver_cfg)?;
    let count = cfg.count.unwrap_or(data.len()).min(data.len());
    let inputs: Vec<Vec<f64>> = data.inputs[..count].iter().map(|f| f.values().to_vec()).collect();
    if let Some(f) = data.inputs.first().filter(|f| f.grid() != solver.grid()) {
        return Err(Error::GridMismatch(format!(
            "inputs have {} points per axis, the teacher {}",
            f.grid().n(),
            solver.grid().n()
        )));
    }
    let dict = match &cfg.dictionary {
        Some(p) => {
            let d = Dictionary::from_dataset(&Dataset::load(p)?);
            Some(cfg.dict_size.map_or(d.clone(), |k| d.truncated(k)))
        }
        None => None,
    };
    let pipe = pipeline(&model, cfg)?;
    let results = batch_attack(&inputs, &cfg.attack, |_, x0| {
        TeacherStudent::new(&model, &solver, cfg.loss, pipe.clone(), dict.as_ref(), x0)
    })?;

    let mut summary = CsvTable::new(&["index", "initial_loss", "final_loss", "ratio", "frozen"]);
    for (i, r) in results.iter().enumerate() {
        summary.push(vec![
            i.to_string(),
            num(r.initial_loss()),
            num(r.final_loss()),
            num(r.final_loss() / r.initial_loss()),
            r.frozen.to_string(),
        ]);
        write_csv(&r.curve_csv(), out.join(format!("curves/curve_{i:04}.csv")), m)?;
        let pert = Field::new(solver.grid().clone(), r.perturbation.clone())?;
        let p = out.join(format!("perturbations/pert_{i:04}.sgf"));
        write_field(&p, &pert)?;
        m.add_artifact(p);
        m.timings += r.timings;
    }
    write_csv(&summary, out.join("summary.csv"), m)?;
    m.seeds = vec![cfg.attack.seed];
    Ok(())
}

fn load_pool(paths: &[PathBuf]) -> Result<OodPool> {
    Ok(OodPool {
        datasets: paths.iter().map(|p| Dataset::load(p)).collect::<Result<_>>()?,
    })
}

fn adv_train_cmd(cfg: &config::AdvTrain, out: &Path, m: &mut RunManifest) -> Result<()> {
    let model = load_checkpoint(&cfg.model)?;
    let data = Dataset::load(&cfg.data)?;
    let solver_cfg = data_solver(&data, &cfg.data)?;
    let pool = load_pool(&cfg.pool)?;
    let test = cfg.test.as_deref().map(Dataset::load).transpose()?;
    let before = test.as_ref().map(|t| dataset_errors(&model, t)).transpose()?;
    let ood = (!pool.datasets.is_empty()).then_some(&pool);
    let outcome = adversarial_train(&model, &data, &solver_cfg, &cfg.adv, ood)?;

    let path = out.join("model.sgno");
    save_checkpoint(&path, &outcome.model)?;
    m.add_artifact(path);
    write_csv(&history_csv(&outcome.history.train, &[]), out.join("history.csv"), m)?;
    let mut rounds = CsvTable::new(&["round", "attacked", "dropped", "pool_size"]);
    let mut tables = CsvTable::new(&["name", "rmse", "mae", "delta_rmse", "delta_mae", "round"]);
    for r in &outcome.rounds {
        rounds.push(vec![r.round.to_string(), r.attacked.to_string(), r.dropped.to_string(), r.pool_size.to_string()]);
        if let Some(t) = &r.table {
            t.append_to(&mut tables, r.round);
        }
    }
    if !outcome.rounds.is_empty() {
        write_csv(&rounds, out.join("rounds.csv"), m)?;
    }
    if !tables.is_empty() {
        write_csv(&tables, out.join("ood_rounds.csv"), m)?;
    }
    if let (Some(t), Some((r0, a0))) = (&test, before) {
        let (r1, a1) = dataset_errors(&outcome.model, t)?;
        let mut csv = CsvTable::new(&["metric", "before", "after"]);
        csv.push(vec!["rmse".into(), num(r0), num(r1)]);
        csv.push(vec!["mae".into(), num(a0), num(a1)]);
        write_csv(&csv, out.join("test.csv"), m)?;
    }
    m.seeds = vec![cfg.adv.seed, cfg.adv.train.seed, cfg.adv.attack.seed];
    Ok(())
}

fn eval_ood_cmd(cfg: &config::EvalOod, out: &Path, m: &mut RunManifest) -> Result<()> {
    let model = load_checkpoint(&cfg.model)?;
    let reference = match &cfg.reference {
        Some(p) => load_checkpoint(p)?,
        None => model.clone(),
    };
    let table = eval_ood(&model, &load_pool(&cfg.pool)?, &reference)?;
    write_csv(&table.csv(0), out.join("ood.csv"), m)
}

fn diagnose(cfg: &config::Diagnose, out: &Path, m: &mut RunManifest) -> Result<()> {
    let meta = std::fs::metadata(&cfg.results).map_err(|e| Error::Io {
        path: cfg.results.clone(),
        source: e,
    })?;
    if !meta.is_dir() {
        return Err(Error::Config(format!("{} is not a directory", cfg.results.display())));
    }
    let dir = cfg.results.join("perturbations");
    let mut files: Vec<PathBuf> = match std::fs::read_dir(&dir) {
        Ok(entries) => entries
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "sgf"))
            .collect(),
        Err(_) => Vec::new(),
    };
    files.sort();
    if files.is_empty() && cfg.frames.is_none() {
        return Err(Error::NothingToDiagnose(cfg.results.clone()));
    }
    if !files.is_empty() {
        let fields = files.iter().map(|p| read_field(p)).collect::<Result<Vec<_>>>()?;
        let avg = avg_perturbation(&fields)?;
        let p = out.join("avg_perturbation.sgf");
        write_field(&p, &avg)?;
        m.add_artifact(p);
        let p = out.join("avg_perturbation.pgm");
        write_pgm(&p, &avg)?;
        m.add_artifact(p);
        if avg.grid().dims() == 2 {
            let mut corr = CsvTable::new(&["pattern", "correlation"]);
            for &pat in &cfg.patterns {
                let c = correlate(&avg, &forcing_pattern(pat, avg.grid())?)?;
                corr.push(vec![pat.name().into(), num(c)]);
            }
            write_csv(&corr, out.join("correlations.csv"), m)?;
        }
        let mut seams = CsvTable::new(&["field", "score"]);
        for (p, f) in files.iter().zip(&fields) {
            let name = p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            seams.push(vec![name, num(periodicity_check(f))]);
        }
        seams.push(vec!["average".into(), num(periodicity_check(&avg))]);
        write_csv(&seams, out.join("periodicity.csv"), m)?;
    }
    if let Some(frames) = &cfg.frames {
        let data = Dataset::load(frames)?;
        if data.frames.is_empty() {
            return Err(Error::Config(format!("{} holds no frame stacks", frames.display())));
        }
        let report = mean_spectral_report(&data.frames)?;
        for p in report.write(&out.join("spectral"))? {
            m.add_artifact(p);
        }
    }
    Ok(())
}
