use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use jbsv::corpus::{load_embeddings, load_scores, load_trials, save_embeddings, save_scores, save_trials};
use jbsv::hybrid::{
    history_csv, init_from_generative, init_mahalanobis, init_random, restrict, train, LossConfig, RestrictMode,
    SiameseModel, TrainConfig, Variant,
};
use jbsv::jb::{fit_jb_em, EmConfig};
use jbsv::metrics::{score_histograms, DcfParams, EvalReport};
use jbsv::synth::{generate, sample_trials, SynthConfig, UttCount};
use jbsv::transform::{fit_lda, LdaTransform};
use jbsv::{EmbeddingSet, JbModel, ScoreSet, Trial};
use nalgebra::DVector;

use crate::args::*;
use crate::manifest::{sibling, Manifest};

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

pub fn synth(mut a: SynthArgs) -> Result<()> {
    let truth = a.truth.clone().unwrap_or_else(|| sibling(&a.out, ".truth"));
    a.truth = Some(truth.clone());
    let cfg = SynthConfig {
        n_speakers: a.speakers,
        utts: match a.utts_max {
            Some(hi) => UttCount::Range(a.utts, hi),
            None => UttCount::Fixed(a.utts),
        },
        dim: a.dim,
        cu: a.cu.0.clone(),
        cn: a.cn.0.clone(),
        mismatch: a.mismatch.to_mismatch(a.channel_seed),
        seed: a.seed,
    };
    let (set, gt) = generate(&cfg)?;
    save_embeddings(&set, &a.out)?;
    JbModel::from_covariances(gt.cu, gt.cn)?.save(&truth)?;
    log::info!("wrote {} utterances of {} speakers to {}", set.len(), a.speakers, a.out.display());
    Manifest::new("synth", Some(a.seed), &a)?
        .output(&a.out)
        .output(&truth)
        .write()?;
    Ok(())
}

pub fn trials(a: TrialsArgs) -> Result<()> {
    let set = load_embeddings(&a.embeddings)?;
    let list = sample_trials(&set, a.targets, a.nontargets, a.seed)?;
    save_trials(&list, &a.out)?;
    Manifest::new("trials", Some(a.seed), &a)?
        .input(&a.embeddings)
        .output(&a.out)
        .write()?;
    Ok(())
}

pub fn normalize_embeddings(a: NormalizeArgs) -> Result<()> {
    let set = load_embeddings(&a.embeddings)?;
    let t = match &a.lda {
        Some(p) => LdaTransform::load(p)?,
        None => LdaTransform::identity(set.dim()),
    };
    save_embeddings(&t.transform_set(&set, true)?, &a.out)?;
    let mut m = Manifest::new("normalize-embeddings", None, &a)?.input(&a.embeddings);
    if let Some(p) = &a.lda {
        m = m.input(p);
    }
    m.output(&a.out).write()?;
    Ok(())
}

pub fn fit_lda_cmd(a: FitLdaArgs) -> Result<()> {
    let set = load_embeddings(&a.embeddings)?;
    let t = fit_lda(&set, a.dim)?;
    t.save(&a.out)?;
    Manifest::new("fit-lda", None, &a)?
        .input(&a.embeddings)
        .output(&a.out)
        .write()?;
    Ok(())
}

pub fn fit_jb(a: FitJbArgs) -> Result<()> {
    let set = load_embeddings(&a.embeddings)?;
    let t = LdaTransform::load(&a.lda)?;
    let h = t.transform_set(&set, true)?;
    let cfg = EmConfig {
        max_iters: a.max_iters,
        rel_tol: a.rel_tol,
        posterior_cov: !a.point_estimate,
        ..Default::default()
    };
    let m = fit_jb_em(h.vectors(), h.speakers(), &cfg)?;
    m.save(&a.out)?;
    Manifest::new("fit-jb", None, &a)?
        .input(&a.embeddings)
        .input(&a.lda)
        .output(&a.out)
        .write()?;
    Ok(())
}

pub fn init_hybrid(mut a: InitHybridArgs) -> Result<()> {
    let t = LdaTransform::load(&a.lda)?;
    let model = match a.init {
        InitKind::Jb => {
            let path = a.jb.as_ref().context("--jb is required for jb init")?;
            let jb = JbModel::load(path)?;
            if a.dim.is_some_and(|d| d != jb.dim()) {
                bail!("--dim {} disagrees with the JB model dimension {}", a.dim.unwrap_or(0), jb.dim());
            }
            a.dim = Some(jb.dim());
            match a.variant {
                Variant::TwoBranch => init_from_generative(&t, &jb)?,
                // the A = G setting: one branch carrying P_A
                Variant::Mahalanobis => init_mahalanobis(&t, jb.p_a.clone())?,
            }
        }
        InitKind::Random => {
            let d = *a.dim.get_or_insert(t.output_dim());
            init_random(t.input_dim(), d, a.seed, a.variant).with_mean(t.mean.clone())?
        }
    };
    model.save(&a.out)?;
    let mut m = Manifest::new("init-hybrid", Some(a.seed), &a)?.input(&a.lda);
    if let Some(p) = &a.jb {
        m = m.input(p);
    }
    m.output(&a.out).write()?;
    Ok(())
}

pub fn train_cmd(mut a: TrainArgs) -> Result<()> {
    let history = a.history.clone().unwrap_or_else(|| sibling(&a.out, ".history.csv"));
    a.history = Some(history.clone());
    let model = SiameseModel::load(&a.model)?;
    let set = load_embeddings(&a.embeddings)?;
    let tcfg = TrainConfig {
        lr: a.lr,
        batch_size: a.batch_size,
        epochs: a.epochs,
        pos_fraction: a.pos_fraction,
        split: a.split,
        seed: a.seed,
        freeze: a.freeze.clone(),
        val_trials: a.val_trials,
    };
    let lcfg = LossConfig {
        kind: a.loss,
        p_tar: a.p_tar,
        c_miss: a.c_miss,
        c_fa: a.c_fa,
        w_s: a.w_s,
    };
    let out = train(&model, &set, &tcfg, &lcfg)?;
    for r in &out.history {
        log::info!("epoch {} train {:.6} val {:.6}", r.epoch, r.train_loss, r.val_loss);
    }
    out.model.save(&a.out)?;
    write_text(&history, &history_csv(&out.history))?;
    Manifest::new("train", Some(a.seed), &a)?
        .input(&a.model)
        .input(&a.embeddings)
        .output(&a.out)
        .output(&history)
        .write()?;
    Ok(())
}

/// Scores trials with a per-pair scorer over the rows of `set`.
pub fn score_trials(
    set: &EmbeddingSet,
    trials: &[Trial],
    scorer: impl Fn(&DVector<f64>, &DVector<f64>) -> jbsv::Result<f64>,
) -> Result<ScoreSet> {
    let row = |id: &str| set.position(id).with_context(|| format!("unknown utterance id `{id}`"));
    let scores = trials
        .iter()
        .map(|t| Ok(scorer(&set.vector(row(&t.enroll_id)?), &set.vector(row(&t.test_id)?))?))
        .collect::<Result<Vec<f64>>>()?;
    Ok(ScoreSet::new(trials.to_vec(), scores)?)
}

/// Generative pipeline scores: LDA, length normalization, then the JB LLR.
pub fn score_generative(set: &EmbeddingSet, trials: &[Trial], t: &LdaTransform, jb: &JbModel) -> Result<ScoreSet> {
    let h = t.transform_set(set, true)?;
    score_trials(&h, trials, |a, b| jb.score(a, b))
}

pub fn score(a: ScoreArgs) -> Result<()> {
    let set = load_embeddings(&a.embeddings)?;
    let list = load_trials(&a.trials, Some(&set))?;
    let mut m = Manifest::new("score", None, &a)?.input(&a.embeddings).input(&a.trials);
    let scores = match (&a.model, &a.lda, &a.jb) {
        (Some(p), _, _) => {
            m = m.input(p);
            let model = SiameseModel::load(p)?;
            score_trials(&set, &list, |x, y| model.score(x, y))?
        }
        (None, Some(l), Some(j)) => {
            m = m.input(l).input(j);
            score_generative(&set, &list, &LdaTransform::load(l)?, &JbModel::load(j)?)?
        }
        _ => bail!("give either --model or both --lda and --jb"),
    };
    // unlabeled on disk; labels stay in the trial file
    let unlabeled: Vec<Trial> = scores
        .trials
        .iter()
        .map(|t| Trial::new(t.enroll_id.clone(), t.test_id.clone(), None))
        .collect();
    save_scores(&ScoreSet::new(unlabeled, scores.scores)?, &a.out)?;
    m.output(&a.out).write()?;
    Ok(())
}

fn operating_points(c: &CostArgs) -> Result<Vec<DcfParams>> {
    Ok(c.p_tar
        .iter()
        .map(|&p| DcfParams::new(p, c.c_miss, c.c_fa))
        .collect::<jbsv::Result<_>>()?)
}

/// Summary line followed by the EER threshold and raw/normalized minDCF per operating point.
pub fn report_text(r: &EvalReport) -> String {
    let mut out = r.summary();
    out.push('\n');
    let _ = writeln!(out, "eer {} threshold {}", r.eer, r.eer_threshold);
    for e in &r.min_dcf {
        let _ = writeln!(
            out,
            "min_dcf p_tar {} c_miss {} c_fa {} raw {} normalized {} threshold {}",
            e.params.p_tar, e.params.c_miss, e.params.c_fa, e.min_dcf.raw, e.min_dcf.normalized, e.min_dcf.threshold
        );
    }
    out
}

pub fn eval(mut a: EvalArgs) -> Result<()> {
    let det = a.det.clone().unwrap_or_else(|| sibling(&a.out, ".det.csv"));
    let hist = a.hist.clone().unwrap_or_else(|| sibling(&a.out, ".hist.csv"));
    a.det = Some(det.clone());
    a.hist = Some(hist.clone());
    let list = load_trials(&a.trials, None)?;
    let scores = load_scores(&a.scores)?.with_labels(&list)?;
    let report = EvalReport::compute(&scores, &operating_points(&a.costs)?)?;
    println!("{}", report.summary());
    write_text(&a.out, &report_text(&report))?;
    write_text(&det, &report.det_csv())?;
    write_text(&hist, &score_histograms(&scores, a.bins)?.to_csv())?;
    Manifest::new("eval", None, &a)?
        .input(&a.scores)
        .input(&a.trials)
        .output(&a.out)
        .output(&det)
        .output(&hist)
        .write()?;
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub setting: String,
    pub report: EvalReport,
}

pub const ALL_MODES: [RestrictMode; 4] = [
    RestrictMode::AOnly,
    RestrictMode::GOnly,
    RestrictMode::GFromA,
    RestrictMode::AFromG,
];

/// Evaluates the full model, each restricted setting and optionally a Mahalanobis model.
pub fn ablation_rows(
    model: &SiameseModel,
    md_model: Option<&SiameseModel>,
    set: &EmbeddingSet,
    trials: &[Trial],
    points: &[DcfParams],
    modes: &[RestrictMode],
) -> Result<Vec<AblationRow>> {
    if model.variant() != Variant::TwoBranch {
        bail!("ablation needs a two-branch model");
    }
    let mut candidates = vec![("full".to_string(), model.clone())];
    for &mode in modes {
        candidates.push((mode.to_string(), restrict(model, mode)?));
    }
    if let Some(md) = md_model {
        candidates.push((Variant::Mahalanobis.to_string(), md.clone()));
    }
    candidates
        .into_iter()
        .map(|(setting, m)| {
            let scores = score_trials(set, trials, |x, y| m.score(x, y))?;
            Ok(AblationRow {
                setting,
                report: EvalReport::compute(&scores, points)?,
            })
        })
        .collect()
}

/// Whitespace-aligned table: setting, EER, then normalized minDCF per operating point.
pub fn ablation_table(rows: &[AblationRow]) -> String {
    let mut out = format!("{:<12} {:>10}", "setting", "EER");
    if let Some(first) = rows.first() {
        for e in &first.report.min_dcf {
            let _ = write!(out, " {:>14}", format!("minDCF({})", e.params.p_tar));
        }
    }
    out.push('\n');
    for r in rows {
        let _ = write!(out, "{:<12} {:>10.6}", r.setting, r.report.eer);
        for e in &r.report.min_dcf {
            let _ = write!(out, " {:>14.6}", e.min_dcf.normalized);
        }
        out.push('\n');
    }
    out
}

pub fn ablate(mut a: AblateArgs) -> Result<()> {
    if a.mode.is_empty() {
        a.mode = ALL_MODES.to_vec();
    }
    let model = SiameseModel::load(&a.model)?;
    let md = a.md_model.as_deref().map(SiameseModel::load).transpose()?;
    let set = load_embeddings(&a.embeddings)?;
    let list = load_trials(&a.trials, Some(&set))?;
    let rows = ablation_rows(&model, md.as_ref(), &set, &list, &operating_points(&a.costs)?, &a.mode)?;
    let table = ablation_table(&rows);
    print!("{table}");
    write_text(&a.out, &table)?;
    let mut m = Manifest::new("ablate", None, &a)?.input(&a.model);
    if let Some(p) = &a.md_model {
        m = m.input(p);
    }
    m.input(&a.embeddings).input(&a.trials).output(&a.out).write()?;
    Ok(())
}
