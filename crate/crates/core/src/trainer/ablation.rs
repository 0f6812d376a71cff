use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::eval::{evaluate, EvalConfig, EvalMode};
use super::{train, TrainConfig, TrainOptions};
use crate::data::PairedSample;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "variant", content = "m")]
pub enum Variant {
    Full,
    NoEqv,
    Attention1d,
    SingleScale,
    NoPenState,
    L1Regression,
    /// Full model with `M` mixture components.
    Mixtures(usize),
}

impl Variant {
    pub fn name(&self) -> String {
        match self {
            Variant::Full => "full".into(),
            Variant::NoEqv => "no_eqv".into(),
            Variant::Attention1d => "attention_1d".into(),
            Variant::SingleScale => "single_scale".into(),
            Variant::NoPenState => "no_pen_state".into(),
            Variant::L1Regression => "l1_regression".into(),
            Variant::Mixtures(m) => format!("m{m}"),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "full" => Variant::Full,
            "no_eqv" => Variant::NoEqv,
            "attention_1d" => Variant::Attention1d,
            "single_scale" => Variant::SingleScale,
            "no_pen_state" => Variant::NoPenState,
            "l1_regression" => Variant::L1Regression,
            _ => match s.strip_prefix('m').and_then(|m| m.parse().ok()) {
                Some(m) if m > 0 => Variant::Mixtures(m),
                _ => return Err(Error::Config(format!("unknown ablation variant {s:?}"))),
            },
        })
    }

    pub fn apply(&self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        let a = &mut c.ablations;
        match *self {
            Variant::Full => {}
            Variant::NoEqv => a.no_eqv = true,
            Variant::Attention1d => a.attention_1d = true,
            Variant::SingleScale => a.single_scale = true,
            Variant::NoPenState => a.no_pen_state = true,
            Variant::L1Regression => a.l1_regression = true,
            Variant::Mixtures(m) => c.m = m,
        }
        c
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub seed: u64,
    pub max_fbeta: f64,
    pub mae: f64,
    pub weighted_fbeta: f64,
    pub s_measure: f64,
    pub teacher_forced_max_fbeta: f64,
    pub final_stroke: f64,
    /// Mean eqv term over the last epoch's steps.
    pub final_eqv: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

fn median(mut v: Vec<f64>) -> Option<f64> {
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

impl AblationTable {
    pub fn variants(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for r in &self.rows {
            if !out.contains(&r.variant) {
                out.push(r.variant.clone());
            }
        }
        out
    }

    /// Median over seeds of a row field.
    pub fn median_of(&self, variant: &str, f: impl Fn(&AblationRow) -> f64) -> Option<f64> {
        median(self.rows.iter().filter(|r| r.variant == variant).map(f).collect())
    }

    pub fn median_max_fbeta(&self, variant: &str) -> Option<f64> {
        self.median_of(variant, |r| r.max_fbeta)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from(
            "variant,seed,max_fbeta,mae,weighted_fbeta,s_measure,teacher_forced_max_fbeta,final_stroke,final_eqv\n",
        );
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{}\n",
                r.variant,
                r.seed,
                r.max_fbeta,
                r.mae,
                r.weighted_fbeta,
                r.s_measure,
                r.teacher_forced_max_fbeta,
                r.final_stroke,
                r.final_eqv
            ));
        }
        s
    }

    /// Per-variant medians as a Markdown table.
    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| variant | max F | MAE | weighted F | S | max F (teacher forced) |\n|---|---|---|---|---|---|\n");
        for v in self.variants() {
            let m = |f: fn(&AblationRow) -> f64| self.median_of(&v, f).unwrap_or(f64::NAN);
            s.push_str(&format!(
                "| {v} | {:.4} | {:.4} | {:.4} | {:.4} | {:.4} |\n",
                m(|r| r.max_fbeta),
                m(|r| r.mae),
                m(|r| r.weighted_fbeta),
                m(|r| r.s_measure),
                m(|r| r.teacher_forced_max_fbeta)
            ));
        }
        s
    }
}

/// Train every variant for every seed and score it on `test`. Rows are
/// appended variant-major. With `out_dir`, each run gets its own
/// subdirectory and the table is written as CSV and Markdown.
pub fn run_ablation_suite(
    base: &TrainConfig,
    variants: &[Variant],
    seeds: &[u64],
    train_set: &[PairedSample],
    test: &[PairedSample],
    eval: &EvalConfig,
    out_dir: Option<&Path>,
) -> Result<AblationTable> {
    if variants.is_empty() || seeds.is_empty() {
        return Err(Error::Config("ablation suite needs variants and seeds".into()));
    }
    let mut eval = eval.clone();
    eval.modes = vec![EvalMode::FreeRunning, EvalMode::TeacherForced];
    eval.t_max = base.t_max;
    let mut table = AblationTable::default();
    for v in variants {
        for &seed in seeds {
            let mut cfg = v.apply(base);
            cfg.seed = seed;
            let opts = TrainOptions {
                out_dir: out_dir.map(|d| d.join(format!("{}_seed{seed}", v.name()))),
                ..TrainOptions::default()
            };
            let out = train(&cfg, train_set, opts)?;
            let summary = evaluate(&out.checkpoint.model, test, &eval)?;
            let fr = summary.mode(EvalMode::FreeRunning).expect("requested mode");
            let tf = summary.mode(EvalMode::TeacherForced).expect("requested mode");
            let last_epoch = out.log.last().map(|l| l.epoch);
            let tail: Vec<f64> = out.log.iter().filter(|l| Some(l.epoch) == last_epoch).map(|l| l.eqv).collect();
            let row = AblationRow {
                variant: v.name(),
                seed,
                max_fbeta: fr.report.max_fbeta,
                mae: fr.report.mae,
                weighted_fbeta: fr.report.weighted_fbeta,
                s_measure: fr.report.s_measure,
                teacher_forced_max_fbeta: tf.report.max_fbeta,
                final_stroke: out.final_report.stroke,
                final_eqv: tail.iter().sum::<f64>() / tail.len().max(1) as f64,
            };
            log::info!("ablation {} seed {seed}: max F {:.4}", row.variant, row.max_fbeta);
            table.rows.push(row);
        }
    }
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let p = dir.join("ablation.csv");
        fs::write(&p, table.to_csv()).map_err(|e| Error::io(&p, e))?;
        let p = dir.join("ablation.md");
        fs::write(&p, table.to_markdown()).map_err(|e| Error::io(&p, e))?;
    }
    Ok(table)
}
