//! End-to-end analysis of a set of chains, with text and CSV renderings.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::embed::{design_matrix, embed_descriptions, EmbeddingProvider};
use super::metrics::{board_frequencies, chain_velocity, mean_board_complexity};
use super::ridge::{ridge_decode, DecodingResult, RidgeOptions};
use super::stats::{pooled_t_test, two_way_anova, AnovaResult, TTest};
use super::AnalysisError;
use crate::chain::{Annotation, ChainRecord, Mode};
use crate::complexity::{Measure, Scorer};
use crate::exec::Execution;
use crate::grid::Grid;

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    pub velocity_includes_seed: bool,
    pub complexity_includes_seed: bool,
    pub top_boards: usize,
    pub ridge: RidgeOptions,
    pub execution: Execution,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            velocity_includes_seed: true,
            complexity_includes_seed: false,
            top_boards: 10,
            ridge: RidgeOptions::default(),
            execution: Execution::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRow {
    pub chain_id: String,
    pub mode: Mode,
    pub backend: String,
    pub velocity: f64,
    pub kc: f64,
    pub entropy: f64,
    pub lsc: f64,
}

impl ChainRow {
    pub fn value(&self, metric: &str) -> Option<f64> {
        match metric {
            "velocity" => Some(self.velocity),
            "kc" => Some(self.kc),
            "entropy" => Some(self.entropy),
            "lsc" => Some(self.lsc),
            _ => None,
        }
    }
}

pub const METRICS: [&str; 4] = ["velocity", "kc", "entropy", "lsc"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub metric: String,
    pub unimodal_mean: f64,
    pub multimodal_mean: f64,
    pub test: TTest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnovaRow {
    pub metric: String,
    pub backends: Vec<String>,
    pub result: AnovaResult,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingRow {
    pub target: String,
    pub provider: String,
    pub n_samples: usize,
    pub result: DecodingResult,
}

/// A description and the board it was written about.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DescriptionPair {
    pub chain_id: String,
    pub text: String,
    pub board: Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub chains: Vec<ChainRow>,
    pub comparisons: Vec<Comparison>,
    pub anova: Vec<AnovaRow>,
    pub decoding: Vec<DecodingRow>,
    pub top_boards: Vec<(String, usize)>,
    /// Sections that were skipped and why.
    pub notes: Vec<String>,
}

fn board_at(record: &ChainRecord, index: usize) -> Option<&Grid> {
    if index == 0 {
        Some(&record.seed_grid)
    } else {
        record.steps.get(index - 1)?.payload.as_grid()
    }
}

/// In-chain descriptions paired with the preceding board, then post-hoc
/// annotations paired with the board they annotate.
pub fn description_pairs(
    records: &[ChainRecord],
    annotations: &BTreeMap<String, Vec<Annotation>>,
) -> Vec<DescriptionPair> {
    let mut out = Vec::new();
    for r in records {
        for s in &r.steps {
            if let (Some(text), Some(board)) =
                (s.payload.as_description(), board_at(r, s.index - 1))
            {
                out.push(DescriptionPair {
                    chain_id: r.chain_id.clone(),
                    text: text.to_string(),
                    board: board.clone(),
                });
            }
        }
        for a in annotations.get(&r.chain_id).into_iter().flatten() {
            if let Some(board) = board_at(r, a.step_index) {
                out.push(DescriptionPair {
                    chain_id: r.chain_id.clone(),
                    text: a.description.text.clone(),
                    board: board.clone(),
                });
            }
        }
    }
    out
}

fn backend_label(r: &ChainRecord) -> String {
    if r.config.backends.is_empty() {
        "unknown".into()
    } else {
        r.config.backends.join("+")
    }
}

fn chain_rows(
    records: &[ChainRecord],
    scorer: &Scorer<'_>,
    opts: &ReportOptions,
) -> Result<Vec<ChainRow>, AnalysisError> {
    let mut per_measure = BTreeMap::new();
    for m in Measure::ALL {
        let means = mean_board_complexity(
            records,
            m,
            scorer,
            opts.complexity_includes_seed,
            opts.execution,
        )?;
        per_measure.insert(m, means);
    }
    records
        .iter()
        .enumerate()
        .map(|(i, r)| {
            Ok(ChainRow {
                chain_id: r.chain_id.clone(),
                mode: r.mode,
                backend: backend_label(r),
                velocity: chain_velocity(r, opts.velocity_includes_seed)?.mean,
                kc: per_measure[&Measure::Kc][i].mean,
                entropy: per_measure[&Measure::Entropy][i].mean,
                lsc: per_measure[&Measure::Lsc][i].mean,
            })
        })
        .collect()
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Score every chain and run the mode comparisons, the backend-by-mode
/// ANOVA and, given an embedder, decoding of board complexity from
/// description embeddings. Sections without enough data are noted and
/// skipped.
pub fn analyze(
    records: &[ChainRecord],
    annotations: &BTreeMap<String, Vec<Annotation>>,
    scorer: &Scorer<'_>,
    embedder: Option<&dyn EmbeddingProvider>,
    opts: &ReportOptions,
) -> Result<AnalysisReport, AnalysisError> {
    let chains = chain_rows(records, scorer, opts)?;
    let mut notes = Vec::new();

    let mut comparisons = Vec::new();
    for metric in METRICS {
        let pick = |mode: Mode| -> Vec<f64> {
            chains
                .iter()
                .filter(|c| c.mode == mode)
                .filter_map(|c| c.value(metric))
                .collect()
        };
        let (u, m) = (pick(Mode::Unimodal), pick(Mode::Multimodal));
        match pooled_t_test(&u, &m) {
            Ok(test) => comparisons.push(Comparison {
                metric: metric.into(),
                unimodal_mean: mean(&u),
                multimodal_mean: mean(&m),
                test,
            }),
            Err(e) => notes.push(format!("{metric} t-test skipped: {e}")),
        }
    }

    let mut anova = Vec::new();
    let backends: Vec<String> = chains.iter().map(|c| c.backend.clone()).collect();
    let modes: Vec<Mode> = chains.iter().map(|c| c.mode).collect();
    let mut levels = backends.clone();
    levels.sort();
    levels.dedup();
    for metric in METRICS {
        let values: Vec<f64> = chains.iter().filter_map(|c| c.value(metric)).collect();
        match two_way_anova(&values, &backends, &modes) {
            Ok(result) => anova.push(AnovaRow {
                metric: metric.into(),
                backends: levels.clone(),
                result,
            }),
            Err(e) => notes.push(format!("{metric} backend x mode ANOVA skipped: {e}")),
        }
    }

    let mut decoding = Vec::new();
    if let Some(embedder) = embedder {
        let pairs = description_pairs(records, annotations);
        let texts: Vec<String> = pairs.iter().map(|p| p.text.clone()).collect();
        if texts.is_empty() {
            notes.push("decoding skipped: no descriptions".into());
        } else {
            let vectors = embed_descriptions(embedder, &texts)?;
            let x = design_matrix(&vectors)?;
            let mut group_ids: BTreeMap<&str, usize> = BTreeMap::new();
            for p in &pairs {
                let next = group_ids.len();
                group_ids.entry(&p.chain_id).or_insert(next);
            }
            let groups: Vec<usize> = pairs
                .iter()
                .map(|p| group_ids[p.chain_id.as_str()])
                .collect();
            for measure in Measure::ALL {
                let y: Result<Vec<f64>, AnalysisError> = pairs
                    .iter()
                    .map(|p| {
                        scorer
                            .measure(&p.board, measure)
                            .map_err(|source| AnalysisError::Metric {
                                chain_id: p.chain_id.clone(),
                                source,
                            })
                    })
                    .collect();
                match ridge_decode(&x, &y?, &groups, &opts.ridge) {
                    Ok(result) => decoding.push(DecodingRow {
                        target: measure.label().to_lowercase(),
                        provider: embedder.tag(),
                        n_samples: pairs.len(),
                        result,
                    }),
                    Err(e) => notes.push(format!("{} decoding skipped: {e}", measure.label())),
                }
            }
        }
    }

    let top_boards = board_frequencies(records, false)
        .into_iter()
        .take(opts.top_boards)
        .map(|(g, c)| (g.to_text(), c))
        .collect();

    Ok(AnalysisReport {
        chains,
        comparisons,
        anova,
        decoding,
        top_boards,
        notes,
    })
}

fn fmt_p(p: f64) -> String {
    if p < 1e-4 {
        format!("{p:.2e}")
    } else {
        format!("{p:.4}")
    }
}

impl AnalysisReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let n_uni = self
            .chains
            .iter()
            .filter(|c| c.mode == Mode::Unimodal)
            .count();
        let _ = writeln!(
            s,
            "chains: {} ({} unimodal, {} multimodal)\n",
            self.chains.len(),
            n_uni,
            self.chains.len() - n_uni
        );

        let _ = writeln!(s, "mode comparison (pooled two-sample t-test)");
        let _ = writeln!(
            s,
            "{:<10} {:>12} {:>12} {:>9} {:>5} {:>10}",
            "metric", "unimodal", "multimodal", "t", "df", "p"
        );
        for c in &self.comparisons {
            let _ = writeln!(
                s,
                "{:<10} {:>12.4} {:>12.4} {:>9.3} {:>5} {:>10}",
                c.metric,
                c.unimodal_mean,
                c.multimodal_mean,
                c.test.t,
                c.test.df,
                fmt_p(c.test.p)
            );
        }

        if !self.anova.is_empty() {
            let _ = writeln!(s, "\nbackend x mode ANOVA");
            let _ = writeln!(
                s,
                "{:<10} {:<12} {:>10} {:>4} {:>10} {:>10}",
                "metric", "effect", "SS", "df", "F", "p"
            );
            for a in &self.anova {
                for (name, e) in [
                    ("backend", &a.result.factor_a),
                    ("mode", &a.result.factor_b),
                    ("interaction", &a.result.interaction),
                ] {
                    let _ = writeln!(
                        s,
                        "{:<10} {:<12} {:>10.4} {:>4} {:>10.3} {:>10}",
                        a.metric,
                        name,
                        e.ss,
                        e.df,
                        e.f,
                        fmt_p(e.p)
                    );
                }
            }
        }

        if !self.decoding.is_empty() {
            let _ = writeln!(
                s,
                "\ndecoding board complexity from descriptions (nested CV ridge)"
            );
            let _ = writeln!(s, "{:<10} {:>6} {:>9}  fold R2", "target", "n", "mean R2");
            for d in &self.decoding {
                let folds: Vec<String> =
                    d.result.fold_r2.iter().map(|v| format!("{v:.3}")).collect();
                let _ = writeln!(
                    s,
                    "{:<10} {:>6} {:>9.4}  {}",
                    d.target,
                    d.n_samples,
                    d.result.mean_r2,
                    folds.join(" ")
                );
            }
            if let Some(d) = self.decoding.first() {
                let _ = writeln!(s, "embeddings: {}", d.provider);
            }
        }

        if !self.top_boards.is_empty() {
            let _ = writeln!(s, "\nmost frequent boards");
            for (i, (board, count)) in self.top_boards.iter().enumerate() {
                let _ = writeln!(s, "#{} x{count}", i + 1);
                for line in board.lines() {
                    let _ = writeln!(s, "  {line}");
                }
            }
        }

        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        s
    }

    pub fn chains_csv(&self) -> String {
        let mut s = String::from("chain_id,mode,backend,velocity,kc,entropy,lsc\n");
        for c in &self.chains {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{}",
                c.chain_id, c.mode, c.backend, c.velocity, c.kc, c.entropy, c.lsc
            );
        }
        s
    }

    pub fn tests_csv(&self) -> String {
        let mut s = String::from("analysis,metric,effect,statistic,df,p\n");
        for c in &self.comparisons {
            let _ = writeln!(
                s,
                "t-test,{},mode,{},{},{}",
                c.metric, c.test.t, c.test.df, c.test.p
            );
        }
        for a in &self.anova {
            for (name, e) in [
                ("backend", &a.result.factor_a),
                ("mode", &a.result.factor_b),
                ("interaction", &a.result.interaction),
            ] {
                let _ = writeln!(s, "anova,{},{name},{},{},{}", a.metric, e.f, e.df, e.p);
            }
        }
        for d in &self.decoding {
            let _ = writeln!(s, "decoding,{},r2,{},,", d.target, d.result.mean_r2);
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::OfflineFeaturizer;
    use crate::bayes::{coarse_language_model, Inference, SimulatedBackend};
    use crate::chain::{annotate_posthoc, batch_run, ChainOptions};
    use crate::complexity::{Boundary, CtmTable};

    #[test]
    fn report_on_simulated_batch() {
        let backend = SimulatedBackend::new(coarse_language_model(), Inference::Sample);
        let opts = ChainOptions::default();
        let mut records = Vec::new();
        for mode in Mode::BOTH {
            records.extend(batch_run(&backend, 12, mode, 3, &opts).records);
        }
        let mut notes = BTreeMap::new();
        let uni = records.iter().find(|r| r.mode == Mode::Unimodal).unwrap();
        notes.insert(
            uni.chain_id.clone(),
            annotate_posthoc(uni, &backend, &opts).unwrap(),
        );

        let pairs = description_pairs(&records, &notes);
        assert_eq!(pairs.len(), 12 * 10 + 10);
        let multi = records.iter().find(|r| r.mode == Mode::Multimodal).unwrap();
        let first = pairs.iter().find(|p| p.chain_id == multi.chain_id).unwrap();
        assert_eq!(first.board, multi.seed_grid);

        let table = CtmTable::surrogate();
        let scorer = Scorer::new(&table, Boundary::Maximal);
        let report = analyze(
            &records,
            &notes,
            &scorer,
            Some(&OfflineFeaturizer::default()),
            &ReportOptions::default(),
        )
        .unwrap();
        assert_eq!(report.chains.len(), 24);
        assert_eq!(report.comparisons.len(), 4);
        // A single backend leaves the ANOVA with one level.
        assert!(report.anova.is_empty());
        assert_eq!(report.decoding.len(), 3);
        assert!(report.notes.iter().any(|n| n.contains("ANOVA")));
        let text = report.to_text();
        assert!(text.contains("mode comparison"));
        assert_eq!(report.chains_csv().lines().count(), 25);
        assert!(report.tests_csv().lines().count() >= 8);
    }
}
