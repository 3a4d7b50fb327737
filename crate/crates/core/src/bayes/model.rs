use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::BayesError;
use crate::grid::{parse_grid, random_grid, sample_grid, Grid};

const SUM_TOLERANCE: f64 = 1e-12;

/// Finite abstraction space shared by simulated agents.
///
/// Each abstraction is a template grid; stimuli are the template with every
/// tile flipped independently at `flip_rate`. Descriptions are drawn from a
/// finite vocabulary through a `K×V` row-stochastic confusion matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct AbstractionModel {
    size: usize,
    templates: Vec<Grid>,
    stimulus_prior: Vec<f64>,
    language_prior: Vec<f64>,
    flip_rate: f64,
    vocabulary: Vec<String>,
    description_likelihood: Vec<Vec<f64>>,
}

/// On-disk (TOML) form of an [`AbstractionModel`]. Templates are grid text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub size: usize,
    pub flip_rate: f64,
    pub templates: Vec<String>,
    pub stimulus_prior: Vec<f64>,
    pub language_prior: Vec<f64>,
    pub vocabulary: Vec<String>,
    pub description_likelihood: Vec<Vec<f64>>,
}

fn check_distribution(which: &'static str, p: &[f64], k: usize) -> Result<(), BayesError> {
    if p.len() != k {
        return Err(BayesError::LengthMismatch {
            what: which,
            expected: k,
            found: p.len(),
        });
    }
    if let Some(i) = p.iter().position(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(BayesError::NonPositivePrior { which, index: i });
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > SUM_TOLERANCE {
        return Err(BayesError::NotNormalized { what: which, sum });
    }
    Ok(())
}

impl AbstractionModel {
    pub fn new(
        templates: Vec<Grid>,
        stimulus_prior: Vec<f64>,
        language_prior: Vec<f64>,
        flip_rate: f64,
        vocabulary: Vec<String>,
        description_likelihood: Vec<Vec<f64>>,
    ) -> Result<Self, BayesError> {
        let k = templates.len();
        if k == 0 {
            return Err(BayesError::NoAbstractions);
        }
        let size = templates[0].size();
        if let Some(t) = templates.iter().find(|t| t.size() != size) {
            return Err(BayesError::TemplateSize {
                expected: size,
                found: t.size(),
            });
        }
        if !(flip_rate > 0.0 && flip_rate < 0.5) {
            return Err(BayesError::FlipRate(flip_rate));
        }
        check_distribution("stimulus prior", &stimulus_prior, k)?;
        check_distribution("language prior", &language_prior, k)?;
        if vocabulary.is_empty() {
            return Err(BayesError::EmptyVocabulary);
        }
        if description_likelihood.len() != k {
            return Err(BayesError::LengthMismatch {
                what: "description likelihood rows",
                expected: k,
                found: description_likelihood.len(),
            });
        }
        for (row_index, row) in description_likelihood.iter().enumerate() {
            if row.len() != vocabulary.len() {
                return Err(BayesError::LengthMismatch {
                    what: "description likelihood columns",
                    expected: vocabulary.len(),
                    found: row.len(),
                });
            }
            if row.iter().any(|&x| !(x >= 0.0 && x.is_finite())) {
                return Err(BayesError::NegativeProbability { row: row_index });
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > SUM_TOLERANCE {
                return Err(BayesError::RowNotNormalized {
                    row: row_index,
                    sum,
                });
            }
        }
        Ok(AbstractionModel {
            size,
            templates,
            stimulus_prior,
            language_prior,
            flip_rate,
            vocabulary,
            description_likelihood,
        })
    }

    pub fn from_spec(spec: ModelSpec) -> Result<Self, BayesError> {
        let templates = spec
            .templates
            .iter()
            .map(|t| parse_grid(t))
            .collect::<Result<Vec<_>, _>>()?;
        if let Some(t) = templates.first() {
            if t.size() != spec.size {
                return Err(BayesError::TemplateSize {
                    expected: spec.size,
                    found: t.size(),
                });
            }
        }
        AbstractionModel::new(
            templates,
            spec.stimulus_prior,
            spec.language_prior,
            spec.flip_rate,
            spec.vocabulary,
            spec.description_likelihood,
        )
    }

    pub fn to_spec(&self) -> ModelSpec {
        ModelSpec {
            size: self.size,
            flip_rate: self.flip_rate,
            templates: self.templates.iter().map(Grid::to_text).collect(),
            stimulus_prior: self.stimulus_prior.clone(),
            language_prior: self.language_prior.clone(),
            vocabulary: self.vocabulary.clone(),
            description_likelihood: self.description_likelihood.clone(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self, BayesError> {
        let spec: ModelSpec = toml::from_str(text).map_err(|e| BayesError::Parse(e.to_string()))?;
        Self::from_spec(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.to_spec()).expect("model spec is always representable as TOML")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, BayesError> {
        let text = fs::read_to_string(path).map_err(|e| BayesError::Parse(e.to_string()))?;
        Self::from_toml(&text)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn n_tiles(&self) -> usize {
        self.size * self.size
    }

    pub fn n_abstractions(&self) -> usize {
        self.templates.len()
    }

    pub fn n_descriptions(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn templates(&self) -> &[Grid] {
        &self.templates
    }

    pub fn stimulus_prior(&self) -> &[f64] {
        &self.stimulus_prior
    }

    pub fn language_prior(&self) -> &[f64] {
        &self.language_prior
    }

    pub fn flip_rate(&self) -> f64 {
        self.flip_rate
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocabulary
    }

    pub fn description_likelihood(&self) -> &[Vec<f64>] {
        &self.description_likelihood
    }

    /// Index of a vocabulary entry, matched exactly.
    pub fn description_index(&self, text: &str) -> Option<usize> {
        self.vocabulary.iter().position(|v| v == text)
    }

    /// Same model with the language prior replaced by the stimulus prior.
    pub fn aligned(&self) -> Self {
        AbstractionModel {
            language_prior: self.stimulus_prior.clone(),
            ..self.clone()
        }
    }
}

/// Recipe for random models used in property tests and benchmarks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RandomModelSpec {
    pub size: usize,
    pub n_abstractions: usize,
    pub n_descriptions: usize,
    pub flip_rate: f64,
    /// Use the stimulus prior as the language prior too.
    pub aligned: bool,
}

fn random_simplex<R: Rng + ?Sized>(rng: &mut R, k: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
    let sum: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / sum).collect()
}

impl RandomModelSpec {
    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> AbstractionModel {
        let k = self.n_abstractions;
        let templates = (0..k).map(|_| sample_grid(rng, self.size, 0.5)).collect();
        let stimulus_prior = random_simplex(rng, k);
        let language_prior = if self.aligned {
            stimulus_prior.clone()
        } else {
            random_simplex(rng, k)
        };
        let vocabulary = (0..self.n_descriptions)
            .map(|i| format!("board pattern described by word {i}"))
            .collect();
        let likelihood = (0..k)
            .map(|_| random_simplex(rng, self.n_descriptions))
            .collect();
        AbstractionModel::new(
            templates,
            stimulus_prior,
            language_prior,
            self.flip_rate,
            vocabulary,
            likelihood,
        )
        .expect("generated model satisfies all invariants")
    }
}

/// A 7×7 model whose language channel is coarser than its stimulus channel.
///
/// Eight templates: four simple shapes that have a description each, and four
/// seeded random patterns that language cannot name (their descriptions are
/// spread uniformly over the vocabulary). The stimulus prior is uniform; the
/// language prior favours the describable shapes.
pub fn coarse_language_model() -> AbstractionModel {
    let n = 7;
    let blank = Grid::blank(n);
    let middle_row = Grid::from_fn(n, |r, _| r == 3);
    let corner_square = Grid::from_fn(n, |r, c| r < 3 && c < 3);
    let plus = Grid::from_fn(n, |r, c| r == 3 || c == 3);
    let mut templates = vec![blank, middle_row, corner_square, plus];
    templates.extend((0..4).map(|i| random_grid(0xC0A2_5E00 + i, n, 0.5)));
    let vocabulary: Vec<String> = [
        "the whole board is completely white",
        "a single horizontal red line across the middle row",
        "a small red square in the top left corner",
        "a red plus sign crossing through the center",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let v = vocabulary.len();
    let mut likelihood = Vec::new();
    for i in 0..4 {
        let mut row = vec![0.1 / (v - 1) as f64; v];
        row[i] = 0.9;
        likelihood.push(row);
    }
    for _ in 0..4 {
        likelihood.push(vec![1.0 / v as f64; v]);
    }
    AbstractionModel::new(
        templates,
        vec![0.125; 8],
        vec![0.2, 0.2, 0.2, 0.2, 0.05, 0.05, 0.05, 0.05],
        0.05,
        vocabulary,
        likelihood,
    )
    .expect("preset model is valid")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn two_state() -> AbstractionModel {
        AbstractionModel::new(
            vec![Grid::blank(2), Grid::filled(2)],
            vec![0.5, 0.5],
            vec![0.5, 0.5],
            0.1,
            vec!["a".into(), "b".into()],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        )
        .unwrap()
    }

    #[test]
    fn rejects_unnormalised_prior() {
        let err = AbstractionModel::new(
            vec![Grid::blank(2)],
            vec![0.9],
            vec![1.0],
            0.1,
            vec!["a".into()],
            vec![vec![1.0]],
        )
        .unwrap_err();
        assert!(matches!(err, BayesError::NotNormalized { .. }));
    }

    #[test]
    fn rejects_zero_prior_and_bad_flip_rate() {
        let zero = AbstractionModel::new(
            vec![Grid::blank(2), Grid::filled(2)],
            vec![1.0, 0.0],
            vec![0.5, 0.5],
            0.1,
            vec!["a".into()],
            vec![vec![1.0], vec![1.0]],
        );
        assert!(matches!(
            zero,
            Err(BayesError::NonPositivePrior { index: 1, .. })
        ));
        let eps = AbstractionModel::new(
            vec![Grid::blank(2)],
            vec![1.0],
            vec![1.0],
            0.5,
            vec!["a".into()],
            vec![vec![1.0]],
        );
        assert!(matches!(eps, Err(BayesError::FlipRate(_))));
    }

    #[test]
    fn rejects_bad_likelihood_row() {
        let err = AbstractionModel::new(
            vec![Grid::blank(2)],
            vec![1.0],
            vec![1.0],
            0.1,
            vec!["a".into(), "b".into()],
            vec![vec![0.5, 0.6]],
        )
        .unwrap_err();
        assert!(matches!(err, BayesError::RowNotNormalized { row: 0, .. }));
    }

    #[test]
    fn rejects_mixed_template_sizes() {
        let err = AbstractionModel::new(
            vec![Grid::blank(2), Grid::blank(3)],
            vec![0.5, 0.5],
            vec![0.5, 0.5],
            0.1,
            vec!["a".into()],
            vec![vec![1.0], vec![1.0]],
        )
        .unwrap_err();
        assert!(matches!(err, BayesError::TemplateSize { .. }));
    }

    #[test]
    fn toml_round_trip() {
        let m = two_state();
        let back = AbstractionModel::from_toml(&m.to_toml()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn random_models_are_valid() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for k in 1..=8 {
            let spec = RandomModelSpec {
                size: 3,
                n_abstractions: k,
                n_descriptions: 5,
                flip_rate: 0.1,
                aligned: true,
            };
            let m = spec.generate(&mut rng);
            assert_eq!(m.stimulus_prior(), m.language_prior());
        }
    }

    #[test]
    fn coarse_preset_is_valid() {
        let m = coarse_language_model();
        assert_eq!(m.n_abstractions(), 8);
        assert!(m.n_descriptions() < m.n_abstractions());
    }
}
