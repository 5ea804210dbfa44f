use serde::{Deserialize, Serialize};

/// Counts indexed by (gold label, predicted label).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub labels: Vec<String>,
    pub matrix: Vec<Vec<usize>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CategoryScore {
    pub label: String,
    pub true_positives: usize,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub support: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// `2tp / (2tp + fp + fn)`, zero when nothing was predicted or expected.
pub fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    let denom = 2 * tp + fp + fn_;
    if denom == 0 { 0.0 } else { (2 * tp) as f64 / denom as f64 }
}

fn ratio(num: usize, denom: usize) -> f64 {
    if denom == 0 { 0.0 } else { num as f64 / denom as f64 }
}

impl Confusion {
    pub fn new(labels: &[&str]) -> Self {
        let n = labels.len();
        Confusion { labels: labels.iter().map(|s| s.to_string()).collect(), matrix: vec![vec![0; n]; n] }
    }

    pub fn add(&mut self, gold: usize, predicted: usize) {
        self.matrix[gold][predicted] += 1;
    }

    pub fn total(&self) -> usize {
        self.matrix.iter().flatten().sum()
    }

    pub fn correct(&self) -> usize {
        (0..self.labels.len()).map(|i| self.matrix[i][i]).sum()
    }

    /// Scores for the first `categories` labels. Later labels (such as a
    /// predicted-only tie column) only ever count as misses.
    pub fn category_scores(&self, categories: usize) -> Vec<CategoryScore> {
        (0..categories)
            .map(|i| {
                let tp = self.matrix[i][i];
                let row: usize = self.matrix[i].iter().sum();
                let col: usize = self.matrix.iter().map(|r| r[i]).sum();
                let (fp, fn_) = (col - tp, row - tp);
                CategoryScore {
                    label: self.labels[i].clone(),
                    true_positives: tp,
                    false_positives: fp,
                    false_negatives: fn_,
                    support: row,
                    precision: ratio(tp, tp + fp),
                    recall: ratio(tp, tp + fn_),
                    f1: f1(tp, fp, fn_),
                }
            })
            .collect()
    }

    /// F1 from true positives, false positives and false negatives summed
    /// over the scored categories.
    pub fn micro_f1(&self, categories: usize) -> f64 {
        let scores = self.category_scores(categories);
        let sum = |f: fn(&CategoryScore) -> usize| scores.iter().map(f).sum::<usize>();
        f1(sum(|s| s.true_positives), sum(|s| s.false_positives), sum(|s| s.false_negatives))
    }
}
