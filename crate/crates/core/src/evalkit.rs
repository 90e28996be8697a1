//! Frame-level ROC-AUC, checkpoint evaluation and CSV exports.

use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::data::{Corpus, FeatureBag};
use crate::diffcore::RealArray;
use crate::error::{Error, Result};
use crate::model::{forward, read_checkpoint, ModelParams};

/// Rank-based (Mann–Whitney) ROC-AUC with midranks for ties.
///
/// Errors with [`Error::UndefinedAuc`] unless both classes are present.
pub fn compute_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape {
            op: "compute_auc",
            lhs: vec![scores.len()],
            rhs: vec![labels.len()],
        });
    }
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score {i}")));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1).count();
    let n_neg = labels.iter().filter(|&&l| l == 0).count();
    if n_pos + n_neg != labels.len() {
        return Err(Error::config("labels must be 0 or 1"));
    }
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::UndefinedAuc { n_pos, n_neg });
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0f64;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && scores[order[end]] == scores[order[start]] {
            end += 1;
        }
        // ranks start..end (1-based start+1 ..= end) share their mean
        let midrank = (start + 1 + end) as f64 / 2.0;
        let pos_in_group = order[start..end].iter().filter(|&&i| labels[i] == 1).count();
        rank_sum_pos += midrank * pos_in_group as f64;
        start = end;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// [`compute_auc`], or `None` when it is undefined.
pub fn auc_if_defined(scores: &[f64], labels: &[u8]) -> Option<f64> {
    compute_auc(scores, labels).ok()
}

/// Centered moving average; windows are truncated at the ends. A window of
/// 0 or 1 returns the input.
pub fn smooth_scores(scores: &[f32], window: usize) -> Vec<f32> {
    if window <= 1 {
        return scores.to_vec();
    }
    let half = window / 2;
    (0..scores.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(scores.len());
            let s: f64 = scores[lo..hi].iter().map(|&x| x as f64).sum();
            (s / (hi - lo) as f64) as f32
        })
        .collect()
}

fn single_bag(bag: &FeatureBag) -> RealArray<f32> {
    let (t, d) = (bag.len(), bag.dim());
    RealArray::new(vec![1, t, d], bag.features().as_slice().to_vec()).expect("bag shape")
}

/// Per-instance scores for each bag.
pub fn score_bags(params: &ModelParams<f32>, bags: &[FeatureBag], use_pil: bool) -> Result<Vec<Vec<f32>>> {
    bags.iter()
        .map(|bag| {
            let pass = forward(params, &single_bag(bag), &[bag.len()], use_pil)?;
            Ok(pass.instance_scores().bag_scores(0).to_vec())
        })
        .collect()
}

/// Enhanced features `f'` for each bag, `[T × D]`.
pub fn enhanced_features(
    params: &ModelParams<f32>,
    bags: &[FeatureBag],
    use_pil: bool,
) -> Result<Vec<RealArray<f32>>> {
    bags.iter()
        .map(|bag| {
            let pass = forward(params, &single_bag(bag), &[bag.len()], use_pil)?;
            pass.enhanced.reshape(&[bag.len(), bag.dim()])
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EvalOptions {
    pub use_pil: bool,
    /// Moving-average window applied per bag before the AUC; 0 is off.
    pub smoothing_window: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            use_pil: true,
            smoothing_window: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub auc: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub n_bags: usize,
    pub checkpoint: String,
    pub manifest: String,
    pub use_pil: bool,
    pub smoothing_window: usize,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Scores of one bag next to its ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct BagScores {
    pub id: String,
    pub scores: Vec<f32>,
    pub labels: Vec<u8>,
}

impl BagScores {
    /// `instance_index,score,gt_label` with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("instance_index,score,gt_label\n");
        for (i, (s, l)) in self.scores.iter().zip(&self.labels).enumerate() {
            writeln!(out, "{i},{s},{l}").unwrap();
        }
        out
    }
}

/// Scores every bag, concatenates all instances and computes the frame-level
/// AUC. Every bag needs frame labels.
pub fn evaluate_bags(
    params: &ModelParams<f32>,
    bags: &[FeatureBag],
    opts: &EvalOptions,
) -> Result<(f64, usize, usize, Vec<BagScores>)> {
    let missing: Vec<String> = bags
        .iter()
        .filter(|b| b.frame_labels().is_none())
        .map(|b| b.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingFrameLabels(missing));
    }
    let scored = score_bags(params, bags, opts.use_pil)?;
    let per_bag: Vec<BagScores> = bags
        .iter()
        .zip(scored)
        .map(|(bag, s)| BagScores {
            id: bag.id.clone(),
            scores: smooth_scores(&s, opts.smoothing_window),
            labels: bag.frame_labels().expect("checked").to_vec(),
        })
        .collect();
    let all_scores: Vec<f64> = per_bag.iter().flat_map(|b| b.scores.iter().map(|&s| s as f64)).collect();
    let all_labels: Vec<u8> = per_bag.iter().flat_map(|b| b.labels.iter().copied()).collect();
    let n_pos = all_labels.iter().filter(|&&l| l == 1).count();
    let auc = compute_auc(&all_scores, &all_labels)?;
    Ok((auc, n_pos, all_labels.len() - n_pos, per_bag))
}

/// Evaluates a checkpoint on `bags` from `corpus`, writing `report.json` and
/// `scores/<bag id>.csv` under `out_dir`.
pub fn evaluate(
    checkpoint: &Path,
    corpus: &Corpus,
    bags: &[FeatureBag],
    tau_p: f32,
    opts: &EvalOptions,
    out_dir: Option<&Path>,
) -> Result<EvalReport> {
    let params = read_checkpoint(checkpoint)?.params.with_tau_p(tau_p);
    let (auc, n_pos, n_neg, per_bag) = evaluate_bags(&params, bags, opts)?;
    let report = EvalReport {
        auc,
        n_pos,
        n_neg,
        n_bags: bags.len(),
        checkpoint: checkpoint.display().to_string(),
        manifest: corpus.manifest.display().to_string(),
        use_pil: opts.use_pil,
        smoothing_window: opts.smoothing_window,
    };
    if let Some(dir) = out_dir {
        let scores_dir = dir.join("scores");
        std::fs::create_dir_all(&scores_dir).map_err(|e| Error::io(&scores_dir, e))?;
        for b in &per_bag {
            let p = scores_dir.join(format!("{}.csv", b.id));
            std::fs::write(&p, b.to_csv()).map_err(|e| Error::io(&p, e))?;
        }
        let p = dir.join("report.json");
        std::fs::write(&p, report.to_json()).map_err(|e| Error::io(&p, e))?;
    }
    Ok(report)
}

/// CSV of enhanced features: `bag_id,index,gt_label,f0..f{D-1}`, values with
/// 17 significant digits. `gt_label` is empty for bags without frame labels.
pub fn dump_features(
    params: &ModelParams<f32>,
    bags: &[FeatureBag],
    use_pil: bool,
    out: &mut impl std::io::Write,
) -> Result<usize> {
    let io = |e| Error::io("<feature dump>", e);
    let d = params.dims().d;
    let mut header = String::from("bag_id,index,gt_label");
    for j in 0..d {
        write!(header, ",f{j}").unwrap();
    }
    writeln!(out, "{header}").map_err(io)?;
    let mut rows = 0;
    for (bag, feats) in bags.iter().zip(enhanced_features(params, bags, use_pil)?) {
        for i in 0..bag.len() {
            let mut line = format!("{},{},", bag.id, i);
            if let Some(fl) = bag.frame_labels() {
                write!(line, "{}", fl[i]).unwrap();
            }
            for &x in feats.row(i) {
                write!(line, ",{:.16e}", x as f64).unwrap();
            }
            writeln!(out, "{line}").map_err(io)?;
            rows += 1;
        }
    }
    Ok(rows)
}
