//! Network inference from expression data: 2-means binarization,
//! coefficient-of-determination input selection, lookup-table probabilities.

use std::collections::HashMap;
use std::io::Read;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{NodeSpec, PbnModel};
use crate::network::Network;
use crate::state::NetworkState;

/// Diagonal ridge added to the normal equations so rank-deficient designs
/// (constant or duplicated columns) still solve.
const RIDGE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum InferenceError {
    #[error("no genes selected")]
    NoGenes,

    #[error("unknown gene {0:?}")]
    UnknownGene(String),

    #[error("invalid expression data: {0}")]
    InvalidData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Pbn(#[from] crate::error::PbnError),
}

pub type Result<T> = std::result::Result<T, InferenceError>;

/// Genes by samples, non-negative expression levels.
#[derive(Debug, Clone, PartialEq)]
pub struct ExpressionMatrix {
    pub genes: Vec<String>,
    pub values: Vec<Vec<f64>>,
}

impl ExpressionMatrix {
    pub fn new(genes: Vec<String>, values: Vec<Vec<f64>>) -> Result<Self> {
        if genes.len() != values.len() {
            return Err(InferenceError::InvalidData(format!(
                "{} gene names for {} rows",
                genes.len(),
                values.len()
            )));
        }
        let s = values.first().map_or(0, Vec::len);
        if s < 2 {
            return Err(InferenceError::InvalidData("need at least 2 samples".into()));
        }
        for (g, row) in genes.iter().zip(&values) {
            if row.len() != s {
                return Err(InferenceError::InvalidData(format!(
                    "gene {g} has {} samples, expected {s}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(InferenceError::InvalidData(format!(
                    "gene {g} has a negative or missing value"
                )));
            }
        }
        Ok(Self { genes, values })
    }

    pub fn n_samples(&self) -> usize {
        self.values[0].len()
    }

    /// Rows are genes: a name column followed by one column per sample,
    /// with a header row.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self> {
        let (genes, rows) = read_rows(reader)?;
        let values = rows
            .into_iter()
            .zip(&genes)
            .map(|(row, g)| {
                row.iter()
                    .map(|v| {
                        v.trim()
                            .parse::<f64>()
                            .map_err(|_| InferenceError::InvalidData(format!("gene {g}: bad number {v:?}")))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        Self::new(genes, values)
    }

    pub fn select(&self, subset: &[String]) -> Result<Self> {
        if subset.is_empty() {
            return Err(InferenceError::NoGenes);
        }
        let index: HashMap<&str, usize> = self.genes.iter().enumerate().map(|(i, g)| (g.as_str(), i)).collect();
        let rows = subset
            .iter()
            .map(|g| {
                index
                    .get(g.as_str())
                    .copied()
                    .ok_or_else(|| InferenceError::UnknownGene(g.clone()))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            genes: subset.to_vec(),
            values: rows.iter().map(|&i| self.values[i].clone()).collect(),
        })
    }
}

fn read_rows<R: Read>(reader: R) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let mut genes = Vec::new();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let mut it = rec.iter();
        let name = it.next().unwrap_or_default().trim().to_string();
        genes.push(name);
        rows.push(it.map(str::to_string).collect());
    }
    Ok((genes, rows))
}

/// Genes by samples, bits.
#[derive(Debug, Clone, PartialEq)]
pub struct BinaryMatrix {
    pub genes: Vec<String>,
    pub bits: Vec<Vec<bool>>,
    pub thresholds: Vec<f64>,
    /// Genes with a single distinct value, mapped to all zeros.
    pub constant: Vec<bool>,
}

impl BinaryMatrix {
    pub fn from_bits(genes: Vec<String>, bits: Vec<Vec<bool>>) -> Result<Self> {
        if genes.len() != bits.len() || genes.is_empty() {
            return Err(InferenceError::InvalidData("gene names and rows differ".into()));
        }
        let s = bits[0].len();
        if s < 2 || bits.iter().any(|r| r.len() != s) {
            return Err(InferenceError::InvalidData("rows need equal length >= 2".into()));
        }
        let constant = bits.iter().map(|r| r.iter().all(|&b| b == r[0])).collect();
        Ok(Self {
            thresholds: vec![0.5; genes.len()],
            genes,
            bits,
            constant,
        })
    }

    /// Pre-binarized CSV in the expression layout with 0/1 cells.
    pub fn from_bits_csv<R: Read>(reader: R) -> Result<Self> {
        let (genes, rows) = read_rows(reader)?;
        let bits = rows
            .iter()
            .zip(&genes)
            .map(|(row, g)| {
                row.iter()
                    .map(|v| match v.trim() {
                        "0" => Ok(false),
                        "1" => Ok(true),
                        other => Err(InferenceError::InvalidData(format!(
                            "gene {g}: expected 0/1, got {other:?}"
                        ))),
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<_>>()?;
        Self::from_bits(genes, bits)
    }

    pub fn n_genes(&self) -> usize {
        self.genes.len()
    }

    pub fn n_samples(&self) -> usize {
        self.bits[0].len()
    }

    pub fn gene_index(&self, name: &str) -> Option<usize> {
        self.genes.iter().position(|g| g == name)
    }
}

/// Exact 1-D 2-means: the best split of the sorted values into a lower and
/// an upper cluster. Returns the two centroids, or `None` for a constant row.
fn two_means(values: &[f64]) -> Option<(f64, f64)> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v[0] == v[v.len() - 1] {
        return None;
    }
    let n = v.len();
    let mut prefix = vec![0.0; n + 1];
    let mut prefix_sq = vec![0.0; n + 1];
    for i in 0..n {
        prefix[i + 1] = prefix[i] + v[i];
        prefix_sq[i + 1] = prefix_sq[i] + v[i] * v[i];
    }
    let sse = |a: usize, b: usize| {
        let k = (b - a) as f64;
        let s = prefix[b] - prefix[a];
        prefix_sq[b] - prefix_sq[a] - s * s / k
    };
    let mut best: Option<(f64, usize)> = None;
    for k in 1..n {
        // splits inside a run of equal values are never better
        if v[k] == v[k - 1] {
            continue;
        }
        let cost = sse(0, k) + sse(k, n);
        if best.map_or(true, |(c, _)| cost < c) {
            best = Some((cost, k));
        }
    }
    let (_, k) = best?;
    Some((prefix[k] / k as f64, (prefix[n] - prefix[k]) / (n - k) as f64))
}

/// Per-gene 2-means; the threshold is the centroid midpoint and values at
/// or above it map to 1.
pub fn binarize(data: &ExpressionMatrix) -> BinaryMatrix {
    let mut bits = Vec::with_capacity(data.genes.len());
    let mut thresholds = Vec::with_capacity(data.genes.len());
    let mut constant = Vec::with_capacity(data.genes.len());
    for row in &data.values {
        match two_means(row) {
            Some((lo, hi)) => {
                let t = 0.5 * (lo + hi);
                bits.push(row.iter().map(|&x| x >= t).collect());
                thresholds.push(t);
                constant.push(false);
            }
            None => {
                bits.push(vec![false; row.len()]);
                thresholds.push(row[0]);
                constant.push(true);
            }
        }
    }
    BinaryMatrix {
        genes: data.genes.clone(),
        bits,
        thresholds,
        constant,
    }
}

/// Prediction error used in the coefficient of determination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CodMetric {
    /// Misclassification rate of the least-squares fit thresholded at 0.5.
    #[default]
    Misclassification,
    /// Mean squared residual of the least-squares fit.
    SquaredError,
}

/// Solves the small symmetric system `a x = b` in place (partial pivoting).
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        let d = a[col][col];
        for r in col + 1..n {
            let f = a[r][col] / d;
            if f != 0.0 {
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}

/// Error of the least-squares linear predictor `a . X + b` of `y`.
fn prediction_error(columns: &[&[bool]], y: &[bool], metric: CodMetric) -> f64 {
    let k = columns.len() + 1;
    let s = y.len();
    let row = |i: usize| -> Vec<f64> {
        let mut r: Vec<f64> = columns.iter().map(|c| f64::from(u8::from(c[i]))).collect();
        r.push(1.0);
        r
    };
    let mut ata = vec![vec![0.0; k]; k];
    let mut aty = vec![0.0; k];
    for i in 0..s {
        let r = row(i);
        let yi = f64::from(u8::from(y[i]));
        for p in 0..k {
            aty[p] += r[p] * yi;
            for q in 0..k {
                ata[p][q] += r[p] * r[q];
            }
        }
    }
    for (p, r) in ata.iter_mut().enumerate() {
        r[p] += RIDGE * s as f64;
    }
    let coef = solve(ata, aty);
    let mut err = 0.0;
    for i in 0..s {
        let f: f64 = row(i).iter().zip(&coef).map(|(a, b)| a * b).sum();
        let yi = f64::from(u8::from(y[i]));
        err += match metric {
            CodMetric::Misclassification => f64::from(u8::from((f >= 0.5) != y[i])),
            CodMetric::SquaredError => (f - yi) * (f - yi),
        };
    }
    err / s as f64
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CodReport {
    pub target: usize,
    pub candidate: usize,
    pub baseline_error: f64,
    pub augmented_error: f64,
    pub cod: f64,
    /// `baseline_error` was already 0, so `cod` is reported as 0.
    pub baseline_perfect: bool,
}

fn cod_between(
    predictors: &BinaryMatrix,
    y: &[bool],
    target: usize,
    base: &[usize],
    candidate: usize,
    metric: CodMetric,
) -> CodReport {
    let mut cols: Vec<&[bool]> = base.iter().map(|&g| predictors.bits[g].as_slice()).collect();
    let e_x = prediction_error(&cols, y, metric);
    cols.push(&predictors.bits[candidate]);
    let e_aug = prediction_error(&cols, y, metric);
    let perfect = e_x == 0.0;
    CodReport {
        target,
        candidate,
        baseline_error: e_x,
        augmented_error: e_aug,
        cod: if perfect { 0.0 } else { (e_x - e_aug) / e_x },
        baseline_perfect: perfect,
    }
}

/// Relative error reduction from adding `candidate` to the predictors of
/// `target`. An empty base is the constant (majority) predictor.
pub fn cod_score(
    bin: &BinaryMatrix,
    target: usize,
    base_inputs: &[usize],
    candidate: usize,
    metric: CodMetric,
) -> Result<CodReport> {
    let g = bin.n_genes();
    if target >= g || candidate >= g || base_inputs.iter().any(|&b| b >= g) {
        return Err(InferenceError::InvalidArgument("gene index out of range".into()));
    }
    if candidate == target || base_inputs.contains(&candidate) {
        return Err(InferenceError::InvalidArgument(format!(
            "candidate {candidate} is the target or already an input"
        )));
    }
    Ok(cod_between(
        bin,
        &bin.bits[target],
        target,
        base_inputs,
        candidate,
        metric,
    ))
}

/// One greedily chosen input with the gain it brought.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SelectedInput {
    pub gene: usize,
    pub cod: f64,
}

fn greedy_select(
    predictors: &BinaryMatrix,
    y: &[bool],
    target: usize,
    exclude: Option<usize>,
    max_inputs: usize,
    min_cod_gain: f64,
    metric: CodMetric,
) -> Result<Vec<SelectedInput>> {
    if max_inputs == 0 {
        return Err(InferenceError::InvalidArgument("max_inputs must be >= 1".into()));
    }
    let mut chosen: Vec<SelectedInput> = Vec::new();
    while chosen.len() < max_inputs {
        let base: Vec<usize> = chosen.iter().map(|c| c.gene).collect();
        let mut best: Option<CodReport> = None;
        for cand in 0..predictors.n_genes() {
            if Some(cand) == exclude || base.contains(&cand) || predictors.constant[cand] {
                continue;
            }
            let r = cod_between(predictors, y, target, &base, cand, metric);
            // ties keep the lowest gene index
            if best.as_ref().map_or(true, |b| r.cod > b.cod) {
                best = Some(r);
            }
        }
        match best {
            Some(r) if !r.baseline_perfect && r.cod >= min_cod_gain => chosen.push(SelectedInput {
                gene: r.candidate,
                cod: r.cod,
            }),
            _ => break,
        }
    }
    Ok(chosen)
}

/// Greedy forward selection of up to `max_inputs` predictors of `target`.
pub fn select_inputs(
    bin: &BinaryMatrix,
    target: usize,
    max_inputs: usize,
    min_cod_gain: f64,
    metric: CodMetric,
) -> Result<Vec<SelectedInput>> {
    greedy_select(
        bin,
        &bin.bits[target],
        target,
        Some(target),
        max_inputs,
        min_cod_gain,
        metric,
    )
}

/// Empirical `P(Y = 1 | X = x)` per input combination; the first input is
/// the most significant bit of the combination index.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Lut {
    pub inputs: Vec<usize>,
    pub probabilities: Vec<f64>,
    pub counts: Vec<u64>,
    pub unobserved: Vec<bool>,
}

fn lut_from(predictors: &BinaryMatrix, y: &[bool], inputs: &[usize], alpha: f64) -> Lut {
    let rows = 1usize << inputs.len();
    let mut counts = vec![0u64; rows];
    let mut ones = vec![0u64; rows];
    for (s, &yi) in y.iter().enumerate() {
        let combo = inputs
            .iter()
            .fold(0usize, |acc, &g| (acc << 1) | usize::from(predictors.bits[g][s]));
        counts[combo] += 1;
        ones[combo] += u64::from(yi);
    }
    let probabilities = counts
        .iter()
        .zip(&ones)
        .map(|(&n, &k)| {
            if n == 0 {
                0.5
            } else {
                (k as f64 + alpha) / (n as f64 + 2.0 * alpha)
            }
        })
        .collect();
    Lut {
        inputs: inputs.to_vec(),
        probabilities,
        unobserved: counts.iter().map(|&n| n == 0).collect(),
        counts,
    }
}

pub fn estimate_lut(bin: &BinaryMatrix, target: usize, inputs: &[usize], laplace_alpha: f64) -> Result<Lut> {
    if inputs.len() > crate::model::MAX_ARITY {
        return Err(InferenceError::InvalidArgument(format!(
            "{} inputs is too many",
            inputs.len()
        )));
    }
    if !(laplace_alpha >= 0.0) {
        return Err(InferenceError::InvalidArgument("laplace_alpha must be >= 0".into()));
    }
    Ok(lut_from(bin, &bin.bits[target], inputs, laplace_alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InferOptions {
    pub max_inputs: usize,
    pub min_cod_gain: f64,
    pub laplace_alpha: f64,
    pub metric: CodMetric,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self {
            max_inputs: 2,
            min_cod_gain: 0.01,
            laplace_alpha: 0.0,
            metric: CodMetric::Misclassification,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NodeReport {
    pub gene: String,
    pub inputs: Vec<String>,
    pub cods: Vec<f64>,
    pub constant_gene: bool,
    pub unobserved_combinations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InferenceReport {
    pub options: InferOptions,
    pub samples: usize,
    pub nodes: Vec<NodeReport>,
}

impl InferenceReport {
    /// `gene,inputs,cods,constant_gene,unobserved_combinations`; list cells
    /// are `;`-separated.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("gene,inputs,cods,constant_gene,unobserved_combinations\n");
        for n in &self.nodes {
            let cods: Vec<String> = n.cods.iter().map(|c| c.to_string()).collect();
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                n.gene,
                n.inputs.join(";"),
                cods.join(";"),
                n.constant_gene,
                n.unobserved_combinations
            ));
        }
        out
    }
}

fn assemble(
    name: &str,
    predictors: &BinaryMatrix,
    targets: &BinaryMatrix,
    allow_self: bool,
    opts: &InferOptions,
) -> Result<(PbnModel, InferenceReport)> {
    if !(opts.laplace_alpha >= 0.0) {
        return Err(InferenceError::InvalidArgument("laplace_alpha must be >= 0".into()));
    }
    let mut nodes = Vec::with_capacity(targets.n_genes());
    let mut reports = Vec::with_capacity(targets.n_genes());
    for t in 0..targets.n_genes() {
        let y = &targets.bits[t];
        let exclude = (!allow_self).then_some(t);
        let chosen = greedy_select(
            predictors,
            y,
            t,
            exclude,
            opts.max_inputs,
            opts.min_cod_gain,
            opts.metric,
        )?;
        let inputs: Vec<usize> = chosen.iter().map(|c| c.gene).collect();
        let lut = lut_from(predictors, y, &inputs, opts.laplace_alpha);
        reports.push(NodeReport {
            gene: targets.genes[t].clone(),
            inputs: inputs.iter().map(|&g| predictors.genes[g].clone()).collect(),
            cods: chosen.iter().map(|c| c.cod).collect(),
            constant_gene: targets.constant[t],
            unobserved_combinations: lut.unobserved.iter().filter(|&&u| u).count(),
        });
        nodes.push(NodeSpec::with_table(
            inputs.iter().map(|g| g + 1).collect(),
            lut.probabilities,
        ));
    }
    let model = PbnModel::new(name, nodes).validated()?;
    Ok((
        model,
        InferenceReport {
            options: *opts,
            samples: targets.n_samples(),
            nodes: reports,
        },
    ))
}

/// Binarizes the selected genes and infers a stochastic-table network from
/// co-occurring samples. A gene is never its own input.
pub fn infer_pbn(
    data: &ExpressionMatrix,
    gene_subset: &[String],
    opts: &InferOptions,
) -> Result<(PbnModel, InferenceReport)> {
    let bin = binarize(&data.select(gene_subset)?);
    infer_from_binary(&bin, opts)
}

pub fn infer_from_binary(bin: &BinaryMatrix, opts: &InferOptions) -> Result<(PbnModel, InferenceReport)> {
    assemble("inferred", bin, bin, false, opts)
}

/// Infers from paired observations: column `s` of `after` is the successor
/// of column `s` of `before`. Self-inputs are allowed.
pub fn infer_from_transitions(
    before: &BinaryMatrix,
    after: &BinaryMatrix,
    opts: &InferOptions,
) -> Result<(PbnModel, InferenceReport)> {
    if before.genes != after.genes || before.n_samples() != after.n_samples() {
        return Err(InferenceError::InvalidData(
            "before and after matrices differ in shape".into(),
        ));
    }
    assemble("inferred", before, after, true, opts)
}

/// `count` one-step transitions from uniformly drawn source states, as
/// (before, after) matrices with genes named `x1..xN`.
pub fn sample_transitions<R: Rng + ?Sized>(
    network: &Network,
    count: usize,
    rng: &mut R,
) -> Result<(BinaryMatrix, BinaryMatrix)> {
    let n = network.n_nodes();
    let mut before = vec![Vec::with_capacity(count); n];
    let mut after = vec![Vec::with_capacity(count); n];
    for _ in 0..count {
        let s = NetworkState::random(n, rng);
        let t = network.step(&s, rng);
        for i in 0..n {
            before[i].push(s.get(i));
            after[i].push(t.get(i));
        }
    }
    let genes: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    Ok((
        BinaryMatrix::from_bits(genes.clone(), before)?,
        BinaryMatrix::from_bits(genes, after)?,
    ))
}

/// Largest total-variation distance between the one-step laws of two
/// networks over every state (small N only).
pub fn max_transition_tv(a: &Network, b: &Network) -> Result<f64> {
    let n = a.n_nodes();
    if n != b.n_nodes() || n > crate::analysis::DEFAULT_MATRIX_CAP {
        return Err(InferenceError::InvalidArgument(
            "networks must match and have N <= 16".into(),
        ));
    }
    let mut worst: f64 = 0.0;
    for i in 0..1u64 << n {
        let s = NetworkState::from_index(n, i);
        let pa = a.one_probabilities(&s);
        let pb = b.one_probabilities(&s);
        // TV between product Bernoulli laws, by enumeration of outcomes
        let mut tv = 0.0;
        for o in 0..1u64 << n {
            let mut qa = 1.0;
            let mut qb = 1.0;
            for k in 0..n {
                let bit = (o >> (n - 1 - k)) & 1 == 1;
                qa *= if bit { pa[k] } else { 1.0 - pa[k] };
                qb *= if bit { pb[k] } else { 1.0 - pb[k] };
            }
            tv += (qa - qb).abs();
        }
        worst = worst.max(0.5 * tv);
    }
    Ok(worst)
}
