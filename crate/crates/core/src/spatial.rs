//! Moran's I on analysis residuals over a neighborhood adjacency graph.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::Read;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analyze::AnalysisSpec;
use crate::data::TwoPhaseData;
use crate::error::{Error, Result};
use crate::regress::{DesignSpec, GlmFit};
use crate::rng;
use crate::stats::normal_sf;

/// Undirected graph of border-sharing neighborhoods.
#[derive(Debug, Clone, PartialEq)]
pub struct AdjacencyGraph {
    ids: Vec<String>,
    neighbors: Vec<Vec<usize>>,
}

#[derive(Debug, Deserialize)]
struct EdgeRecord {
    id_a: String,
    id_b: String,
}

impl AdjacencyGraph {
    /// Graph over `ids` in the given order. Duplicate edges in either
    /// direction collapse to one; self-edges and unknown ids are errors.
    pub fn from_edges<I, S>(ids: &[String], edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, S)>,
        S: AsRef<str>,
    {
        let mut index = HashMap::with_capacity(ids.len());
        for (i, id) in ids.iter().enumerate() {
            if index.insert(id.as_str(), i).is_some() {
                return Err(Error::InvalidGraph(format!("duplicate node id `{id}`")));
            }
        }
        let mut sets = vec![BTreeSet::new(); ids.len()];
        for (a, b) in edges {
            let (a, b) = (a.as_ref(), b.as_ref());
            if a == b {
                return Err(Error::InvalidGraph(format!("self-edge on `{a}`")));
            }
            let lookup =
                |id: &str| index.get(id).copied().ok_or_else(|| Error::InvalidGraph(format!("unknown id `{id}`")));
            let (i, j) = (lookup(a)?, lookup(b)?);
            sets[i].insert(j);
            sets[j].insert(i);
        }
        Ok(Self { ids: ids.to_vec(), neighbors: sets.into_iter().map(|s| s.into_iter().collect()).collect() })
    }

    /// Edge list CSV with header `id_a,id_b`.
    pub fn read_csv(ids: &[String], reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let edges: Vec<(String, String)> = rdr
            .deserialize::<EdgeRecord>()
            .map(|r| r.map(|e| (e.id_a, e.id_b)))
            .collect::<std::result::Result<_, _>>()?;
        Self::from_edges(ids, edges)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn n_nodes(&self) -> usize {
        self.ids.len()
    }

    pub fn n_edges(&self) -> usize {
        self.neighbors.iter().map(Vec::len).sum::<usize>() / 2
    }

    pub fn neighbors(&self, i: usize) -> &[usize] {
        &self.neighbors[i]
    }

    /// Ids of nodes without neighbors.
    pub fn isolated(&self) -> Vec<&str> {
        self.neighbors.iter().zip(&self.ids).filter(|(n, _)| n.is_empty()).map(|(_, id)| id.as_str()).collect()
    }

    /// Dense weight matrix.
    pub fn weights(&self, weighting: Weighting) -> Vec<Vec<f64>> {
        let n = self.n_nodes();
        let mut w = vec![vec![0.0; n]; n];
        for (i, nb) in self.neighbors.iter().enumerate() {
            let v = match weighting {
                Weighting::Binary => 1.0,
                Weighting::RowStandardized => 1.0 / nb.len() as f64,
            };
            for &j in nb {
                w[i][j] = v;
            }
        }
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    Binary,
    #[default]
    RowStandardized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Inference {
    /// Normal approximation with the variance under random permutation of values.
    #[default]
    Randomization,
    /// Normal approximation with the variance under normally distributed values.
    Normality,
    Permutation {
        permutations: usize,
        seed: u64,
    },
}

impl fmt::Display for Inference {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Inference::Randomization => f.write_str("randomization"),
            Inference::Normality => f.write_str("normality"),
            Inference::Permutation { permutations, .. } => write!(f, "permutation, {permutations} draws"),
        }
    }
}

pub const MIN_PERMUTATIONS: usize = 999;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MoranResult {
    pub statistic: f64,
    pub expected: f64,
    /// Variance under the null; None for the permutation test.
    pub variance: Option<f64>,
    pub p_value: f64,
    pub weighting: Weighting,
    pub inference: Inference,
}

/// Y minus fitted means for the model behind `spec`.
pub fn residuals(spec: &DesignSpec, fit: &GlmFit) -> Result<Vec<f64>> {
    if spec.design.names() != fit.names.as_slice() {
        return Err(Error::invalid(format!(
            "fit has coefficients {:?}, design has {:?}",
            fit.names,
            spec.design.names()
        )));
    }
    Ok((0..spec.outcome.len())
        .map(|i| spec.outcome[i] - (spec.offset[i] + spec.design.linear_predictor(i, &fit.coefficients)).exp())
        .collect())
}

/// Residuals of a naive fit: e_i = Y_i - exp(log Pop_i + design_i b).
pub fn residuals_naive(data: &TwoPhaseData, spec: &AnalysisSpec, fit: &GlmFit) -> Result<Vec<f64>> {
    if fit.n_obs != data.n() {
        return Err(Error::invalid(format!("fit used {} rows, dataset has {}", fit.n_obs, data.n())));
    }
    residuals(&spec.design(data, &data.x_star, None)?, fit)
}

fn statistic(z: &[f64], neighbors: &[Vec<usize>], weighting: Weighting, s0: f64, m2: f64) -> f64 {
    let cross: f64 = neighbors
        .iter()
        .enumerate()
        .map(|(i, nb)| {
            let s: f64 = nb.iter().map(|&j| z[j]).sum();
            match weighting {
                Weighting::Binary => z[i] * s,
                Weighting::RowStandardized if nb.is_empty() => 0.0,
                Weighting::RowStandardized => z[i] * s / nb.len() as f64,
            }
        })
        .sum();
    z.len() as f64 / s0 * cross / m2
}

/// Moran's I of `values` (ordered like the graph's ids) with a two-sided p-value.
pub fn morans_i(
    values: &[f64],
    graph: &AdjacencyGraph,
    weighting: Weighting,
    inference: Inference,
) -> Result<MoranResult> {
    let n = graph.n_nodes();
    if values.len() != n {
        return Err(Error::invalid(format!("{} values for {n} graph nodes", values.len())));
    }
    if graph.n_edges() == 0 {
        return Err(Error::InvalidGraph("graph has no edges".into()));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("values must be finite"));
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let z: Vec<f64> = values.iter().map(|v| v - mean).collect();
    let m2: f64 = z.iter().map(|v| v * v).sum();
    let scale = values.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    if m2 <= (1e-14 * scale).powi(2) * n as f64 {
        return Err(Error::DegenerateInput("values are constant".into()));
    }
    let w = graph.weights(weighting);
    let s0: f64 = w.iter().flatten().sum();
    let i_obs = statistic(&z, &graph.neighbors, weighting, s0, m2);
    let nf = n as f64;
    let expected = -1.0 / (nf - 1.0);

    let (variance, p_value) = match inference {
        Inference::Normality | Inference::Randomization => {
            let mut s1 = 0.0;
            let mut s2 = 0.0;
            for (i, wi) in w.iter().enumerate() {
                let row: f64 = wi.iter().sum();
                let col: f64 = w.iter().map(|r| r[i]).sum();
                s1 += wi.iter().zip(&w).map(|(a, r)| (a + r[i]).powi(2)).sum::<f64>();
                s2 += (row + col).powi(2);
            }
            s1 /= 2.0;
            let var = if let Inference::Normality = inference {
                (nf * nf * s1 - nf * s2 + 3.0 * s0 * s0) / ((nf * nf - 1.0) * s0 * s0) - expected * expected
            } else {
                if n < 4 {
                    return Err(Error::invalid("randomization variance needs at least 4 nodes"));
                }
                let m4: f64 = z.iter().map(|v| v.powi(4)).sum();
                let b2 = nf * m4 / (m2 * m2);
                let num = nf * ((nf * nf - 3.0 * nf + 3.0) * s1 - nf * s2 + 3.0 * s0 * s0)
                    - b2 * ((nf * nf - nf) * s1 - 2.0 * nf * s2 + 6.0 * s0 * s0);
                num / ((nf - 1.0) * (nf - 2.0) * (nf - 3.0) * s0 * s0) - expected * expected
            };
            if var.is_nan() || var <= 0.0 {
                return Err(Error::DegenerateInput(format!("null variance of I is {var}")));
            }
            let zscore = (i_obs - expected) / var.sqrt();
            (Some(var), (2.0 * normal_sf(zscore.abs())).min(1.0))
        }
        Inference::Permutation { permutations, seed } => {
            if permutations < MIN_PERMUTATIONS {
                return Err(Error::config(format!("permutation test needs at least {MIN_PERMUTATIONS} permutations")));
            }
            let dev = (i_obs - expected).abs() * (1.0 - 1e-12);
            let extreme: usize = (0..permutations)
                .into_par_iter()
                .map(|k| {
                    let mut perm = z.clone();
                    perm.shuffle(&mut rng::stream(seed, k as u64));
                    usize::from((statistic(&perm, &graph.neighbors, weighting, s0, m2) - expected).abs() >= dev)
                })
                .sum();
            (None, (extreme + 1) as f64 / (permutations + 1) as f64)
        }
    };
    Ok(MoranResult { statistic: i_obs, expected, variance, p_value, weighting, inference })
}
