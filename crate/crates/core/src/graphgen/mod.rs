//! Synthetic graphs, ego-net windows, structural measurements and graph files.

mod egonet;
mod generators;
mod graph;

use std::path::Path;

pub use egonet::{sample_egonet, Window};
pub use generators::{
    chunglu_edge_prob, generate_chunglu, generate_sbm, ChungLuParams, MeanOrientation, SbmParams,
};
pub use graph::{Graph, GRAPH_FORMAT_VERSION};

use crate::error::{Error, Result};

/// Fraction of edges whose endpoints share a label.
pub fn measure_homophily(graph: &Graph) -> Result<f64> {
    let edges = graph.edges();
    if edges.is_empty() {
        return Err(Error::Precondition("homophily undefined on an empty edge set".into()));
    }
    let same = edges.iter().filter(|&&(i, j)| graph.labels()[i] == graph.labels()[j]).count();
    Ok(same as f64 / edges.len() as f64)
}

/// Mean squared feature row norm S_x².
pub fn mean_sq_row_norm(graph: &Graph) -> f64 {
    let x = graph.features();
    (0..x.rows()).map(|i| x.row_slice(i).iter().map(|v| v * v).sum::<f64>()).sum::<f64>() / x.rows() as f64
}

/// h_X = E[x_i·x_j | (i,j) ∈ E] / S_x².
pub fn measure_feature_correlation(graph: &Graph) -> Result<f64> {
    let edges = graph.edges();
    if edges.is_empty() {
        return Err(Error::Precondition("feature correlation needs at least one edge".into()));
    }
    let sx2 = mean_sq_row_norm(graph);
    if sx2 <= 0.0 {
        return Err(Error::Precondition("feature correlation undefined for all-zero features".into()));
    }
    let x = graph.features();
    let dot: f64 = edges
        .iter()
        .map(|&(i, j)| x.row_slice(i).iter().zip(x.row_slice(j)).map(|(a, b)| a * b).sum::<f64>())
        .sum();
    Ok(dot / edges.len() as f64 / sx2)
}

pub fn save_graph(graph: &Graph, path: &Path) -> Result<()> {
    let file = graph::GraphFile::from(graph);
    std::fs::write(path, serde_json::to_string(&file)?)?;
    Ok(())
}

pub fn load_graph(path: &Path) -> Result<Graph> {
    let text = std::fs::read_to_string(path)?;
    let fmt_err = |reason: String| Error::Format { path: path.to_path_buf(), reason };
    let file: graph::GraphFile = serde_json::from_str(&text).map_err(|e| fmt_err(e.to_string()))?;
    file.into_graph().map_err(|e| fmt_err(e.to_string()))
}
