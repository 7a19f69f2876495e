use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::planner::Path;

/// Counts of retained paths between stable states. Entry `(i, j)` counts
/// paths from the state labelled `ids[i]` to the state labelled `ids[j]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdjacencyMatrix {
    pub ids: Vec<usize>,
    pub counts: Vec<Vec<u64>>,
}

impl AdjacencyMatrix {
    pub fn zeros(ids: Vec<usize>) -> Self {
        let m = ids.len();
        Self { ids, counts: vec![vec![0; m]; m] }
    }

    fn index(&self, id: usize) -> Result<usize, HarnessError> {
        self.ids.iter().position(|&x| x == id).ok_or(HarnessError::UnknownGoalId(id))
    }

    pub fn add(&mut self, path: &Path) -> Result<(), HarnessError> {
        let i = self.index(path.start_id)?;
        let j = self.index(path.goal_id)?;
        self.counts[i][j] += 1;
        Ok(())
    }

    pub fn from_paths<'a>(ids: Vec<usize>, paths: impl IntoIterator<Item = &'a Path>) -> Result<Self, HarnessError> {
        let mut a = Self::zeros(ids);
        for p in paths {
            a.add(p)?;
        }
        Ok(a)
    }

    pub fn row_sums(&self) -> Vec<u64> {
        self.counts.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn max(&self) -> u64 {
        self.counts.iter().flatten().copied().max().unwrap_or(0)
    }

    /// CSV with a `start` column of row ids and one column per goal id.
    pub fn to_csv(&self, meta: Option<&str>) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<String> =
            std::iter::once("start".to_string()).chain(self.ids.iter().map(|id| id.to_string())).collect();
        w.write_record(&header).expect("header writes");
        for (id, row) in self.ids.iter().zip(&self.counts) {
            let rec: Vec<String> = std::iter::once(id.to_string()).chain(row.iter().map(|c| c.to_string())).collect();
            w.write_record(&rec).expect("row writes");
        }
        let body = String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv");
        match meta {
            Some(m) => format!("# {m}\n{body}"),
            None => body,
        }
    }
}

const ZERO_COLOR: [u8; 3] = [255, 255, 255];
const LOW_COLOR: [f64; 3] = [198.0, 219.0, 239.0];
const HIGH_COLOR: [f64; 3] = [8.0, 48.0, 107.0];

/// Binary PPM heatmap, one pixel per entry. Empty cells are white; counts
/// map linearly from light to dark blue between 1 and the maximum count.
pub fn heatmap_ppm(a: &AdjacencyMatrix, meta: Option<&str>) -> Vec<u8> {
    let m = a.ids.len();
    let mut out = b"P6\n".to_vec();
    if let Some(meta) = meta {
        out.extend_from_slice(format!("# {meta}\n").as_bytes());
    }
    out.extend_from_slice(format!("{m} {m}\n255\n").as_bytes());
    let max = a.max();
    for row in &a.counts {
        for &c in row {
            if c == 0 {
                out.extend_from_slice(&ZERO_COLOR);
                continue;
            }
            let t = if max > 1 { (c - 1) as f64 / (max - 1) as f64 } else { 1.0 };
            out.extend((0..3).map(|i| (LOW_COLOR[i] + t * (HIGH_COLOR[i] - LOW_COLOR[i])).round() as u8));
        }
    }
    out
}
