use serde::{Deserialize, Serialize};

/// Per-checkpoint annotations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointStatus {
    /// No surviving trajectory reached this checkpoint.
    pub empty: bool,
    /// A corrected value exceeded the cap and was clipped.
    pub capped: bool,
    /// The correction factor was too small to trust the division.
    pub unreliable: bool,
}

/// Memory coherence recorded at a list of repetition counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MemoryTrace {
    pub checkpoints: Vec<u64>,
    pub xy_length: Vec<f64>,
    pub xy_err: Vec<f64>,
    pub z_value: Vec<f64>,
    pub survival: Vec<f64>,
    pub status: Vec<CheckpointStatus>,
}

impl MemoryTrace {
    pub fn len(&self) -> usize {
        self.checkpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checkpoints.is_empty()
    }

    /// `(N, xy_length, xy_err)` for checkpoints that have data.
    pub fn points(&self) -> Vec<(f64, f64, f64)> {
        (0..self.len())
            .filter(|&i| !self.status[i].empty)
            .map(|i| (self.checkpoints[i] as f64, self.xy_length[i], self.xy_err[i]))
            .collect()
    }

    /// CSV with header `n,xy_len,xy_err,z,survival`. Empty checkpoints carry
    /// `nan` in the coherence columns.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("n,xy_len,xy_err,z,survival\n");
        for i in 0..self.len() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                self.checkpoints[i], self.xy_length[i], self.xy_err[i], self.z_value[i], self.survival[i]
            ));
        }
        out
    }
}
