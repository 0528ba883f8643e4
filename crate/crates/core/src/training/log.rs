//! Per-epoch loss log.

use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub l_d: f64,
    pub l_g: f64,
    pub l_hv: f64,
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossLog {
    pub rows: Vec<EpochLoss>,
    /// Warnings raised while loading or resuming.
    pub warnings: Vec<String>,
}

impl LossLog {
    pub fn push(&mut self, row: EpochLoss) {
        self.rows.push(row);
    }

    pub fn warn(&mut self, msg: impl Into<String>) {
        let msg = msg.into();
        log::warn!("{msg}");
        self.warnings.push(msg);
    }

    /// `epoch,L_D,L_G,L_Hv,wall_seconds` CSV.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,L_D,L_G,L_Hv,wall_seconds\n");
        for r in &self.rows {
            s.push_str(&format!(
                "{},{},{},{},{:.3}\n",
                r.epoch, r.l_d, r.l_g, r.l_hv, r.wall_seconds
            ));
        }
        s
    }

    /// Loss values without timings, for reproducibility comparisons.
    pub fn losses(&self) -> Vec<(usize, f64, f64, f64)> {
        self.rows
            .iter()
            .map(|r| (r.epoch, r.l_d, r.l_g, r.l_hv))
            .collect()
    }

    /// Smallest logged L_Hv and its epoch.
    pub fn best_l_hv(&self) -> Option<(usize, f64)> {
        self.rows
            .iter()
            .map(|r| (r.epoch, r.l_hv))
            .min_by(|a, b| a.1.total_cmp(&b.1))
    }
}
