use std::path::Path;

use crate::energy::EnergyBreakdown;
use crate::Result;

/// One line of the training log; `batch == None` marks an epoch summary.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub batch: Option<usize>,
    pub total_energy: f64,
    pub per_edge: Vec<f64>,
    pub val_metric: Option<f64>,
}

/// Append-only training log, rendered as CSV.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MetricsLog {
    pub edge_ids: Vec<String>,
    pub rows: Vec<MetricsRow>,
}

impl MetricsLog {
    pub fn new(edge_ids: Vec<String>) -> Self {
        Self {
            edge_ids,
            rows: Vec::new(),
        }
    }

    pub fn push_batch(&mut self, epoch: usize, batch: usize, e: &EnergyBreakdown) {
        self.rows.push(MetricsRow {
            epoch,
            batch: Some(batch),
            total_energy: e.total,
            per_edge: e.per_edge.clone(),
            val_metric: None,
        });
    }

    pub fn push_loss(&mut self, epoch: usize, batch: usize, loss: f64, per_term: Vec<f64>) {
        self.rows.push(MetricsRow {
            epoch,
            batch: Some(batch),
            total_energy: loss,
            per_edge: per_term,
            val_metric: None,
        });
    }

    /// Appends the mean of the epoch's batch rows plus the validation metric.
    pub fn close_epoch(&mut self, epoch: usize, val_metric: Option<f64>) -> MetricsRow {
        let batches: Vec<&MetricsRow> = self
            .rows
            .iter()
            .filter(|r| r.epoch == epoch && r.batch.is_some())
            .collect();
        let n = batches.len().max(1) as f64;
        let mut per_edge = vec![0.0; self.edge_ids.len()];
        let mut total = 0.0;
        for r in &batches {
            total += r.total_energy;
            for (acc, v) in per_edge.iter_mut().zip(&r.per_edge) {
                *acc += v;
            }
        }
        let row = MetricsRow {
            epoch,
            batch: None,
            total_energy: total / n,
            per_edge: per_edge.into_iter().map(|v| v / n).collect(),
            val_metric,
        };
        self.rows.push(row.clone());
        row
    }

    pub fn epoch_rows(&self) -> impl Iterator<Item = &MetricsRow> {
        self.rows.iter().filter(|r| r.batch.is_none())
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,batch,total_energy");
        for id in &self.edge_ids {
            out.push_str(&format!(",E[{id}]"));
        }
        out.push_str(",val_metric\n");
        for r in &self.rows {
            let batch = r.batch.map_or("epoch".to_string(), |b| b.to_string());
            out.push_str(&format!("{},{batch},{:e}", r.epoch, r.total_energy));
            for v in &r.per_edge {
                out.push_str(&format!(",{v:e}"));
            }
            match r.val_metric {
                Some(v) => out.push_str(&format!(",{v}\n")),
                None => out.push_str(",\n"),
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, self.to_csv().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn summary_row_averages_batches() {
        let mut log = MetricsLog::new(vec!["a".into()]);
        log.push_loss(1, 0, 2.0, vec![2.0]);
        log.push_loss(1, 1, 4.0, vec![4.0]);
        let row = log.close_epoch(1, Some(0.5));
        assert_eq!(row.total_energy, 3.0);
        let csv = log.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "epoch,batch,total_energy,E[a],val_metric");
        assert_eq!(lines[3], "1,epoch,3e0,3e0,0.5");
        assert_eq!(lines[1], "1,0,2e0,2e0,");
    }
}
