use std::io::Write;

use crate::error::Result;

/// One row of the per-iteration trace. Iteration 0 describes the initial
/// state, before any training.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationMetrics {
    pub iteration: usize,
    /// Mean over the iteration's generator steps.
    pub loss_g: Option<f64>,
    /// Mean over the iteration's discriminator steps.
    pub loss_d: Option<f64>,
    /// Mean over the iteration's E-net steps on generated samples.
    pub loss_e: Option<f64>,
    pub phi: Vec<f64>,
    pub clustering_error: Option<f64>,
    pub labeled_error: Option<f64>,
    /// Error of the hard labels against ground truth without relabeling;
    /// only reported when labeled data pins cluster identities.
    pub classification_error: Option<f64>,
    /// Supervised fine-tuning steps taken this iteration.
    pub supervised_steps: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct MetricsTrace {
    pub rows: Vec<IterationMetrics>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x:.17e}")).unwrap_or_default()
}

impl MetricsTrace {
    pub fn push(&mut self, row: IterationMetrics) {
        self.rows.push(row);
    }

    pub fn last(&self) -> Option<&IterationMetrics> {
        self.rows.last()
    }

    /// Columns: `iteration,loss_g,loss_d,loss_e,phi_0..phi_{K-1},clustering_error,labeled_error,classification_error,supervised_steps`.
    /// Floats are written in round-trip exponent form so reruns compare byte for byte.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let k = self.rows.first().map(|r| r.phi.len()).unwrap_or(0);
        let mut header: Vec<String> = ["iteration", "loss_g", "loss_d", "loss_e"].map(String::from).to_vec();
        header.extend((0..k).map(|i| format!("phi_{i}")));
        header.extend(["clustering_error", "labeled_error", "classification_error", "supervised_steps"].map(String::from));
        w.write_record(&header)?;
        for r in &self.rows {
            let mut rec = vec![
                r.iteration.to_string(),
                opt(r.loss_g),
                opt(r.loss_d),
                opt(r.loss_e),
            ];
            rec.extend(r.phi.iter().map(|p| format!("{p:.17e}")));
            rec.push(opt(r.clustering_error));
            rec.push(opt(r.labeled_error));
            rec.push(opt(r.classification_error));
            rec.push(r.supervised_steps.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}
