//! Desk-scale studies: the overparameterisation-vs-convergence grid and the
//! (γ, β) robustness sweep of the clustering step. Both emit CSV.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::activation::Activation;
use crate::cluster::ClusterReport;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::pipeline::{cluster_layer, reconstruct_from_ensemble, PipelineConfig};
use crate::seeds::{derive_seed, stream};
use crate::teacher::{gen_dataset, sample_shallow_teacher, TeacherSpec};
use crate::trainer::{glorot_init, train, InitDistribution, StudentEnsemble, TrainConfig};

/// Caps that keep a grid runnable on a desk machine.
pub const MAX_D_IN: usize = 8;
pub const MAX_R: usize = 4;
pub const MAX_RHO: usize = 4;
pub const MAX_SAMPLES: usize = 30_000;
pub const MAX_STEPS: usize = 50_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridConfig {
    pub d_in: Vec<usize>,
    pub r: Vec<usize>,
    pub teachers_per_cell: usize,
    pub seeds_per_teacher: usize,
    pub rho: Vec<usize>,
    pub samples: usize,
    pub activation: Activation,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for GridConfig {
    fn default() -> Self {
        GridConfig {
            d_in: vec![2, 4, 8],
            r: vec![2, 4],
            teachers_per_cell: 3,
            seeds_per_teacher: 5,
            rho: vec![1, 2, 4],
            samples: MAX_SAMPLES,
            activation: Activation::G,
            train: TrainConfig::monotone(300),
            seed: 0,
        }
    }
}

impl GridConfig {
    pub fn validate(&self) -> Result<()> {
        let over = |v: &[usize], cap: usize| v.iter().any(|&x| x == 0 || x > cap);
        if over(&self.d_in, MAX_D_IN) || over(&self.r, MAX_R) || over(&self.rho, MAX_RHO) {
            return Err(Error::Argument(format!(
                "grid values must lie in 1..={MAX_D_IN} (d_in), 1..={MAX_R} (r) and 1..={MAX_RHO} (rho)"
            )));
        }
        if self.samples == 0 || self.samples > MAX_SAMPLES {
            return Err(Error::Argument(format!("samples must lie in 1..={MAX_SAMPLES}")));
        }
        if self.train.max_steps > MAX_STEPS {
            return Err(Error::Argument(format!("step budget is capped at {MAX_STEPS}")));
        }
        self.train.validate()
    }
}

/// One training run of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub d_in: usize,
    pub r: usize,
    pub teacher: usize,
    pub seed: usize,
    pub rho: usize,
    pub width: usize,
    pub final_loss: f64,
    pub steps: usize,
    pub diverged: bool,
}

pub const GRID_HEADER: &str = "d_in,r,teacher,seed,rho,width,final_loss,steps,diverged";

fn cell_index(d_in: usize, r: usize, teacher: usize) -> u64 {
    ((d_in as u64) << 40) | ((r as u64) << 32) | teacher as u64
}

/// Train one student per `(d_in, r, teacher, seed, ρ)` and record its final
/// loss. Rows come out in that lexicographic order whatever the scheduling.
pub fn convergence_grid(cfg: &GridConfig) -> Result<Vec<GridRow>> {
    cfg.validate()?;
    let mut cells = Vec::new();
    for &d_in in &cfg.d_in {
        for &r in &cfg.r {
            for t in 0..cfg.teachers_per_cell {
                cells.push((d_in, r, t));
            }
        }
    }
    let teachers: Vec<(Dataset, (usize, usize, usize))> = cells
        .par_iter()
        .map(|&(d_in, r, t)| {
            let idx = cell_index(d_in, r, t);
            let spec = TeacherSpec::shallow(d_in, r, cfg.activation, derive_seed(cfg.seed, stream::TEACHER, idx));
            let teacher = sample_shallow_teacher(&spec)?;
            let data = gen_dataset(&teacher, cfg.samples, derive_seed(cfg.seed, stream::DATA, idx))?;
            Ok((data, (d_in, r, t)))
        })
        .collect::<Result<_>>()?;
    let mut runs = Vec::new();
    for (ti, (_, (d_in, r, t))) in teachers.iter().enumerate() {
        for s in 0..cfg.seeds_per_teacher {
            for &rho in &cfg.rho {
                runs.push((ti, *d_in, *r, *t, s, rho));
            }
        }
    }
    runs.par_iter()
        .map(|&(ti, d_in, r, t, s, rho)| {
            let data = &teachers[ti].0;
            let width = r * rho;
            let seed = derive_seed(
                cfg.seed,
                stream::GRID,
                (cell_index(d_in, r, t) << 12) | ((s as u64) << 4) | rho as u64,
            );
            let init = glorot_init(&[d_in, width, 1], cfg.activation, InitDistribution::Normal, seed)?;
            let (final_loss, steps, diverged) = match train(&init, data, &cfg.train.clone().with_seed(seed)) {
                Ok(out) => (out.final_loss, out.steps, false),
                Err(Error::Divergence { step, .. }) => (f64::INFINITY, step, true),
                Err(e) => return Err(e),
            };
            Ok(GridRow {
                d_in,
                r,
                teacher: t,
                seed: s,
                rho,
                width,
                final_loss,
                steps,
                diverged,
            })
        })
        .collect()
}

pub fn write_grid_csv(rows: &[GridRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "{GRID_HEADER}")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{},{},{},{:e},{},{}",
            r.d_in, r.r, r.teacher, r.seed, r.rho, r.width, r.final_loss, r.steps, r.diverged
        )?;
    }
    Ok(())
}

/// Per `(d_in, r, ρ)`: run count, median final loss and the fraction of runs
/// at or below `threshold`. Thresholds are applied only here, never during
/// training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub d_in: usize,
    pub r: usize,
    pub rho: usize,
    pub runs: usize,
    pub median_loss: f64,
    pub converged_fraction: f64,
}

pub fn summarize_grid(rows: &[GridRow], threshold: f64) -> Vec<GridSummary> {
    use std::collections::BTreeMap;
    let mut cells: BTreeMap<(usize, usize, usize), Vec<f64>> = BTreeMap::new();
    for r in rows {
        cells.entry((r.d_in, r.r, r.rho)).or_default().push(r.final_loss);
    }
    cells
        .into_iter()
        .map(|((d_in, r, rho), mut losses)| {
            losses.sort_by(f64::total_cmp);
            let n = losses.len();
            let median = if n % 2 == 1 {
                losses[n / 2]
            } else {
                0.5 * (losses[n / 2 - 1] + losses[n / 2])
            };
            GridSummary {
                d_in,
                r,
                rho,
                runs: n,
                median_loss: median,
                converged_fraction: losses.iter().filter(|&&l| l <= threshold).count() as f64 / n as f64,
            }
        })
        .collect()
}

/// One `(γ, β)` cell of the robustness sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub beta: f64,
    /// Kept clusters in the first hidden layer.
    pub kept_clusters: Option<usize>,
    /// Hidden sizes of the reconstruction (shallow ensembles only).
    pub recovered_sizes: Option<Vec<usize>>,
    pub final_loss: Option<f64>,
    pub error: Option<String>,
}

pub const SWEEP_HEADER: &str = "gamma,beta,kept_clusters,recovered_size,final_loss,error";

/// Re-run clustering for every `(γ, β)` on one trained ensemble. Shallow
/// ensembles are also read out and fine-tuned; students are never retrained.
/// Cells that fail are recorded, not fatal.
pub fn robustness_sweep(
    data: &Dataset,
    ensemble: &StudentEnsemble,
    gammas: &[f64],
    betas: &[f64],
    cfg: &PipelineConfig,
) -> Result<Vec<SweepRow>> {
    if ensemble.is_empty() {
        return Err(Error::Argument("sweep needs a trained ensemble".into()));
    }
    let shallow = ensemble.students[0].depth() == 1;
    let cells: Vec<(f64, f64)> = gammas
        .iter()
        .flat_map(|&g| betas.iter().map(move |&b| (g, b)))
        .collect();
    Ok(cells
        .par_iter()
        .map(|&(gamma, beta)| {
            let cell_cfg = PipelineConfig {
                gamma,
                beta,
                beta_per_layer: None,
                ..cfg.clone()
            };
            let mut row = SweepRow {
                gamma,
                beta,
                kept_clusters: None,
                recovered_sizes: None,
                final_loss: None,
                error: None,
            };
            let clustered: Result<ClusterReport> = cell_cfg
                .validate()
                .and_then(|_| cluster_layer(ensemble, 0, gamma, beta).map(|(rep, _)| rep));
            match clustered {
                Ok(rep) => row.kept_clusters = Some(rep.kept_count()),
                Err(e) => {
                    row.error = Some(e.to_string());
                    return row;
                }
            }
            if shallow {
                match reconstruct_from_ensemble(data, &cell_cfg, ensemble.clone(), None) {
                    Ok(res) => {
                        row.recovered_sizes = Some(res.hidden_sizes());
                        row.final_loss = Some(res.final_loss);
                    }
                    Err(e) => row.error = Some(e.to_string()),
                }
            }
            row
        })
        .collect())
}

pub fn write_sweep_csv(rows: &[SweepRow], mut out: impl Write) -> Result<()> {
    writeln!(out, "{SWEEP_HEADER}")?;
    for r in rows {
        let size = r
            .recovered_sizes
            .as_ref()
            .map(|s| s.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("-"))
            .unwrap_or_default();
        let error = r.error.as_deref().unwrap_or("").replace([',', '\n'], ";");
        writeln!(
            out,
            "{},{},{},{},{},{}",
            r.gamma,
            r.beta,
            r.kept_clusters.map(|k| k.to_string()).unwrap_or_default(),
            size,
            r.final_loss.map(|l| format!("{l:e}")).unwrap_or_default(),
            error
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::Widths;
    use crate::trainer::train_ensemble;

    fn tiny_grid() -> GridConfig {
        GridConfig {
            d_in: vec![2],
            r: vec![1, 2],
            teachers_per_cell: 1,
            seeds_per_teacher: 2,
            rho: vec![1, 2],
            samples: 200,
            train: TrainConfig::monotone(5),
            ..Default::default()
        }
    }

    #[test]
    fn grid_rows_are_ordered_and_reproducible() {
        let cfg = tiny_grid();
        let rows = convergence_grid(&cfg).unwrap();
        assert_eq!(rows.len(), 2 * 2 * 2);
        let keys: Vec<_> = rows.iter().map(|r| (r.d_in, r.r, r.teacher, r.seed, r.rho)).collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);
        for r in &rows {
            assert_eq!(r.width, r.r * r.rho);
            assert!(r.final_loss.is_finite() && !r.diverged);
        }
        assert_eq!(convergence_grid(&cfg).unwrap(), rows);
        let other = convergence_grid(&GridConfig { seed: 1, ..cfg }).unwrap();
        assert_ne!(other, rows);
    }

    #[test]
    fn grid_caps_are_enforced() {
        let base = tiny_grid();
        for bad in [
            GridConfig {
                d_in: vec![MAX_D_IN + 1],
                ..base.clone()
            },
            GridConfig {
                r: vec![0],
                ..base.clone()
            },
            GridConfig {
                rho: vec![MAX_RHO + 1],
                ..base.clone()
            },
            GridConfig {
                samples: MAX_SAMPLES + 1,
                ..base.clone()
            },
            GridConfig {
                train: TrainConfig::monotone(MAX_STEPS + 1),
                ..base.clone()
            },
        ] {
            assert!(matches!(convergence_grid(&bad), Err(Error::Argument(_))));
        }
    }

    #[test]
    fn csv_output_and_summary() {
        let mut buf = Vec::new();
        write_grid_csv(&[], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), format!("{GRID_HEADER}\n"));

        let row = |rho, loss| GridRow {
            d_in: 2,
            r: 2,
            teacher: 0,
            seed: 0,
            rho,
            width: 2 * rho,
            final_loss: loss,
            steps: 10,
            diverged: false,
        };
        let rows = vec![row(1, 1e-3), row(1, 1e-9), row(1, 2e-3), row(2, 1e-12), row(2, 3e-12)];
        let mut buf = Vec::new();
        write_grid_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 6);
        assert_eq!(text.lines().nth(1).unwrap(), "2,2,0,0,1,2,1e-3,10,false");
        let s = summarize_grid(&rows, 1e-8);
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].rho, s[0].runs, s[0].median_loss), (1, 3, 1e-3));
        assert!((s[0].converged_fraction - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!((s[1].median_loss, s[1].converged_fraction), (2e-12, 1.0));
    }

    #[test]
    fn sweep_cells_match_direct_clustering() {
        let teacher = sample_shallow_teacher(&TeacherSpec::shallow(2, 2, Activation::G, 3)).unwrap();
        let data = gen_dataset(&teacher, 400, 4).unwrap();
        let ens = train_ensemble(&[4], &data, Activation::G, &TrainConfig::monotone(40).with_seed(5), 4).unwrap();
        let cfg = PipelineConfig {
            n_students: 4,
            widths: Widths::Explicit { widths: vec![4] },
            finetune: TrainConfig::monotone(5),
            ..Default::default()
        };
        let gammas = [0.5, 1.0];
        let betas = [0.1, 1.0];
        let rows = robustness_sweep(&data, &ens, &gammas, &betas, &cfg).unwrap();
        assert_eq!(rows.len(), 4);
        for row in &rows {
            match cluster_layer(&ens, 0, row.gamma, row.beta) {
                Ok((rep, _)) => {
                    assert_eq!(row.kept_clusters, Some(rep.kept_count()));
                    if row.error.is_none() {
                        assert_eq!(row.recovered_sizes, Some(vec![rep.kept_count()]));
                        assert!(row.final_loss.unwrap().is_finite());
                    }
                }
                Err(e) => assert_eq!(row.error.as_deref(), Some(e.to_string().as_str())),
            }
        }
        let mut buf = Vec::new();
        write_sweep_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), 5);
        let empty = StudentEnsemble {
            students: vec![],
            final_losses: vec![],
            traces: vec![],
            steps: vec![],
            diverged: vec![],
            hidden_widths: vec![4],
            master_seed: 0,
        };
        assert!(robustness_sweep(&data, &empty, &gammas, &betas, &cfg).is_err());
    }
}
