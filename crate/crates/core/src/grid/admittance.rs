use nalgebra::DMatrix;
use num_complex::Complex64;

use super::{GridModel, NodeIndex};

/// Dense bus admittance matrix over `N + 3` node-phases, in p.u.
#[derive(Clone, Debug)]
pub struct AdmittanceMatrix {
    pub matrix: DMatrix<Complex64>,
    pub index: NodeIndex,
}

impl AdmittanceMatrix {
    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Weighted-graph Laplacian over node-phases, transformer branches included.
pub fn build_admittance(grid: &GridModel) -> AdmittanceMatrix {
    laplacian(grid, false)
}

/// Laplacian with every transformer branch removed, leaving the two
/// subsystems electrically isolated. Equals [`build_admittance`] when the
/// grid has no transformer.
pub fn build_isolated_admittance(grid: &GridModel) -> AdmittanceMatrix {
    laplacian(grid, true)
}

fn laplacian(grid: &GridModel, isolate: bool) -> AdmittanceMatrix {
    let index = grid.index().clone();
    let n = index.len();
    let mut y = DMatrix::<Complex64>::zeros(n, n);
    for (k, br) in grid.branches.iter().enumerate() {
        if isolate && grid.is_transformer_branch(k) {
            continue;
        }
        let rows_from: Vec<usize> = br
            .phases
            .iter()
            .map(|&p| index.row(br.from, p).expect("branch phase validated"))
            .collect();
        let rows_to: Vec<usize> = br
            .phases
            .iter()
            .map(|&p| index.row(br.to, p).expect("branch phase validated"))
            .collect();
        for (r, (&fr, &tr)) in rows_from.iter().zip(&rows_to).enumerate() {
            for (c, (&fc, &tc)) in rows_from.iter().zip(&rows_to).enumerate() {
                let w = br.admittance[(r, c)];
                y[(fr, fc)] += w;
                y[(tr, tc)] += w;
                y[(fr, tc)] -= w;
                y[(tr, fc)] -= w;
            }
        }
    }
    AdmittanceMatrix { matrix: y, index }
}
