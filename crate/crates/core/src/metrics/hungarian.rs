use super::MetricsError;

/// Minimum-cost matching of rows to columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// Column matched to each row; `None` when there are more rows than
    /// columns and the row is left over.
    pub row_to_col: Vec<Option<usize>>,
    /// Sum of the matched real cells, accumulated in row order.
    pub cost: f64,
}

impl Assignment {
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.row_to_col
            .iter()
            .enumerate()
            .filter_map(|(r, c)| c.map(|c| (r, c)))
    }
}

/// Solves the assignment problem with the O(n^3) shortest augmenting path
/// method. Rectangular inputs are padded to square with the constant
/// `max + 1`; a constant pad shifts every complete matching by the same
/// amount, so the optimum over real cells is unchanged.
pub fn hungarian(cost: &[Vec<f64>]) -> Result<Assignment, MetricsError> {
    let rows = cost.len();
    let cols = cost.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return Err(MetricsError::Empty("cost matrix"));
    }
    if let Some(bad) = cost.iter().find(|r| r.len() != cols) {
        return Err(MetricsError::LengthMismatch {
            left: cols,
            right: bad.len(),
        });
    }
    if cost.iter().flatten().any(|v| !v.is_finite()) {
        return Err(MetricsError::NonFinite("cost matrix"));
    }
    let n = rows.max(cols);
    let pad = cost.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max) + 1.0;
    let at = |i: usize, j: usize| {
        if i < rows && j < cols {
            cost[i][j]
        } else {
            pad
        }
    };

    // 1-based potentials; column 0 is a virtual start node.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let reduced = at(i0 - 1, j - 1) - u[i0] - v[j];
                if reduced < minv[j] {
                    minv[j] = reduced;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_to_col = vec![None; rows];
    for j in 1..=n {
        let i = owner[j] - 1;
        if i < rows && j - 1 < cols {
            row_to_col[i] = Some(j - 1);
        }
    }
    let cost_sum = row_to_col
        .iter()
        .enumerate()
        .filter_map(|(r, c)| c.map(|c| cost[r][c]))
        .sum();
    Ok(Assignment {
        row_to_col,
        cost: cost_sum,
    })
}
