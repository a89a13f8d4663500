//! Small max-weight transportation problems, solved as min-cost flow by
//! successive shortest paths with Bellman-Ford.

use ndarray::Array2;

use crate::error::{Error, Result};

struct Arc {
    to: usize,
    cap: i64,
    cost: f64,
}

struct Graph {
    arcs: Vec<Arc>,
    out: Vec<Vec<usize>>,
}

impl Graph {
    fn new(nodes: usize) -> Self {
        Graph {
            arcs: Vec::new(),
            out: vec![Vec::new(); nodes],
        }
    }

    /// Adds an arc and its reverse; returns the index of the forward arc.
    fn add(&mut self, from: usize, to: usize, cap: i64, cost: f64) -> usize {
        let id = self.arcs.len();
        self.arcs.push(Arc { to, cap, cost });
        self.arcs.push(Arc {
            to: from,
            cap: 0,
            cost: -cost,
        });
        self.out[from].push(id);
        self.out[to].push(id + 1);
        id
    }

    /// Cheapest path from `s` to `t` in the residual graph, as arc indices.
    fn shortest_path(&self, s: usize, t: usize) -> Option<(f64, Vec<usize>)> {
        let n = self.out.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut via: Vec<Option<usize>> = vec![None; n];
        dist[s] = 0.0;
        for _ in 0..n {
            let mut changed = false;
            for u in 0..n {
                if dist[u] == f64::INFINITY {
                    continue;
                }
                for &a in &self.out[u] {
                    let arc = &self.arcs[a];
                    if arc.cap > 0 && dist[u] + arc.cost < dist[arc.to] - 1e-12 {
                        dist[arc.to] = dist[u] + arc.cost;
                        via[arc.to] = Some(a);
                        changed = true;
                    }
                }
            }
            if !changed {
                break;
            }
        }
        via[t]?;
        let mut path = Vec::new();
        let mut node = t;
        while node != s {
            let a = via[node]?;
            path.push(a);
            node = self.arcs[a ^ 1].to;
            if path.len() > n {
                return None;
            }
        }
        Some((dist[t], path))
    }
}

/// Integer `z >= 0` maximizing `Σ weight_xy z_xy + Σ row_bonus_x r_x +
/// Σ col_bonus_y c_y` where `r_x`, `c_y` are the row and column sums,
/// subject to `r_x <= row_caps[x]` and `c_y <= col_caps[y]`. Segments with
/// weight `None` are not allowed.
pub fn max_weight_transport(
    weight: &Array2<Option<f64>>,
    row_caps: &[i64],
    col_caps: &[i64],
    row_bonus: &[f64],
    col_bonus: &[f64],
) -> Result<Array2<i64>> {
    let (nx, ny) = weight.dim();
    if row_caps.len() != nx || row_bonus.len() != nx || col_caps.len() != ny || col_bonus.len() != ny {
        return Err(Error::DimensionMismatch {
            what: "transport caps".to_string(),
            expected: format!("{nx} rows, {ny} columns"),
            found: format!(
                "{}/{} rows, {}/{} columns",
                row_caps.len(),
                row_bonus.len(),
                col_caps.len(),
                col_bonus.len()
            ),
        });
    }
    if row_caps.iter().chain(col_caps).any(|&c| c < 0) {
        return Err(Error::InvalidArgument("negative transport capacity".to_string()));
    }
    let (s, t) = (nx + ny, nx + ny + 1);
    let mut g = Graph::new(nx + ny + 2);
    for x in 0..nx {
        g.add(s, x, row_caps[x], -row_bonus[x]);
    }
    for y in 0..ny {
        g.add(nx + y, t, col_caps[y], -col_bonus[y]);
    }
    let mut seg = Array2::from_elem((nx, ny), None);
    for ((x, y), w) in weight.indexed_iter() {
        if let Some(w) = *w {
            let cap = row_caps[x].min(col_caps[y]);
            seg[[x, y]] = Some(g.add(x, nx + y, cap, -w));
        }
    }
    while let Some((cost, path)) = g.shortest_path(s, t) {
        if cost >= 0.0 {
            break;
        }
        let push = path.iter().map(|&a| g.arcs[a].cap).min().unwrap_or(0);
        if push == 0 {
            break;
        }
        for &a in &path {
            g.arcs[a].cap -= push;
            g.arcs[a ^ 1].cap += push;
        }
    }
    Ok(seg.mapv(|a| a.map_or(0, |a| g.arcs[a ^ 1].cap)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn dense(w: Array2<f64>) -> Array2<Option<f64>> {
        w.mapv(Some)
    }

    #[test]
    fn assignment_picks_heaviest_diagonal() {
        let w = dense(array![[1.0, 3.0], [3.0, 1.0]]);
        let z = max_weight_transport(&w, &[1, 1], &[1, 1], &[0.0; 2], &[0.0; 2]).unwrap();
        assert_eq!(z, array![[0, 1], [1, 0]]);
    }

    #[test]
    fn negative_weights_stay_empty() {
        let w = dense(array![[-1.0]]);
        let z = max_weight_transport(&w, &[3], &[3], &[0.0], &[0.0]).unwrap();
        assert_eq!(z, array![[0]]);
        // A large enough bonus forces the row to fill.
        let z = max_weight_transport(&w, &[3], &[2], &[10.0], &[0.0]).unwrap();
        assert_eq!(z, array![[2]]);
    }

    #[test]
    fn rerouting_through_reverse_arcs() {
        // Greedy takes (0,0) first; the optimum needs (0,1) + (1,0).
        let w = Array2::from_shape_vec((2, 2), vec![Some(3.0), Some(2.0), Some(2.0), None]).unwrap();
        let z = max_weight_transport(&w, &[1, 1], &[1, 1], &[0.0; 2], &[0.0; 2]).unwrap();
        assert_eq!(z, array![[0, 1], [1, 0]]);
    }

    #[test]
    fn capacities_respected() {
        let w = dense(array![[1.0, 1.0], [1.0, 1.0]]);
        let z = max_weight_transport(&w, &[3, 1], &[2, 5], &[0.0; 2], &[0.0; 2]).unwrap();
        assert_eq!(z.sum(), 4);
        assert!(z.row(0).sum() <= 3 && z.row(1).sum() <= 1);
        assert!(z.column(0).sum() <= 2);
    }
}
