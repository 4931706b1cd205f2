use std::collections::VecDeque;

use super::fill::neighbour;
use super::GeomorphError;
use crate::raster::Grid;

/// D8 direction codes in tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    E,
    SE,
    S,
    SW,
    W,
    NW,
    N,
    NE,
}

impl Direction {
    pub const ALL: [Direction; 8] = [
        Direction::E,
        Direction::SE,
        Direction::S,
        Direction::SW,
        Direction::W,
        Direction::NW,
        Direction::N,
        Direction::NE,
    ];

    pub fn offset(self) -> (isize, isize) {
        super::fill::NEIGHBOURS[self as usize]
    }

    fn is_diagonal(self) -> bool {
        (self as usize) % 2 == 1
    }
}

/// Per-pixel drainage direction; `None` marks an outlet.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub directions: Grid<Option<Direction>>,
}

impl FlowField {
    pub fn downstream(&self, x: usize, y: usize) -> Option<(usize, usize)> {
        let d = self.directions.get(x, y)?;
        neighbour(self.directions.width(), self.directions.height(), x, y, d as usize)
    }
}

/// Number of pixels (including itself) draining through each pixel.
pub type AccumulationGrid = Grid<u32>;

/// Steepest-descent directions over `dem`.
pub fn d8_directions(dem: &Grid<f64>) -> FlowField {
    let (w, h) = (dem.width(), dem.height());
    let directions = Grid::from_fn(w, h, |x, y| {
        let zc = dem.get(x, y);
        let mut best: Option<(Direction, f64)> = None;
        for d in Direction::ALL {
            let Some((nx, ny)) = neighbour(w, h, x, y, d as usize) else { continue };
            let drop = zc - dem.get(nx, ny);
            if drop <= 0.0 {
                continue;
            }
            let slope = if d.is_diagonal() { drop / std::f64::consts::SQRT_2 } else { drop };
            if best.is_none_or(|(_, s)| slope > s) {
                best = Some((d, slope));
            }
        }
        best.map(|(d, _)| d)
    });
    FlowField { directions }
}

/// Accumulation in topological order of the flow graph.
pub fn accumulate(flow: &FlowField) -> Result<AccumulationGrid, GeomorphError> {
    let (w, h) = (flow.directions.width(), flow.directions.height());
    let down: Vec<Option<usize>> = (0..w * h)
        .map(|i| flow.downstream(i % w, i / w).map(|(x, y)| y * w + x))
        .collect();
    let mut indegree = vec![0u32; w * h];
    for d in down.iter().flatten() {
        indegree[*d] += 1;
    }
    let mut acc = vec![1u32; w * h];
    let mut queue: VecDeque<usize> = (0..w * h).filter(|&i| indegree[i] == 0).collect();
    let mut processed = 0;
    while let Some(i) = queue.pop_front() {
        processed += 1;
        if let Some(d) = down[i] {
            acc[d] += acc[i];
            indegree[d] -= 1;
            if indegree[d] == 0 {
                queue.push_back(d);
            }
        }
    }
    if processed != w * h {
        return Err(GeomorphError::FlowCycle {
            cells: w * h - processed,
        });
    }
    Ok(Grid::new(w, h, acc).expect("same dimensions"))
}

/// Directions and accumulation over an already filled surface.
pub fn flow_accumulation_d8(filled: &Grid<f64>) -> Result<(FlowField, AccumulationGrid), GeomorphError> {
    let flow = d8_directions(filled);
    let acc = accumulate(&flow)?;
    Ok((flow, acc))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decreasing_row_is_a_chain() {
        let g = Grid::new(5, 1, vec![5.0, 4.0, 3.0, 2.0, 1.0]).unwrap();
        let (_, acc) = flow_accumulation_d8(&g).unwrap();
        assert_eq!(acc.data(), &[1, 2, 3, 4, 5]);
    }

    #[test]
    fn central_peak_receives_nothing() {
        let mut g = Grid::filled(3, 3, 0.0);
        g.set(1, 1, 1.0);
        let (flow, acc) = flow_accumulation_d8(&g).unwrap();
        assert_eq!(acc.get(1, 1), 1);
        assert_eq!(flow.directions.get(1, 1), Some(Direction::E));
    }

    #[test]
    fn diagonal_distance_is_root_two() {
        // drop 1.0 east vs drop 1.3 south-east: 1.3 / √2 < 1.0
        let g = Grid::new(2, 2, vec![2.0, 1.0, 1.5, 0.7]).unwrap();
        assert_eq!(d8_directions(&g).directions.get(0, 0), Some(Direction::E));
    }

    #[test]
    fn cycle_is_reported() {
        let directions = Grid::new(2, 1, vec![Some(Direction::E), Some(Direction::W)]).unwrap();
        assert!(matches!(
            accumulate(&FlowField { directions }),
            Err(GeomorphError::FlowCycle { cells: 2 })
        ));
    }
}
