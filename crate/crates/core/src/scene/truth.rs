//! Exact panoramic ground truth painted from a scene's source list.

use super::{Scene, SourceSpec};
use crate::grid::Grid;

/// Class ids: 0 background, 1 car, 2 motorcycle, 3 train.
pub type LabelGrid = Grid<u8>;
/// Depth in meters.
pub type DepthGrid = Grid<f64>;

/// Distance at which the class base sizes apply, meters.
const REFERENCE_DISTANCE: f64 = 2.0;

/// Column span `(start, width)` of a source blob; columns wrap around.
fn column_span(s: &SourceSpec, cols: usize) -> (i64, usize) {
    let w = cols as f64;
    let width = (w * s.class.base_width_deg() * (REFERENCE_DISTANCE / s.distance) / 360.0)
        .round()
        .clamp(1.0, w) as usize;
    let center = w * s.azimuth / 360.0;
    let start = (center - width as f64 / 2.0 + 0.5).floor() as i64;
    (start, width)
}

/// Row span `(start, height)` inside the horizon band (middle third).
fn row_span(s: &SourceSpec, rows: usize) -> (usize, usize) {
    let band = ((rows as f64 / 3.0).round() as usize).max(1);
    let height = (band as f64 * s.class.base_height_fraction() * REFERENCE_DISTANCE / s.distance)
        .round()
        .clamp(1.0, band as f64) as usize;
    let start = (rows as f64 / 2.0 - height as f64 / 2.0 + 0.5).floor() as usize;
    (start, height)
}

/// For every cell, the index into `scene.sources` of the source painted
/// there. Sources are painted nearest first and never overwrite a cell.
pub fn blob_owners(scene: &Scene, rows: usize, cols: usize) -> Grid<Option<usize>> {
    let mut owners = Grid::filled(rows, cols, None);
    let mut order: Vec<usize> = (0..scene.sources.len()).collect();
    order.sort_by(|&a, &b| scene.sources[a].distance.total_cmp(&scene.sources[b].distance));
    for i in order {
        let s = &scene.sources[i];
        let (c0, width) = column_span(s, cols);
        let (r0, height) = row_span(s, rows);
        for r in r0..(r0 + height).min(rows) {
            for k in 0..width {
                let c = (c0 + k as i64).rem_euclid(cols as i64) as usize;
                let cell = owners.get_mut(r, c);
                if cell.is_none() {
                    *cell = Some(i);
                }
            }
        }
    }
    owners
}

pub fn ground_truth_semantic(scene: &Scene, rows: usize, cols: usize) -> LabelGrid {
    blob_owners(scene, rows, cols).map(|o| o.map_or(0, |i| scene.sources[i].class.id()))
}

/// Source distance on blob cells, `far_depth` elsewhere.
pub fn ground_truth_depth(scene: &Scene, rows: usize, cols: usize, far_depth: f64) -> DepthGrid {
    blob_owners(scene, rows, cols).map(|o| o.map_or(far_depth, |i| scene.sources[i].distance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::SourceClass;

    fn src(class: SourceClass, azimuth: f64, distance: f64) -> SourceSpec {
        SourceSpec {
            class,
            azimuth,
            distance,
            seed: 0,
            gain: 1.0,
        }
    }

    fn scene(sources: Vec<SourceSpec>) -> Scene {
        Scene::new(sources, 0.0, 1.0, 0).unwrap()
    }

    fn painted_columns(g: &LabelGrid, class: u8) -> Vec<usize> {
        (0..g.cols()).filter(|&c| (0..g.rows()).any(|r| g.at(r, c) == class)).collect()
    }

    #[test]
    fn empty_scene_is_background_and_far() {
        let s = scene(vec![]);
        assert!(ground_truth_semantic(&s, 32, 64).as_slice().iter().all(|&v| v == 0));
        assert!(ground_truth_depth(&s, 32, 64, 50.0).as_slice().iter().all(|&v| v == 50.0));
    }

    #[test]
    fn car_behind_at_two_meters() {
        let g = ground_truth_semantic(&scene(vec![src(SourceClass::Car, 180.0, 2.0)]), 32, 64);
        let expected_width = (64.0f64 * 30.0 / 360.0).round() as usize;
        assert_eq!(expected_width, 5);
        let cols = painted_columns(&g, 1);
        assert_eq!(cols, vec![30, 31, 32, 33, 34]);
        // Rows sit in the middle third.
        let rows: Vec<usize> = (0..32).filter(|&r| g.at(r, 32) == 1).collect();
        assert!(rows.iter().all(|&r| (32 / 3..2 * 32 / 3 + 1).contains(&r)), "{rows:?}");
    }

    #[test]
    fn blob_wraps_across_zero_azimuth() {
        let g = ground_truth_semantic(&scene(vec![src(SourceClass::Train, 0.0, 2.0)]), 16, 64);
        let cols = painted_columns(&g, 3);
        assert_eq!(cols.len(), 11);
        assert!(cols.contains(&0) && cols.contains(&63) && cols.contains(&5));
    }

    #[test]
    fn nearest_source_wins_contested_cells() {
        let near = src(SourceClass::Motorcycle, 100.0, 2.0);
        let far = src(SourceClass::Train, 120.0, 10.0);
        for order in [vec![near.clone(), far.clone()], vec![far, near]] {
            let g = ground_truth_semantic(&scene(order), 32, 64);
            let center = (64.0f64 * 100.0 / 360.0) as usize;
            assert_eq!(g.at(16, center), 2);
        }
    }

    #[test]
    fn depth_support_equals_semantic_support() {
        let s = scene(vec![
            src(SourceClass::Car, 10.0, 4.0),
            src(SourceClass::Train, 40.0, 3.0),
            src(SourceClass::Motorcycle, 200.0, 7.5),
        ]);
        let sem = ground_truth_semantic(&s, 32, 64);
        let depth = ground_truth_depth(&s, 32, 64, 50.0);
        for (l, d) in sem.as_slice().iter().zip(depth.as_slice()) {
            assert_eq!(*l == 0, *d == 50.0);
        }
        assert!(depth.as_slice().contains(&4.0));
    }

    #[test]
    fn farther_sources_are_smaller() {
        let near = ground_truth_semantic(&scene(vec![src(SourceClass::Car, 90.0, 2.0)]), 32, 64);
        let far = ground_truth_semantic(&scene(vec![src(SourceClass::Car, 90.0, 8.0)]), 32, 64);
        let count = |g: &LabelGrid| g.as_slice().iter().filter(|&&v| v != 0).count();
        assert!(count(&far) < count(&near));
        assert!(count(&far) >= 1);
    }
}
