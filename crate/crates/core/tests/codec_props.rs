mod common;

use celldet::codec::{annotations_from_instance_mask, decode, encode, match_detections, CellAnnotation, EncodeParams};
use celldet::grid::{DetectionMaps, LabelMask, Plane};
use proptest::prelude::*;

fn layout() -> impl Strategy<Value = Vec<CellAnnotation>> {
    // Cells on a coarse lattice so they never touch.
    prop::collection::vec((0usize..4, 0usize..4, 6.0f32..14.0, 6.0f32..14.0), 1..6).prop_map(|cells| {
        let mut seen = std::collections::BTreeSet::new();
        cells
            .into_iter()
            .filter(|(i, j, _, _)| seen.insert((*i, *j)))
            .enumerate()
            .map(|(k, (i, j, w, h))| CellAnnotation {
                id: k as u32 + 1,
                cx: 14.0 + 22.0 * i as f32 + 0.25 * (k % 3) as f32,
                cy: 14.0 + 22.0 * j as f32,
                w,
                h,
            })
            .collect()
    })
}

fn mirror_x(p: &Plane) -> Plane {
    let (h, w) = p.dims();
    Plane::from_fn(h, w, |x, y| *p.get(w - 1 - x, y))
}

fn shifted(p: &Plane, dx: usize, dy: usize) -> Plane {
    let (h, w) = p.dims();
    Plane::from_fn(h, w, |x, y| if x >= dx && y >= dy { *p.get(x - dx, y - dy) } else { 0.0 })
}

fn max_diff(a: &Plane, b: &Plane) -> f32 {
    a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn heatmap_stays_in_unit_range_with_unit_peaks(cells in layout()) {
        let maps = encode(&cells, 96, 96, &EncodeParams::default()).unwrap();
        prop_assert!(maps.heatmap.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        for c in &cells {
            let v = *maps.heatmap.get(c.cx.round() as usize, c.cy.round() as usize);
            prop_assert!(v > 0.9, "peak {v} at cell {}", c.id);
        }
    }

    #[test]
    fn encode_commutes_with_translation(cells in layout(), dx in 0usize..6, dy in 0usize..6) {
        let p = EncodeParams::default();
        let base = encode(&cells, 96, 96, &p).unwrap();
        let moved: Vec<_> = cells
            .iter()
            .map(|c| CellAnnotation { cx: c.cx + dx as f32, cy: c.cy + dy as f32, ..*c })
            .collect();
        let out = encode(&moved, 96, 96, &p).unwrap();
        prop_assert!(max_diff(&out.heatmap, &shifted(&base.heatmap, dx, dy)) < 1e-6);
        prop_assert!(max_diff(&out.height_map, &shifted(&base.height_map, dx, dy)) < 1e-6);
        prop_assert!(max_diff(&out.width_map, &shifted(&base.width_map, dx, dy)) < 1e-6);
    }

    #[test]
    fn encode_commutes_with_mirroring(cells in layout()) {
        let p = EncodeParams::default();
        let base = encode(&cells, 96, 96, &p).unwrap();
        let flipped: Vec<_> = cells.iter().map(|c| CellAnnotation { cx: 95.0 - c.cx, ..*c }).collect();
        let out = encode(&flipped, 96, 96, &p).unwrap();
        prop_assert!(max_diff(&out.heatmap, &mirror_x(&base.heatmap)) < 1e-5);
        prop_assert!(max_diff(&out.width_map, &mirror_x(&base.width_map)) < 1e-6);
    }

    #[test]
    fn decode_respects_threshold(cells in layout(), t in 0.05f32..0.95) {
        let maps = encode(&cells, 96, 96, &EncodeParams::default()).unwrap();
        let dets = decode(&maps, t).unwrap();
        prop_assert_eq!(dets.len(), cells.len());
        for d in &dets {
            prop_assert!(d.score >= t && d.w > 0.0 && d.h > 0.0);
        }
    }

    #[test]
    fn foreground_shrinks_as_threshold_rises(seed in 0u64..500, t1 in 0.05f32..0.9, dt in 0.0f32..0.09) {
        let (size, cells) = common::separated_layout(seed);
        let maps = encode(&cells, size, size, &EncodeParams::default()).unwrap();
        let t2 = t1 + dt;
        let count = |t: f32| maps.heatmap.data().iter().filter(|&&v| v >= t).count();
        prop_assert!(count(t2) <= count(t1));
        let (low, high) = (decode(&maps, t1).unwrap(), decode(&maps, t2).unwrap());
        for d in &high {
            prop_assert!(low.iter().any(|l| l.score >= d.score));
        }
    }

    #[test]
    fn roundtrip_on_generated_layouts(seed in 0u64..10_000) {
        let (size, cells) = common::separated_layout(seed);
        let maps = encode(&cells, size, size, &EncodeParams::default()).unwrap();
        let dets = decode(&maps, 0.5).unwrap();
        prop_assert_eq!(dets.len(), cells.len());
        let matches = match_detections(&cells, &dets);
        prop_assert_eq!(matches.len(), cells.len());
        for (a, d, dist) in matches {
            prop_assert!(dist <= 2.0);
            prop_assert!((dets[d].w - cells[a].w).abs() <= 0.1 * cells[a].w);
            prop_assert!((dets[d].h - cells[a].h).abs() <= 0.1 * cells[a].h);
        }
    }
}

#[test]
fn empty_layout_encodes_to_zero() {
    let maps = encode(&[], 16, 16, &EncodeParams::default()).unwrap();
    assert_eq!(maps, DetectionMaps::zeros(16, 16));
    assert!(decode(&maps, 0.5).unwrap().is_empty());
}

#[test]
fn decode_rejects_bad_threshold() {
    let maps = DetectionMaps::zeros(4, 4);
    for t in [0.0, 1.0, -0.1, f32::NAN] {
        assert!(decode(&maps, t).is_err());
    }
}

#[test]
fn encode_rejects_out_of_bounds() {
    let c = CellAnnotation { id: 1, cx: 20.0, cy: 3.0, w: 4.0, h: 4.0 };
    assert!(encode(&[c], 16, 16, &EncodeParams::default()).is_err());
}

#[test]
fn annotations_follow_mask_boxes() {
    let mut mask = LabelMask::new(10, 12);
    for y in 2..5 {
        for x in 3..8 {
            mask.set(x, y, 4);
        }
    }
    mask.set(10, 8, 2);
    let anns = annotations_from_instance_mask(&mask);
    assert_eq!(anns.len(), 2);
    assert_eq!((anns[0].id, anns[0].w, anns[0].h), (2, 1.0, 1.0));
    assert_eq!((anns[1].id, anns[1].cx, anns[1].cy, anns[1].w, anns[1].h), (4, 5.0, 3.0, 5.0, 3.0));
}
