//! Box overlap measures against pixel counting on an integer grid.

use afdet_core::rng::substream;
use afdet_core::{giou, iou, BBox};
use rand::Rng;

const GRID: usize = 64;

/// Integer box covering pixels `[x0, x1) × [y0, y1)`.
fn random_box(rng: &mut impl Rng) -> (usize, usize, usize, usize) {
    let x0 = rng.random_range(0..GRID);
    let y0 = rng.random_range(0..GRID);
    (x0, y0, rng.random_range(x0 + 1..=GRID), rng.random_range(y0 + 1..=GRID))
}

fn to_bbox(b: (usize, usize, usize, usize)) -> BBox {
    BBox::new(b.0 as f64, b.1 as f64, b.2 as f64, b.3 as f64)
}

fn inside(b: (usize, usize, usize, usize), x: usize, y: usize) -> bool {
    (b.0..b.2).contains(&x) && (b.1..b.3).contains(&y)
}

#[test]
fn iou_and_giou_match_pixel_counts() {
    let mut rng = substream(7, 200);
    for _ in 0..1000 {
        let (a, b) = (random_box(&mut rng), random_box(&mut rng));
        let (mut inter, mut union) = (0usize, 0usize);
        for y in 0..GRID {
            for x in 0..GRID {
                let (ia, ib) = (inside(a, x, y), inside(b, x, y));
                inter += usize::from(ia && ib);
                union += usize::from(ia || ib);
            }
        }
        let expected_iou = inter as f64 / union as f64;
        let (ba, bb) = (to_bbox(a), to_bbox(b));
        assert_eq!(iou(&ba, &bb), expected_iou, "{a:?} {b:?}");

        let hull = (a.2.max(b.2) - a.0.min(b.0)) * (a.3.max(b.3) - a.1.min(b.1));
        let expected_giou = expected_iou - (hull - union) as f64 / hull as f64;
        let got = giou(&ba, &bb);
        assert!((got - expected_giou).abs() <= 1e-9, "{a:?} {b:?}: {got} vs {expected_giou}");
        assert!(got > -1.0 && got <= 1.0);
        assert_eq!(giou(&bb, &ba), got);
    }
}

#[test]
fn identical_boxes_score_one() {
    let mut rng = substream(8, 200);
    for _ in 0..100 {
        let b = to_bbox(random_box(&mut rng));
        assert_eq!(iou(&b, &b), 1.0);
        assert_eq!(giou(&b, &b), 1.0);
    }
}
