mod common;

use std::collections::BTreeSet;

use floorlevel::augment::{
    generate_sample, pair_facades, rasterize_floor_lines, simplify_semantics, AugmentError, LabelMapping,
    RectifiedFacade,
};
use floorlevel::geometry::{apply_homography, invert_homography, LabelMask, Line5Tuple, Orientation, Point2, Quad};
use floorlevel::palette::{FACADE_DOOR, FACADE_SHOP, FACADE_WINDOW, OTHER};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Rectified facade with `floors` horizontal floor lines and a window grid.
fn rectified(w: usize, h: usize, floors: usize) -> RectifiedFacade {
    let mut sem = LabelMask::filled(w, h, OTHER).unwrap();
    let mut floor = LabelMask::filled(w, h, OTHER).unwrap();
    let storey = h / (floors + 1);
    for k in 1..=floors {
        let row = h - k * storey;
        for x in 0..w {
            floor.set(x, row, k as u8);
            floor.set(x, row - 1, k as u8);
        }
        // a window in the middle of the storey above line k
        for y in row - storey + 3..row - 3 {
            for x in w / 4..w / 2 {
                sem.set(x, y, FACADE_WINDOW);
            }
        }
    }
    for y in h - storey + 2..h {
        for x in 3 * w / 4..3 * w / 4 + 3 {
            sem.set(x, y, FACADE_DOOR);
        }
    }
    RectifiedFacade::new(sem, floor).unwrap()
}

#[test]
fn cmp_mapping_on_toy_mask() {
    // facade (2), window (3) and balcony (7) in CMP numbering
    let raw = LabelMask::new(3, 2, vec![2, 3, 7, 7, 3, 2]).unwrap();
    let simplified = simplify_semantics(&raw, &LabelMapping::cmp_default()).unwrap();
    let table = |l: u8| match l {
        3 => FACADE_WINDOW,
        4 => FACADE_DOOR,
        12 => FACADE_SHOP,
        _ => OTHER,
    };
    for (x, y, l) in raw.iter() {
        assert_eq!(simplified.get(x, y), table(l));
    }
    assert_eq!(simplified.labels(), &[0, 1, 0, 0, 1, 0]);
}

#[test]
fn identity_mapping_and_unmapped_labels() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let m = common::random_mask(9, 7, 3, &mut rng);
    assert_eq!(simplify_semantics(&m, &LabelMapping::identity()).unwrap(), m);
    let raw = LabelMask::new(2, 2, vec![1, 40, 2, 41]).unwrap();
    assert_eq!(
        simplify_semantics(&raw, &LabelMapping::identity()),
        Err(AugmentError::UnmappedLabel(vec![40, 41]))
    );
    assert_eq!(LabelMapping::new([(5, 4)]), Err(AugmentError::InvalidMappingTarget(4)));
}

#[test]
fn rectified_facade_invariants() {
    let sem = LabelMask::filled(10, 10, OTHER).unwrap();
    let mut floor = LabelMask::filled(10, 10, OTHER).unwrap();
    floor.set(0, 8, 1);
    floor.set(0, 2, 3);
    assert_eq!(RectifiedFacade::new(sem.clone(), floor.clone()), Err(AugmentError::NonContiguousOrders(vec![1, 3])));
    floor.set(0, 2, 2);
    assert!(RectifiedFacade::new(sem.clone(), floor.clone()).is_ok());
    // order 2 below order 1
    let mut upside_down = LabelMask::filled(10, 10, OTHER).unwrap();
    upside_down.set(0, 2, 1);
    upside_down.set(0, 8, 2);
    assert_eq!(RectifiedFacade::new(sem, upside_down), Err(AugmentError::OrdersNotStacked(2, 1)));
}

#[test]
fn full_canvas_quad_reproduces_source() {
    let f = rectified(40, 30, 2);
    let quad = Quad::rect(0.0, 0.0, 39.0, 29.0, Orientation::Front).unwrap();
    let s = generate_sample(&[(f.clone(), quad)], 40, 30, 0).unwrap();
    assert_eq!(s.floor_mask, *f.floor());
    let stamped = f.semantic().map_labels(|l| if l == OTHER { Orientation::Front.code() } else { l });
    assert_eq!(s.semantic_mask, stamped);
}

fn perspective_quad(x0: f64, orientation: Orientation) -> Quad {
    Quad::new(
        [
            Point2::new(x0, 20.0),
            Point2::new(x0 + 90.0, 45.0),
            Point2::new(x0 + 92.0, 160.0),
            Point2::new(x0 - 3.0, 190.0),
        ],
        orientation,
    )
    .unwrap()
}

#[test]
fn disjoint_quads_compose_independently() {
    let (fa, fb) = (rectified(60, 80, 3), rectified(50, 70, 2));
    let (qa, qb) = (perspective_quad(10.0, Orientation::Left), perspective_quad(150.0, Orientation::Right));
    let both = generate_sample(&[(fa.clone(), qa), (fb.clone(), qb)], 260, 200, 5).unwrap();
    let only_a = generate_sample(&[(fa, qa)], 260, 200, 5).unwrap();
    let only_b = generate_sample(&[(fb, qb)], 260, 200, 5).unwrap();
    for (x, y) in qa.pixels(260, 200) {
        assert_eq!(both.semantic_mask.get(x, y), only_a.semantic_mask.get(x, y));
        assert_eq!(both.floor_mask.get(x, y), only_a.floor_mask.get(x, y));
    }
    for (x, y) in qb.pixels(260, 200) {
        assert_eq!(both.semantic_mask.get(x, y), only_b.semantic_mask.get(x, y));
        assert_eq!(both.floor_mask.get(x, y), only_b.floor_mask.get(x, y));
    }
    // nothing is painted outside the quads
    let inside: BTreeSet<(usize, usize)> = qa.pixels(260, 200).into_iter().chain(qb.pixels(260, 200)).collect();
    for (x, y, l) in both.semantic_mask.iter() {
        if !inside.contains(&(x, y)) {
            assert_eq!(l, OTHER);
            assert_eq!(both.floor_mask.get(x, y), OTHER);
        }
    }
}

#[test]
fn later_facades_paint_over_earlier_ones() {
    let f = rectified(40, 40, 2);
    let big = Quad::rect(0.0, 0.0, 99.0, 99.0, Orientation::Left).unwrap();
    let small = Quad::rect(30.0, 30.0, 60.0, 60.0, Orientation::Right).unwrap();
    let s = generate_sample(&[(f.clone(), big), (f.clone(), small)], 100, 100, 0).unwrap();
    let top = generate_sample(&[(f, small)], 100, 100, 0).unwrap();
    for (x, y) in small.pixels(100, 100) {
        assert_eq!(s.semantic_mask.get(x, y), top.semantic_mask.get(x, y));
    }
    assert_eq!(s.semantic_mask.get(5, 5), Orientation::Left.code());
}

#[test]
fn warped_orders_pull_back_to_matching_source_pixels() {
    let f = rectified(60, 80, 3);
    let quad = perspective_quad(20.0, Orientation::Left);
    let s = generate_sample(&[(f.clone(), quad)], 140, 200, 1).unwrap();
    let inv = invert_homography(&s.provenance[0].homography).unwrap();
    let mut checked = 0;
    for (x, y, k) in s.floor_mask.iter().filter(|&(_, _, l)| l != OTHER) {
        let p = apply_homography(&inv, Point2::new(x as f64, y as f64)).unwrap();
        let near = (-1..=1).any(|dy: i64| {
            (-1..=1).any(|dx: i64| {
                let (sx, sy) = (p.x.round() as i64 + dx, p.y.round() as i64 + dy);
                f.floor().get_checked(sx, sy) == Some(k) && (sx as f64 - p.x).abs() <= 1.0 && (sy as f64 - p.y).abs() <= 1.0
            })
        });
        assert!(near, "({x}, {y}) order {k} pulls back to {p:?}");
        checked += 1;
    }
    assert!(checked > 100);
}

#[test]
fn sample_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for seed in 0..5u64 {
        let facades = [rectified(60, 80, 3), rectified(50, 60, 2), rectified(70, 70, 4)];
        let quads = [perspective_quad(10.0, Orientation::Left), perspective_quad(160.0, Orientation::Right)];
        let picks = pair_facades(facades.len(), quads.len(), seed);
        assert_eq!(picks, pair_facades(facades.len(), quads.len(), seed));
        let jobs: Vec<_> = picks.iter().zip(&quads).map(|(&i, q)| (facades[i].clone(), *q)).collect();
        let s = generate_sample(&jobs, 280, 200, rng.gen()).unwrap();
        assert_eq!(s, generate_sample(&jobs, 280, 200, s.seed).unwrap());

        let mut allowed: BTreeSet<u8> = jobs.iter().flat_map(|(f, _)| f.floor().label_set()).collect();
        allowed.insert(OTHER);
        assert!(s.floor_mask.label_set().is_subset(&allowed));
        for (x, y, l) in s.floor_mask.iter() {
            let p = Point2::new(x as f64, y as f64);
            let in_quad = quads.iter().any(|q| q.contains(p, 1.0));
            if l != OTHER || Orientation::from_code(s.semantic_mask.get(x, y)).is_some() {
                assert!(in_quad, "({x}, {y})");
            }
        }
        for prov in &s.provenance {
            let inv = invert_homography(&prov.homography).unwrap();
            for c in prov.quad.corners() {
                let back = apply_homography(&prov.homography, apply_homography(&inv, *c).unwrap()).unwrap();
                assert!(back.distance(c) < 1e-9);
            }
        }
    }
}

#[test]
fn quads_off_canvas_are_rejected() {
    let f = rectified(20, 20, 1);
    let quad = Quad::rect(0.0, 0.0, 50.0, 10.0, Orientation::Front).unwrap();
    assert_eq!(generate_sample(&[(f, quad)], 40, 40, 0), Err(AugmentError::QuadOutsideCanvas(0, 40, 40)));
}

#[test]
fn horizontal_band() {
    let line = Line5Tuple::new(4.0, 10.0, 20.0, 10.0, 2).unwrap();
    let m = rasterize_floor_lines(&[line], 3, 30, 20).unwrap();
    for (x, y, l) in m.iter() {
        let want = if (4..=20).contains(&x) && (9..=11).contains(&y) { 2 } else { 0 };
        assert_eq!(l, want, "({x}, {y})");
    }
    let upper = Line5Tuple::new(4.0, 4.0, 20.0, 4.0, 1).unwrap();
    let m = rasterize_floor_lines(&[line, upper], 3, 30, 20).unwrap();
    assert_eq!(m.iter().filter(|p| p.2 == 2).count(), 17 * 3);
    assert_eq!(m.iter().filter(|p| p.2 == 1).count(), 17 * 3);
    assert_eq!(rasterize_floor_lines(&[line], 0, 30, 20), Err(AugmentError::ZeroBand));
}

proptest! {
    #[test]
    fn sloped_band_matches_column_oracle(
        xs in 0.0f64..40.0, len in 1.0f64..60.0,
        ys in 5.0f64..45.0, ye in 5.0f64..45.0,
        band in 1usize..6,
    ) {
        let xe = xs + len;
        let line = Line5Tuple::new(xs, ys, xe, ye, 4).unwrap();
        let m = rasterize_floor_lines(&[line], band, 64, 50).unwrap();
        for (x, y, l) in m.iter() {
            let (xf, yf) = (x as f64, y as f64);
            let y_line = ys + (ye - ys) * (xf - xs) / (xe - xs);
            let inside = xf >= xs && xf <= xe && (yf - y_line).abs() <= band as f64 / 2.0;
            prop_assert_eq!(l == 4, inside, "({}, {})", x, y);
        }
    }
}
