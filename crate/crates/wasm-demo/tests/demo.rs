use orbit_mpc_wasm_demo::{conditioning_sweep, hexagon_vertices, ibm_curves, project_hexagon};

fn inside(v: &[f64], p: (f64, f64)) -> bool {
    let n = v.len() / 2;
    (0..n).all(|i| {
        let (ax, ay) = (v[2 * i], v[2 * i + 1]);
        let (bx, by) = (v[2 * ((i + 1) % n)], v[2 * ((i + 1) % n) + 1]);
        (bx - ax) * (p.1 - ay) - (by - ay) * (p.0 - ax) >= -1e-12
    })
}

#[test]
fn hexagon_projection_lands_inside_the_drawn_polygon() {
    let v = hexagon_vertices(0.3, 1.0, 0.4);
    assert!(v.len() >= 8);
    for &(t0, t1) in &[(2.0, -2.0), (0.0, 0.0), (-3.0, 0.5), (0.3, 5.0)] {
        let p = project_hexagon(t0, t1, 0.3, 1.0, 0.4).unwrap();
        assert!(inside(&v, (p[0], p[1])), "{p:?}");
    }
    // interior points are fixed
    assert_eq!(project_hexagon(0.4, 0.5, 0.3, 1.0, 0.4).unwrap(), vec![0.4, 0.5]);
}

#[test]
fn empty_hexagon_is_an_error() {
    assert!(project_hexagon(0.0, 0.0, 2.0, 1.0, 0.4).is_err());
}

#[test]
fn imc_matched_conditioning_grows_with_spread() {
    let rows = conditioning_sweep(6, 1, 0.1, 0.0, 3.0, 4).unwrap();
    assert_eq!(rows.len(), 12);
    let imc: Vec<f64> = rows.chunks(3).map(|r| r[2]).collect();
    assert!(imc.windows(2).all(|w| w[0] < w[1]), "{imc:?}");
    assert!(rows.chunks(3).all(|r| r[1] < r[2]));
}

#[test]
fn ibm_rows_are_cumulative() {
    let rows = ibm_curves(4, 10.0, 1.0, 0.2, 20.0, 1024, 3).unwrap();
    assert_eq!(rows.len() % 4, 0);
    for c in 1..4 {
        let col: Vec<f64> = rows.chunks(4).map(|r| r[c]).collect();
        assert!(col.windows(2).all(|w| w[0] <= w[1]));
    }
}
