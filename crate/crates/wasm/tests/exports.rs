use hjb_wasm::{dtare_json, march_json, series_json, AffineInput};
use serde_json::Value;

const PRAGER: AffineInput<'static> = AffineInput {
    g0: "0",
    g1: "x+1",
    l0: "ln(1+x)^2",
    l1: "0",
    l2: "1",
    lo: -1.0,
    hi: 4.0,
    lo_open: true,
    hi_open: false,
};

fn floats(v: &Value) -> Vec<f64> {
    v.as_array().unwrap().iter().map(|e| e.as_f64().unwrap()).collect()
}

#[test]
fn series_matches_log_expansion() {
    // ln^2(1+x) = x^2 - x^3 + 11/12 x^4 - ...
    let v: Value = serde_json::from_str(&series_json(&PRAGER, 4).unwrap()).unwrap();
    let pi = floats(&v["pi"]);
    for (g, w) in pi.iter().zip([1.0, -1.0, 11.0 / 12.0]) {
        assert!((g - w).abs() < 1e-10, "{pi:?}");
    }
}

#[test]
fn golden_dtare() {
    let v: Value = serde_json::from_str(&dtare_json(1.0, 1.0, 1.0, 1.0, 0.0).unwrap()).unwrap();
    let g = (1.0 + 5f64.sqrt()) / 2.0;
    assert!((v["p"].as_f64().unwrap() - g).abs() < 1e-12);
    assert!((v["rho"].as_f64().unwrap() - (2.0 - g)).abs() < 1e-12);
}

#[test]
fn march_samples_line_up() {
    let v: Value = serde_json::from_str(&march_json(&PRAGER, 3, 2f64.powi(-6), 256, 100).unwrap()).unwrap();
    let x = floats(&v["x"]);
    assert_eq!(x.len(), 101);
    assert_eq!(v["pi"].as_array().unwrap().len(), 101);
    assert!(v["patches"].as_array().unwrap().len() > 2);
    // value near 1 against ln^2(2)
    let i = x.iter().position(|&t| (t - 1.0).abs() < 1e-9).unwrap();
    let pi = v["pi"][i].as_f64().unwrap();
    assert!((pi - 2f64.ln().powi(2)).abs() < 0.05, "{pi}");
}

#[test]
fn bad_expression_is_an_error() {
    let bad = AffineInput { g1: "x+", ..PRAGER };
    assert!(series_json(&bad, 3).is_err());
    assert!(dtare_json(1.0, 0.0, 1.0, 1.0, 0.0).is_err());
}
