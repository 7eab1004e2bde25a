//! Browser bindings: a PHC weight heatmap, a parameter-count table and a
//! synthetic sample renderer.

use phcnet::data::{render_synthetic, LabelRule, SyntheticSpec};
use phcnet::models::{Model, ModelConfig, PhResNetConfig};
use phcnet::phc::{AlgebraInit, PhcLayer, PhcSpec};
use serde_json::json;
use wasm_bindgen::prelude::*;

fn js_err(e: phcnet::Error) -> JsValue {
    JsValue::from_str(&e.to_string())
}

/// A row-major matrix with its extent, for drawing.
#[wasm_bindgen]
pub struct Grid {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
}

#[wasm_bindgen]
impl Grid {
    #[wasm_bindgen(getter)]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[wasm_bindgen(getter)]
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> Vec<f32> {
        self.data.clone()
    }
}

/// The assembled 1x1 PHC weight of a `cin -> cout` layer of order `n`.
/// `random` draws the algebra instead of using the fixed sign matrices.
#[wasm_bindgen]
pub fn phc_weight(n: usize, cin: usize, cout: usize, seed: u64, random: bool) -> Result<Grid, JsValue> {
    let scheme = if random { AlgebraInit::Random } else { AlgebraInit::Fixed };
    let layer = PhcLayer::<f32>::init(PhcSpec::new(n, cin, cout, 1), seed, scheme).map_err(js_err)?;
    let w = layer.build_weight().map_err(js_err)?;
    Ok(Grid { rows: cout, cols: cin, data: w.data().to_vec() })
}

/// JSON rows `{n, phc, real, ratio}` for a PHResNet of the given width.
#[wasm_bindgen]
pub fn param_table(width: usize, blocks: usize) -> Result<String, JsValue> {
    let mut rows = Vec::new();
    for n in [1, 2, 4] {
        let cfg = ModelConfig::Phresnet(PhResNetConfig { n, width, blocks: vec![blocks; 4], ..Default::default() });
        let phc = Model::<f32>::build(&cfg, 0).map_err(js_err)?.param_count();
        let real = Model::<f32>::build(&cfg.real_valued(), 0).map_err(js_err)?.param_count();
        rows.push(json!({ "n": n, "phc": phc, "real": real, "ratio": phc as f64 / real as f64 }));
    }
    Ok(serde_json::Value::Array(rows).to_string())
}

/// One two-view sample: the views side by side as a `size x 2·size` grid,
/// plus its label through `label()`.
#[wasm_bindgen]
pub struct Rendering {
    grid: Grid,
    label: u8,
}

#[wasm_bindgen]
impl Rendering {
    pub fn grid(&self) -> Grid {
        Grid { rows: self.grid.rows, cols: self.grid.cols, data: self.grid.data.clone() }
    }

    pub fn label(&self) -> u8 {
        self.label
    }
}

#[wasm_bindgen]
pub fn render_sample(xor: bool, size: usize, seed: u64) -> Result<Rendering, JsValue> {
    let rule = if xor { LabelRule::CrossViewXor } else { LabelRule::SingleView };
    let spec = SyntheticSpec { count: 1, size, label_rule: rule, seed, ..Default::default() };
    let r = render_synthetic(&spec).map_err(js_err)?;
    let s = &r.dataset.samples[0];
    let v = s.views.data();
    let mut data = Vec::with_capacity(2 * size * size);
    for y in 0..size {
        for view in 0..2 {
            data.extend_from_slice(&v[view * size * size + y * size..][..size]);
        }
    }
    Ok(Rendering { grid: Grid { rows: size, cols: 2 * size, data }, label: s.labels[0] })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quaternion_weight_has_the_hamilton_sign_pattern() {
        let g = phc_weight(4, 4, 4, 0, false).ok().unwrap();
        assert_eq!((g.rows, g.cols), (4, 4));
        // with one filter per block, the diagonal shares one magnitude
        let d: Vec<f32> = (0..4).map(|i| g.data[i * 4 + i].abs()).collect();
        assert!(d.iter().all(|&x| x == d[0]));
    }

    #[test]
    fn param_table_lists_three_orders() {
        let rows: serde_json::Value = serde_json::from_str(&param_table(8, 1).ok().unwrap()).unwrap();
        assert_eq!(rows.as_array().unwrap().len(), 3);
        assert_eq!(rows[0]["ratio"], 1.0);
    }

    #[test]
    fn render_places_views_side_by_side() {
        let r = render_sample(true, 16, 3).ok().unwrap();
        let g = r.grid();
        assert_eq!((g.rows, g.cols, g.data.len()), (16, 32, 512));
        assert!(r.label() <= 1);
    }
}
