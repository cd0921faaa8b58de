//! Browser bindings for ivselect. Every export takes plain numbers and
//! strings and returns a JSON document, so the page needs no glue beyond
//! `JSON.parse`.

use serde::Serialize;
use wasm_bindgen::prelude::*;

use ivselect::io::{export_dendrogram, DendrogramDocument};
use ivselect::simulation::{replication_rng, run_monte_carlo, Method, SimulationDesign, Truth};
use ivselect::{run_selection, Linkage, Metric, SelectionConfig, SelectionResult};

/// Largest sample the page accepts; keeps a single call well under a second.
pub const MAX_N: usize = 20_000;
pub const MAX_REPS: usize = 500;

#[derive(Serialize)]
pub struct SelectionView {
    pub design: String,
    pub n: usize,
    pub j: usize,
    pub p: usize,
    pub truth: Truth,
    pub dendrogram: DendrogramDocument,
    pub result: SelectionResult,
    pub std_errors: Vec<f64>,
}

fn parse_linkage(s: &str) -> Result<(Metric, Linkage), String> {
    Ok(match s {
        "ward" => (Metric::Euclidean, Linkage::Ward),
        "complete" => (Metric::Euclidean, Linkage::Complete),
        "centroid" => (Metric::Euclidean, Linkage::Centroid),
        "median" => (Metric::Euclidean, Linkage::Median),
        other => return Err(format!("unknown linkage '{other}'")),
    })
}

fn check_n(n: usize) -> Result<(), String> {
    if n > MAX_N {
        return Err(format!("n is capped at {MAX_N} in the browser"));
    }
    Ok(())
}

/// Draws one data set from `design` and runs the full selection on it.
pub fn selection_view(design: &str, n: usize, seed: u64, linkage: &str) -> Result<String, String> {
    check_n(n)?;
    let (metric, linkage) = parse_linkage(linkage)?;
    let d = SimulationDesign::new(design.parse().map_err(|e| format!("{e}"))?, n)
        .map_err(|e| e.to_string())?;
    let data = d.generate(&mut replication_rng(seed, 0));
    let config = SelectionConfig {
        metric,
        linkage,
        ..Default::default()
    };
    let run = run_selection(&data, &config).map_err(|e| e.to_string())?;
    let view = SelectionView {
        design: design.to_string(),
        n,
        j: data.j(),
        p: data.p(),
        truth: d.truth(),
        dendrogram: export_dendrogram(&run.dendrogram, &run.estimates).map_err(|e| e.to_string())?,
        std_errors: run.result.fit.std_errors(),
        result: run.result,
    };
    serde_json::to_string(&view).map_err(|e| e.to_string())
}

/// Monte Carlo report for all three methods.
pub fn simulation_view(design: &str, n: usize, reps: usize, seed: u64) -> Result<String, String> {
    check_n(n)?;
    if reps > MAX_REPS {
        return Err(format!("reps is capped at {MAX_REPS} in the browser"));
    }
    let d = SimulationDesign::new(design.parse().map_err(|e| format!("{e}"))?, n)
        .map_err(|e| e.to_string())?;
    let report = run_monte_carlo(&d, reps, seed, &Method::ALL).map_err(|e| e.to_string())?;
    serde_json::to_string(&report).map_err(|e| e.to_string())
}

#[wasm_bindgen]
pub fn select(design: &str, n: u32, seed: u32, linkage: &str) -> Result<String, JsError> {
    selection_view(design, n as usize, seed as u64, linkage).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn simulate(design: &str, n: u32, reps: u32, seed: u32) -> Result<String, JsError> {
    simulation_view(design, n as usize, reps as usize, seed as u64).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn designs() -> String {
    serde_json::to_string(&ivselect::simulation::DesignName::ALL).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::Value;

    #[test]
    fn selection_view_has_plot_data() {
        let v: Value = serde_json::from_str(&selection_view("strong_p1", 1000, 3, "ward").unwrap())
            .unwrap();
        assert_eq!(v["j"], 21);
        assert_eq!(v["dendrogram"]["leaves"].as_array().unwrap().len(), 21);
        assert_eq!(v["dendrogram"]["memberships"].as_array().unwrap().len(), 21);
        let k = v["result"]["stop_k"].as_u64().unwrap() as usize;
        assert_eq!(v["result"]["path"].as_array().unwrap().len(), k);
        assert_eq!(v["truth"]["invalid"].as_array().unwrap().len(), 12);
    }

    #[test]
    fn two_regressor_leaves_are_points_in_the_plane() {
        let v: Value =
            serde_json::from_str(&selection_view("strong_p2", 800, 1, "complete").unwrap()).unwrap();
        let leaves = v["dendrogram"]["leaves"].as_array().unwrap();
        assert_eq!(leaves.len(), 210);
        assert_eq!(leaves[0]["coordinates"].as_array().unwrap().len(), 2);
    }

    #[test]
    fn simulation_view_is_deterministic() {
        let a = simulation_view("weak_p1_d1", 400, 5, 9).unwrap();
        assert_eq!(a, simulation_view("weak_p1_d1", 400, 5, 9).unwrap());
        let v: Value = serde_json::from_str(&a).unwrap();
        assert_eq!(v["methods"].as_array().unwrap().len(), 3);
    }

    #[test]
    fn bad_input_is_an_error_message() {
        assert!(selection_view("nope", 500, 1, "ward").unwrap_err().contains("strong_p1"));
        assert!(selection_view("strong_p1", 500, 1, "single").is_err());
        assert!(selection_view("strong_p1", MAX_N + 1, 1, "ward").is_err());
        assert!(simulation_view("strong_p1", 500, MAX_REPS + 1, 1).is_err());
        assert!(designs().contains("weak_p2_d3"));
    }
}
