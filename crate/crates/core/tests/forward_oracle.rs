//! Independent re-computation of every architecture's forward pass.
//!
//! The oracle below reads the graph's parameters by name and evaluates the
//! published equations (LSTM recurrences, concatenation, fusion
//! h = W_hm r_m + W_hy r_y + b_h, bounded heads) in straight-line test
//! code that shares nothing with the library's forward implementation.
//! This pins the wiring, not just gradient self-consistency.

use std::collections::HashMap;

use avse_core::grid::Grid;
use avse_core::neural::{ModelConfig, ModelGraph, ModelKind};
use avse_core::seeds::rng_for;
use rand::Rng;

fn tiny_config() -> ModelConfig {
    ModelConfig {
        feat_dim: 4,
        spec_bins: 4,
        units: 3,
        vl2m_layers: 2,
        concat_layers: 2,
        refine_layers: 1,
        iam_clip: 10.0,
    }
}

type Params<'a> = HashMap<String, &'a Grid<f64>>;

fn params_by_name(graph: &ModelGraph<f64>) -> Params<'_> {
    graph
        .param_names()
        .into_iter()
        .zip(graph.params())
        .collect()
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// One LSTM scan per the gate equations (i, f, g, o rows of w/u/b).
fn scan(
    w: &Grid<f64>,
    u: &Grid<f64>,
    b: &Grid<f64>,
    x: &[Vec<f64>],
    reverse: bool,
    units: usize,
) -> Vec<Vec<f64>> {
    let frames = x.len();
    let mut h = vec![0.0; units];
    let mut c = vec![0.0; units];
    let mut out = vec![vec![0.0; units]; frames];
    let order: Vec<usize> = if reverse {
        (0..frames).rev().collect()
    } else {
        (0..frames).collect()
    };
    for &t in &order {
        let mut next_h = vec![0.0; units];
        let mut next_c = vec![0.0; units];
        for k in 0..units {
            let mut pre = [0.0f64; 4];
            for (gate, p) in pre.iter_mut().enumerate() {
                let row = gate * units + k;
                *p = b.at(0, row);
                for (col, xv) in x[t].iter().enumerate() {
                    *p += w.at(row, col) * xv;
                }
                for (col, hv) in h.iter().enumerate() {
                    *p += u.at(row, col) * hv;
                }
            }
            let i = sigmoid(pre[0]);
            let f = sigmoid(pre[1]);
            let g = pre[2].tanh();
            let o = sigmoid(pre[3]);
            next_c[k] = f * c[k] + i * g;
            next_h[k] = o * next_c[k].tanh();
        }
        h = next_h.clone();
        c = next_c;
        out[t] = next_h;
    }
    out
}

/// Stacked BLSTM: concatenated [forward | backward] per frame feeds the
/// next layer.
fn blstm_stack(params: &Params, prefix: &str, layers: usize, x: Vec<Vec<f64>>, units: usize) -> Vec<Vec<f64>> {
    let mut cur = x;
    for l in 0..layers {
        let fwd = scan(
            params[&format!("{prefix}.blstm{l}.fwd.w")],
            params[&format!("{prefix}.blstm{l}.fwd.u")],
            params[&format!("{prefix}.blstm{l}.fwd.b")],
            &cur,
            false,
            units,
        );
        let bwd = scan(
            params[&format!("{prefix}.blstm{l}.bwd.w")],
            params[&format!("{prefix}.blstm{l}.bwd.u")],
            params[&format!("{prefix}.blstm{l}.bwd.b")],
            &cur,
            true,
            units,
        );
        cur = fwd
            .into_iter()
            .zip(bwd)
            .map(|(f, b)| f.into_iter().chain(b).collect())
            .collect();
    }
    cur
}

fn dense(params: &Params, w_name: &str, b_name: &str, x: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let w = params[w_name];
    let b = params[b_name];
    x.iter()
        .map(|row| {
            (0..w.rows())
                .map(|r| {
                    let mut acc = b.at(0, r);
                    for (col, v) in row.iter().enumerate() {
                        acc += w.at(r, col) * v;
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

fn grid_rows(g: &Grid<f64>) -> Vec<Vec<f64>> {
    (0..g.rows()).map(|t| g.row(t).to_vec()).collect()
}

fn assert_close(actual: &Grid<f64>, expected: &[Vec<f64>], label: &str) {
    assert_eq!(actual.rows(), expected.len(), "{label} frames");
    for (t, row) in expected.iter().enumerate() {
        for (f, &e) in row.iter().enumerate() {
            let a = actual.at(t, f);
            assert!(
                (a - e).abs() < 1e-12,
                "{label} [{t},{f}]: {a} vs {e}"
            );
        }
    }
}

fn oracle_vl2m(params: &Params, cfg: &ModelConfig, v: &Grid<f64>) -> Vec<Vec<f64>> {
    let hidden = blstm_stack(params, "vl2m", cfg.vl2m_layers, grid_rows(v), cfg.units);
    dense(params, "vl2m.head.w", "vl2m.head.b", &hidden)
        .into_iter()
        .map(|row| row.into_iter().map(sigmoid).collect())
        .collect()
}

fn random_grid(rows: usize, cols: usize, label: &str, lo: f64, hi: f64) -> Grid<f64> {
    let mut rng = rng_for(77, label);
    Grid::from_vec(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| lo + rng.random::<f64>() * (hi - lo))
            .collect(),
    )
}

#[test]
fn vl2m_forward_matches_equation_oracle() {
    let cfg = tiny_config();
    let graph: ModelGraph<f64> = ModelGraph::new(ModelKind::Vl2m, cfg, 11);
    let v = random_grid(3, cfg.feat_dim, "fo/vl2m/v", -1.0, 1.0);
    let (m_hat, _) = graph.forward_vl2m(&v).unwrap();
    let expect = oracle_vl2m(&params_by_name(&graph), &cfg, &v);
    assert_close(&m_hat, &expect, "vl2m");
}

#[test]
fn vl2m_ref_forward_matches_equation_oracle() {
    let cfg = tiny_config();
    let graph: ModelGraph<f64> = ModelGraph::new(ModelKind::Vl2mRef, cfg, 12);
    let v = random_grid(3, cfg.feat_dim, "fo/ref/v", -1.0, 1.0);
    let y = random_grid(3, cfg.spec_bins, "fo/ref/y", -1.0, 1.0);
    let (p_hat, _) = graph.forward_vl2m_ref(&v, &y).unwrap();

    let params = params_by_name(&graph);
    let m_hat = oracle_vl2m(&params, &cfg, &v);
    let r_m = blstm_stack(&params, "mask_enc", cfg.refine_layers, m_hat, cfg.units);
    let r_y = blstm_stack(&params, "spec_enc", cfg.refine_layers, grid_rows(&y), cfg.units);
    let z = 2 * cfg.units;
    let w_hm = params["fusion.w_hm"];
    let w_hy = params["fusion.w_hy"];
    let b_h = params["fusion.b_h"];
    let fused: Vec<Vec<f64>> = r_m
        .iter()
        .zip(&r_y)
        .map(|(rm, ry)| {
            (0..z)
                .map(|r| {
                    let mut acc = b_h.at(0, r);
                    for k in 0..z {
                        acc += w_hm.at(r, k) * rm[k] + w_hy.at(r, k) * ry[k];
                    }
                    acc
                })
                .collect()
        })
        .collect();
    let decoded = blstm_stack(&params, "decoder", cfg.refine_layers, fused, cfg.units);
    let expect: Vec<Vec<f64>> = dense(&params, "refine.head.w", "refine.head.b", &decoded)
        .into_iter()
        .map(|row| row.into_iter().map(|a| 10.0 * sigmoid(a)).collect())
        .collect();
    assert_close(&p_hat, &expect, "vl2m_ref");
}

#[test]
fn av_concat_forward_matches_equation_oracle() {
    let cfg = tiny_config();
    let graph: ModelGraph<f64> = ModelGraph::new(ModelKind::AvConcat, cfg, 13);
    let v = random_grid(3, cfg.feat_dim, "fo/cat/v", -1.0, 1.0);
    let y = random_grid(3, cfg.spec_bins, "fo/cat/y", -1.0, 1.0);
    let (p_hat, _) = graph.forward_av_concat(&v, &y).unwrap();

    let params = params_by_name(&graph);
    let input: Vec<Vec<f64>> = (0..3)
        .map(|t| v.row(t).iter().chain(y.row(t)).copied().collect())
        .collect();
    let hidden = blstm_stack(&params, "concat", cfg.concat_layers, input, cfg.units);
    let expect: Vec<Vec<f64>> = dense(&params, "concat.head.w", "concat.head.b", &hidden)
        .into_iter()
        .map(|row| row.into_iter().map(|a| 10.0 * sigmoid(a)).collect())
        .collect();
    assert_close(&p_hat, &expect, "av_concat");
}

#[test]
fn av_concat_ref_forward_matches_equation_oracle() {
    let cfg = tiny_config();
    let graph: ModelGraph<f64> = ModelGraph::new(ModelKind::AvConcatRef, cfg, 14);
    let v = random_grid(3, cfg.feat_dim, "fo/catref/v", -1.0, 1.0);
    let y = random_grid(3, cfg.spec_bins, "fo/catref/y", -1.0, 1.0);
    let (p_hat, _) = graph.forward_av_concat_ref(&v, &y).unwrap();

    let params = params_by_name(&graph);
    // Denoised spectrogram from the VL2M component, concatenated with y.
    let m_hat = oracle_vl2m(&params, &cfg, &v);
    let input: Vec<Vec<f64>> = (0..3usize)
        .map(|t| {
            let denoised = m_hat[t].iter().zip(y.row(t)).map(|(m, yv)| m * yv);
            denoised.chain(y.row(t).iter().copied()).collect()
        })
        .collect();
    let hidden = blstm_stack(&params, "concat", cfg.concat_layers, input, cfg.units);
    let expect: Vec<Vec<f64>> = dense(&params, "concat.head.w", "concat.head.b", &hidden)
        .into_iter()
        .map(|row| row.into_iter().map(|a| 10.0 * sigmoid(a)).collect())
        .collect();
    assert_close(&p_hat, &expect, "av_concat_ref");
}

#[test]
fn oracle_mask_paths_match_equation_oracle() {
    // Stage-1 forward: the supplied mask replaces the VL2M output.
    let cfg = tiny_config();
    let y = random_grid(3, cfg.spec_bins, "fo/stage1/y", -1.0, 1.0);
    let mask = random_grid(3, cfg.spec_bins, "fo/stage1/m", 0.0, 1.0)
        .map(|v| if v >= 0.5 { 1.0 } else { 0.0 });

    let graph: ModelGraph<f64> = ModelGraph::new(ModelKind::AvConcatRef, cfg, 15);
    let (p_hat, _) = graph.forward_av_concat_ref_from_mask(&mask, &y).unwrap();
    let params = params_by_name(&graph);
    let input: Vec<Vec<f64>> = (0..3usize)
        .map(|t| {
            let denoised = mask.row(t).iter().zip(y.row(t)).map(|(m, yv)| m * yv);
            denoised.chain(y.row(t).iter().copied()).collect()
        })
        .collect();
    let hidden = blstm_stack(&params, "concat", cfg.concat_layers, input, cfg.units);
    let expect: Vec<Vec<f64>> = dense(&params, "concat.head.w", "concat.head.b", &hidden)
        .into_iter()
        .map(|row| row.into_iter().map(|a| 10.0 * sigmoid(a)).collect())
        .collect();
    assert_close(&p_hat, &expect, "av_concat_ref stage 1");
}
