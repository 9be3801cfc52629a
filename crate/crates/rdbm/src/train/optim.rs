//! Adam with bias correction.

use super::net::{DenoiserParams, Grads};
use super::TrainConfig;

#[derive(Debug, Clone)]
pub struct AdamState {
    pub m: Vec<(Vec<f64>, Vec<f64>)>,
    pub v: Vec<(Vec<f64>, Vec<f64>)>,
    pub step: usize,
}

impl AdamState {
    pub fn zeros_like(params: &DenoiserParams) -> Self {
        let zeros: Vec<(Vec<f64>, Vec<f64>)> = params
            .layers
            .iter()
            .map(|l| (vec![0.0; l.w.len()], vec![0.0; l.b.len()]))
            .collect();
        AdamState { m: zeros.clone(), v: zeros, step: 0 }
    }
}

/// One Adam update in place.
pub fn adam_step(
    params: &mut DenoiserParams,
    grads: &Grads,
    state: &mut AdamState,
    cfg: &TrainConfig,
) {
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - cfg.beta1.powf(t);
    let bc2 = 1.0 - cfg.beta2.powf(t);
    for (layer_idx, layer) in params.layers.iter_mut().enumerate() {
        let (gw, gb) = &grads.layers[layer_idx];
        let (mw, mb) = &mut state.m[layer_idx];
        let (vw, vb) = &mut state.v[layer_idx];
        let update = |p: &mut [f64], g: &[f64], m: &mut [f64], v: &mut [f64]| {
            for k in 0..p.len() {
                m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g[k];
                v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g[k] * g[k];
                let mh = m[k] / bc1;
                let vh = v[k] / bc2;
                p[k] -= cfg.learning_rate * mh / (vh.sqrt() + cfg.epsilon);
            }
        };
        update(&mut layer.w, gw, mw, vw);
        update(&mut layer.b, gb, mb, vb);
    }
}
