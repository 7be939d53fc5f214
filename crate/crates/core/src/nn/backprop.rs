use crate::error::{Error, Result};

use super::model::{step_cached, ModelKind, ModelParams, ModelState, StepCache};

/// out_i += sum_j W[i, j] * v_j for row-major W (len(out) x len(v)).
#[inline]
fn accumulate_mat_vec(out: &mut [f64], w: &[f64], v: &[f64]) {
    let cols = v.len();
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w[i * cols..(i + 1) * cols];
        *o += row.iter().zip(v).map(|(a, b)| a * b).sum::<f64>();
    }
}

/// W += a (outer) b, skipping zero rows of `a`.
#[inline]
fn accumulate_outer(w: &mut [f64], a: &[f64], b: &[f64]) {
    let cols = b.len();
    for (i, &ai) in a.iter().enumerate() {
        if ai == 0.0 {
            continue;
        }
        let row = &mut w[i * cols..(i + 1) * cols];
        for (r, bv) in row.iter_mut().zip(b) {
            *r += ai * bv;
        }
    }
}

/// Exact backpropagation through time.
///
/// Replays the forward pass from the zero state over `inputs`, then
/// propagates `upstream[t]` (the derivative of the step-t scalar loss with
/// respect to the step-t logits) back through every step. The result is the
/// gradient of the summed losses, laid out like `params`.
pub fn backward_sequence(
    params: &ModelParams,
    inputs: &[Vec<f64>],
    upstream: &[Vec<f64>],
) -> Result<ModelParams> {
    if inputs.len() != upstream.len() {
        return Err(Error::DimensionMismatch {
            what: "upstream gradient sequence",
            expected: inputs.len(),
            got: upstream.len(),
        });
    }
    let mut caches: Vec<StepCache> = Vec::with_capacity(inputs.len());
    let mut state = ModelState::initial(params);
    for (x, dz) in inputs.iter().zip(upstream) {
        if dz.len() != params.n_actions {
            return Err(Error::DimensionMismatch {
                what: "upstream gradient",
                expected: params.n_actions,
                got: dz.len(),
            });
        }
        let (cache, _) = step_cached(params, &state, x)?;
        state = match params.kind {
            ModelKind::Lstm => ModelState {
                h: cache.h.clone(),
                c: cache.c.clone(),
            },
            ModelKind::Rnn => ModelState {
                h: cache.h.clone(),
                c: Vec::new(),
            },
            ModelKind::Dnn => ModelState::default(),
        };
        caches.push(cache);
    }

    let hd = params.hidden_dim;
    let p = params.parts();
    let mut grads = params.zeros_like();
    let mut g = grads.parts_mut();
    let mut dh_next = vec![0.0; hd];
    let mut dc_next = vec![0.0; hd];

    for t in (0..inputs.len()).rev() {
        let cache = &caches[t];
        let dz = &upstream[t];
        let x = &inputs[t];

        accumulate_outer(g.w_out, &cache.h, dz);
        for (b, d) in g.b_out.iter_mut().zip(dz) {
            *b += d;
        }
        let mut dh = dh_next.clone();
        accumulate_mat_vec(&mut dh, p.w_out, dz);

        let da: Vec<f64> = match params.kind {
            ModelKind::Lstm => {
                let gates = &cache.gates;
                let mut da = vec![0.0; 4 * hd];
                for j in 0..hd {
                    let (i, f, gg, o) = (
                        gates[j],
                        gates[hd + j],
                        gates[2 * hd + j],
                        gates[3 * hd + j],
                    );
                    let tc = cache.c[j].tanh();
                    let d_o = dh[j] * tc;
                    let dc = dc_next[j] + dh[j] * o * (1.0 - tc * tc);
                    let d_i = dc * gg;
                    let d_g = dc * i;
                    let d_f = dc * cache.c_prev[j];
                    dc_next[j] = dc * f;
                    da[j] = d_i * i * (1.0 - i);
                    da[hd + j] = d_f * f * (1.0 - f);
                    da[2 * hd + j] = d_g * (1.0 - gg * gg);
                    da[3 * hd + j] = d_o * o * (1.0 - o);
                }
                da
            }
            ModelKind::Rnn | ModelKind::Dnn => cache
                .h
                .iter()
                .zip(&dh)
                .map(|(h, d)| d * (1.0 - h * h))
                .collect(),
        };

        accumulate_outer(g.w_input, x, &da);
        for (b, d) in g.bias.iter_mut().zip(&da) {
            *b += d;
        }
        if params.kind != ModelKind::Dnn {
            let wr = g.w_recurrent.as_deref_mut().expect("recurrent weights");
            accumulate_outer(wr, &cache.h_prev, &da);
            dh_next = vec![0.0; hd];
            accumulate_mat_vec(&mut dh_next, p.w_recurrent, &da);
        }
    }
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_model;

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        for kind in ModelKind::ALL {
            let p = init_model(kind, 4, 3, 2, 5).unwrap();
            let inputs = vec![vec![1.0, 0.5, -0.3, 2.0]; 3];
            let g = backward_sequence(&p, &inputs, &vec![vec![0.0; 2]; 3]).unwrap();
            assert!(g.is_zero());
        }
    }

    #[test]
    fn length_mismatch() {
        let p = init_model(ModelKind::Lstm, 2, 2, 2, 5).unwrap();
        let err = backward_sequence(&p, &[vec![0.0; 2]], &[]).unwrap_err();
        assert!(matches!(err, Error::DimensionMismatch { .. }));
    }

    #[test]
    fn gradients_are_linear_in_upstream() {
        for kind in ModelKind::ALL {
            let p = init_model(kind, 3, 4, 3, 11).unwrap();
            let xs = vec![vec![0.2, -1.0, 0.7], vec![1.5, 0.3, 0.0]];
            let da = vec![vec![0.1, -0.4, 0.3], vec![0.0, 0.0, 0.0]];
            let db = vec![vec![0.0, 0.0, 0.0], vec![-0.2, 0.5, 0.0]];
            let both: Vec<Vec<f64>> = da
                .iter()
                .zip(&db)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| x + y).collect())
                .collect();
            let mut sum = backward_sequence(&p, &xs, &da).unwrap();
            sum.add_scaled(&backward_sequence(&p, &xs, &db).unwrap(), 1.0)
                .unwrap();
            let joint = backward_sequence(&p, &xs, &both).unwrap();
            for (a, b) in sum.iter().zip(joint.iter()) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }
}
