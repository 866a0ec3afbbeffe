//! Layers built from tape primitives.

use serde::{Deserialize, Serialize};

use crate::diffnet::params::{ParamId, ParamStore};
use crate::diffnet::tape::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Shape description of a layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Linear {
        input: usize,
        output: usize,
    },
    GruCell {
        input: usize,
        hidden: usize,
    },
    /// Two linear layers with a ReLU in between.
    Mlp2 {
        input: usize,
        hidden: usize,
        output: usize,
    },
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            LayerSpec::Linear { input, output } => input >= 1 && output >= 1,
            LayerSpec::GruCell { input, hidden } => input >= 1 && hidden >= 1,
            LayerSpec::Mlp2 {
                input,
                hidden,
                output,
            } => input >= 1 && hidden >= 1 && output >= 1,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "layer dimensions must be >= 1: {self:?}"
            )))
        }
    }
}

fn expect_len(tape: &Tape, x: NodeId, len: usize, what: &str) -> Result<()> {
    let got = tape.value(x).len();
    if got != len {
        return Err(Error::DimMismatch(format!(
            "{what} expects length {len}, got {got}"
        )));
    }
    Ok(())
}

/// `y = W x + b`.
#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut Rng,
    ) -> Self {
        Linear {
            weight: store.glorot(format!("{name}.weight"), output, input, rng),
            bias: store.zeros(format!("{name}.bias"), 1, output),
            input,
            output,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        expect_len(tape, x, self.input, "linear")?;
        let wx = tape.matvec(store, self.weight, x)?;
        let b = tape.param(store, self.bias);
        tape.add(wx, b)
    }

    pub fn params(&self) -> [ParamId; 2] {
        [self.weight, self.bias]
    }
}

/// Gated recurrent unit:
///
/// ```text
/// z  = σ(Wz x + Uz h + bz)
/// r  = σ(Wr x + Ur h + br)
/// h̃  = tanh(Wh x + Uh (r ⊙ h) + bh)
/// h' = (1 − z) ⊙ h + z ⊙ h̃
/// ```
#[derive(Clone, Copy, Debug)]
pub struct GruCell {
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl GruCell {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut Rng,
    ) -> Self {
        let mut w = |g: &str| store.glorot(format!("{name}.w_{g}"), hidden, input, rng);
        let (w_z, w_r, w_h) = (w("z"), w("r"), w("h"));
        let mut u = |g: &str| store.glorot(format!("{name}.u_{g}"), hidden, hidden, rng);
        let (u_z, u_r, u_h) = (u("z"), u("r"), u("h"));
        let mut b = |g: &str| store.zeros(format!("{name}.b_{g}"), 1, hidden);
        let (b_z, b_r, b_h) = (b("z"), b("r"), b("h"));
        GruCell {
            w_z,
            u_z,
            b_z,
            w_r,
            u_r,
            b_r,
            w_h,
            u_h,
            b_h,
            input,
            hidden,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: NodeId,
        h: NodeId,
    ) -> Result<NodeId> {
        expect_len(tape, x, self.input, "gru input")?;
        expect_len(tape, h, self.hidden, "gru hidden state")?;
        let gate = |tape: &mut Tape, w, u, b, hh: NodeId| -> Result<NodeId> {
            let wx = tape.matvec(store, w, x)?;
            let uh = tape.matvec(store, u, hh)?;
            let bias = tape.param(store, b);
            let s = tape.add(wx, uh)?;
            tape.add(s, bias)
        };
        let z_pre = gate(tape, self.w_z, self.u_z, self.b_z, h)?;
        let z = tape.sigmoid(z_pre);
        let r_pre = gate(tape, self.w_r, self.u_r, self.b_r, h)?;
        let r = tape.sigmoid(r_pre);
        let rh = tape.mul(r, h)?;
        let c_pre = gate(tape, self.w_h, self.u_h, self.b_h, rh)?;
        let cand = tape.tanh(c_pre);
        // h' = h + z ⊙ (h̃ − h)
        let diff = tape.sub(cand, h)?;
        let step = tape.mul(z, diff)?;
        tape.add(h, step)
    }

    pub fn params(&self) -> [ParamId; 9] {
        [
            self.w_z, self.u_z, self.b_z, self.w_r, self.u_r, self.b_r, self.w_h, self.u_h,
            self.b_h,
        ]
    }
}

/// `W2 relu(W1 x + b1) + b2`.
#[derive(Clone, Copy, Debug)]
pub struct Mlp2 {
    pub first: Linear,
    pub second: Linear,
}

impl Mlp2 {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        output: usize,
        rng: &mut Rng,
    ) -> Self {
        Mlp2 {
            first: Linear::new(store, &format!("{name}.0"), input, hidden, rng),
            second: Linear::new(store, &format!("{name}.1"), hidden, output, rng),
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let a = self.first.forward(tape, store, x)?;
        let a = tape.relu(a);
        self.second.forward(tape, store, a)
    }

    pub fn params(&self) -> [ParamId; 4] {
        let [a, b] = self.first.params();
        let [c, d] = self.second.params();
        [a, b, c, d]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn sig(x: f64) -> f64 {
        1.0 / (1.0 + (-x).exp())
    }

    #[test]
    fn linear_identity_and_bias() {
        let mut store = ParamStore::new();
        let mut r = rng::stream(0, 0);
        let lin = Linear::new(&mut store, "l", 2, 2, &mut r);
        store
            .value_mut(lin.weight)
            .copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        let mut tape = Tape::new();
        let x = tape.input(vec![1.0, 2.0]);
        let y = lin.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.value(y), &[1.0, 2.0]);

        let lin1 = Linear::new(&mut store, "k", 4, 1, &mut r);
        store
            .value_mut(lin1.weight)
            .iter_mut()
            .for_each(|w| *w = 0.0);
        store.value_mut(lin1.bias)[0] = 3.0;
        let x = tape.input(vec![9.0, -1.0, 2.0, 5.0]);
        let y = lin1.forward(&mut tape, &store, x).unwrap();
        assert_eq!(tape.value(y), &[3.0]);
    }

    #[test]
    fn linear_dim_mismatch() {
        let mut store = ParamStore::new();
        let lin = Linear::new(&mut store, "l", 3, 2, &mut rng::stream(0, 0));
        let mut tape = Tape::new();
        let x = tape.input(vec![1.0, 2.0]);
        assert!(matches!(
            lin.forward(&mut tape, &store, x),
            Err(Error::DimMismatch(_))
        ));
    }

    #[test]
    fn gru_zero_weights_fixed_point() {
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "g", 3, 4, &mut rng::stream(0, 0));
        for id in cell.params() {
            store.value_mut(id).iter_mut().for_each(|w| *w = 0.0);
        }
        let mut tape = Tape::new();
        let x = tape.input(vec![0.3, -2.0, 5.0]);
        let h = tape.input(vec![0.0; 4]);
        let h2 = cell.forward(&mut tape, &store, x, h).unwrap();
        assert_eq!(tape.value(h2), &[0.0; 4]);
    }

    #[test]
    fn gru_scalar_matches_hand_evaluation() {
        let mut store = ParamStore::new();
        let cell = GruCell::new(&mut store, "g", 1, 1, &mut rng::stream(0, 0));
        let set = |s: &mut ParamStore, id, v: f64| s.value_mut(id)[0] = v;
        let (wz, uz, bz, wr, ur, br, wh, uh, bh) =
            (0.5, -0.3, 0.1, 0.8, 0.2, -0.4, 1.2, -0.7, 0.05);
        set(&mut store, cell.w_z, wz);
        set(&mut store, cell.u_z, uz);
        set(&mut store, cell.b_z, bz);
        set(&mut store, cell.w_r, wr);
        set(&mut store, cell.u_r, ur);
        set(&mut store, cell.b_r, br);
        set(&mut store, cell.w_h, wh);
        set(&mut store, cell.u_h, uh);
        set(&mut store, cell.b_h, bh);
        let (x, h) = (0.9, -0.6);

        let z = sig(wz * x + uz * h + bz);
        let r = sig(wr * x + ur * h + br);
        let cand = (wh * x + uh * (r * h) + bh).tanh();
        let expected = (1.0 - z) * h + z * cand;

        let mut tape = Tape::new();
        let xn = tape.input(vec![x]);
        let hn = tape.input(vec![h]);
        let out = cell.forward(&mut tape, &store, xn, hn).unwrap();
        assert!((tape.scalar(out) - expected).abs() < 1e-15);
    }

    #[test]
    fn mlp_matches_dense_evaluation() {
        let mut store = ParamStore::new();
        let mut r = rng::stream(5, 0);
        let mlp = Mlp2::new(&mut store, "m", 3, 4, 2, &mut r);
        for id in mlp.params() {
            for (i, v) in store.value_mut(id).iter_mut().enumerate() {
                *v += 0.01 * i as f64;
            }
        }
        let x = [0.5, -1.0, 2.0];
        let dense = |w: &[f64], b: &[f64], x: &[f64]| -> Vec<f64> {
            b.iter()
                .enumerate()
                .map(|(i, bi)| bi + (0..x.len()).map(|j| w[i * x.len() + j] * x[j]).sum::<f64>())
                .collect()
        };
        let a: Vec<f64> = dense(
            store.value(mlp.first.weight),
            store.value(mlp.first.bias),
            &x,
        )
        .into_iter()
        .map(|v| v.max(0.0))
        .collect();
        let y = dense(
            store.value(mlp.second.weight),
            store.value(mlp.second.bias),
            &a,
        );

        let mut tape = Tape::new();
        let xn = tape.input(x.to_vec());
        let out = mlp.forward(&mut tape, &store, xn).unwrap();
        for (a, b) in tape.value(out).iter().zip(&y) {
            assert!((a - b).abs() < 1e-14);
        }
    }
}
