//! Second hierarchy layer: a bank of emotion experts routed by
//! dimension-aware attention between the fused input and each expert's
//! output.
//!
//! ```text
//! φ_l = (z · W_φ) · F_l(z) / √d
//! β   = softmax(φ)
//! e   = Σ_l β[l] · F_l(z)
//! ```

use rand::Rng;

use crate::error::{Error, Result};
use crate::params::{Bound, ParamId, ParamSet, TwoLayer};
use crate::tensor::{softmax, Tape, Tensor, Var};

#[derive(Clone, Debug)]
pub struct EmotionBank {
    experts: Vec<TwoLayer>,
    w_phi: ParamId,
    d: usize,
}

#[derive(Clone, Debug)]
pub struct EmotionOutput {
    /// `B x d` routed representation.
    pub e: Var,
    /// `B x L` routing weights.
    pub beta: Var,
    /// `B x d` output of each expert.
    pub expert_outputs: Vec<Var>,
}

impl EmotionBank {
    pub fn new<R: Rng + ?Sized>(params: &mut ParamSet, d: usize, l: usize, rng: &mut R) -> Result<Self> {
        if l == 0 || d == 0 {
            return Err(Error::config(format!("emotion bank needs L >= 1 and d >= 1 (got L={l}, d={d})")));
        }
        let experts = (0..l)
            .map(|i| TwoLayer::new(params, &format!("emo.expert.{i}"), (d, d, d), rng))
            .collect();
        let w_phi = params.add("emo.w_phi", Tensor::identity(d));
        Ok(EmotionBank { experts, w_phi, d })
    }

    pub fn len(&self) -> usize {
        self.experts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experts.is_empty()
    }

    pub fn expert(&self, l: usize) -> &TwoLayer {
        &self.experts[l]
    }

    pub fn w_phi(&self) -> ParamId {
        self.w_phi
    }

    /// Returns `(β, [F_l(z)])`.
    pub fn da_route(&self, tape: &mut Tape, p: &Bound, z: Var) -> Result<(Var, Vec<Var>)> {
        let query = tape.matmul(z, p[self.w_phi])?;
        let scale = 1.0 / (self.d as f64).sqrt();
        let mut outputs = Vec::with_capacity(self.experts.len());
        let mut scores = Vec::with_capacity(self.experts.len());
        for expert in &self.experts {
            let f = expert.forward(tape, p, z)?;
            let s = tape.row_dot(query, f)?;
            scores.push(tape.scale(s, scale));
            outputs.push(f);
        }
        let scores = tape.concat_cols(&scores)?;
        Ok((tape.softmax(scores), outputs))
    }

    /// `Σ_l β[:, l] · F_l(z)`.
    pub fn emotion_mix(&self, tape: &mut Tape, outputs: &[Var], beta: Var) -> Result<Var> {
        let mut acc: Option<Var> = None;
        for (l, &f) in outputs.iter().enumerate() {
            let b = tape.col(beta, l)?;
            let w = tape.mul_col(f, b)?;
            acc = Some(match acc {
                None => w,
                Some(prev) => tape.add(prev, w)?,
            });
        }
        acc.ok_or_else(|| Error::contract("emotion mix over zero experts"))
    }

    pub fn forward(&self, tape: &mut Tape, p: &Bound, z: Var) -> Result<EmotionOutput> {
        let (beta, expert_outputs) = self.da_route(tape, p, z)?;
        let e = self.emotion_mix(tape, &expert_outputs, beta)?;
        Ok(EmotionOutput { e, beta, expert_outputs })
    }

    /// Routing weights for one fused vector, outside any tape.
    pub fn route_vec(&self, params: &ParamSet, z: &[f64]) -> Vec<f64> {
        let w = params.get(self.w_phi);
        let d = self.d;
        let query: Vec<f64> = (0..d).map(|j| (0..d).map(|i| z[i] * w.get(i, j)).sum()).collect();
        let scale = 1.0 / (d as f64).sqrt();
        let scores: Vec<f64> = self
            .experts
            .iter()
            .map(|f| {
                let out = f.apply(params, z);
                query.iter().zip(&out).map(|(a, b)| a * b).sum::<f64>() * scale
            })
            .collect();
        softmax(&scores)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff_check, uniform};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn bank(d: usize, l: usize) -> (EmotionBank, ParamSet) {
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let b = EmotionBank::new(&mut params, d, l, &mut rng).unwrap();
        (b, params)
    }

    fn run(b: &EmotionBank, params: &ParamSet, z: &Tensor) -> (Tensor, Tensor) {
        let mut t = Tape::new();
        let p = params.bind_frozen(&mut t);
        let zv = t.constant(z.clone());
        let out = b.forward(&mut t, &p, zv).unwrap();
        (t.value(out.e).clone(), t.value(out.beta).clone())
    }

    fn copy_expert(params: &mut ParamSet, src: &TwoLayer, dst: &TwoLayer) {
        for (s, d) in [(src.l1.w, dst.l1.w), (src.l1.b, dst.l1.b), (src.l2.w, dst.l2.w), (src.l2.b, dst.l2.b)] {
            let t = params.get(s).clone();
            *params.get_mut(d) = t;
        }
    }

    #[test]
    fn router_starts_at_identity() {
        let (b, params) = bank(5, 2);
        assert_eq!(params.get(b.w_phi()), &Tensor::identity(5));
    }

    #[test]
    fn single_expert_passes_through() {
        let (b, params) = bank(4, 1);
        let z = Tensor::from_rows(&[vec![0.3, -0.1, 0.8, 0.2], vec![1.0, 0.0, -1.0, 0.5]]).unwrap();
        let (e, beta) = run(&b, &params, &z);
        assert!(beta.data().iter().all(|&v| v == 1.0));
        for r in 0..2 {
            assert_eq!(e.row(r), b.expert(0).apply(&params, z.row(r)).as_slice());
        }
    }

    #[test]
    fn identical_experts_get_uniform_weights() {
        let (b, mut params) = bank(4, 3);
        for l in 1..3 {
            copy_expert(&mut params, &b.expert(0).clone(), &b.expert(l).clone());
        }
        let z = Tensor::from_rows(&[vec![0.3, -0.1, 0.8, 0.2]]).unwrap();
        let (e, beta) = run(&b, &params, &z);
        assert!(beta.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-12));
        let f = b.expert(0).apply(&params, z.data());
        assert!(e.data().iter().zip(&f).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn tape_and_vector_routes_agree() {
        let (b, params) = bank(6, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let z = uniform(&[3, 6], -1.0, 1.0, &mut rng);
        let (_, beta) = run(&b, &params, &z);
        for r in 0..3 {
            let v = b.route_vec(&params, z.row(r));
            assert!(beta.row(r).iter().zip(&v).all(|(a, b)| (a - b).abs() < 1e-14));
            assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (b, params) = bank(4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let z = uniform(&[2, 4], -1.0, 1.0, &mut rng);
        let probe = uniform(&[2, 4], -1.0, 1.0, &mut rng);
        let n = params.len();
        let mut all = params.tensors().to_vec();
        all.push(z);
        let report = finite_diff_check(
            |t: &mut Tape, v: &[Var]| {
                let p = Bound::from_vars(v[..n].to_vec());
                let out = b.forward(t, &p, v[n])?;
                let w = t.constant(probe.clone());
                let ew = t.mul(out.e, w)?;
                Ok(t.sum(ew))
            },
            &all,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn expert_permutation_equivariance(zs in proptest::collection::vec(-2.0f64..2.0, 4), i in 0usize..3, j in 0usize..3) {
            let (b, params) = bank(4, 3);
            let (ei, ej) = (b.expert(i).clone(), b.expert(j).clone());
            let mut swapped = params.clone();
            for (a, c) in [(ei.l1.w, ej.l1.w), (ei.l1.b, ej.l1.b), (ei.l2.w, ej.l2.w), (ei.l2.b, ej.l2.b)] {
                *swapped.get_mut(a) = params.get(c).clone();
                *swapped.get_mut(c) = params.get(a).clone();
            }
            let z = Tensor::matrix(1, 4, zs).unwrap();
            let (e0, beta0) = run(&b, &params, &z);
            let (e1, beta1) = run(&b, &swapped, &z);
            prop_assert!(e0.max_abs_diff(&e1) < 1e-12);
            prop_assert!((beta0.get(0, i) - beta1.get(0, j)).abs() < 1e-12);
        }
    }
}
