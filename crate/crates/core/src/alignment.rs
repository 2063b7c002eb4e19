//! Contrastive cross-modal alignment (NT-Xent over stacked modality pairs).

use crate::data::PresenceMask;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Which modality pairs enter the alignment loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairPolicy {
    /// Every unordered pair `(i, j)`, `i < j`.
    AllPairs,
    /// Only pairs `(anchor, j)`.
    Anchor(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignmentConfig {
    pub tau: f64,
    pub pair_policy: PairPolicy,
}

impl Default for AlignmentConfig {
    fn default() -> Self {
        AlignmentConfig {
            tau: 0.1,
            pair_policy: PairPolicy::AllPairs,
        }
    }
}

impl AlignmentConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::config(format!("temperature must be positive, got {}", self.tau)));
        }
        Ok(())
    }

    /// Modality pairs selected by the policy.
    pub fn pairs(&self, n_modalities: usize) -> Vec<(usize, usize)> {
        match self.pair_policy {
            PairPolicy::AllPairs => (0..n_modalities)
                .flat_map(|i| (i + 1..n_modalities).map(move |j| (i, j)))
                .collect(),
            PairPolicy::Anchor(a) => (0..n_modalities).filter(|&j| j != a).map(|j| (a.min(j), a.max(j))).collect(),
        }
    }
}

/// `2B x 2B` similarity logits with a masked diagonal.
#[derive(Clone, Copy, Debug)]
pub struct SimilarityMatrix {
    pub logits: Var,
    /// Samples per block (`B`).
    pub half: usize,
}

/// `S = Z Zᵀ / τ` over `Z = [norm(zi); norm(zj)]`, diagonal masked.
pub fn similarity_matrix(tape: &mut Tape, zi: Var, zj: Var, tau: f64) -> Result<SimilarityMatrix> {
    if !(tau > 0.0) {
        return Err(Error::config(format!("temperature must be positive, got {tau}")));
    }
    let (ri, rj) = (tape.value(zi).rows(), tape.value(zj).rows());
    if ri != rj || tape.value(zi).cols() != tape.value(zj).cols() {
        return Err(Error::Dimension {
            op: "similarity_matrix",
            lhs: vec![ri, tape.value(zi).cols()],
            rhs: vec![rj, tape.value(zj).cols()],
        });
    }
    let ni = tape.l2_normalize(zi);
    let nj = tape.l2_normalize(zj);
    let z = tape.concat_rows(&[ni, nj])?;
    let gram = tape.matmul_t(z, z)?;
    let scaled = tape.scale(gram, 1.0 / tau);
    let logits = tape.mask_diagonal(scaled)?;
    Ok(SimilarityMatrix { logits, half: ri })
}

/// Index of the positive partner of every stacked row: `(i + B) mod 2B`.
pub fn positive_indices(half: usize) -> Vec<usize> {
    (0..2 * half).map(|i| (i + half) % (2 * half)).collect()
}

/// `-(1/2B) Σ_i log softmax_{j≠i}(S_i)[y_i]`.
pub fn ntxent_loss(tape: &mut Tape, s: SimilarityMatrix) -> Result<Var> {
    if s.half < 2 {
        return Err(Error::contract(format!(
            "NT-Xent needs at least two samples per block, got {}",
            s.half
        )));
    }
    let logp = tape.log_softmax(s.logits);
    let pos = tape.gather_cols(logp, &positive_indices(s.half))?;
    let mean = tape.mean(pos);
    Ok(tape.scale(mean, -1.0))
}

/// Mean NT-Xent over the configured modality pairs, each restricted to the
/// rows where both modalities are present. Pairs with fewer than two such
/// rows contribute zero but still count in the mean.
pub fn pairwise_alignment_loss(
    tape: &mut Tape,
    features: &[Var],
    presence: &PresenceMask,
    cfg: &AlignmentConfig,
) -> Result<Var> {
    cfg.validate()?;
    if features.len() < 2 {
        return Err(Error::contract("alignment needs at least two modalities"));
    }
    let pairs = cfg.pairs(features.len());
    let mut terms = Vec::with_capacity(pairs.len());
    for &(i, j) in &pairs {
        let rows: Vec<usize> = (0..presence.rows())
            .filter(|&r| presence.get(r, i) && presence.get(r, j))
            .collect();
        if rows.len() < 2 {
            continue;
        }
        let zi = tape.select_rows(features[i], &rows)?;
        let zj = tape.select_rows(features[j], &rows)?;
        let s = similarity_matrix(tape, zi, zj, cfg.tau)?;
        terms.push(ntxent_loss(tape, s)?);
    }
    if terms.is_empty() {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    }
    let stacked = tape.concat_rows(&terms)?;
    let total = tape.sum(stacked);
    Ok(tape.scale(total, 1.0 / pairs.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{finite_diff_check, uniform, MASKED_LOGIT};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn one_hot_rows(idx: &[usize], d: usize) -> Tensor {
        let rows: Vec<Vec<f64>> = idx
            .iter()
            .map(|&k| (0..d).map(|j| if j == k { 1.0 } else { 0.0 }).collect())
            .collect();
        Tensor::from_rows(&rows).unwrap()
    }

    fn sim(zi: &Tensor, zj: &Tensor, tau: f64) -> (Tensor, f64) {
        let mut t = Tape::new();
        let a = t.constant(zi.clone());
        let b = t.constant(zj.clone());
        let s = similarity_matrix(&mut t, a, b, tau).unwrap();
        let l = ntxent_loss(&mut t, s).unwrap();
        (t.value(s.logits).clone(), t.value(l).item())
    }

    #[test]
    fn identical_blocks_have_unit_cross_diagonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = uniform(&[4, 6], -1.0, 1.0, &mut rng);
        let (s, _) = sim(&z, &z, 1.0);
        for i in 0..4 {
            assert!((s.get(i, i + 4) - 1.0).abs() < 1e-12);
            assert!((s.get(i + 4, i) - 1.0).abs() < 1e-12);
            assert_eq!(s.get(i, i), MASKED_LOGIT);
        }
    }

    #[test]
    fn orthonormal_rows_have_zero_similarity() {
        let zi = one_hot_rows(&[0, 1], 4);
        let zj = one_hot_rows(&[2, 3], 4);
        let (s, loss) = sim(&zi, &zj, 1.0);
        for p in 0..4 {
            for q in 0..4 {
                if p != q {
                    assert_eq!(s.get(p, q), 0.0);
                }
            }
        }
        assert!((loss - 3f64.ln()).abs() < 1e-12);
        assert!((loss - 1.098612).abs() < 1e-6);
    }

    #[test]
    fn halving_tau_doubles_similarities() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let zi = uniform(&[3, 5], -1.0, 1.0, &mut rng);
        let zj = uniform(&[3, 5], -1.0, 1.0, &mut rng);
        let (s1, _) = sim(&zi, &zj, 1.0);
        let (s2, _) = sim(&zi, &zj, 0.5);
        for p in 0..6 {
            for q in 0..6 {
                if p != q {
                    assert!((s2.get(p, q) - 2.0 * s1.get(p, q)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn perfectly_paired_closed_form() {
        // B = 2, τ = 0.5, zi == zj, rows orthogonal across samples.
        let z = one_hot_rows(&[0, 1], 3);
        let (_, loss) = sim(&z, &z, 0.5);
        let e2 = 2f64.exp();
        let expected = -(e2 / (e2 + 2.0)).ln();
        assert!((loss - expected).abs() < 1e-12);
        assert!((loss - 0.2395448).abs() < 1e-6);
    }

    #[test]
    fn tau_must_be_positive() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::zeros(&[2, 2]));
        assert!(matches!(similarity_matrix(&mut t, a, a, 0.0), Err(Error::Config(_))));
        assert!(matches!(similarity_matrix(&mut t, a, a, -1.0), Err(Error::Config(_))));
    }

    #[test]
    fn single_sample_is_a_contract_error() {
        let mut t = Tape::new();
        let a = t.constant(Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap());
        let s = similarity_matrix(&mut t, a, a, 1.0).unwrap();
        assert!(matches!(ntxent_loss(&mut t, s), Err(Error::Contract(_))));
    }

    #[test]
    fn ntxent_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let params = vec![uniform(&[3, 4], -1.0, 1.0, &mut rng), uniform(&[3, 4], -1.0, 1.0, &mut rng)];
        let report = finite_diff_check(
            |t: &mut Tape, p: &[Var]| {
                let s = similarity_matrix(t, p[0], p[1], 0.3)?;
                ntxent_loss(t, s)
            },
            &params,
            1e-5,
        )
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }

    fn pairwise(feats: &[Tensor], presence: &PresenceMask, cfg: &AlignmentConfig) -> f64 {
        let mut t = Tape::new();
        let vars: Vec<Var> = feats.iter().map(|f| t.constant(f.clone())).collect();
        let l = pairwise_alignment_loss(&mut t, &vars, presence, cfg).unwrap();
        t.value(l).item()
    }

    #[test]
    fn two_modalities_reduce_to_single_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = uniform(&[5, 4], -1.0, 1.0, &mut rng);
        let b = uniform(&[5, 4], -1.0, 1.0, &mut rng);
        let cfg = AlignmentConfig { tau: 0.2, ..Default::default() };
        let full = pairwise(&[a.clone(), b.clone()], &PresenceMask::all_present(5, 2), &cfg);
        let (_, single) = sim(&a, &b, 0.2);
        assert!((full - single).abs() < 1e-15);
    }

    #[test]
    fn pair_without_joint_rows_contributes_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let feats: Vec<Tensor> = (0..3).map(|_| uniform(&[4, 3], -1.0, 1.0, &mut rng)).collect();
        let cfg = AlignmentConfig::default();
        // Modality 2 missing everywhere: pairs (0,2) and (1,2) drop out.
        let mut mask = PresenceMask::all_present(4, 3);
        (0..4).for_each(|r| mask.set(r, 2, false));
        let got = pairwise(&feats, &mask, &cfg);
        let (_, l01) = sim(&feats[0], &feats[1], cfg.tau);
        assert!((got - l01 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn equal_pair_losses_average_to_the_same_value() {
        let z = one_hot_rows(&[0, 1, 2], 3);
        let cfg = AlignmentConfig { tau: 0.5, ..Default::default() };
        let got = pairwise(&[z.clone(), z.clone(), z.clone()], &PresenceMask::all_present(3, 3), &cfg);
        let (_, l0) = sim(&z, &z, 0.5);
        assert!((got - l0).abs() < 1e-15);
    }

    #[test]
    fn joint_permutation_leaves_loss_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let a = uniform(&[5, 4], -1.0, 1.0, &mut rng);
        let b = uniform(&[5, 4], -1.0, 1.0, &mut rng);
        let perm = [3, 0, 4, 1, 2];
        let pa = Tensor::from_rows(&perm.iter().map(|&i| a.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let pb = Tensor::from_rows(&perm.iter().map(|&i| b.row(i).to_vec()).collect::<Vec<_>>()).unwrap();
        let (_, l) = sim(&a, &b, 0.1);
        let (_, lp) = sim(&pa, &pb, 0.1);
        assert!((l - lp).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn stronger_positive_lowers_loss(
            logits in proptest::collection::vec(-3.0f64..3.0, 36),
            row in 0usize..6,
            bump in 0.01f64..2.0,
        ) {
            let loss = |data: &[f64]| {
                let mut t = Tape::new();
                let s = t.constant(Tensor::matrix(6, 6, data.to_vec()).unwrap());
                let s = t.mask_diagonal(s).unwrap();
                let l = ntxent_loss(&mut t, SimilarityMatrix { logits: s, half: 3 }).unwrap();
                t.value(l).item()
            };
            let mut bumped = logits.clone();
            bumped[row * 6 + (row + 3) % 6] += bump;
            prop_assert!(loss(&bumped) < loss(&logits));
        }
    }

    #[test]
    fn anchor_policy_pairs() {
        let cfg = AlignmentConfig {
            tau: 0.1,
            pair_policy: PairPolicy::Anchor(1),
        };
        assert_eq!(cfg.pairs(4), vec![(0, 1), (1, 2), (1, 3)]);
        assert_eq!(AlignmentConfig::default().pairs(3), vec![(0, 1), (0, 2), (1, 2)]);
    }
}
