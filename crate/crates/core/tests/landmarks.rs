use nalgebra::Vector3;
use proptest::prelude::*;
use splatloc::landmarks::{select_landmarks, select_landmarks_reference, select_uniform, Candidate, Selection};

fn cands_from(raw: &[(f64, f64, f64, u8)]) -> Vec<Candidate> {
    raw.iter()
        .enumerate()
        .map(|(i, &(x, y, z, s))| Candidate {
            index: i,
            position: Vector3::new(x, y, z),
            // Coarse saliency levels so ties actually occur.
            saliency: s as f64 * 0.5,
        })
        .collect()
}

fn min_pairwise(sel: &Selection) -> f64 {
    let mut best = f64::INFINITY;
    for i in 0..sel.positions.len() {
        for j in i + 1..sel.positions.len() {
            let a = Vector3::from(sel.positions[i]);
            let b = Vector3::from(sel.positions[j]);
            best = best.min((a - b).norm());
        }
    }
    best
}

fn instance(max: usize) -> impl Strategy<Value = (Vec<(f64, f64, f64, u8)>, f64, usize)> {
    (
        prop::collection::vec((0.0..4.0f64, 0.0..4.0f64, 0.0..1.0f64, 0u8..8), 1..max),
        0.2..3.0f64,
        1usize..40,
    )
}

#[test]
fn stated_certificate_fails_on_a_line_but_refined_one_holds() {
    // Positions and saliencies chosen so that a candidate excluded at the
    // larger radius becomes admissible after halving, yet loses to an earlier
    // low-saliency pick.
    let layout = [(0.0, 10.0), (1.5, 9.0), (20.0, 9.8), (21.5, 9.5), (5.0, 1.0), (10.0, 0.5)];
    let cands: Vec<Candidate> = layout
        .iter()
        .enumerate()
        .map(|(i, &(x, s))| Candidate {
            index: i,
            position: Vector3::new(x, 0.0, 0.0),
            saliency: s,
        })
        .collect();
    let sel = select_landmarks(&cands, 2.0, 5).unwrap();
    assert_eq!(sel.indices, vec![0, 2, 4, 5, 3]);
    assert_eq!(sel.final_radius, 1.0);
    // Candidate 1 is farther than the final radius from all of S but more
    // salient than member 4.
    let y = &cands[1];
    assert!(sel
        .positions
        .iter()
        .all(|p| (Vector3::from(*p) - y.position).norm() > sel.final_radius));
    assert!(y.saliency > cands[4].saliency);
    assert!(refined_certificate(&cands, &sel));
}

/// Each member outranks every non-member that was admissible when the member
/// was accepted (farther than that pick's radius from all earlier picks).
fn refined_certificate(cands: &[Candidate], sel: &Selection) -> bool {
    let rank = |c: &Candidate| (c.saliency, std::cmp::Reverse(c.index));
    let members: Vec<&Candidate> = sel
        .indices
        .iter()
        .map(|&i| cands.iter().find(|c| c.index == i).unwrap())
        .collect();
    for (k, m) in members.iter().enumerate() {
        let r = sel.pick_radii[k];
        for c in cands.iter().filter(|c| !sel.indices.contains(&c.index)) {
            let admissible = members[..k].iter().all(|s| (s.position - c.position).norm() > r);
            if admissible && rank(c) > rank(m) {
                return false;
            }
        }
    }
    true
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matches_reference_simulation((raw, r0, n) in instance(30)) {
        let c = cands_from(&raw);
        prop_assert_eq!(select_landmarks(&c, r0, n).unwrap(), select_landmarks_reference(&c, r0, n).unwrap());
    }

    #[test]
    fn structural_properties((raw, r0, n) in instance(50), seed in any::<u64>()) {
        let c = cands_from(&raw);
        let sel = select_landmarks(&c, r0, n).unwrap();
        prop_assert_eq!(sel.indices.len(), n.min(c.len()));
        prop_assert!(min_pairwise(&sel) >= sel.final_radius);
        prop_assert!(refined_certificate(&c, &sel));

        // Input order must not matter.
        let mut shuffled = c.clone();
        use rand::{seq::SliceRandom, SeedableRng};
        shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(select_landmarks(&shuffled, r0, n).unwrap(), sel);
    }

    #[test]
    fn exhaustion_returns_everything((raw, r0, _n) in instance(30)) {
        let c = cands_from(&raw);
        let mut got = select_landmarks(&c, r0, c.len() + 3).unwrap().indices;
        got.sort_unstable();
        prop_assert_eq!(got, (0..c.len()).collect::<Vec<_>>());
    }

    #[test]
    fn single_pick_is_global_max((raw, r0, _n) in instance(30)) {
        let c = cands_from(&raw);
        let best = c.iter().max_by(|a, b| a.saliency.total_cmp(&b.saliency).then(b.index.cmp(&a.index))).unwrap();
        prop_assert_eq!(select_landmarks(&c, r0, 1).unwrap().indices, vec![best.index]);
    }

    #[test]
    fn uniform_subset_is_distinct((raw, _r0, n) in instance(30), seed in any::<u64>()) {
        let c = cands_from(&raw);
        let sel = select_uniform(&c, n, seed).unwrap();
        let mut ids = sel.indices.clone();
        ids.dedup();
        prop_assert_eq!(ids.len(), n.min(c.len()));
    }
}
