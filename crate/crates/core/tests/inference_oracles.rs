mod common;

use std::collections::HashMap;

use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tempoquant::exact::{enumerate, exact_map, exact_posterior};
use tempoquant::mcmc::*;
use tempoquant::scalar::log_sum_exp;
use tempoquant::score::{beat, log_prior_score, Beat};
use tempoquant::smc::*;
use tempoquant::tempo::EventKind;
use tempoquant::Score;

fn expand_all(p: &Problem) -> ParticleSet<f64> {
    let config = SmcConfig {
        particles: 1,
        selection: Selection::ExpandAll,
        prune_threshold: 0.0,
    };
    run_filter(&p.model, &p.onsets, &config, beat(0, 1), 0).unwrap()
}

#[test]
fn expand_all_matches_enumeration() {
    for seed in 0..12 {
        let k = 1 + (seed as usize % 6);
        let p = small_problem(seed, k, 2 + (seed as usize % 2));
        let ps = expand_all(&p);
        let exact = enumerate(&p.model, &p.onsets, &p.supports, beat(0, 1)).unwrap();
        assert_eq!(ps.particles.len(), exact.len());
        let table: HashMap<Vec<Beat>, f64> = exact.iter().map(|(s, l)| (s.gammas.clone(), *l)).collect();
        for part in &ps.particles {
            let e = table[&part.gammas];
            assert!(rel_diff(part.log_weight, e) < 1e-9, "{} vs {}", part.log_weight, e);
        }
        let est = filter_estimate(&ps, &p.model).unwrap();
        let ex = exact_posterior(&p.model, &p.onsets, &p.supports, beat(0, 1)).unwrap();
        assert!((est.tau_mean - ex.tau_mean).abs() < 1e-9);
        assert!((est.tau_var - ex.tau_var).abs() < 1e-9);
        assert!((est.delta_mean - ex.delta_mean).abs() < 1e-9);
        assert!((est.delta_var - ex.delta_var).abs() < 1e-9);
        assert!(rel_diff(est.log_evidence, ex.log_evidence) < 1e-9);
        let (map, _) = exact_map(&p.model, &p.onsets, &p.supports, beat(0, 1)).unwrap();
        assert_eq!(map_extract(&ps), map);
    }
}

#[test]
fn weight_identity_holds_every_step() {
    let p = small_problem(3, 6, 3);
    let config = SmcConfig {
        particles: 20,
        selection: Selection::Multinomial,
        prune_threshold: 0.0,
    };
    let mut pf = ParticleFilter::new(p.model.clone(), config, beat(0, 1), 4);
    for (k, &y) in p.onsets.times.iter().enumerate() {
        let ps = pf.push(y, EventKind::Onset).unwrap();
        let w: f64 = ps.normalized_weights().iter().sum();
        assert!((w - 1.0).abs() < 1e-12);
        for part in &ps.particles {
            assert_eq!(part.gammas.len(), k);
            let prior = log_prior_score::<f64>(&Score::new(part.gammas.clone(), beat(0, 1)).unwrap(), &p.model.prior).unwrap();
            let lhs = part.phi.log_integral().unwrap() + prior;
            assert!(rel_diff(part.log_weight, lhs) < 1e-9);
            assert!(part.log_marginal >= part.log_weight);
        }
    }
}

#[test]
fn single_value_grid_is_the_clamped_filter() {
    let p = small_problem(5, 5, 1);
    let ps = expand_all(&p);
    assert_eq!(ps.particles.len(), 1);
    let msgs = p.model.messages(&p.truth.gammas, &p.onsets).unwrap();
    let a = ps.particles[0].phi.to_moments().unwrap();
    let b = msgs.forward.alpha_filt.last().unwrap().to_moments().unwrap();
    assert!((&a.mean - &b.mean).amax() < 1e-9);
    assert!((&a.cov - &b.cov).amax() < 1e-9);
    assert!(rel_diff(a.log_integral, b.log_integral) < 1e-9);
}

#[test]
fn seeded_runs_reproduce() {
    let p = small_problem(8, 6, 3);
    for sel in [Selection::Multinomial, Selection::Hybrid, Selection::Greedy] {
        let config = SmcConfig {
            particles: 7,
            selection: sel,
            prune_threshold: 1e-8,
        };
        let a = run_filter(&p.model, &p.onsets, &config, beat(0, 1), 99).unwrap();
        let b = run_filter(&p.model, &p.onsets, &config, beat(0, 1), 99).unwrap();
        assert_eq!(a, b);
    }
}

#[test]
fn greedy_keeps_best_distinct_extensions() {
    let p = small_problem(2, 4, 3);
    let config = SmcConfig {
        particles: 3,
        selection: Selection::Greedy,
        prune_threshold: 0.0,
    };
    let ps = run_filter(&p.model, &p.onsets, &config, beat(0, 1), 0).unwrap();
    assert_eq!(ps.particles.len(), 3);
    assert_eq!(ps.distinct().len(), 3);
    let hybrid = SmcConfig {
        selection: Selection::Hybrid,
        ..config
    };
    let h = run_filter(&p.model, &p.onsets, &hybrid, beat(0, 1), 0).unwrap();
    assert_eq!(h.particles.len(), 3);
}

fn brute_conditional(p: &Problem, score: &Score, start: usize, len: usize) -> Vec<(Vec<Beat>, f64)> {
    let all = enumerate(&p.model, &p.onsets, &p.supports, beat(0, 1)).unwrap();
    let rows: Vec<(Vec<Beat>, f64)> = all
        .into_iter()
        .filter(|(s, _)| {
            s.gammas
                .iter()
                .enumerate()
                .all(|(i, g)| (start..start + len).contains(&i) || *g == score.gammas[i])
        })
        .map(|(s, l)| (s.gammas[start..start + len].to_vec(), l))
        .collect();
    let z = log_sum_exp(rows.iter().map(|r| r.1));
    rows.into_iter().map(|(a, l)| (a, l - z)).collect()
}

#[test]
fn block_proposals_match_enumeration() {
    for seed in 0..10u64 {
        let p = small_problem(seed, 3, 2 + (seed as usize % 2));
        let state = SweepState::new(&p.model, &p.onsets, p.truth.clone()).unwrap();
        for len in 1..=2 {
            for start in 0..=(3 - len) {
                let prop = slice_proposal(&state, &p.model, &p.onsets, &p.supports, start, len).unwrap();
                let norm = prop.normalized(1.0);
                let brute = brute_conditional(&p, &p.truth, start, len);
                assert_eq!(brute.len(), prop.assignments.len());
                for (a, l) in brute {
                    let i = prop.assignments.iter().position(|x| *x == a).unwrap();
                    assert!((norm[i].exp() - l.exp()).abs() < 1e-9);
                }
            }
        }
    }
}

#[test]
fn last_slice_proposal_is_the_filter_step() {
    let p = small_problem(4, 3, 3);
    let state = SweepState::new(&p.model, &p.onsets, p.truth.clone()).unwrap();
    let prop = slice_proposal(&state, &p.model, &p.onsets, &p.supports, 2, 1).unwrap();
    let prefix = p.onsets.prefix(3);
    let mut pf = ParticleFilter::new(
        p.model.clone(),
        SmcConfig {
            particles: 1,
            selection: Selection::ExpandAll,
            prune_threshold: 0.0,
        },
        beat(0, 1),
        0,
    );
    // clamp the first two intervals by expanding on singleton grids
    let mut ps = pf.push(prefix.times[0], EventKind::Onset).unwrap().clone();
    for k in 1..3 {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        ps = rbpf_step(&ps, &p.model, prefix.times[k], EventKind::Onset, &[p.truth.gammas[k - 1]], &pf.config, &mut r).unwrap();
    }
    let mut r = ChaCha8Rng::seed_from_u64(0);
    let last = rbpf_step(&ps, &p.model, p.onsets.times[3], EventKind::Onset, p.model.grid(), &pf.config, &mut r).unwrap();
    for part in &last.particles {
        let g = *part.gammas.last().unwrap();
        let i = prop.assignments.iter().position(|a| a[0] == g).unwrap();
        assert!(rel_diff(prop.log_q[i], part.log_weight) < 1e-9);
    }
    pf.config.particles = 1;
}

#[test]
fn forward_cache_matches_fresh_pass_after_sweeps() {
    let p = small_problem(6, 6, 3);
    let mut state = SweepState::new(&p.model, &p.onsets, p.truth.clone()).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..5 {
        state = gibbs_sweep(&state, &p.model, &p.onsets, &p.supports, 2, 1.0, &mut r).unwrap();
        let msgs = p.model.messages(&state.score.gammas, &p.onsets).unwrap();
        for (a, b) in state.forward.iter().zip(&msgs.forward.alpha_filt) {
            let a = a.to_moments().unwrap();
            let b = b.to_moments().unwrap();
            assert!((&a.mean - &b.mean).amax() < 1e-8);
            assert!((a.log_integral - b.log_integral).abs() < 1e-8);
        }
        let fresh = p.model.log_joint(&state.score, &p.onsets).unwrap();
        assert!((fresh - state.log_posterior).abs() < 1e-8);
    }
}

#[test]
fn gibbs_frequencies_match_conditional() {
    let p = small_problem(12, 3, 2);
    let exact = enumerate(&p.model, &p.onsets, &p.supports, beat(0, 1)).unwrap();
    let z = log_sum_exp(exact.iter().map(|e| e.1));
    let mut marg: HashMap<Beat, f64> = HashMap::new();
    for (s, l) in &exact {
        *marg.entry(s.gammas[0]).or_default() += (l - z).exp();
    }
    let mut state = SweepState::new(&p.model, &p.onsets, p.truth.clone()).unwrap();
    let mut r = ChaCha8Rng::seed_from_u64(77);
    let sweeps = 20_000;
    let mut counts: HashMap<Beat, usize> = HashMap::new();
    for _ in 0..sweeps {
        state = gibbs_sweep(&state, &p.model, &p.onsets, &p.supports, 1, 1.0, &mut r).unwrap();
        *counts.entry(state.score.gammas[0]).or_default() += 1;
    }
    for (g, pr) in marg {
        let f = *counts.get(&g).unwrap_or(&0) as f64 / sweeps as f64;
        let se = (pr * (1.0 - pr) / sweeps as f64).sqrt();
        assert!((f - pr).abs() < 3.0 * se, "{g}: {f} vs {pr}");
    }
}

#[test]
fn optimizer_contracts() {
    for seed in 0..6u64 {
        let p = small_problem(seed, 5, 3);
        let greedy = greedy_score(&p.model, &p.onsets, beat(0, 1)).unwrap();
        let ii = run_ii(&p.model, &p.onsets, &p.supports, &greedy, 3, Reinit::SampleFromProposal, 1, seed, None).unwrap();
        let mut prev = ii.init_log_posterior.max(f64::NEG_INFINITY);
        let mut restart = 0;
        for row in &ii.trace {
            if row.restart != restart {
                restart = row.restart;
                prev = f64::NEG_INFINITY;
            }
            assert!(row.log_posterior >= prev - 1e-12);
            prev = row.log_posterior;
        }
        let sa = run_sa(&p.model, &p.onsets, &p.supports, &default_schedule(50), &greedy, 1, seed).unwrap();
        assert!(sa.best_log_posterior >= sa.init_log_posterior);
        let (map, map_lp) = exact_map(&p.model, &p.onsets, &p.supports, beat(0, 1)).unwrap();
        let fixed = run_ii(&p.model, &p.onsets, &p.supports, &map, 1, Reinit::GreedyFilter, 2, 0, None).unwrap();
        assert_eq!(fixed.best, map);
        assert!((fixed.best_log_posterior - map_lp).abs() < 1e-8);
    }
}

#[test]
fn restarts_find_the_map() {
    let p = small_problem(21, 4, 2);
    let (map, _) = exact_map(&p.model, &p.onsets, &p.supports, beat(0, 1)).unwrap();
    let init = initial_score(&p.model, &p.onsets, &Init::Random, beat(0, 1), 3).unwrap();
    let ii = run_ii(&p.model, &p.onsets, &p.supports, &init, 50, Reinit::SampleFromProposal, 1, 5, None).unwrap();
    assert_eq!(ii.best, map);
}

#[test]
fn refinement_on_reduced_space() {
    let p = small_problem(31, 5, 3);
    let (map, _) = exact_map(&p.model, &p.onsets, &p.supports, beat(0, 1)).unwrap();
    // supports built from the MAP and one competitor that differs in two slices
    let mut other = map.clone();
    for i in [1, 2] {
        other.gammas[i] = *p.supports[i].iter().find(|&&g| g != map.gammas[i]).unwrap();
    }
    let supports: Supports = (0..5)
        .map(|i| {
            let mut s = vec![map.gammas[i], other.gammas[i]];
            s.sort();
            s.dedup();
            s
        })
        .collect();
    let same = refine_reduced(&p.model, &p.onsets, &map, &supports, &RefineMode::IterativeImprovement, 1, 0).unwrap();
    assert_eq!(same.best, map);
    let improved = refine_reduced(&p.model, &p.onsets, &other, &supports, &RefineMode::IterativeImprovement, 2, 0).unwrap();
    assert!(improved.best_log_posterior > improved.init_log_posterior);
    let (reduced_map, _) = exact_map(&p.model, &p.onsets, &supports, beat(0, 1)).unwrap();
    assert_eq!(improved.best, reduced_map);
    let singleton: Supports = map.gammas.iter().map(|&g| vec![g]).collect();
    let noop = refine_reduced(&p.model, &p.onsets, &map, &singleton, &RefineMode::IterativeImprovement, 1, 0).unwrap();
    assert_eq!(noop.best, map);
}
