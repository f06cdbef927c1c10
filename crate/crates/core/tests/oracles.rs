use std::collections::VecDeque;

use coadapt_core::analysis::*;
use coadapt_core::envdata::*;
use coadapt_core::numerics::*;
use coadapt_core::stats::*;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Shortest number of moves from the start to any goal, walls blocking.
fn bfs_goal_distance(rows: &[&str]) -> Option<usize> {
    let grid: Vec<Vec<char>> = rows.iter().map(|r| r.chars().collect()).collect();
    let (h, w) = (grid.len(), grid[0].len());
    let mut start = (0, 0);
    for (y, row) in grid.iter().enumerate() {
        for (x, &c) in row.iter().enumerate() {
            if c == 'S' {
                start = (x, y);
            }
        }
    }
    let mut seen = vec![vec![false; w]; h];
    let mut queue = VecDeque::from([(start, 0usize)]);
    seen[start.1][start.0] = true;
    while let Some(((x, y), d)) = queue.pop_front() {
        if grid[y][x] == 'G' {
            return Some(d);
        }
        if grid[y][x] == 'L' {
            continue;
        }
        let moves = [(0i64, -1i64), (1, 0), (0, 1), (-1, 0)];
        for (dx, dy) in moves {
            let (nx, ny) = (x as i64 + dx, y as i64 + dy);
            if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                continue;
            }
            let (nx, ny) = (nx as usize, ny as usize);
            if grid[ny][nx] != '#' && !seen[ny][nx] {
                seen[ny][nx] = true;
                queue.push_back(((nx, ny), d + 1));
            }
        }
    }
    None
}

fn random_layout(rng: &mut ChaCha8Rng, w: usize, h: usize) -> Vec<String> {
    let mut rows: Vec<Vec<char>> = (0..h)
        .map(|_| (0..w).map(|_| if rng.random_bool(0.2) { '#' } else { '.' }).collect())
        .collect();
    rows[0][0] = 'S';
    rows[h - 1][w - 1] = 'G';
    rows.into_iter().map(|r| r.into_iter().collect()).collect()
}

#[test]
fn start_value_is_discounted_shortest_path() {
    let grid = GridSpec::from_ascii("open", &["S..", "...", "..G"], 0.9).unwrap();
    let q = value_iteration(&grid, 0.9, 1e-12).unwrap();
    assert!((q.value(grid.start_state()) - 0.729).abs() < 1e-9);

    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut checked = 0;
    while checked < 20 {
        let (w, h) = (rng.random_range(2..7), rng.random_range(2..7));
        let rows = random_layout(&mut rng, w, h);
        let refs: Vec<&str> = rows.iter().map(String::as_str).collect();
        let Some(d) = bfs_goal_distance(&refs) else {
            continue;
        };
        let gamma = [0.5, 0.9, 0.99][checked % 3];
        let grid = GridSpec::from_ascii("random", &refs, gamma).unwrap();
        let q = value_iteration(&grid, gamma, 1e-12).unwrap();
        let expected = gamma.powi(d as i32 - 1);
        assert!((q.value(grid.start_state()) - expected).abs() < 1e-9, "{rows:?}");
        assert_eq!(grid.goal_distance(), Some(d));
        checked += 1;
    }
}

#[test]
fn corridor_returns_by_hand() {
    let grid = GridSpec::from_ascii("corridor", &["S.G"], 0.9).unwrap();
    let q = value_iteration(&grid, 0.9, 1e-12).unwrap();
    let policy = make_behavior_policy(&q, 1.0).unwrap();
    let data = collect_dataset(&grid, &ObservationMap::one_hot(), &policy, 10, 20, 5).unwrap();
    let g = mc_returns(&data);
    for (t, ret) in data.transitions().iter().zip(&g) {
        let remaining = if t.terminal { 1 } else { 2 };
        assert!((ret - 0.9f64.powi(remaining - 1)).abs() < 1e-12);
    }
}

#[test]
fn returns_match_direct_sums() {
    let grid = GridSpec::from_ascii("open", &["S...", ".#..", "...G"], 0.95).unwrap();
    let q = value_iteration(&grid, 0.95, 1e-12).unwrap();
    let policy = make_behavior_policy(&q, 0.5).unwrap();
    let data = collect_dataset(&grid, &ObservationMap::one_hot(), &policy, 300, 15, 9).unwrap();
    let g = mc_returns(&data);
    for ep in data.episodes() {
        for t in ep.clone() {
            let direct: f64 = (t..ep.end)
                .map(|k| 0.95f64.powi((k - t) as i32) * data.transitions()[k].reward)
                .sum();
            assert!((g[t] - direct).abs() < 1e-12);
        }
    }
}

#[test]
fn cyclic_permutation_spectrum() {
    for n in 2..8 {
        let mut p = Matrix::zeros(n, n);
        for i in 0..n {
            p.row_mut(i)[(i + 1) % n] = 1.0;
        }
        let m = Matrix::identity(n).sub(&p.scale(0.9)).unwrap();
        let mut got = eig_complex(&m).unwrap();
        let mut want: Vec<Complex64> = (0..n)
            .map(|k| Complex64::new(1.0, 0.0) - 0.9 * Complex64::from_polar(1.0, 2.0 * std::f64::consts::PI * k as f64 / n as f64))
            .collect();
        let key = |z: &Complex64| (z.re * 1e6).round() as i64 * 10_000_000 + (z.im * 1e6).round() as i64;
        got.sort_by_key(key);
        want.sort_by_key(key);
        for (a, b) in got.iter().zip(&want) {
            assert!((a - b).norm() < 1e-8, "n={n}: {got:?} vs {want:?}");
        }

        let pair = FeaturePair::new(Matrix::identity(n), p.clone(), 0.9).unwrap();
        let rep = stability_spectrum(&pair, DEFAULT_STABILITY_TOL).unwrap();
        assert_eq!(rep.verdict, Verdict::Stable);
        assert!(rep.min_real_part >= 0.1 - 1e-9);
    }
}

#[test]
fn svd_of_known_matrices() {
    let s = svd_values(&Matrix::diag(&[3.0, -2.0, 1.0])).unwrap();
    assert!((s[0] - 3.0).abs() < 1e-12 && (s[1] - 2.0).abs() < 1e-12 && (s[2] - 1.0).abs() < 1e-12);
    // [[1,1],[0,1]] has singular values sqrt((3 ± sqrt 5) / 2), the golden ratio and its inverse
    let s = svd_values(&Matrix::from_rows(&[[1.0, 1.0], [0.0, 1.0]]).unwrap()).unwrap();
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    assert!((s[0] - phi).abs() < 1e-12 && (s[1] - 1.0 / phi).abs() < 1e-12);
}

#[test]
fn srank_by_hand() {
    assert_eq!(srank(&Matrix::diag(&[3.0, 2.0, 1.0]), 0.01).unwrap(), 3);
    assert_eq!(srank(&Matrix::diag(&[100.0, 1e-3]), 0.01).unwrap(), 1);
    assert_eq!(srank(&Matrix::diag(&[1.0, 1.0, 1.0, 1.0]), 0.5).unwrap(), 2);
}

#[test]
fn trace_condition_by_hand() {
    let scalar = FeaturePair::new(Matrix::from_rows(&[[1.0]]).unwrap(), Matrix::from_rows(&[[2.0]]).unwrap(), 0.9).unwrap();
    assert!(coadaptation_trace_test(&scalar).unwrap());
    let same = FeaturePair::new(Matrix::identity(3), Matrix::identity(3), 0.9).unwrap();
    assert!(!coadaptation_trace_test(&same).unwrap());
}

#[test]
fn iqm_and_improvement_by_hand() {
    assert_eq!(iqm(&[4.0, 1.0, 3.0, 2.0]).unwrap(), 2.5);
    assert_eq!(iqm(&[8.0, 1.0, 7.0, 2.0, 6.0, 3.0, 5.0, 4.0]).unwrap(), 4.5);
    assert_eq!(iqm(&[5.0, -100.0, 100.0]).unwrap(), 5.0 / 3.0);

    let x = RunScores::from_tasks([("t", vec![1.0, 2.0])]).unwrap();
    let y = RunScores::from_tasks([("t", vec![0.0, 3.0])]).unwrap();
    assert_eq!(prob_improvement(&x, &y).unwrap(), 0.5);
    let y = RunScores::from_tasks([("t", vec![1.0])]).unwrap();
    // one win and one tie out of two comparisons
    assert_eq!(prob_improvement(&x, &y).unwrap(), 0.75);
}
