//! Acceptance suite: one test per criterion, named `cNN_...`, each printing a
//! single `[cNN] PASS|FAIL ...` line (visible with `--nocapture`).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use stcausal::access::{
    accessibility_differential, build_graph, decay_accessibility, default_mode_speeds,
    travel_times, Edge, Node, TravelTimeMatrix, Zone, ZoneKind, CONNECTOR_SPEED, DEFAULT_T0_LIST,
};
use stcausal::lagcorr::{correlation_profile, lagged_correlation, pearson, DEFAULT_LEVEL};
use stcausal::regimes::{
    kmeans, select_k, CentroidProfileRow, Elbow, PhaseCell, DEFAULT_ELBOW_RATIO,
};
use stcausal::{Dims, SpatioTemporalField};
use stcausal_cli::access_cmd::{cmd_access, EmpiricalRow};
use stcausal_cli::config::{AccessConfig, ProjectConfig, SweepConfig, WeightGrid};
use stcausal_cli::sweep::{cmd_sweep, run_profiles, CurveRow, PointProfileRow};
use stcausal_cli::{resolve_workers, TIMINGS};

fn report(id: &str, pass: bool, detail: String) {
    println!("[{id}] {} {detail}", if pass { "PASS" } else { "FAIL" });
    assert!(pass, "[{id}] {detail}");
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Textbook two-pass Pearson, written independently of the library.
fn naive_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

#[test]
fn c01_pearson_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let inputs: Vec<(Vec<f64>, Vec<f64>)> = (0..1000)
        .map(|_| {
            let n = rng.random_range(10..=10_000);
            let rho: f64 = rng.random_range(-0.95..0.95);
            let scale = 10f64.powi(rng.random_range(-3..=3));
            let shift = rng.random_range(-100.0..100.0);
            let x: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
            let y: Vec<f64> = x
                .iter()
                .map(|a| shift + scale * (rho * a + (1.0 - rho * rho).sqrt() * normal(&mut rng)))
                .collect();
            (x, y)
        })
        .collect();
    let start = Instant::now();
    let got: Vec<f64> = inputs
        .iter()
        .map(|(x, y)| pearson(x, y).unwrap().r)
        .collect();
    let elapsed = start.elapsed();
    let worst = inputs
        .iter()
        .zip(&got)
        .map(|((x, y), r)| (r - naive_pearson(x, y)).abs())
        .fold(0.0, f64::max);
    report(
        "c01",
        worst <= 1e-12 && elapsed < Duration::from_secs(5),
        format!(
            "max |r - oracle| = {worst:.2e} (tol 1e-12), {} ms for 1000 pairs (limit 5 s)",
            elapsed.as_millis()
        ),
    );
}

#[test]
fn c02_lag_antisymmetry() {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    let mut checked = 0;
    for _ in 0..100 {
        let dims = Dims::new(
            rng.random_range(5..30),
            rng.random_range(2..5),
            rng.random_range(12..20),
            rng.random_range(1..4),
        );
        let names = (0..dims.variables).map(|j| format!("v{j}")).collect();
        let mut f =
            SpatioTemporalField::from_fn(dims, names, |_, _, _, _| normal(&mut rng)).unwrap();
        for _ in 0..dims.len() / 20 {
            let (i, j, t, k) = (
                rng.random_range(0..dims.units),
                rng.random_range(0..dims.variables),
                rng.random_range(0..dims.times),
                rng.random_range(0..dims.replications),
            );
            f.set_missing(i, j, t, k);
        }
        let (a, b) = (0, rng.random_range(1..dims.variables));
        for tau in -5..=5 {
            let fwd = lagged_correlation(&f, a, b, tau).unwrap();
            let back = lagged_correlation(&f, b, a, -tau).unwrap();
            assert_eq!(fwd.n, back.n);
            worst = worst
                .max((fwd.r - back.r).abs())
                .max((fwd.p_value - back.p_value).abs());
            checked += 1;
        }
    }
    report(
        "c02",
        worst <= 1e-12,
        format!("{checked} lag pairs on 100 fields, max deviation {worst:.2e} (tol 1e-12)"),
    );
}

#[test]
fn c03_lag_recovery() {
    let mut hits = 0;
    let mut min_n = usize::MAX;
    for trial in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + trial);
        let (units, times) = (100, 60);
        let dims = Dims::new(units, 2, times, 1);
        let x1: Vec<f64> = (0..units * times).map(|_| normal(&mut rng)).collect();
        let mut f = SpatioTemporalField::empty(dims, vec!["x1".into(), "x2".into()]).unwrap();
        for i in 0..units {
            for t in 0..times {
                f.set(i, 0, t, 0, x1[t * units + i]).unwrap();
                let lagged = if t >= 3 {
                    x1[(t - 3) * units + i]
                } else {
                    normal(&mut rng)
                };
                f.set(i, 1, t, 0, 0.9 * lagged + normal(&mut rng)).unwrap();
            }
        }
        let profile = correlation_profile(&f, 0, 1, 5, DEFAULT_LEVEL).unwrap();
        let (tau, _) = profile.valid().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
        min_n = min_n.min(profile.get(3).unwrap().estimate.as_ref().unwrap().n);
        hits += (tau == 3) as usize;
    }
    report(
        "c03",
        hits >= 95 && min_n >= 5000,
        format!("argmax at tau=3 in {hits}/100 trials (need 95), pooled n >= {min_n}"),
    );
}

#[test]
fn c04_significance_calibration() {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let n = 200;
    let mut rejections = 0;
    let mut covered = 0;
    for _ in 0..1000 {
        let x: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let y: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        rejections += (pearson(&x, &y).unwrap().p_value < 0.05) as usize;
        let rho: f64 = 0.5;
        let x: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
        let y: Vec<f64> = x
            .iter()
            .map(|a| rho * a + (1.0 - rho * rho).sqrt() * normal(&mut rng))
            .collect();
        let e = pearson(&x, &y).unwrap();
        covered += (e.ci_low <= rho && rho <= e.ci_high) as usize;
    }
    let size = rejections as f64 / 1000.0;
    let coverage = covered as f64 / 1000.0;
    report(
        "c04",
        (0.03..=0.07).contains(&size) && (0.93..=0.97).contains(&coverage),
        format!("null rejection rate {size:.3} in [0.03, 0.07], 95% CI coverage at rho=0.5 {coverage:.3} in [0.93, 0.97]"),
    );
}

#[test]
fn c05_rbd_density_leads_distances() {
    let mut cfg = SweepConfig {
        weight_grid: WeightGrid::single([1.0, 0.0, 1.0]),
        replications: 20,
        ..Default::default()
    };
    cfg.rbd.grid_size = 30;
    cfg.rbd.steps = 50;
    let start = Instant::now();
    let out = run_profiles(&cfg, &[[1.0, 0.0, 1.0]]).remove(0).unwrap();
    let elapsed = start.elapsed();
    let peak = |label: &str, positive: bool| {
        let p = out.profiles.iter().find(|p| p.label() == label).unwrap();
        let pick = |a: &(i64, f64), b: &(i64, f64)| {
            if positive {
                a.1.total_cmp(&b.1)
            } else {
                b.1.total_cmp(&a.1)
            }
        };
        let (tau, r) = p.valid().max_by(pick).unwrap();
        let gated = p.get(tau).unwrap().estimate.as_ref().unwrap().gated;
        (tau, r, gated)
    };
    let (tc, rc, gc) = peak("dens->ctr", true);
    let (tr, rr, gr) = peak("dens->rd", false);
    let pass = tc >= 1
        && rc > 0.0
        && !gc
        && tr >= 1
        && rr < 0.0
        && !gr
        && elapsed < Duration::from_secs(120);
    report(
        "c05",
        pass,
        format!(
            "dens->ctr max r={rc:.4} at tau={tc} (significant: {}), dens->rd min r={rr:.4} at tau={tr} (significant: {}), {:.1} s",
            !gc,
            !gr,
            elapsed.as_secs_f64()
        ),
    );
}

/// Two desk-scale sweeps of the full grid with one master seed.
struct SweepRuns {
    dirs: [PathBuf; 2],
    durations: [Duration; 2],
    workers: [usize; 2],
    _tmp: tempfile::TempDir,
}

fn desk_sweeps() -> &'static SweepRuns {
    static RUNS: OnceLock<SweepRuns> = OnceLock::new();
    RUNS.get_or_init(|| {
        let tmp = tempfile::tempdir().unwrap();
        let dirs = [tmp.path().join("a"), tmp.path().join("b")];
        let base = resolve_workers(None);
        let workers = [base, base + 1];
        let mut durations = [Duration::ZERO; 2];
        for r in 0..2 {
            let cfg = SweepConfig {
                replications: 10,
                output_dir: dirs[r].clone(),
                master_seed: 2024,
                ..Default::default()
            };
            let start = Instant::now();
            let outcome = cmd_sweep(&cfg, workers[r]).unwrap();
            durations[r] = start.elapsed();
            assert!(outcome.failures.is_empty(), "{:?}", outcome.failures);
        }
        SweepRuns {
            dirs,
            durations,
            workers,
            _tmp: tmp,
        }
    })
}

fn read_csv<T: for<'de> serde::Deserialize<'de>>(path: &Path) -> Vec<T> {
    csv::Reader::from_path(path)
        .unwrap()
        .deserialize()
        .collect::<Result<_, _>>()
        .unwrap()
}

/// Same partition up to relabelling.
fn same_partition(a: &[usize], b: &[usize]) -> bool {
    let mut ab = BTreeMap::new();
    let mut ba = BTreeMap::new();
    a.iter()
        .zip(b)
        .all(|(x, y)| *ab.entry(x).or_insert(y) == y && *ba.entry(y).or_insert(x) == x)
}

#[test]
fn c06_clustering_properties() {
    // planted partitions in a 6-lag feature space
    let mut recovered = 0;
    let mut worst_bary: f64 = 0.0;
    for run in 0..100u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(6000 + run);
        let mut centers: Vec<Vec<f64>> = Vec::new();
        while centers.len() < 6 {
            let c: Vec<f64> = (0..6).map(|_| rng.random_range(-5i32..=5) as f64).collect();
            if centers
                .iter()
                .all(|o| o.iter().zip(&c).map(|(a, b)| (a - b).powi(2)).sum::<f64>() >= 16.0)
            {
                centers.push(c);
            }
        }
        let mut points = Vec::new();
        let mut truth = Vec::new();
        for (label, c) in centers.iter().enumerate() {
            for _ in 0..20 {
                points.push(
                    c.iter()
                        .map(|v| v + 0.25 * normal(&mut rng))
                        .collect::<Vec<f64>>(),
                );
                truth.push(label);
            }
        }
        let result = kmeans(&points, 6, 100, &mut rng).unwrap();
        recovered += same_partition(&result.assignments, &truth) as usize;
        for (c, centroid) in result.centroids.iter().enumerate() {
            let members: Vec<&Vec<f64>> = points
                .iter()
                .zip(&result.assignments)
                .filter(|(_, &a)| a == c)
                .map(|(p, _)| p)
                .collect();
            for d in 0..6 {
                let mean = members.iter().map(|p| p[d]).sum::<f64>() / members.len() as f64;
                worst_bary = worst_bary.max((mean - centroid[d]).abs());
            }
        }
    }

    // monotone variance curves and barycentric centroids on the sweep's features
    let runs = desk_sweeps();
    let profiles: Vec<PointProfileRow> = read_csv(&runs.dirs[0].join("profiles.csv"));
    let mut worst_profile_bary: f64 = 0.0;
    let mut worst_drop: f64 = 0.0;
    let mut curves = 0;
    for entry in std::fs::read_dir(&runs.dirs[0]).unwrap() {
        let dir = entry.unwrap().path();
        if !dir.is_dir() {
            continue;
        }
        let curve: Vec<CurveRow> = read_csv(&dir.join("variance_curve.csv"));
        for w in curve.windows(2) {
            worst_drop = worst_drop.max(w[0].fraction - w[1].fraction);
        }
        curves += 1;
        // centroid profiles are member means of the pooled profiles
        let diagram: Vec<PhaseCell> = read_csv(&dir.join("diagram.csv"));
        let cluster_of: BTreeMap<[u64; 3], usize> = diagram
            .iter()
            .map(|c| ([c.w_d, c.w_c, c.w_r].map(f64::to_bits), c.cluster))
            .collect();
        let mut sums: BTreeMap<(usize, String, i64), (f64, usize)> = BTreeMap::new();
        for row in &profiles {
            if let Some(r) = row.r {
                let cluster = cluster_of[&row.point().map(f64::to_bits)];
                let e = sums
                    .entry((cluster, format!("{}->{}", row.j1, row.j2), row.tau))
                    .or_insert((0.0, 0));
                e.0 += r;
                e.1 += 1;
            }
        }
        let centroids: Vec<CentroidProfileRow> = read_csv(&dir.join("centroids.csv"));
        assert_eq!(centroids.len(), sums.len());
        for c in &centroids {
            let (sum, n) = sums[&(c.cluster, c.pair.clone(), c.tau)];
            worst_profile_bary = worst_profile_bary.max((sum / n as f64 - c.r_mean).abs());
        }
    }
    let rate = recovered as f64 / 100.0;
    report(
        "c06",
        worst_drop <= 1e-9 && curves == 4 && rate >= 0.99 && worst_bary <= 1e-12 && worst_profile_bary <= 1e-12,
        format!(
            "sweep curves non-decreasing over {curves} thetas (max drop {worst_drop:.1e}, tol 1e-9); planted 6 clusters recovered in {:.0}% of 100 runs (need 99%); centroid-barycenter gap {worst_bary:.1e} in feature space, {worst_profile_bary:.1e} in profile space (tol 1e-12)",
            rate * 100.0
        ),
    );
}

#[test]
fn c07_elbow_rule() {
    let curve: Vec<(usize, f64)> = [0.0, 0.5, 0.75, 0.80, 0.82, 0.83]
        .iter()
        .enumerate()
        .map(|(i, &f)| (i + 1, f))
        .collect();
    let first = select_k(&curve, DEFAULT_ELBOW_RATIO).unwrap();
    let repeat = (0..10).all(|_| select_k(&curve, DEFAULT_ELBOW_RATIO).unwrap() == first);
    let linear: Vec<(usize, f64)> = (1..=10).map(|k| (k, 0.1 * k as f64)).collect();
    let flat = select_k(&linear, DEFAULT_ELBOW_RATIO).unwrap();
    report(
        "c07",
        first == Elbow { k: 3, found: true } && repeat && !flat.found,
        format!("synthetic curve -> k={} (found: {}), deterministic: {repeat}; linear curve -> k={} found: {}", first.k, first.found, flat.k, flat.found),
    );
}

fn node(id: u64, x: f64, y: f64, station: bool) -> Node {
    Node {
        id,
        x_km: x,
        y_km: y,
        is_station: station,
    }
}

fn edge(a: u64, b: u64, mode: &str) -> Edge {
    Edge {
        from: a,
        to: b,
        mode: mode.into(),
    }
}

fn zone(id: &str, x: f64, y: f64, kind: ZoneKind) -> Zone {
    Zone {
        zone: id.into(),
        x_km: x,
        y_km: y,
        kind,
    }
}

/// Minimum over every simple path, accumulated from the source.
fn path_oracle(n: usize, edges: &[(usize, usize, f64)], from: usize, to: usize) -> Option<f64> {
    let mut adj = vec![Vec::new(); n];
    for &(a, b, w) in edges {
        adj[a].push((b, w));
        adj[b].push((a, w));
    }
    let mut best: Option<f64> = None;
    let mut stack = vec![(from, 0.0, 1u32 << from)];
    while let Some((at, acc, seen)) = stack.pop() {
        if at == to {
            best = Some(best.map_or(acc, |b| b.min(acc)));
            continue;
        }
        for &(next, w) in &adj[at] {
            if seen & (1 << next) == 0 {
                stack.push((next, acc + w, seen | (1 << next)));
            }
        }
    }
    best
}

#[test]
fn c08_accessibility_oracle() {
    let modes = ["rer", "transilien", "metro", "tramway"];
    let speeds = default_mode_speeds();
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut graphs = 0;
    let mut mismatches = 0;
    let mut negative = 0;
    let mut pairs = 0;
    for g in 0..300 {
        let n: usize = rng.random_range(1..=5);
        let nodes: Vec<Node> = (0..n)
            .map(|i| {
                node(
                    i as u64,
                    rng.random_range(0.0..30.0),
                    rng.random_range(0.0..30.0),
                    i == 0 || rng.random_bool(0.5),
                )
            })
            .collect();
        let mut edges: Vec<Edge> = (1..n)
            .map(|i| {
                edge(
                    i as u64,
                    rng.random_range(0..i) as u64,
                    modes[rng.random_range(0..4)],
                )
            })
            .collect();
        for _ in 0..rng.random_range(0..=n) {
            let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
            if a != b {
                edges.push(edge(a as u64, b as u64, modes[rng.random_range(0..4)]));
            }
        }
        let zones: usize = 8 - n;
        let o: Vec<Zone> = (0..zones.div_ceil(2))
            .map(|i| {
                zone(
                    &format!("o{i}"),
                    rng.random_range(0.0..30.0),
                    rng.random_range(0.0..30.0),
                    ZoneKind::Origin,
                )
            })
            .collect();
        let d: Vec<Zone> = (0..zones / 2)
            .map(|i| {
                zone(
                    &format!("d{i}"),
                    rng.random_range(0.0..30.0),
                    rng.random_range(0.0..30.0),
                    ZoneKind::Destination,
                )
            })
            .collect();
        let graph = build_graph(&nodes, &edges, &speeds, &o, &d, CONNECTOR_SPEED).unwrap();
        assert!(graph.vertex_count() <= 8);
        let m = travel_times(&graph).unwrap();
        for oi in 0..o.len() {
            for di in 0..d.len() {
                let oracle = path_oracle(
                    graph.vertex_count(),
                    &graph.edge_list(),
                    graph.origin_vertex(oi),
                    graph.destination_vertex(di),
                );
                mismatches += (Some(m.get(oi, di)) != oracle) as usize;
            }
        }
        graphs += 1;
        if g < 100 {
            let mut more = edges.clone();
            for _ in 0..2 {
                let (a, b) = (rng.random_range(0..n), rng.random_range(0..n));
                more.push(edge(a as u64, b as u64, "rer"));
            }
            let project = build_graph(&nodes, &more, &speeds, &o, &d, CONNECTOR_SPEED).unwrap();
            for t0 in DEFAULT_T0_LIST {
                let dt = accessibility_differential(&project, &graph, t0).unwrap();
                negative += dt.dt.iter().filter(|&&v| v < 0.0).count();
                pairs += 1;
            }
        }
    }
    let m = TravelTimeMatrix {
        origins: vec!["o".into()],
        destinations: vec!["a".into(), "b".into()],
        times: vec![10.0, 20.0],
    };
    let t = decay_accessibility(&m, 10.0, "s").unwrap().t[0];
    let decay_err = (t - ((-1f64).exp() + (-2f64).exp())).abs();
    report(
        "c08",
        mismatches == 0 && decay_err <= 1e-9 && negative == 0,
        format!(
            "{graphs} graphs (<= 8 vertices) exact vs path enumeration: {mismatches} mismatches; decay error {decay_err:.1e} (tol 1e-9); {negative} negative dT over 100 graph pairs x {} t0 ({pairs} checks)",
            DEFAULT_T0_LIST.len()
        ),
    );
}

#[test]
fn c09_empirical_pipeline_ground_truth() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let mut rng = ChaCha8Rng::seed_from_u64(909);
    // a radial line from the center out to 40 km; zones scattered around it
    let nodes: Vec<Node> = (0..9).map(|i| node(i, i as f64 * 5.0, 0.0, true)).collect();
    let base_edges: Vec<Edge> = (0..8).map(|i| edge(i, i + 1, "tramway")).collect();
    let mut project_edges = base_edges.clone();
    project_edges.push(edge(0, 4, "rer"));
    project_edges.push(edge(4, 8, "rer"));
    let zones: Vec<Zone> = (0..300)
        .map(|i| {
            zone(
                &format!("z{i:03}"),
                rng.random_range(0.0..40.0),
                rng.random_range(-8.0..8.0),
                ZoneKind::Origin,
            )
        })
        .collect();
    let dests: Vec<Zone> = zones
        .iter()
        .map(|z| Zone {
            kind: ZoneKind::Destination,
            ..z.clone()
        })
        .collect();
    let speeds = default_mode_speeds();
    let base = build_graph(
        &nodes,
        &base_edges,
        &speeds,
        &zones,
        &dests,
        CONNECTOR_SPEED,
    )
    .unwrap();
    let project = build_graph(
        &nodes,
        &project_edges,
        &speeds,
        &zones,
        &dests,
        CONNECTOR_SPEED,
    )
    .unwrap();
    let dt = accessibility_differential(&project, &base, 40.0).unwrap();
    let sd = {
        let m = dt.dt.iter().sum::<f64>() / dt.dt.len() as f64;
        (dt.dt.iter().map(|v| (v - m).powi(2)).sum::<f64>() / dt.dt.len() as f64).sqrt()
    };
    let (first, years, date) = (2000i64, 15usize, 2007i64);
    let dims = Dims::new(zones.len(), 2, years, 1);
    let mut field = SpatioTemporalField::empty(dims, vec!["jobs".into(), "pop".into()])
        .unwrap()
        .with_time_origin(first)
        .with_unit_labels(dt.zones.clone())
        .unwrap();
    for i in 0..zones.len() {
        let mut level = 100.0;
        for t in 0..years {
            if t > 0 {
                let year = first + t as i64;
                let signal = if year == date + 2 { dt.dt[i] } else { 0.0 };
                level += signal + 0.3 * sd * normal(&mut rng);
            }
            field.set(i, 0, t, 0, level).unwrap();
            field.set(i, 1, t, 0, 50.0 + normal(&mut rng)).unwrap();
        }
    }
    let write = |name: &str, text: String| std::fs::write(root.join(name), text).unwrap();
    let mut w = csv::Writer::from_path(root.join("nodes.csv")).unwrap();
    nodes.iter().for_each(|n| w.serialize(n).unwrap());
    w.flush().unwrap();
    let mut w = csv::Writer::from_path(root.join("zones.csv")).unwrap();
    zones
        .iter()
        .chain(&dests)
        .for_each(|z| w.serialize(z).unwrap());
    w.flush().unwrap();
    for (name, edges) in [("base.csv", &base_edges), ("project.csv", &project_edges)] {
        let mut w = csv::Writer::from_path(root.join(name)).unwrap();
        edges.iter().for_each(|e| w.serialize(e).unwrap());
        w.flush().unwrap();
    }
    field
        .write_csv(std::fs::File::create(root.join("indicators.csv")).unwrap())
        .unwrap();
    write("indicators.json", field.metadata().to_json().unwrap());
    let cfg = AccessConfig {
        nodes: root.join("nodes.csv"),
        zones: root.join("zones.csv"),
        indicators: root.join("indicators.csv"),
        indicators_meta: root.join("indicators.json"),
        projects: vec![ProjectConfig {
            name: "line".into(),
            baseline_edges: root.join("base.csv"),
            project_edges: root.join("project.csv"),
            date,
        }],
        t0_list: DEFAULT_T0_LIST.to_vec(),
        tau_max: 4,
        alpha: 0.05,
        connector_speed: CONNECTOR_SPEED,
        mode_speeds: speeds,
    };
    let out = root.join("out");
    let outcome = cmd_access(&cfg, 1, &out).unwrap();
    assert!(outcome.failures.is_empty());
    let rows: Vec<EmpiricalRow> = read_csv(&out.join("empirical.csv"));
    let mut details = Vec::new();
    let mut pass = true;
    for t0 in DEFAULT_T0_LIST {
        let of_t0: Vec<&EmpiricalRow> = rows
            .iter()
            .filter(|r| r.t0 == t0 && r.indicator == "jobs")
            .collect();
        let best = of_t0
            .iter()
            .filter(|r| r.r.is_some())
            .max_by(|a, b| a.r.unwrap().total_cmp(&b.r.unwrap()))
            .unwrap();
        let ok = best.tau == 2 && best.r.unwrap() > 0.0 && best.gated == Some(false);
        pass &= ok;
        details.push(format!(
            "t0={t0}: peak r={:.3} at tau={} gated={:?}",
            best.r.unwrap(),
            best.tau,
            best.gated.unwrap()
        ));
    }
    report("c09", pass, details.join("; "));
}

#[test]
fn c10_full_sweep_determinism_and_scale() {
    let runs = desk_sweeps();
    let mut names: Vec<String> = Vec::new();
    let mut differing: Vec<String> = Vec::new();
    fn walk(dir: &Path, rel: &Path, out: &mut Vec<PathBuf>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let e = e.unwrap();
            let r = rel.join(e.file_name());
            if e.path().is_dir() {
                walk(&e.path(), &r, out);
            } else {
                out.push(r);
            }
        }
    }
    let mut files = [Vec::new(), Vec::new()];
    for r in 0..2 {
        walk(&runs.dirs[r], Path::new(""), &mut files[r]);
        files[r].sort();
        files[r].retain(|f| f != Path::new(TIMINGS));
    }
    for f in &files[0] {
        names.push(f.display().to_string());
        if std::fs::read(runs.dirs[0].join(f)).ok() != std::fs::read(runs.dirs[1].join(f)).ok() {
            differing.push(f.display().to_string());
        }
    }
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(runs.dirs[0].join("manifest.json")).unwrap())
            .unwrap();
    let points = manifest["summary"]["grid_points"].as_u64().unwrap();
    let limit = Duration::from_secs(15 * 60);
    let pass = files[0] == files[1]
        && differing.is_empty()
        && points == 1331
        && runs.durations.iter().all(|d| *d < limit);
    report(
        "c10",
        pass,
        format!(
            "{points} grid points x 10 replications; runs took {:.0} s ({} workers) and {:.0} s ({} workers), limit 900 s; {} files compared (timings excluded), {} differ",
            runs.durations[0].as_secs_f64(),
            runs.workers[0],
            runs.durations[1].as_secs_f64(),
            runs.workers[1],
            names.len(),
            differing.len()
        ),
    );
}
