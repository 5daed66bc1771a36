//! Acceptance suite. Runs the reference experiment (N=1000, m=2, R=0.1,
//! L=1000, 100,000 steps, seeds 1-3, all five algorithms) through the normal
//! experiment pipeline and checks each criterion against the files it writes.
//! Prints one PASS/FAIL line per criterion and exits nonzero if any fails.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use ptsim::cli::{self, ExperimentSpec, RunSummary};
use ptsim::metrics::{self, percentile};
use ptsim::routing::{select_next_hop, Algorithm, RoutingPolicy};
use ptsim::{DeliveryTimeMode, NetworkTopology, SimConfig, SimState, TopologySource};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const SEEDS: [u64; 3] = [1, 2, 3];
const STEPS: u64 = 100_000;
const MAJORITY: usize = 2;
const STABLE: [Algorithm; 3] = [Algorithm::Std, Algorithm::Cd, Algorithm::Cdt];

struct Verdict {
    id: usize,
    title: &'static str,
    pass: bool,
    detail: String,
}

/// What the criteria need from one run, read back from its output files.
struct RunData {
    summary: RunSummary,
    delivery_times: Vec<u64>,
    /// `(step, window_mean)` rows with a finite window mean.
    window_means: Vec<(f64, f64)>,
}

fn spec_from(lines: &[String]) -> ExperimentSpec {
    cli::parse_config(&lines.join("\n")).expect("valid acceptance config")
}

fn reference_spec(out: &Path, algorithms: &str, seeds: &str) -> ExperimentSpec {
    spec_from(&[
        "nodes=1000".into(),
        "m=2".into(),
        "rate=0.1".into(),
        "queue_cap=1000".into(),
        format!("steps={STEPS}"),
        format!("algorithms={algorithms}"),
        format!("seeds={seeds}"),
        format!("out={}", out.display()),
    ])
}

fn read_run(dir: &Path) -> RunData {
    let summary = cli::read_summary(dir).expect("summary");
    let delivery_times = fs::read_to_string(dir.join("delivery_times.csv"))
        .expect("delivery_times.csv")
        .lines()
        .skip(1)
        .map(|l| l.parse().expect("integer delivery time"))
        .collect();
    let window_means = fs::read_to_string(dir.join("mean_delivery.csv"))
        .expect("mean_delivery.csv")
        .lines()
        .skip(1)
        .filter_map(|l| {
            let cols: Vec<&str> = l.split(',').collect();
            let step: f64 = cols[0].parse().ok()?;
            let window: f64 = cols[2].parse().ok()?;
            Some((step, window))
        })
        .collect();
    RunData {
        summary,
        delivery_times,
        window_means,
    }
}

fn count_seeds(f: impl Fn(u64) -> bool) -> usize {
    SEEDS.iter().filter(|&&s| f(s)).count()
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or("n/a".into(), |v| format!("{v:.3}"))
}

fn criterion_1(runs: &BTreeMap<(Algorithm, u64), RunData>) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for alg in Algorithm::ALL {
        let expect_jam = matches!(alg, Algorithm::RandomWalk | Algorithm::St);
        let flags: Vec<bool> = SEEDS
            .iter()
            .map(|&s| runs[&(alg, s)].summary.jam.jammed)
            .collect();
        pass &= flags.iter().all(|&j| j == expect_jam);
        let loads: Vec<String> = SEEDS
            .iter()
            .map(|&s| format!("{:.1}", runs[&(alg, s)].summary.steady_mean_load))
            .collect();
        parts.push(format!(
            "{alg} jam={flags:?} (want {expect_jam}) steady load [{}]",
            loads.join(", ")
        ));
    }
    Verdict {
        id: 1,
        title: "stability split",
        pass,
        detail: parts.join("; "),
    }
}

fn criterion_2(runs: &BTreeMap<(Algorithm, u64), RunData>) -> Verdict {
    let steady = |a, s| runs[&(a, s)].summary.steady_mean_load;
    let std_wins = count_seeds(|s| {
        steady(Algorithm::Std, s) < steady(Algorithm::Cd, s)
            && steady(Algorithm::Std, s) < steady(Algorithm::Cdt, s)
    });
    let seed_mean = |a| SEEDS.iter().map(|&s| steady(a, s)).sum::<f64>() / SEEDS.len() as f64;
    let (cd, cdt, std) = (
        seed_mean(Algorithm::Cd),
        seed_mean(Algorithm::Cdt),
        seed_mean(Algorithm::Std),
    );
    let gap = (cd - cdt).abs() / cd;
    Verdict {
        id: 2,
        title: "load ranking",
        pass: std_wins >= MAJORITY && gap <= 0.25,
        detail: format!(
            "STD smallest on {std_wins}/3 seeds (need {MAJORITY}); mean steady load STD {std:.1} \
             CD {cd:.1} CDT {cdt:.1}; |CD-CDT|/CD = {gap:.3} (need <= 0.25)"
        ),
    }
}

fn criterion_3(runs: &BTreeMap<(Algorithm, u64), RunData>) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for alg in STABLE {
        let slopes: Vec<Option<f64>> = SEEDS
            .iter()
            .map(|&s| runs[&(alg, s)].summary.spectrum_fit.map(|f| f.slope))
            .collect();
        let ok = slopes
            .iter()
            .filter(|v| v.is_some_and(|x| (-2.4..=-1.6).contains(&x)))
            .count();
        pass &= ok >= MAJORITY;
        let shown: Vec<String> = slopes.iter().map(|&v| fmt_opt(v)).collect();
        parts.push(format!(
            "{alg} slopes [{}] in range {ok}/3",
            shown.join(", ")
        ));
    }
    Verdict {
        id: 3,
        title: "load spectrum slope in [-2.4, -1.6]",
        pass,
        detail: parts.join("; "),
    }
}

fn criterion_4(runs: &BTreeMap<(Algorithm, u64), RunData>) -> Verdict {
    let slope = |a, s| runs[&(a, s)].summary.dt_tail_fit.map(|f| f.slope);
    let std_ok =
        count_seeds(|s| slope(Algorithm::Std, s).is_some_and(|x| (-1.8..=-1.2).contains(&x)));
    let cdt_faster = count_seeds(
        |s| match (slope(Algorithm::Cdt, s), slope(Algorithm::Std, s)) {
            (Some(c), Some(d)) => c <= d,
            _ => false,
        },
    );
    let (lo, hi) = cli::dt_tail_range(STEPS);
    let show = |a| {
        SEEDS
            .iter()
            .map(|&s| fmt_opt(slope(a, s)))
            .collect::<Vec<_>>()
            .join(", ")
    };
    Verdict {
        id: 4,
        title: "transmission-interval tail",
        pass: std_ok >= MAJORITY && cdt_faster >= MAJORITY,
        detail: format!(
            "fit over [{lo}, {hi}]: STD slopes [{}] in [-1.8, -1.2] on {std_ok}/3; CDT slopes [{}] \
             at least as steep on {cdt_faster}/3",
            show(Algorithm::Std),
            show(Algorithm::Cdt)
        ),
    }
}

fn criterion_5(
    runs: &BTreeMap<(Algorithm, u64), RunData>,
    no_bootstrap: &BTreeMap<u64, RunSummary>,
) -> Verdict {
    let at = |a, s| runs[&(a, s)].summary.learning_at_5000;
    let within = |v: Option<f64>, lo: f64, hi: f64| v.is_some_and(|x| x >= lo && x <= hi);
    let cd = count_seeds(|s| within(at(Algorithm::Cd, s), 0.85, 1.0));
    let cdt = count_seeds(|s| within(at(Algorithm::Cdt, s), 0.85, 1.0));
    let st = count_seeds(|s| within(at(Algorithm::St, s), 0.20, 0.50));
    let st_nb = count_seeds(|s| within(no_bootstrap[&s].learning_at_5000, 0.0, 0.12));
    let show = |f: &dyn Fn(u64) -> Option<f64>| {
        SEEDS
            .iter()
            .map(|&s| fmt_opt(f(s)))
            .collect::<Vec<_>>()
            .join(", ")
    };
    Verdict {
        id: 5,
        title: "learning at t=5000",
        pass: [cd, cdt, st, st_nb].iter().all(|&n| n >= MAJORITY),
        detail: format!(
            "CD [{}] >= 0.85 on {cd}/3; CDT [{}] >= 0.85 on {cdt}/3; ST [{}] in [0.20, 0.50] on \
             {st}/3; ST without bootstrap [{}] <= 0.12 on {st_nb}/3",
            show(&|s| at(Algorithm::Cd, s)),
            show(&|s| at(Algorithm::Cdt, s)),
            show(&|s| at(Algorithm::St, s)),
            show(&|s| no_bootstrap[&s].learning_at_5000),
        ),
    }
}

fn criterion_6(runs: &BTreeMap<(Algorithm, u64), RunData>) -> Verdict {
    let mut ok = 0;
    let mut parts = Vec::new();
    for s in SEEDS {
        let pooled: Vec<u64> = STABLE
            .iter()
            .flat_map(|&a| runs[&(a, s)].delivery_times.iter().copied())
            .collect();
        let cutoff = percentile(&pooled, 0.1).expect("deliveries");
        let frac = |a| metrics::fraction_at_most(&runs[&(a, s)].delivery_times, cutoff);
        let (std, cd, cdt) = (
            frac(Algorithm::Std),
            frac(Algorithm::Cd),
            frac(Algorithm::Cdt),
        );
        let std_largest = std > cd && std > cdt;
        let between = cdt >= std.min(cd) && cdt <= std.max(cd);
        let near = |x: f64| (cdt - x).abs() <= 0.1 * x;
        let seed_ok = std_largest && (between || near(std) || near(cd));
        ok += seed_ok as usize;
        parts.push(format!(
            "seed {s}: p10={cutoff} STD {std:.3} CD {cd:.3} CDT {cdt:.3}"
        ));
    }
    Verdict {
        id: 6,
        title: "short-delivery dominance",
        pass: ok >= MAJORITY,
        detail: format!("{} -> holds on {ok}/3", parts.join("; ")),
    }
}

fn criterion_7(runs: &BTreeMap<(Algorithm, u64), RunData>) -> Verdict {
    let mut pass = true;
    let mut parts = Vec::new();
    for alg in STABLE {
        let rel: Vec<f64> = SEEDS
            .iter()
            .map(|&s| {
                let tail: Vec<(f64, f64)> = runs[&(alg, s)]
                    .window_means
                    .iter()
                    .copied()
                    .filter(|&(step, _)| step > STEPS as f64 / 2.0)
                    .collect();
                let xs: Vec<f64> = tail.iter().map(|p| p.0).collect();
                let ys: Vec<f64> = tail.iter().map(|p| p.1).collect();
                let (slope, _) = metrics::linear_fit(&xs, &ys);
                (slope * 10_000.0).abs() / metrics::mean(ys.iter().copied())
            })
            .collect();
        let ok = rel.iter().filter(|&&r| r < 0.05).count();
        pass &= ok >= MAJORITY;
        let shown: Vec<String> = rel.iter().map(|r| format!("{r:.4}")).collect();
        parts.push(format!("{alg} [{}] < 0.05 on {ok}/3", shown.join(", ")));
    }
    Verdict {
        id: 7,
        title: "mean delivery time plateau (trend per 10k steps / mean)",
        pass,
        detail: parts.join("; "),
    }
}

fn files_in(dir: &Path) -> Vec<PathBuf> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .expect("run directory")
        .map(|e| e.expect("dir entry").path())
        .collect();
    out.sort();
    out
}

fn criterion_8(first: &Path, scratch: &Path) -> Verdict {
    let spec = reference_spec(scratch, "rw,st,std,cd,cdt", "1");
    cli::run_experiment(&spec).expect("rerun");
    let mut compared = 0;
    let mut mismatches = Vec::new();
    for alg in Algorithm::ALL {
        let rel = Path::new(alg.name()).join("seed-1");
        let (a, b) = (files_in(&first.join(&rel)), files_in(&scratch.join(&rel)));
        let names = |v: &[PathBuf]| {
            v.iter()
                .map(|p| p.file_name().unwrap().to_owned())
                .collect::<Vec<_>>()
        };
        if names(&a) != names(&b) {
            mismatches.push(format!("{alg}: file sets differ"));
            continue;
        }
        for (x, y) in a.iter().zip(&b) {
            compared += 1;
            if fs::read(x).unwrap() != fs::read(y).unwrap() {
                mismatches.push(x.display().to_string());
            }
        }
    }
    Verdict {
        id: 8,
        title: "determinism",
        pass: mismatches.is_empty() && compared > 0,
        detail: format!(
            "{compared} files compared, {} differ {mismatches:?}",
            mismatches.len()
        ),
    }
}

fn criterion_9() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut agree = 0;
    let mut first_miss = None;
    const CASES: usize = 1000;
    for case in 0..CASES {
        let inst = common::random_instance(&mut rng);
        let algorithm = Algorithm::ALL[case % Algorithm::ALL.len()];
        let bootstrap = rng.gen_bool(0.5);
        let policy = RoutingPolicy {
            algorithm,
            bootstrap,
        };
        let draw_seed: u64 = rng.gen();
        let mut ours = ChaCha8Rng::seed_from_u64(draw_seed);
        let mut theirs = ours.clone();
        let hop = select_next_hop(
            inst.center,
            inst.destination,
            &inst.topology,
            &inst.stats,
            policy,
            inst.now,
            &mut ours,
        )
        .expect("node has neighbors");
        let expected = common::oracle_next_hop(
            algorithm,
            bootstrap,
            inst.topology.neighbors_of(inst.center),
            &inst.degrees,
            &inst.stats,
            inst.destination,
            inst.now,
            &mut theirs,
        );
        // Same choice and the same number of random draws consumed.
        if hop.slot == expected && ours.gen::<u64>() == theirs.gen::<u64>() {
            agree += 1;
        } else if first_miss.is_none() {
            first_miss = Some(format!(
                "case {case}: {algorithm} got {} want {expected}",
                hop.slot
            ));
        }
    }
    Verdict {
        id: 9,
        title: "routing oracle",
        pass: agree == CASES,
        detail: format!(
            "{agree}/{CASES} agree{}",
            first_miss.map_or(String::new(), |m| format!("; {m}"))
        ),
    }
}

/// Replays a delivered packet's hop list from its source and checks that it
/// is a walk along existing edges ending at the destination.
fn valid_walk(topology: &NetworkTopology, packet: &ptsim::engine::Packet) -> bool {
    let mut at = packet.source;
    for edge in packet.hops() {
        if !topology.edge_range(at).contains(&edge) {
            return false;
        }
        at = topology.edge_target(edge);
    }
    at == packet.destination
}

fn criterion_10() -> Verdict {
    const NODES: usize = 50;
    const FUZZ_STEPS: u64 = 10_000;
    let topology = NetworkTopology::generate_ba(NODES, 2, 77).expect("topology");
    let mut violations = 0u64;
    let mut checked_steps = 0u64;
    let mut checked_paths = 0usize;
    let mut blocked = 0u64;
    // From lightly loaded to saturated, so that blocking and full queues occur.
    let rates = [0.5, 1.0, 1.5, 2.0, 4.0];
    for (i, algorithm) in Algorithm::ALL.into_iter().enumerate() {
        let config = SimConfig {
            topology: TopologySource::Generated { nodes: NODES, m: 2 },
            rate: rates[i],
            queue_cap: 12,
            steps: FUZZ_STEPS,
            algorithm,
            bootstrap: i % 2 == 0,
            seed: 1000 + i as u64,
            delivery_time_mode: if i % 2 == 0 {
                DeliveryTimeMode::Total
            } else {
                DeliveryTimeMode::Remaining
            },
            ..SimConfig::default()
        };
        let mut state = SimState::init(&config, &topology).expect("init");
        state.enable_trace();
        let mut seen = 0;
        while !state.is_finished() {
            state.step(&topology).expect("step");
            checked_steps += 1;
            let c = state.counters();
            let resident: usize = state
                .nodes()
                .iter()
                .map(|n| n.queue.len() + n.inbox.len())
                .sum();
            if c.created != c.delivered + state.in_flight() as u64 || resident != state.in_flight()
            {
                violations += 1;
            }
            violations += state
                .nodes()
                .iter()
                .filter(|n| n.queue.len() > config.queue_cap)
                .count() as u64;
            let delivered = state.delivered_packets();
            for p in &delivered[seen..] {
                checked_paths += 1;
                if !valid_walk(&topology, p) {
                    violations += 1;
                }
            }
            seen = delivered.len();
        }
        blocked += state.counters().blocked;
    }
    Verdict {
        id: 10,
        title: "conservation",
        pass: violations == 0 && checked_paths > 0,
        detail: format!(
            "{checked_steps} steps on {NODES} nodes, {checked_paths} delivered paths checked, \
             {blocked} blocked sends, {violations} violations"
        ),
    }
}

fn main() {
    let out = tempfile::tempdir().expect("temp dir");
    let main_dir = out.path().join("reference");
    let spec = reference_spec(&main_dir, "rw,st,std,cd,cdt", "1,2,3");
    let outcome = cli::run_experiment(&spec).expect("reference experiment");
    let runs: BTreeMap<(Algorithm, u64), RunData> = outcome
        .runs
        .iter()
        .map(|(dir, s)| ((s.algorithm, s.seed), read_run(dir)))
        .collect();

    let mut nb_spec = reference_spec(&out.path().join("no-bootstrap"), "st", "1,2,3");
    nb_spec.sim.bootstrap = false;
    nb_spec.sim.steps = cli::LEARNING_PROBE_STEP;
    let no_bootstrap: BTreeMap<u64, RunSummary> = cli::run_experiment(&nb_spec)
        .expect("no-bootstrap experiment")
        .runs
        .into_iter()
        .map(|(_, s)| (s.seed, s))
        .collect();

    let verdicts = vec![
        criterion_1(&runs),
        criterion_2(&runs),
        criterion_3(&runs),
        criterion_4(&runs),
        criterion_5(&runs, &no_bootstrap),
        criterion_6(&runs),
        criterion_7(&runs),
        criterion_8(&main_dir, &out.path().join("rerun")),
        criterion_9(),
        criterion_10(),
    ];
    let mut failed = 0;
    for v in &verdicts {
        println!(
            "{} [{:>2}] {}: {}",
            if v.pass { "PASS" } else { "FAIL" },
            v.id,
            v.title,
            v.detail
        );
        failed += (!v.pass) as usize;
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        verdicts.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
