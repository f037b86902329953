// Scratch probe for benchmark tuning (removed before release).

use slowcv::datagen::{four_state_spec, two_state_spec};
use slowcv::evaluation::{DataSource, MethodConfig, MethodKind, ProtocolConfig};
use slowcv::neural::TrainConfig;

fn main() {
    let which = std::env::args().nth(1).unwrap_or_else(|| "two".into());
    let reps: usize = std::env::args()
        .nth(2)
        .and_then(|s| s.parse().ok())
        .unwrap_or(3);

    let (spec, dim, hidden, lags) = if which == "two" {
        (two_state_spec(), 1usize, vec![50usize], vec![1usize, 5])
    } else {
        (four_state_spec(), 2, vec![100], vec![1])
    };
    let n_ts = spec.n_states() - 1;

    let mut cfg = ProtocolConfig::new(
        DataSource::Hmm {
            spec,
            length: 100_000,
        },
        vec![
            MethodConfig {
                label: "tae".into(),
                kind: MethodKind::Tae {
                    dim,
                    hidden,
                    train: TrainConfig::default(),
                },
            },
            MethodConfig {
                label: "tica".into(),
                kind: MethodKind::Tica {
                    dim,
                    kinetic_map: true,
                },
            },
            MethodConfig {
                label: "pca".into(),
                kind: MethodKind::Pca { dim },
            },
        ],
        lags.clone(),
    );
    cfg.repetitions = reps;
    cfg.msm.lags = vec![1, 2, 5, 10];
    cfg.msm.n_timescales = n_ts.min(3);

    let t0 = std::time::Instant::now();
    let summary = slowcv::evaluation::run_protocol(&cfg).unwrap();
    println!("elapsed: {:.1?}s", t0.elapsed());
    println!("reference: {:?}", summary.reference_timescales);
    println!("failures: {:?}", summary.failures.len());
    for (mi, m) in summary.methods.iter().enumerate() {
        let _ = mi;
        for lag in &lags {
            let r = &summary.reconstruction_error[m][lag];
            let c = &summary.cca_score[m][lag];
            println!(
                "{m} lag {lag}: recon median {:.4} [{:.4},{:.4}]  cca {:.4} [{:.4},{:.4}]",
                r.median, r.p16, r.p84, c.median, c.p16, c.p84
            );
        }
        for (mlag, stats) in &summary.implied_timescales[m] {
            let desc: Vec<String> = stats
                .iter()
                .map(|s| format!("t{}={:.1} (inv {})", s.index, s.median, s.n_invalid))
                .collect();
            println!("{m} msm lag {mlag}: {}", desc.join("  "));
        }
    }

    // Paired per-repetition slowest-timescale values at msm lag 1.
    for m in &summary.methods {
        if let Some(lag1) = summary.implied_timescales[m].get(&1) {
            println!("{m} t1 per rep: {:?}", lag1[0].values);
        }
    }
}
