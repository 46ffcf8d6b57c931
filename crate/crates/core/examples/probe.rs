use panelbin::effects::Smoother;
use panelbin::mc::*;
use std::time::Instant;

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let reps: usize = args.get(1).and_then(|v| v.parse().ok()).unwrap_or(25);
    let grid = default_grid_values();
    let kappas: Vec<f64> = args[2..].iter().map(|v| v.parse().unwrap()).collect();
    for kappa in kappas {
        let spec = DgpSpec::preset(DgpFamily::L1, reps, 1).unwrap();
        let est = EstimatorKind::Semiparametric {
            ell: 3,
            smoother: Smoother::LeastSquares,
            time_average: true,
            cv_grid: vec![0.75, 1.0, 1.25, 1.5, 1.75, 2.0],
            kappa: if kappa > 0.0 { Some(kappa) } else { None },
            monotone: false,
        };
        let t0 = Instant::now();
        let res = run_study(&spec, &[est], &grid).unwrap();
        let r = &res[0];
        println!(
            "kappa {kappa}: APE |bias| {:.4} sd {:.4} rmse {:.4} | ASF {:.4} {:.4} {:.4} | kappas {:?} | {:?}",
            r.ape.weighted_abs_bias,
            r.ape.weighted_sd,
            r.ape.weighted_rmse,
            r.asf.weighted_abs_bias,
            r.asf.weighted_sd,
            r.asf.weighted_rmse,
            r.records.iter().take(6).map(|x| x.kappa).collect::<Vec<_>>(),
            t0.elapsed()
        );
    }
}
