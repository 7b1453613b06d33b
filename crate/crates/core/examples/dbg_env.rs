use nalgebra::DVector;
use riskbo::acquisition::{rho_kg, rho_kg_apx, AcqContext, InnerSolveConfig};
use riskbo::gp::{GaussianProcess, Hyperparameters, InputTransform, OutcomeTransform};
use riskbo::problems::{scaled_branin, toy_distribution};
use riskbo::qmc::{make_base_samples, sobol_points, WSource};
use riskbo::risk::RiskSpec;

fn joint_gp(n: usize, ls: f64, seed: u64) -> GaussianProcess {
    let unit = sobol_points(2, n, seed).unwrap();
    let targets = DVector::from_iterator(n, (0..n).map(|i| scaled_branin(unit[(i,0)], unit[(i,1)]).unwrap()));
    let hyper = Hyperparameters::new(DVector::from_column_slice(&[ls, ls]), 1.0, 1e-4).unwrap();
    GaussianProcess::with_hyperparameters(unit.clone(), &targets, hyper, InputTransform::identity(2), OutcomeTransform::from_data(&targets)).unwrap()
}

fn pearson_for(n: usize, ls: f64, k: usize, m: usize, cvar: bool, seed: u64) -> f64 {
    let gp = joint_gp(n, ls, seed);
    let wset = toy_distribution();
    let spec = if cvar { RiskSpec::cvar(0.7).unwrap() } else { RiskSpec::var(0.7).unwrap() };
    let base = make_base_samples(k, m, WSource::Full(&wset), 2024).unwrap();
    let opt = riskbo::optimize::OptimizerConfig::for_dims(1, 1);
    let inner = InnerSolveConfig::from_optimizer(&opt);
    let mut exact = Vec::new();
    let mut apx = Vec::new();
    let mut ctx = AcqContext::new(&gp, spec, &base, inner.clone()).unwrap();
    let apx_ctx = AcqContext::new(&gp, spec, &base, inner).unwrap();
    for i in 0..20 {
        for j in 0..20 {
            let c = [(i as f64 + 0.5) / 20.0, (j as f64 + 0.5) / 20.0];
            exact.push(rho_kg(&mut ctx, &c, true).unwrap().value);
            apx.push(rho_kg_apx(&apx_ctx, &c).unwrap().value);
        }
    }
    let nn = exact.len() as f64;
    let (me, ma) = (exact.iter().sum::<f64>()/nn, apx.iter().sum::<f64>()/nn);
    let (mut cov, mut ve, mut va) = (0.0, 0.0, 0.0);
    for i in 0..exact.len() {
        cov += (exact[i]-me)*(apx[i]-ma); ve += (exact[i]-me).powi(2); va += (apx[i]-ma).powi(2);
    }
    cov/(ve.sqrt()*va.sqrt())
}

fn main() {
    for (n, ls, k, m, cvar, seed) in [
        (16, 0.25, 3, 6, true, 7u64),
        (16, 0.35, 3, 6, false, 7),
        (20, 0.30, 3, 6, false, 7),
        (20, 0.30, 4, 8, false, 7),
        (20, 0.30, 4, 8, true, 7),
        (24, 0.30, 4, 8, false, 7),
        (16, 0.25, 4, 8, false, 11),
        (20, 0.30, 4, 8, false, 11),
    ] {
        println!("n={n} ls={ls} k={k} m={m} cvar={cvar} seed={seed}: pearson {:.4}", pearson_for(n, ls, k, m, cvar, seed));
    }
}
