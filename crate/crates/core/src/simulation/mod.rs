//! Monte Carlo harness: designs, method runners and the metrics table.

mod design;
mod metrics;

use std::fmt::Write as _;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use design::{DesignName, GammaEntry, SimulationDesign, Truth, WeakP1, WeakP2};
pub use metrics::{metric_suite, MethodMetrics, MethodRecord};

use crate::data::{Dataset, SelectionConfig};
use crate::error::{Error, Result};
use crate::estimation::post_selection_tsls;
use crate::selection::select_valid;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Oracle,
    Naive,
    Ahc,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::Oracle, Method::Naive, Method::Ahc];

    pub fn as_str(&self) -> &'static str {
        match self {
            Method::Oracle => "oracle",
            Method::Naive => "naive",
            Method::Ahc => "ahc",
        }
    }
}

impl FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(Method::Oracle),
            "naive" => Ok(Method::Naive),
            "ahc" => Ok(Method::Ahc),
            other => Err(Error::Config(format!(
                "unknown method '{other}'; valid methods: oracle, naive, ahc"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationReport {
    pub design: DesignName,
    pub n: usize,
    pub j: usize,
    pub p: usize,
    pub reps: usize,
    pub seed: u64,
    pub methods: Vec<MethodMetrics>,
}

/// RNG for replication `rep`: the seed picks the key, the replication
/// index picks the stream, so draws do not depend on scheduling.
pub fn replication_rng(seed: u64, rep: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(rep);
    rng
}

fn run_method(
    method: Method,
    data: &Dataset,
    truth: &Truth,
    config: &SelectionConfig,
) -> Result<MethodRecord> {
    let all: Vec<usize> = (0..data.j()).collect();
    let (valid, all_rejected, fit) = match method {
        Method::Oracle => (
            truth.oracle_valid.clone(),
            false,
            post_selection_tsls(data, &truth.oracle_valid)?,
        ),
        Method::Naive => (all.clone(), false, post_selection_tsls(data, &all)?),
        Method::Ahc => {
            let res = select_valid(data, config)?;
            (res.valid, res.all_rejected, res.fit)
        }
    };
    let invalid = all.into_iter().filter(|i| !valid.contains(i)).collect();
    Ok(MethodRecord {
        se: fit.std_errors(),
        beta: fit.beta,
        valid,
        invalid,
        all_rejected,
    })
}

/// Per-replication outcome of every requested method, in method order.
pub fn run_replication(
    design: &SimulationDesign,
    seed: u64,
    rep: u64,
    methods: &[Method],
    config: &SelectionConfig,
) -> Vec<Result<MethodRecord>> {
    let mut rng = replication_rng(seed, rep);
    let data = design.generate(&mut rng);
    let truth = design.truth();
    methods
        .iter()
        .map(|&m| run_method(m, &data, &truth, config))
        .collect()
}

pub fn run_monte_carlo(
    design: &SimulationDesign,
    reps: usize,
    seed: u64,
    methods: &[Method],
) -> Result<SimulationReport> {
    run_monte_carlo_with(
        design,
        reps,
        seed,
        methods,
        &SelectionConfig::default(),
        None,
    )
}

/// As [`run_monte_carlo`] with an explicit selection config and worker
/// count (`None` uses the global pool).
pub fn run_monte_carlo_with(
    design: &SimulationDesign,
    reps: usize,
    seed: u64,
    methods: &[Method],
    config: &SelectionConfig,
    workers: Option<usize>,
) -> Result<SimulationReport> {
    if reps == 0 {
        return Err(Error::Config("reps must be at least 1".into()));
    }
    if methods.is_empty() {
        return Err(Error::Config("no methods requested".into()));
    }
    config.check(design.j)?;
    let one = |rep: usize| run_replication(design, seed, rep as u64, methods, config);

    #[cfg(feature = "parallel")]
    let outcomes: Vec<Vec<Result<MethodRecord>>> = {
        use rayon::prelude::*;
        let work = || (0..reps).into_par_iter().map(one).collect();
        match workers {
            Some(w) => rayon::ThreadPoolBuilder::new()
                .num_threads(w.max(1))
                .build()
                .map_err(|e| Error::Config(format!("worker pool: {e}")))?
                .install(work),
            None => work(),
        }
    };
    #[cfg(not(feature = "parallel"))]
    let outcomes: Vec<Vec<Result<MethodRecord>>> = {
        let _ = workers;
        (0..reps).map(one).collect()
    };

    let truth = design.truth();
    let metrics = methods
        .iter()
        .enumerate()
        .map(|(i, m)| {
            let mut ok = Vec::with_capacity(reps);
            let mut failures = 0;
            for rep in &outcomes {
                match &rep[i] {
                    Ok(r) => ok.push(r.clone()),
                    Err(_) => failures += 1,
                }
            }
            metric_suite(m.as_str(), &ok, failures, &truth)
        })
        .collect();
    Ok(SimulationReport {
        design: design.name,
        n: design.n,
        j: design.j,
        p: design.p,
        reps,
        seed,
        methods: metrics,
    })
}

impl SimulationReport {
    /// Fixed-width table, one row per method.
    pub fn to_table(&self) -> String {
        let weak = matches!(self.design, DesignName::WeakP1(_) | DesignName::WeakP2(_));
        let mut cols = vec!["MAE", "SD", "# invalid", "p allinv", "Coverage", "p oracle"];
        if weak {
            cols.extend(["strongvalid", "weakin", "weakva"]);
        }
        let mut out = String::new();
        let _ = writeln!(
            out,
            "design {}  n={}  J={}  P={}  reps={}  seed={}",
            self.design, self.n, self.j, self.p, self.reps, self.seed
        );
        let _ = write!(out, "{:<8}", "method");
        for c in &cols {
            let _ = write!(out, "{c:>12}");
        }
        let _ = writeln!(out, "{:>10}", "failed");
        let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.3}"));
        for m in &self.methods {
            let _ = write!(out, "{:<8}", m.method);
            let mut vals = vec![m.mae, m.sd, m.n_invalid, m.p_allinv, m.coverage, m.p_oracle];
            if weak {
                vals.extend([m.strongvalid, m.weakin, m.weakva]);
            }
            for v in vals {
                let _ = write!(out, "{:>12}", cell(v));
            }
            let _ = writeln!(out, "{:>10}", m.failures);
        }
        out
    }
}
