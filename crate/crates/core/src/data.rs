//! Sampled datasets and the block data matrices built from them.
//!
//! For node `i` and sample `k`, `zbar_i[k] = x+_k[i] - alpha x_k[i]` is the
//! measured activation. Samples where the activation sits on a rail (0 or s)
//! carry no information about `[W B]` and are masked out: `Z_i` is the
//! masked row `zbar_i` and `Q_i` stacks the masked regressors `p_k = (x_k, u_k)`.
//! Noise-free data therefore satisfy `Z_i = [W B]_i Q_i^T`.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{uniform, DisturbanceSpec, DisturbanceStream, LtnSystem};
use crate::util::{min_norm_solve, numerical_rank};
use crate::{LtnError, Result};

pub const DEFAULT_EPS_SAT: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct DataSet {
    pub x: Vec<DVector<f64>>,
    pub u: Vec<DVector<f64>>,
    pub x_plus: Vec<DVector<f64>>,
}

#[derive(Serialize, Deserialize)]
struct DataSetJson {
    #[serde(rename = "T_d")]
    t_d: usize,
    x: Vec<Vec<f64>>,
    u: Vec<Vec<f64>>,
    x_plus: Vec<Vec<f64>>,
}

impl DataSet {
    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn n(&self) -> usize {
        self.x.first().map_or(0, |v| v.len())
    }

    pub fn m(&self) -> usize {
        self.u.first().map_or(0, |v| v.len())
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.x.len();
        if t == 0 {
            return Err(LtnError::Dimension("dataset is empty".into()));
        }
        if self.u.len() != t || self.x_plus.len() != t {
            return Err(LtnError::Dimension("x, u and x_plus must have the same sample count".into()));
        }
        let (n, m) = (self.n(), self.m());
        if n == 0 || m == 0 {
            return Err(LtnError::Dimension("state and input dimensions must be positive".into()));
        }
        for k in 0..t {
            if self.x[k].len() != n || self.x_plus[k].len() != n || self.u[k].len() != m {
                return Err(LtnError::Dimension(format!("sample {} has inconsistent dimensions", k + 1)));
            }
        }
        Ok(())
    }

    /// Append the samples of `other`.
    pub fn extend(&mut self, other: &DataSet) {
        self.x.extend(other.x.iter().cloned());
        self.u.extend(other.u.iter().cloned());
        self.x_plus.extend(other.x_plus.iter().cloned());
    }

    pub fn truncated(&self, len: usize) -> DataSet {
        DataSet {
            x: self.x[..len].to_vec(),
            u: self.u[..len].to_vec(),
            x_plus: self.x_plus[..len].to_vec(),
        }
    }

    pub fn to_json(&self) -> String {
        let rows = |v: &[DVector<f64>]| v.iter().map(|x| x.iter().copied().collect()).collect();
        let j = DataSetJson {
            t_d: self.len(),
            x: rows(&self.x),
            u: rows(&self.u),
            x_plus: rows(&self.x_plus),
        };
        serde_json::to_string_pretty(&j).expect("serializable")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let j: DataSetJson = serde_json::from_str(text)?;
        let vecs = |v: Vec<Vec<f64>>| v.into_iter().map(DVector::from_vec).collect::<Vec<_>>();
        let ds = DataSet {
            x: vecs(j.x),
            u: vecs(j.u),
            x_plus: vecs(j.x_plus),
        };
        if ds.len() != j.t_d {
            return Err(LtnError::Dimension(format!("T_d = {} but {} samples given", j.t_d, ds.len())));
        }
        ds.validate()?;
        Ok(ds)
    }
}

/// Disturbance applied while collecting data.
#[derive(Debug, Clone, Copy)]
pub struct DataNoise {
    pub spec: DisturbanceSpec,
    pub seed: u64,
}

/// `T_d` independent samples with `x` uniform on `x_box^n` and `u` uniform on
/// `u_box^m`.
pub fn collect_random_dataset(
    sys: &LtnSystem,
    t_d: usize,
    x_box: (f64, f64),
    u_box: (f64, f64),
    seed: u64,
    noise: Option<DataNoise>,
) -> Result<DataSet> {
    if t_d < 1 {
        return Err(LtnError::InvalidParameter("T_d must be at least 1".into()));
    }
    for (name, (lo, hi)) in [("state", x_box), ("input", u_box)] {
        if !(lo <= hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(LtnError::InvalidParameter(format!("empty {name} box [{lo}, {hi}]")));
        }
    }
    let ub = sys.state_upper_bound();
    if x_box.0 < 0.0 || x_box.1 > ub + 1e-9 {
        return Err(LtnError::InvalidParameter(format!(
            "state box [{}, {}] leaves the admissible range [0, {ub}]",
            x_box.0, x_box.1
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stream = noise.map(|d| DisturbanceStream::new(d.spec, d.seed));
    let (n, m) = (sys.n(), sys.m());
    let mut ds = DataSet {
        x: Vec::with_capacity(t_d),
        u: Vec::with_capacity(t_d),
        x_plus: Vec::with_capacity(t_d),
    };
    for _ in 0..t_d {
        let x = DVector::from_fn(n, |_, _| uniform(&mut rng, x_box.0, x_box.1).min(ub));
        let u = DVector::from_fn(m, |_, _| uniform(&mut rng, u_box.0, u_box.1));
        let xp = match stream.as_mut() {
            Some(s) => sys.step_with_disturbance(&x, &u, &s.next(n))?,
            None => sys.step(&x, &u)?,
        };
        ds.x.push(x);
        ds.u.push(u);
        ds.x_plus.push(xp);
    }
    Ok(ds)
}

/// Row of sample-major ordering: `(k - 1) n + i`, all indices 1-based.
pub fn sample_major_row(i: usize, k: usize, n: usize, t_d: usize) -> Result<usize> {
    check_node_sample(i, k, n, t_d)?;
    Ok((k - 1) * n + i)
}

/// Node-major row that sample-major row `(k - 1) n + i` is permuted to:
/// `(i - 1) T_d + k`, all indices 1-based.
pub fn permuted_row_index(i: usize, k: usize, n: usize, t_d: usize) -> Result<usize> {
    check_node_sample(i, k, n, t_d)?;
    Ok((i - 1) * t_d + k)
}

/// Map a sample-major row to its node-major row.
pub fn permute_row(row: usize, n: usize, t_d: usize) -> Result<usize> {
    if row < 1 || row > n * t_d {
        return Err(LtnError::InvalidParameter(format!("row {row} outside 1..={}", n * t_d)));
    }
    let (k, i) = ((row - 1) / n + 1, (row - 1) % n + 1);
    permuted_row_index(i, k, n, t_d)
}

/// Inverse of [`permute_row`].
pub fn unpermute_row(row: usize, n: usize, t_d: usize) -> Result<usize> {
    if row < 1 || row > n * t_d {
        return Err(LtnError::InvalidParameter(format!("row {row} outside 1..={}", n * t_d)));
    }
    let (i, k) = ((row - 1) / t_d + 1, (row - 1) % t_d + 1);
    sample_major_row(i, k, n, t_d)
}

fn check_node_sample(i: usize, k: usize, n: usize, t_d: usize) -> Result<()> {
    if i < 1 || i > n || k < 1 || k > t_d {
        return Err(LtnError::InvalidParameter(format!(
            "(node {i}, sample {k}) outside 1..={n} x 1..={t_d}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct DataMatrices {
    pub n: usize,
    pub m: usize,
    pub t_d: usize,
    pub alpha: f64,
    pub s: f64,
    pub eps_sat: f64,
    /// `n x T_d`, row `i` is `zbar_i`.
    pub z_bar: DMatrix<f64>,
    /// `n x T_d`, true where the activation sits on a rail.
    pub sat_mask: Vec<Vec<bool>>,
    /// `Z_i`, each of length `T_d`.
    pub z_blocks: Vec<DVector<f64>>,
    /// `Q_i`, each `T_d x (n + m)`.
    pub q_blocks: Vec<DMatrix<f64>>,
    pub node_ranks: Vec<usize>,
    /// Rank of `blockdiag(Q_1..Q_n)`.
    pub richness_rank: usize,
}

pub fn build_data_matrices(ds: &DataSet, alpha: f64, s: f64, eps_sat: f64) -> Result<DataMatrices> {
    ds.validate()?;
    if !(eps_sat >= 0.0) {
        return Err(LtnError::InvalidParameter("eps_sat must be non-negative".into()));
    }
    let (n, m, t_d) = (ds.n(), ds.m(), ds.len());
    let z_bar = DMatrix::from_fn(n, t_d, |i, k| ds.x_plus[k][i] - alpha * ds.x[k][i]);
    let mut sat_mask = vec![vec![false; t_d]; n];
    let mut z_blocks = Vec::with_capacity(n);
    let mut q_blocks = Vec::with_capacity(n);
    let mut node_ranks = Vec::with_capacity(n);
    for i in 0..n {
        let mut z = DVector::zeros(t_d);
        let mut q = DMatrix::zeros(t_d, n + m);
        for k in 0..t_d {
            let v = z_bar[(i, k)];
            let saturated = v.abs() <= eps_sat || (v - s).abs() <= eps_sat;
            sat_mask[i][k] = saturated;
            if saturated {
                continue;
            }
            z[k] = v;
            for j in 0..n {
                q[(k, j)] = ds.x[k][j];
            }
            for j in 0..m {
                q[(k, n + j)] = ds.u[k][j];
            }
        }
        node_ranks.push(numerical_rank(&q));
        z_blocks.push(z);
        q_blocks.push(q);
    }
    let richness_rank = node_ranks.iter().sum();
    Ok(DataMatrices {
        n,
        m,
        t_d,
        alpha,
        s,
        eps_sat,
        z_bar,
        sat_mask,
        z_blocks,
        q_blocks,
        node_ranks,
        richness_rank,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RichnessReport {
    pub pass: bool,
    pub required_rank: usize,
    pub node_ranks: Vec<usize>,
    /// Unmasked sample count per node.
    pub node_samples: Vec<usize>,
    /// 1-based nodes whose block is rank deficient.
    pub deficient_nodes: Vec<usize>,
}

impl std::fmt::Display for RichnessReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, (r, k)) in self.node_ranks.iter().zip(&self.node_samples).enumerate() {
            writeln!(f, "node {}: rank {r}/{} ({k} unmasked samples)", i + 1, self.required_rank)?;
        }
        if self.pass {
            write!(f, "richness: pass")
        } else {
            write!(f, "richness: FAIL (deficient nodes {:?})", self.deficient_nodes)
        }
    }
}

pub fn check_richness(dm: &DataMatrices) -> RichnessReport {
    let required = dm.n + dm.m;
    let deficient: Vec<usize> = dm
        .node_ranks
        .iter()
        .enumerate()
        .filter(|(_, &r)| r < required)
        .map(|(i, _)| i + 1)
        .collect();
    RichnessReport {
        pass: deficient.is_empty(),
        required_rank: required,
        node_ranks: dm.node_ranks.clone(),
        node_samples: dm
            .sat_mask
            .iter()
            .map(|row| row.iter().filter(|&&b| !b).count())
            .collect(),
        deficient_nodes: deficient,
    }
}

impl DataMatrices {
    pub fn richness(&self) -> RichnessReport {
        check_richness(self)
    }

    fn require_rich(&self) -> Result<()> {
        let rep = self.richness();
        if rep.pass {
            Ok(())
        } else {
            Err(LtnError::Richness(format!(
                "nodes {:?} have rank below {}",
                rep.deficient_nodes, rep.required_rank
            )))
        }
    }

    /// `Z X` for a stacked block matrix `X` (blocks `T_d x c`): row `i` is `Z_i X_i`.
    pub fn z_times(&self, blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
        let c = blocks.first().map_or(0, |b| b.ncols());
        let mut out = DMatrix::zeros(self.n, c);
        for (i, (z, x)) in self.z_blocks.iter().zip(blocks).enumerate() {
            out.set_row(i, &(z.transpose() * x));
        }
        out
    }

    /// `Q_i^T X_i` for every node.
    pub fn qt_times(&self, blocks: &[DMatrix<f64>]) -> Vec<DMatrix<f64>> {
        self.q_blocks.iter().zip(blocks).map(|(q, x)| q.transpose() * x).collect()
    }

    /// Minimum-norm blocks `X_i` with `Q_i^T X_i = target` for every node.
    pub fn solve_blocks(&self, target: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
        if target.nrows() != self.n + self.m {
            return Err(LtnError::Dimension(format!(
                "target must have n + m = {} rows, got {}",
                self.n + self.m,
                target.nrows()
            )));
        }
        self.require_rich()?;
        let scale = target.norm().max(1.0);
        let mut out = Vec::with_capacity(self.n);
        for (i, q) in self.q_blocks.iter().enumerate() {
            let qt = q.transpose();
            let x = min_norm_solve(&qt, target);
            let resid = (&qt * &x - target).norm();
            if resid > 1e-10 * scale * q.norm().max(1.0) {
                return Err(LtnError::Numerical(format!(
                    "node {}: block solve residual {resid:.3e}",
                    i + 1
                )));
            }
            out.push(x);
        }
        Ok(out)
    }

    /// `M` with `Q_i^T M_i = [I; K1]`.
    pub fn solve_m(&self, k1: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
        let mut t = DMatrix::zeros(self.n + self.m, self.n);
        t.view_mut((0, 0), (self.n, self.n)).fill_with_identity();
        t.view_mut((self.n, 0), (self.m, self.n)).copy_from(k1);
        self.solve_blocks(&t)
    }

    /// `N` with `Q_i^T N_i = [0; K]`.
    pub fn solve_n(&self, k: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
        let mut t = DMatrix::zeros(self.n + self.m, self.n);
        t.view_mut((self.n, 0), (self.m, self.n)).copy_from(k);
        self.solve_blocks(&t)
    }
}

/// `alpha x + [ZM x + ZN r]_0^s`: one step of the data-based closed loop.
pub fn representation_step(
    alpha: f64,
    s: f64,
    zm: &DMatrix<f64>,
    zn: &DMatrix<f64>,
    x: &DVector<f64>,
    r: &DVector<f64>,
) -> Result<DVector<f64>> {
    let pre = zm * x + zn * r;
    Ok(x * alpha + crate::model::threshold_clamp(&pre, s)?)
}
