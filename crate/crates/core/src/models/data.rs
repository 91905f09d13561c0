use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::rng::RngStream;
use crate::scalar::Real;

/// Kind of supervised problem a dataset encodes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Regression,
    BinaryClassification,
    /// Targets hold a single column of class indices `0..classes`.
    Multiclass { classes: usize },
}

impl Task {
    pub fn is_classification(&self) -> bool {
        !matches!(self, Task::Regression)
    }
}

/// Inputs (`N×d`) and targets (`N×p`).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset<T> {
    inputs: Matrix<T>,
    targets: Matrix<T>,
    task: Task,
}

impl<T: Real> Dataset<T> {
    pub fn new(inputs: Matrix<T>, targets: Matrix<T>, task: Task) -> Result<Self> {
        if inputs.rows() == 0 {
            return Err(Error::Data("dataset has no rows".into()));
        }
        Self::build(inputs, targets, task)
    }

    /// A dataset with zero rows; only meaningful for closed-form oracles and
    /// prior-only experiments.
    pub fn empty(input_dim: usize, target_dim: usize, task: Task) -> Self {
        Self { inputs: Matrix::zeros(0, input_dim), targets: Matrix::zeros(0, target_dim), task }
    }

    fn build(inputs: Matrix<T>, targets: Matrix<T>, task: Task) -> Result<Self> {
        if inputs.rows() != targets.rows() {
            return Err(Error::Data(format!(
                "{} input rows but {} target rows",
                inputs.rows(),
                targets.rows()
            )));
        }
        if !inputs.is_finite() || !targets.is_finite() {
            return Err(Error::Data("non-finite entry".into()));
        }
        match task {
            Task::Regression => {}
            Task::BinaryClassification => {
                if targets.cols() != 1 || targets.as_slice().iter().any(|&y| y != T::zero() && y != T::one()) {
                    return Err(Error::Data("binary targets must be a single 0/1 column".into()));
                }
            }
            Task::Multiclass { classes } => {
                let bad = |y: T| y < T::zero() || y.fract() != T::zero() || y.as_f64() >= classes as f64;
                if classes < 2 || targets.cols() != 1 || targets.as_slice().iter().any(|&y| bad(y)) {
                    return Err(Error::Data(format!("multiclass targets must be indices in 0..{classes}")));
                }
            }
        }
        Ok(Self { inputs, targets, task })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn target_dim(&self) -> usize {
        self.targets.cols()
    }

    pub fn task(&self) -> Task {
        self.task
    }

    pub fn inputs(&self) -> &Matrix<T> {
        &self.inputs
    }

    pub fn targets(&self) -> &Matrix<T> {
        &self.targets
    }

    pub fn x(&self, i: usize) -> &[T] {
        self.inputs.row(i)
    }

    pub fn y(&self, i: usize) -> &[T] {
        self.targets.row(i)
    }

    /// Rows selected by `idx`, in that order.
    pub fn subset(&self, idx: &[usize]) -> Self {
        let mut inputs = Matrix::zeros(idx.len(), self.input_dim());
        let mut targets = Matrix::zeros(idx.len(), self.target_dim());
        for (r, &i) in idx.iter().enumerate() {
            inputs.row_mut(r).copy_from_slice(self.x(i));
            targets.row_mut(r).copy_from_slice(self.y(i));
        }
        Self { inputs, targets, task: self.task }
    }

    /// Row indices of a shuffled partition into batches of at most `batch_size`.
    pub fn epoch_batches(&self, batch_size: usize, rng: &mut RngStream) -> Vec<Vec<usize>> {
        let perm = rng.permutation(self.len());
        perm.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
    }

    /// Same rows with every target scaled, useful for oracle checks.
    pub fn with_targets(&self, targets: Matrix<T>) -> Result<Self> {
        Self::build(self.inputs.clone(), targets, self.task)
    }

    /// Concatenates two datasets of identical shape and task.
    pub fn concat(&self, other: &Self) -> Result<Self> {
        if self.input_dim() != other.input_dim() || self.target_dim() != other.target_dim() || self.task != other.task {
            return Err(Error::Data("cannot concatenate datasets of different shape".into()));
        }
        let mut x = self.inputs.as_slice().to_vec();
        x.extend_from_slice(other.inputs.as_slice());
        let mut y = self.targets.as_slice().to_vec();
        y.extend_from_slice(other.targets.as_slice());
        let n = self.len() + other.len();
        Self::build(
            Matrix::from_vec(n, self.input_dim(), x)?,
            Matrix::from_vec(n, self.target_dim(), y)?,
            self.task,
        )
    }

    /// Reads a CSV file with a header row; the last `target_cols` columns are targets.
    pub fn from_csv(path: &Path, target_cols: usize, task: Task) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
        let mut x = Vec::new();
        let mut y = Vec::new();
        let mut width = None;
        for (line, record) in reader.records().enumerate() {
            let record = record.map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
            let w = *width.get_or_insert(record.len());
            if record.len() != w || w <= target_cols {
                return Err(Error::Data(format!("row {} has {} columns", line + 2, record.len())));
            }
            for (c, field) in record.iter().enumerate() {
                let v: f64 = field
                    .parse()
                    .map_err(|_| Error::Data(format!("row {} column {}: cannot parse {field:?}", line + 2, c + 1)))?;
                if c < w - target_cols {
                    x.push(T::lit(v));
                } else {
                    y.push(T::lit(v));
                }
            }
        }
        let w = width.ok_or_else(|| Error::Data(format!("{}: no data rows", path.display())))?;
        let n = x.len() / (w - target_cols);
        Self::new(Matrix::from_vec(n, w - target_cols, x)?, Matrix::from_vec(n, target_cols, y)?, task)
    }

    pub fn to_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(e.to_string()))?;
        let header: Vec<String> = (0..self.input_dim())
            .map(|j| format!("x{j}"))
            .chain((0..self.target_dim()).map(|j| format!("y{j}")))
            .collect();
        w.write_record(&header).map_err(|e| Error::Data(e.to_string()))?;
        for i in 0..self.len() {
            let row: Vec<String> = self.x(i).iter().chain(self.y(i)).map(|v| format!("{v}")).collect();
            w.write_record(&row).map_err(|e| Error::Data(e.to_string()))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Synthetic linear-Gaussian data `y = Xθ* + noise` with standard-normal inputs.
/// Returns the dataset and the generating weights.
pub fn synthetic_linear<T: Real>(n: usize, d: usize, noise_var: f64, rng: &mut RngStream) -> (Dataset<T>, Vec<T>) {
    let theta: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        let mean: f64 = row.iter().zip(&theta).map(|(a, b)| a * b).sum();
        y.push(T::lit(mean + noise_var.sqrt() * rng.standard_normal()));
        x.extend(row.into_iter().map(T::lit));
    }
    let data = Dataset::new(Matrix::from_vec(n, d, x).unwrap(), Matrix::from_vec(n, 1, y).unwrap(), Task::Regression)
        .expect("finite synthetic data");
    (data, theta.into_iter().map(T::lit).collect())
}

/// Linear-Gaussian data whose design has mutually orthogonal columns
/// (`XᵀX` diagonal), built by Gram–Schmidt on Gaussian columns.
pub fn orthogonal_linear<T: Real>(n: usize, d: usize, noise_var: f64, rng: &mut RngStream) -> Dataset<T> {
    assert!(n >= d, "need at least as many rows as columns");
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(d);
    for j in 0..d {
        let mut c: Vec<f64> = (0..n).map(|_| rng.standard_normal()).collect();
        for prev in &cols {
            let proj: f64 = c.iter().zip(prev).map(|(a, b)| a * b).sum::<f64>() / prev.iter().map(|v| v * v).sum::<f64>();
            c.iter_mut().zip(prev).for_each(|(a, b)| *a -= proj * b);
        }
        // distinct column scales so the diagonal precision is not isotropic
        let norm = c.iter().map(|v| v * v).sum::<f64>().sqrt();
        let target = (n as f64).sqrt() * (0.5 + 0.25 * j as f64);
        c.iter_mut().for_each(|v| *v *= target / norm);
        cols.push(c);
    }
    let theta: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    for i in 0..n {
        let mean: f64 = (0..d).map(|j| cols[j][i] * theta[j]).sum();
        y.push(T::lit(mean + noise_var.sqrt() * rng.standard_normal()));
        x.extend((0..d).map(|j| T::lit(cols[j][i])));
    }
    Dataset::new(Matrix::from_vec(n, d, x).unwrap(), Matrix::from_vec(n, 1, y).unwrap(), Task::Regression)
        .expect("finite synthetic data")
}

/// Binary labels drawn from a logistic model with standard-normal inputs.
pub fn synthetic_logistic<T: Real>(n: usize, d: usize, rng: &mut RngStream) -> (Dataset<T>, Vec<T>) {
    let theta: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
    let mut x = Vec::with_capacity(n * d);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let row: Vec<f64> = (0..d).map(|_| rng.standard_normal()).collect();
        let z: f64 = row.iter().zip(&theta).map(|(a, b)| a * b).sum();
        let p = 1.0 / (1.0 + (-z).exp());
        y.push(if rng.uniform() < p { T::one() } else { T::zero() });
        x.extend(row.into_iter().map(T::lit));
    }
    let data = Dataset::new(
        Matrix::from_vec(n, d, x).unwrap(),
        Matrix::from_vec(n, 1, y).unwrap(),
        Task::BinaryClassification,
    )
    .expect("finite synthetic data");
    (data, theta.into_iter().map(T::lit).collect())
}
