//! Python bindings: tensors, models, the four fitting engines, and the generator.

use std::collections::BTreeMap;
use std::path::PathBuf;

use bnbcp::allocation::VbRule;
use bnbcp::evaluation::{effective_rank, heldout_loglik, heldout_mae, reconstruct_rate};
use bnbcp::export::{read_model, write_model};
use bnbcp::gibbs::{run_gibbs, GibbsConfig};
use bnbcp::online::{run_online, Engine, LearningRateSchedule, OnlineConfig, Sampling, SviOptions};
use bnbcp::synthetic::{generate, SyntheticConfig};
use bnbcp::vb::{run_vb, VbConfig};
use bnbcp::{DuplicatePolicy, Entry, FitTrace, Hyperparams, Matrix, ModelState, SparseCountTensor, TensorShape};
use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

fn err(e: bnbcp::Error) -> PyErr {
    match e {
        bnbcp::Error::Io { .. } => PyOSError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn policy(sum_duplicates: bool) -> DuplicatePolicy {
    if sum_duplicates {
        DuplicatePolicy::Sum
    } else {
        DuplicatePolicy::Reject
    }
}

/// Sparse count tensor in coordinate form.
#[pyclass(name = "Tensor", module = "bnbcp", frozen)]
struct PyTensor(SparseCountTensor);

#[pymethods]
impl PyTensor {
    #[new]
    #[pyo3(signature = (dims, indices, counts, sum_duplicates = false))]
    fn new(dims: Vec<usize>, indices: Vec<Vec<usize>>, counts: Vec<u64>, sum_duplicates: bool) -> PyResult<Self> {
        if indices.len() != counts.len() {
            return Err(PyValueError::new_err(format!("{} indices but {} counts", indices.len(), counts.len())));
        }
        let shape = TensorShape::new(dims).map_err(err)?;
        let entries = indices.into_iter().zip(counts).map(|(i, c)| Entry::new(i, c)).collect();
        SparseCountTensor::with_policy(shape, entries, policy(sum_duplicates)).map(PyTensor).map_err(err)
    }

    /// Read the `.tns` text format.
    #[staticmethod]
    #[pyo3(signature = (path, sum_duplicates = false))]
    fn load(path: PathBuf, sum_duplicates: bool) -> PyResult<Self> {
        SparseCountTensor::load(path, policy(sum_duplicates)).map(PyTensor).map_err(err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.0.save(path).map_err(err)
    }

    #[getter]
    fn dims(&self) -> Vec<usize> {
        self.0.shape().dims().to_vec()
    }

    #[getter]
    fn nnz(&self) -> usize {
        self.0.nnz()
    }

    #[getter]
    fn total_count(&self) -> u64 {
        self.0.total_count()
    }

    #[getter]
    fn indices(&self) -> Vec<Vec<usize>> {
        self.0.iter().map(|(i, _)| i.to_vec()).collect()
    }

    #[getter]
    fn counts(&self) -> Vec<u64> {
        self.0.counts().to_vec()
    }

    /// Split stored entries into (train, heldout).
    fn split_heldout(&self, fraction: f64, seed: u64) -> PyResult<(PyTensor, PyTensor)> {
        let (train, held) = self.0.split_heldout(fraction, seed).map_err(err)?;
        Ok((PyTensor(train), PyTensor(held)))
    }

    fn __len__(&self) -> usize {
        self.0.nnz()
    }

    fn __repr__(&self) -> String {
        format!("Tensor(dims={:?}, nnz={})", self.0.shape().dims(), self.0.nnz())
    }
}

/// Point estimate: one factor matrix per mode plus per-component λ and p.
#[pyclass(name = "Model", module = "bnbcp", frozen)]
struct PyModel(ModelState);

#[pymethods]
impl PyModel {
    /// `factors[k][i][r]` is the weight of index i of mode k in component r.
    #[new]
    fn new(factors: Vec<Vec<Vec<f64>>>, lambda_: Vec<f64>, p: Vec<f64>) -> PyResult<Self> {
        let factors = factors.iter().map(|f| Matrix::from_rows(f)).collect::<bnbcp::Result<Vec<_>>>().map_err(err)?;
        let model = ModelState { factors, lambda: lambda_, p };
        model.validate().map_err(err)?;
        Ok(PyModel(model))
    }

    /// Read `mode_k.csv`, `lambda.csv` and `p.csv` from a directory.
    #[staticmethod]
    fn load(dir: PathBuf) -> PyResult<Self> {
        read_model(dir).map(PyModel).map_err(err)
    }

    fn save(&self, dir: PathBuf) -> PyResult<()> {
        write_model(dir, &self.0).map_err(err)
    }

    #[getter]
    fn factors(&self) -> Vec<Vec<Vec<f64>>> {
        self.0.factors.iter().map(Matrix::to_rows).collect()
    }

    #[getter]
    fn lambda_(&self) -> Vec<f64> {
        self.0.lambda.clone()
    }

    #[getter]
    fn p(&self) -> Vec<f64> {
        self.0.p.clone()
    }

    #[getter]
    fn rank(&self) -> usize {
        self.0.rank()
    }

    #[getter]
    fn dims(&self) -> Vec<usize> {
        self.0.dims()
    }

    /// Poisson rate at one index.
    fn rate(&self, index: Vec<usize>) -> PyResult<f64> {
        let dims = self.0.dims();
        if index.len() != dims.len() || index.iter().zip(&dims).any(|(i, d)| i >= d) {
            return Err(PyValueError::new_err(format!("index {index:?} outside dims {dims:?}")));
        }
        Ok(reconstruct_rate(&index, &self.0))
    }

    /// Poisson log-likelihood of the stored entries of `tensor`.
    fn loglik(&self, tensor: &PyTensor) -> PyResult<f64> {
        self.0.check_shape(tensor.0.shape()).map_err(err)?;
        Ok(heldout_loglik(&tensor.0, &self.0))
    }

    fn mae(&self, tensor: &PyTensor) -> PyResult<f64> {
        self.0.check_shape(tensor.0.shape()).map_err(err)?;
        Ok(heldout_mae(&tensor.0, &self.0))
    }

    #[pyo3(signature = (threshold = 0.01))]
    fn effective_rank(&self, threshold: f64) -> PyResult<usize> {
        effective_rank(&self.0.lambda, threshold).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Model(dims={:?}, rank={})", self.0.dims(), self.0.rank())
    }
}

#[pyclass(name = "TraceRow", module = "bnbcp", frozen, get_all)]
struct PyTraceRow {
    iteration: usize,
    elapsed_seconds: f64,
    heldout_loglik: f64,
    heldout_mae: f64,
    effective_rank: usize,
}

/// Output of a fit. `rank_histogram` and `last_sample` are only set by Gibbs,
/// `iterations` only by VB.
#[pyclass(name = "FitResult", module = "bnbcp", frozen, get_all)]
struct PyFitResult {
    model: Py<PyModel>,
    trace: Vec<Py<PyTraceRow>>,
    rank_histogram: Option<BTreeMap<usize, usize>>,
    last_sample: Option<Py<PyModel>>,
    iterations: Option<usize>,
}

impl PyFitResult {
    fn build(
        py: Python<'_>,
        model: ModelState,
        trace: FitTrace,
        rank_histogram: Option<BTreeMap<usize, usize>>,
        last_sample: Option<ModelState>,
        iterations: Option<usize>,
    ) -> PyResult<Self> {
        let trace = trace
            .rows()
            .iter()
            .map(|r| {
                Py::new(
                    py,
                    PyTraceRow {
                        iteration: r.iteration,
                        elapsed_seconds: r.elapsed_seconds,
                        heldout_loglik: r.heldout_loglik,
                        heldout_mae: r.heldout_mae,
                        effective_rank: r.effective_rank,
                    },
                )
            })
            .collect::<PyResult<_>>()?;
        Ok(PyFitResult {
            model: Py::new(py, PyModel(model))?,
            trace,
            rank_histogram,
            last_sample: last_sample.map(|m| Py::new(py, PyModel(m))).transpose()?,
            iterations,
        })
    }
}

fn hyperparams(
    num_modes: usize,
    rank: usize,
    a: Option<Vec<f64>>,
    g: Option<f64>,
    c: Option<f64>,
    epsilon: Option<f64>,
) -> PyResult<Hyperparams> {
    let mut hyper = Hyperparams::with_defaults(num_modes, rank);
    if let Some(a) = a {
        hyper.a = if a.len() == 1 { vec![a[0]; num_modes] } else { a };
    }
    hyper.g = g.unwrap_or(hyper.g);
    hyper.c = c.unwrap_or(hyper.c);
    hyper.epsilon = epsilon.unwrap_or(hyper.epsilon);
    hyper.validate().map_err(err)?;
    Ok(hyper)
}

fn heldout_or_empty(train: &PyTensor, heldout: Option<&PyTensor>) -> SparseCountTensor {
    heldout.map_or_else(|| SparseCountTensor::empty(train.0.shape().clone()), |h| h.0.clone())
}

fn vb_rule(name: &str) -> PyResult<VbRule> {
    match name {
        "printed" => Ok(VbRule::Printed),
        "mean-field" => Ok(VbRule::MeanField),
        _ => Err(PyValueError::new_err(format!("unknown rule {name:?}; expected 'printed' or 'mean-field'"))),
    }
}

/// Draw a tensor and its generating model with `significant` planted components.
#[pyfunction]
#[pyo3(signature = (dims, rank, significant, *, lambda_scale = 1000.0, seed = 0, a = None, g = None, c = None, epsilon = None, blockwise = false))]
#[allow(clippy::too_many_arguments)]
fn synth(
    py: Python<'_>,
    dims: Vec<usize>,
    rank: usize,
    significant: usize,
    lambda_scale: f64,
    seed: u64,
    a: Option<Vec<f64>>,
    g: Option<f64>,
    c: Option<f64>,
    epsilon: Option<f64>,
    blockwise: bool,
) -> PyResult<(PyTensor, PyModel)> {
    let shape = TensorShape::new(dims).map_err(err)?;
    let hyper = hyperparams(shape.num_modes(), rank, a, g, c, epsilon)?;
    let mut config = SyntheticConfig::new(rank, significant, lambda_scale, seed);
    config.blockwise = blockwise;
    let (tensor, truth) = py.detach(|| generate(&shape, &hyper, &config)).map_err(err)?;
    Ok((PyTensor(tensor), PyModel(truth)))
}

/// Batch Gibbs sampling. The returned model is the posterior mean.
#[pyfunction]
#[pyo3(signature = (train, rank, *, heldout = None, burnin = 1000, samples = 1000, seed = 0, eval_every = 10, workers = 1, rank_threshold = 0.01, a = None, g = None, c = None, epsilon = None))]
#[allow(clippy::too_many_arguments)]
fn fit_gibbs(
    py: Python<'_>,
    train: &PyTensor,
    rank: usize,
    heldout: Option<&PyTensor>,
    burnin: usize,
    samples: usize,
    seed: u64,
    eval_every: usize,
    workers: usize,
    rank_threshold: f64,
    a: Option<Vec<f64>>,
    g: Option<f64>,
    c: Option<f64>,
    epsilon: Option<f64>,
) -> PyResult<PyFitResult> {
    let hyper = hyperparams(train.0.num_modes(), rank, a, g, c, epsilon)?;
    let held = heldout_or_empty(train, heldout);
    let config = GibbsConfig { burnin, collection: samples, seed, eval_every, workers, rank_threshold };
    let out = py.detach(|| run_gibbs(&train.0, &held, &config, &hyper)).map_err(err)?;
    let summary = out.summary;
    PyFitResult::build(py, summary.mean_model, out.trace, Some(summary.rank_histogram), Some(out.last_sample), None)
}

/// Batch variational Bayes; stops early once the heldout log-likelihood plateaus.
#[pyfunction]
#[pyo3(signature = (train, rank, *, heldout = None, iters = 200, tolerance = 1e-5, seed = 0, eval_every = 1, workers = 1, rule = "printed", rank_threshold = 0.01, a = None, g = None, c = None, epsilon = None))]
#[allow(clippy::too_many_arguments)]
fn fit_vb(
    py: Python<'_>,
    train: &PyTensor,
    rank: usize,
    heldout: Option<&PyTensor>,
    iters: usize,
    tolerance: f64,
    seed: u64,
    eval_every: usize,
    workers: usize,
    rule: &str,
    rank_threshold: f64,
    a: Option<Vec<f64>>,
    g: Option<f64>,
    c: Option<f64>,
    epsilon: Option<f64>,
) -> PyResult<PyFitResult> {
    let hyper = hyperparams(train.0.num_modes(), rank, a, g, c, epsilon)?;
    let held = heldout_or_empty(train, heldout);
    let config =
        VbConfig { max_iters: iters, tolerance, eval_every, seed, workers, rule: vb_rule(rule)?, rank_threshold };
    let out = py.detach(|| run_vb(&train.0, &held, &config, &hyper)).map_err(err)?;
    PyFitResult::build(py, out.state.mean_model(), out.trace, None, None, Some(out.iterations))
}

#[allow(clippy::too_many_arguments)]
fn fit_online(
    py: Python<'_>,
    engine: Engine,
    train: &PyTensor,
    heldout: Option<&PyTensor>,
    minibatch: usize,
    iters: usize,
    t0: f64,
    kappa: f64,
    epoch: bool,
    seed: u64,
    eval_every: usize,
    workers: usize,
    svi: SviOptions,
    rank_threshold: f64,
    hyper: Hyperparams,
) -> PyResult<PyFitResult> {
    let held = heldout_or_empty(train, heldout);
    let mut config = OnlineConfig::new(engine, minibatch, iters);
    config.schedule = LearningRateSchedule::new(t0, kappa).map_err(err)?;
    config.plan.sampling = if epoch { Sampling::EpochShuffle } else { Sampling::WithReplacement };
    config.plan.seed = seed.wrapping_add(1);
    config.seed = seed;
    config.eval_every = eval_every;
    config.workers = workers;
    config.svi = svi;
    config.rank_threshold = rank_threshold;
    let out = py.detach(|| run_online(&train.0, &held, &config, &hyper)).map_err(err)?;
    PyFitResult::build(py, out.state.point_estimate(), out.trace, None, None, None)
}

fn epoch_sampling(sampling: &str) -> PyResult<bool> {
    match sampling {
        "replacement" => Ok(false),
        "epoch" => Ok(true),
        _ => Err(PyValueError::new_err(format!("unknown sampling {sampling:?}; expected 'replacement' or 'epoch'"))),
    }
}

/// Conditional density filtering over minibatches of stored entries.
#[pyfunction]
#[pyo3(signature = (train, rank, *, heldout = None, minibatch = 1000, iters = 200, t0 = 0.0, kappa = 0.5, sampling = "replacement", seed = 0, eval_every = 10, workers = 1, rank_threshold = 0.01, a = None, g = None, c = None, epsilon = None))]
#[allow(clippy::too_many_arguments)]
fn fit_cdf(
    py: Python<'_>,
    train: &PyTensor,
    rank: usize,
    heldout: Option<&PyTensor>,
    minibatch: usize,
    iters: usize,
    t0: f64,
    kappa: f64,
    sampling: &str,
    seed: u64,
    eval_every: usize,
    workers: usize,
    rank_threshold: f64,
    a: Option<Vec<f64>>,
    g: Option<f64>,
    c: Option<f64>,
    epsilon: Option<f64>,
) -> PyResult<PyFitResult> {
    let hyper = hyperparams(train.0.num_modes(), rank, a, g, c, epsilon)?;
    let epoch = epoch_sampling(sampling)?;
    fit_online(
        py,
        Engine::Cdf,
        train,
        heldout,
        minibatch,
        iters,
        t0,
        kappa,
        epoch,
        seed,
        eval_every,
        workers,
        SviOptions::default(),
        rank_threshold,
        hyper,
    )
}

/// Stochastic variational inference over minibatches of stored entries.
#[pyfunction]
#[pyo3(signature = (train, rank, *, heldout = None, minibatch = 1000, iters = 200, t0 = 0.0, kappa = 0.5, sampling = "replacement", seed = 0, eval_every = 10, workers = 1, rule = "printed", strict_lambda_rate = false, rank_threshold = 0.01, a = None, g = None, c = None, epsilon = None))]
#[allow(clippy::too_many_arguments)]
fn fit_svi(
    py: Python<'_>,
    train: &PyTensor,
    rank: usize,
    heldout: Option<&PyTensor>,
    minibatch: usize,
    iters: usize,
    t0: f64,
    kappa: f64,
    sampling: &str,
    seed: u64,
    eval_every: usize,
    workers: usize,
    rule: &str,
    strict_lambda_rate: bool,
    rank_threshold: f64,
    a: Option<Vec<f64>>,
    g: Option<f64>,
    c: Option<f64>,
    epsilon: Option<f64>,
) -> PyResult<PyFitResult> {
    let hyper = hyperparams(train.0.num_modes(), rank, a, g, c, epsilon)?;
    let epoch = epoch_sampling(sampling)?;
    let svi = SviOptions { rule: vb_rule(rule)?, strict_lambda_rate };
    fit_online(
        py,
        Engine::Svi,
        train,
        heldout,
        minibatch,
        iters,
        t0,
        kappa,
        epoch,
        seed,
        eval_every,
        workers,
        svi,
        rank_threshold,
        hyper,
    )
}

#[pymodule(name = "bnbcp")]
fn bnbcp_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<PyTensor>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyTraceRow>()?;
    m.add_class::<PyFitResult>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(fit_gibbs, m)?)?;
    m.add_function(wrap_pyfunction!(fit_vb, m)?)?;
    m.add_function(wrap_pyfunction!(fit_cdf, m)?)?;
    m.add_function(wrap_pyfunction!(fit_svi, m)?)?;
    Ok(())
}
