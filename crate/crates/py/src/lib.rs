//! Python bindings for `lattice-core`.
//!
//! Structured arguments and results cross the boundary as plain dicts and
//! lists with the same field names as the JSON formats used by the CLI.
//! Library errors surface as `lattice.UsageError` or `lattice.DataError`,
//! both subclasses of `ValueError`.

use pyo3::create_exception;
use pyo3::exceptions::{PyTypeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyBool, PyDict, PyFloat, PyInt, PyList, PyString, PyTuple};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use lattice_core::datasets::{self, DatasetSchema, DomainRecord, ZipperConfig};
use lattice_core::filter::{self as core_filter, ImportanceMatrix};
use lattice_core::ktap::{self, EmbeddingStore, HashTeacher, PairKey, StoreConfig, Workload};
use lattice_core::numerics::{self, Epsilon, Gate};
use lattice_core::partitioner::{self, DomainMeta, ObjectiveMeta, PartitionPolicy};
use lattice_core::sketch::{self, HyperparamSpace, ProfileTable, QualityModel, SearchConfig};
use lattice_core::{Error, FeatureId, Seed, TaskId, VirtualClock};

create_exception!(lattice, UsageError, PyValueError, "Malformed arguments or inconsistent shapes.");
create_exception!(lattice, DataError, PyValueError, "Broken input data.");

fn err(e: Error) -> PyErr {
    match e {
        Error::Usage(m) => UsageError::new_err(m),
        Error::Data(m) => DataError::new_err(m),
    }
}

trait OrRaise<T> {
    fn or_raise(self) -> PyResult<T>;
}

impl<T> OrRaise<T> for lattice_core::Result<T> {
    fn or_raise(self) -> PyResult<T> {
        self.map_err(err)
    }
}

fn to_py<'py>(py: Python<'py>, v: &Value) -> PyResult<Bound<'py, PyAny>> {
    Ok(match v {
        Value::Null => py.None().into_bound(py),
        Value::Bool(b) => PyBool::new(py, *b).to_owned().into_any(),
        Value::Number(n) => match (n.as_i64(), n.as_u64()) {
            (Some(i), _) => i.into_pyobject(py)?.into_any(),
            (None, Some(u)) => u.into_pyobject(py)?.into_any(),
            _ => PyFloat::new(py, n.as_f64().unwrap_or(f64::NAN)).into_any(),
        },
        Value::String(s) => PyString::new(py, s).into_any(),
        Value::Array(items) => {
            let list = PyList::empty(py);
            for item in items {
                list.append(to_py(py, item)?)?;
            }
            list.into_any()
        }
        Value::Object(map) => {
            let dict = PyDict::new(py);
            for (k, item) in map {
                dict.set_item(k, to_py(py, item)?)?;
            }
            dict.into_any()
        }
    })
}

fn from_py(obj: &Bound<'_, PyAny>) -> PyResult<Value> {
    if obj.is_none() {
        return Ok(Value::Null);
    }
    if let Ok(b) = obj.cast::<PyBool>() {
        return Ok(Value::Bool(b.is_true()));
    }
    if obj.is_instance_of::<PyInt>() {
        if let Ok(i) = obj.extract::<i64>() {
            return Ok(i.into());
        }
        return Ok(obj.extract::<u64>()?.into());
    }
    if let Ok(f) = obj.cast::<PyFloat>() {
        return serde_json::Number::from_f64(f.value())
            .map(Value::Number)
            .ok_or_else(|| DataError::new_err(format!("non-finite number {}", f.value())));
    }
    if let Ok(s) = obj.cast::<PyString>() {
        return Ok(Value::String(s.to_str()?.to_owned()));
    }
    if let Ok(d) = obj.cast::<PyDict>() {
        let mut map = serde_json::Map::new();
        for (k, v) in d.iter() {
            let key: String = k.extract().map_err(|_| PyTypeError::new_err("dict keys must be strings"))?;
            map.insert(key, from_py(&v)?);
        }
        return Ok(Value::Object(map));
    }
    if obj.is_instance_of::<PyList>() || obj.is_instance_of::<PyTuple>() {
        return obj.try_iter()?.map(|item| from_py(&item?)).collect::<PyResult<Vec<_>>>().map(Value::Array);
    }
    Err(PyTypeError::new_err(format!("unsupported type {}", obj.get_type().name()?)))
}

fn parse<T: DeserializeOwned>(obj: &Bound<'_, PyAny>, what: &str) -> PyResult<T> {
    serde_json::from_value(from_py(obj)?).map_err(|e| UsageError::new_err(format!("invalid {what}: {e}")))
}

fn emit<'py, T: Serialize>(py: Python<'py>, value: &T) -> PyResult<Bound<'py, PyAny>> {
    to_py(py, &serde_json::to_value(value).map_err(|e| DataError::new_err(e.to_string()))?)
}

fn epsilon(eps: Option<f64>) -> PyResult<Epsilon> {
    Ok(eps.map(Epsilon::new).transpose().or_raise()?.unwrap_or_default())
}

fn matrix(rows: Vec<Vec<f64>>, features: Option<Vec<String>>, tasks: Option<Vec<String>>) -> PyResult<ImportanceMatrix> {
    let width = rows.first().map_or(0, Vec::len);
    let features = features.unwrap_or_else(|| (0..rows.len()).map(|i| format!("f{i}")).collect());
    let tasks = tasks.unwrap_or_else(|| (0..width).map(|j| format!("t{j}")).collect());
    ImportanceMatrix::new(
        features.into_iter().map(FeatureId::new).collect::<lattice_core::Result<_>>().or_raise()?,
        tasks.into_iter().map(TaskId::new).collect::<lattice_core::Result<_>>().or_raise()?,
        rows,
    )
    .or_raise()
}

/// Stable 64-bit hash (XXH64) of `data` under `seed`.
#[pyfunction]
#[pyo3(signature = (data, seed = 0))]
fn stable_hash(data: &Bound<'_, PyAny>, seed: u64) -> PyResult<u64> {
    let bytes: Vec<u8> = match data.cast::<PyString>() {
        Ok(s) => s.to_str()?.as_bytes().to_vec(),
        Err(_) => data.extract()?,
    };
    Ok(lattice_core::stable_hash(&bytes, Seed(seed)))
}

/// Iterative Pareto-frontier selection of `budget` features.
///
/// `rows[i][j]` is the importance of feature `i` for task `j`. Returns the
/// selection result as a dict.
#[pyfunction]
#[pyo3(signature = (rows, budget, seed, features = None, tasks = None))]
fn select_features<'py>(
    py: Python<'py>,
    rows: Vec<Vec<f64>>,
    budget: usize,
    seed: u64,
    features: Option<Vec<String>>,
    tasks: Option<Vec<String>>,
) -> PyResult<Bound<'py, PyAny>> {
    let m = matrix(rows, features, tasks)?;
    emit(py, &core_filter::select_features(&m, budget, Seed(seed)).or_raise()?)
}

/// Indices of the rows not strictly dominated by any other row.
#[pyfunction]
fn pareto_frontier(rows: Vec<Vec<f64>>) -> PyResult<Vec<usize>> {
    let m = matrix(rows, None, None)?;
    let all: Vec<usize> = (0..m.len()).collect();
    Ok(core_filter::frontier_indices(&m, &all))
}

/// Attribution-window index for one impression under a zipper config dict.
#[pyfunction]
fn assign_window(user_id: &str, ad_id: &str, impression_time_ms: u64, config: &Bound<'_, PyAny>) -> PyResult<usize> {
    let cfg: ZipperConfig = parse(config, "zipper config")?;
    Ok(datasets::assign_window(user_id, ad_id, impression_time_ms, &cfg))
}

/// Zero-padded merge of record dicts, grouped by their `domain` field.
/// Returns `{"schema": ..., "records": [...]}`.
#[pyfunction]
fn merge_domains<'py>(py: Python<'py>, records: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let records: Vec<DomainRecord> = parse(records, "records")?;
    let mut groups: Vec<(String, Vec<DomainRecord>)> = Vec::new();
    for rec in records {
        match groups.iter_mut().find(|(d, _)| *d == rec.domain) {
            Some((_, g)) => g.push(rec),
            None => groups.push((rec.domain.clone(), vec![rec])),
        }
    }
    let parts = groups.into_iter().map(|(d, recs)| (DatasetSchema::infer(d, &recs), recs)).collect();
    emit(py, &datasets::merge_domains(parts).or_raise()?)
}

/// Window assignment and per-window labels for record dicts.
#[pyfunction]
#[pyo3(signature = (records, config, tasks = None))]
fn zip_records<'py>(
    py: Python<'py>,
    records: &Bound<'py, PyAny>,
    config: &Bound<'py, PyAny>,
    tasks: Option<Vec<String>>,
) -> PyResult<Bound<'py, PyAny>> {
    let records: Vec<DomainRecord> = parse(records, "records")?;
    let cfg: ZipperConfig = parse(config, "zipper config")?;
    let tasks = match tasks {
        Some(t) => t.into_iter().map(TaskId::new).collect::<lattice_core::Result<_>>().or_raise()?,
        None => datasets::tasks_seen(&records),
    };
    emit(py, &datasets::zip_records(&records, &tasks, &cfg).or_raise()?)
}

#[pyfunction]
#[pyo3(signature = (x, y, eps = None))]
fn correlation_loss(x: Vec<f64>, y: Vec<f64>, eps: Option<f64>) -> PyResult<f64> {
    numerics::correlation_loss(&x, &y, epsilon(eps)?).or_raise()
}

#[pyfunction]
#[pyo3(signature = (x, eps = None))]
fn rms_norm(x: Vec<f64>, eps: Option<f64>) -> PyResult<Vec<f64>> {
    numerics::rms_norm(&x, epsilon(eps)?).or_raise()
}

/// SwishRN with `gate` either `"sigmoid"` or `"hard_sigmoid"`.
#[pyfunction]
#[pyo3(signature = (x, eps = None, gate = "sigmoid"))]
fn swish_rn(x: Vec<f64>, eps: Option<f64>, gate: &str) -> PyResult<Vec<f64>> {
    let gate = match gate {
        "sigmoid" => Gate::Sigmoid,
        "hard_sigmoid" => Gate::HardSigmoid,
        other => return Err(UsageError::new_err(format!("unknown gate {other:?}"))),
    };
    numerics::swish_rn_gated(&x, epsilon(eps)?, gate).or_raise()
}

#[pyfunction]
#[pyo3(signature = (x, tangent, eps = None))]
fn swish_rn_jvp(x: Vec<f64>, tangent: Vec<f64>, eps: Option<f64>) -> PyResult<Vec<f64>> {
    numerics::swish_rn_jvp(&x, &tangent, epsilon(eps)?).or_raise()
}

#[pyfunction]
fn clip_features(x: Vec<f64>, c: f64) -> PyResult<Vec<f64>> {
    numerics::clip_features(&x, c).or_raise()
}

#[pyfunction]
fn smooth_labels(y: Vec<f64>, eps: f64) -> PyResult<Vec<f64>> {
    numerics::smooth_labels(&y, eps).or_raise()
}

/// DP bootstrap over every batch size of a profile dict.
#[pyfunction]
fn dp_bootstrap<'py>(py: Python<'py>, profile: &Bound<'py, PyAny>, capacity: u64) -> PyResult<Bound<'py, PyAny>> {
    let profile: ProfileTable = parse(profile, "profile")?;
    emit(py, &sketch::dp_bootstrap_all_batches(&profile, capacity).or_raise()?)
}

/// Beam search. `config` holds `search`, and optionally `space` and
/// `quality`, as in the CLI sketch config.
#[pyfunction]
fn beam_search<'py>(py: Python<'py>, profile: &Bound<'py, PyAny>, config: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let profile: ProfileTable = parse(profile, "profile")?;
    let config = config.cast::<PyDict>().map_err(|_| PyTypeError::new_err("config must be a dict"))?;
    let search: SearchConfig = match config.get_item("search")? {
        Some(s) => parse(&s, "search config")?,
        None => return Err(UsageError::new_err("config needs a `search` section")),
    };
    let space: HyperparamSpace = match config.get_item("space")? {
        Some(s) => parse(&s, "hyperparameter space")?,
        None => HyperparamSpace::default(),
    };
    let quality: QualityModel = match config.get_item("quality")? {
        Some(q) => parse(&q, "quality model")?,
        None => QualityModel {
            baseline_quality: 1.0,
            reference_flops: space.default_point().flops,
            exponent: search.scaling_exponent,
        },
    };
    emit(py, &sketch::beam_search(&profile, &space, &quality, &search).or_raise()?)
}

/// Runs a workload dict through the cache simulator.
#[pyfunction]
fn simulate<'py>(py: Python<'py>, workload: &Bound<'py, PyAny>) -> PyResult<Bound<'py, PyAny>> {
    let workload: Workload = parse(workload, "workload")?;
    emit(py, &ktap::simulate(&workload).or_raise()?)
}

/// TTL embedding store on a virtual clock, refreshed by a hash teacher.
#[pyclass(module = "lattice")]
struct Store {
    inner: EmbeddingStore,
    clock: VirtualClock,
    teacher: HashTeacher,
}

#[pymethods]
impl Store {
    #[new]
    #[pyo3(signature = (dim, ttl_ms, refresh_budget, capacity = None, label_smoothing = None, teacher_seed = 0))]
    fn new(
        dim: usize,
        ttl_ms: u64,
        refresh_budget: usize,
        capacity: Option<usize>,
        label_smoothing: Option<f64>,
        teacher_seed: u64,
    ) -> PyResult<Self> {
        let inner = EmbeddingStore::new(StoreConfig { dim, ttl_ms, refresh_budget, capacity, label_smoothing }).or_raise()?;
        Ok(Store { inner, clock: VirtualClock::new(), teacher: HashTeacher { dim, seed: Seed(teacher_seed) } })
    }

    #[getter]
    fn now(&self) -> u64 {
        self.clock.now()
    }

    fn advance(&mut self, ms: u64) {
        self.clock.advance(ms);
    }

    /// Student lookup; returns the query result as a dict.
    fn query<'py>(&mut self, py: Python<'py>, user: &str, item: &str) -> PyResult<Bound<'py, PyAny>> {
        let key = PairKey::new(user, item).or_raise()?;
        let r = self.inner.student_query(&key, &self.clock);
        emit(py, &r)
    }

    /// One teacher refresh cycle; returns how many entries were written.
    fn refresh(&mut self) -> PyResult<usize> {
        self.inner.teacher_refresh_cycle(&self.teacher, &self.clock).or_raise()
    }

    fn pending(&self) -> usize {
        self.inner.queue().len()
    }

    fn stats<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        emit(py, self.inner.stats())
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Groups objectives into portfolios. Returns `(portfolios, report)`.
#[pyfunction]
fn partition<'py>(
    py: Python<'py>,
    domains: &Bound<'py, PyAny>,
    objectives: &Bound<'py, PyAny>,
    policy: &Bound<'py, PyAny>,
) -> PyResult<(Bound<'py, PyAny>, String)> {
    let domains: Vec<DomainMeta> = parse(domains, "domains")?;
    let objectives: Vec<ObjectiveMeta> = parse(objectives, "objectives")?;
    let policy: PartitionPolicy = parse(policy, "policy")?;
    let portfolios = partitioner::partition(&domains, &objectives, &policy).or_raise()?;
    let report = partitioner::report(&domains, &portfolios).or_raise()?;
    Ok((emit(py, &portfolios)?, report))
}

#[pymodule]
fn lattice(m: &Bound<'_, PyModule>) -> PyResult<()> {
    let py = m.py();
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("UsageError", py.get_type::<UsageError>())?;
    m.add("DataError", py.get_type::<DataError>())?;
    m.add_class::<Store>()?;
    m.add_function(wrap_pyfunction!(stable_hash, m)?)?;
    m.add_function(wrap_pyfunction!(select_features, m)?)?;
    m.add_function(wrap_pyfunction!(pareto_frontier, m)?)?;
    m.add_function(wrap_pyfunction!(assign_window, m)?)?;
    m.add_function(wrap_pyfunction!(merge_domains, m)?)?;
    m.add_function(wrap_pyfunction!(zip_records, m)?)?;
    m.add_function(wrap_pyfunction!(correlation_loss, m)?)?;
    m.add_function(wrap_pyfunction!(rms_norm, m)?)?;
    m.add_function(wrap_pyfunction!(swish_rn, m)?)?;
    m.add_function(wrap_pyfunction!(swish_rn_jvp, m)?)?;
    m.add_function(wrap_pyfunction!(clip_features, m)?)?;
    m.add_function(wrap_pyfunction!(smooth_labels, m)?)?;
    m.add_function(wrap_pyfunction!(dp_bootstrap, m)?)?;
    m.add_function(wrap_pyfunction!(beam_search, m)?)?;
    m.add_function(wrap_pyfunction!(simulate, m)?)?;
    m.add_function(wrap_pyfunction!(partition, m)?)?;
    Ok(())
}
