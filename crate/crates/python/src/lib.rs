//! Python bindings: images are nested `C×H×W` lists of floats in `[0, 1]`.

use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use smilenet::io::{load_checkpoint, save_checkpoint, CheckpointMeta};
use smilenet::pipeline::sample_z;
use smilenet::{metrics, Error, ImageTensor, NetConfig, QuantMode, SmileNet};

pub type Nested = Vec<Vec<Vec<f32>>>;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Dimension(_) | Error::Contract(_) | Error::Usage(_) | Error::Config { .. } => {
            PyValueError::new_err(e.to_string())
        }
        Error::Io(_) | Error::Decode { .. } | Error::Format(_) => PyIOError::new_err(e.to_string()),
        Error::Numerical(_) => PyRuntimeError::new_err(e.to_string()),
    }
}

/// Flattens a nested list into a `C×H×W` tensor, rejecting ragged input.
pub fn to_tensor(x: &Nested) -> smilenet::Result<ImageTensor> {
    let c = x.len();
    let h = x.first().map_or(0, Vec::len);
    let w = x.first().and_then(|p| p.first()).map_or(0, Vec::len);
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::Dimension("image must be a non-empty C×H×W list".into()));
    }
    let mut data = Vec::with_capacity(c * h * w);
    for plane in x {
        if plane.len() != h || plane.iter().any(|row| row.len() != w) {
            return Err(Error::Dimension("ragged C×H×W list".into()));
        }
        plane.iter().for_each(|row| data.extend_from_slice(row));
    }
    ImageTensor::from_vec(&[c, h, w], data)
}

pub fn to_nested(t: &ImageTensor) -> Nested {
    let (c, h, w) = t.chw().expect("image tensors are C×H×W");
    let d = t.data();
    (0..c)
        .map(|ch| (0..h).map(|y| d[(ch * h + y) * w..(ch * h + y + 1) * w].to_vec()).collect())
        .collect()
}

fn tensors(xs: &[Nested]) -> PyResult<Vec<ImageTensor>> {
    xs.iter().map(|x| to_tensor(x).map_err(py_err)).collect()
}

/// A hiding/recovery network.
#[pyclass(name = "Network")]
pub struct PyNetwork {
    net: SmileNet<f32>,
    meta: CheckpointMeta,
}

#[pymethods]
impl PyNetwork {
    /// Builds a zero-initialized network, which hides transparently.
    #[new]
    #[pyo3(signature = (n_secrets, width=16, r_blocks=4, g_blocks=8, sis_layers=2, seed=0))]
    fn new(n_secrets: usize, width: usize, r_blocks: usize, g_blocks: usize, sis_layers: usize, seed: u64) -> PyResult<Self> {
        let config = NetConfig {
            n_secrets,
            channels: 3,
            width,
            r_blocks,
            g_blocks,
            sis_layers,
        };
        let net = SmileNet::new(config, seed).map_err(py_err)?;
        Ok(Self {
            net,
            meta: CheckpointMeta { seed, iteration: 0 },
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (net, meta) = load_checkpoint(&path).map_err(py_err)?;
        Ok(Self { net, meta })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        save_checkpoint(&self.net, self.meta, &path).map_err(py_err)
    }

    /// Replaces all weights with small random values.
    #[pyo3(signature = (seed, gain=0.1))]
    fn randomize(&mut self, seed: u64, gain: f64) {
        self.net.randomize(seed, gain);
    }

    #[getter]
    fn n_secrets(&self) -> usize {
        self.net.config.n_secrets
    }

    #[getter]
    fn grid(&self) -> (usize, usize) {
        self.net.layout.grid()
    }

    /// Returns `(stego, residual)`. `quantize=False` skips 8-bit rounding.
    #[pyo3(signature = (cover, secrets, quantize=true))]
    fn hide(&self, cover: Nested, secrets: Vec<Nested>, quantize: bool) -> PyResult<(Nested, Nested)> {
        let cover = to_tensor(&cover).map_err(py_err)?;
        let secrets = tensors(&secrets)?;
        let mode = if quantize { QuantMode::Eval } else { QuantMode::Off };
        let out = self.net.hide(&cover, &secrets, mode, 0).map_err(py_err)?;
        Ok((to_nested(&out.stego), to_nested(&out.r_h)))
    }

    /// Returns `(cover_hat, secrets)`. Without `aux`, a standard normal
    /// auxiliary input is drawn from `seed`.
    #[pyo3(signature = (stego, aux=None, seed=0))]
    fn reveal(&self, stego: Nested, aux: Option<Nested>, seed: u64) -> PyResult<(Nested, Vec<Nested>)> {
        let stego = to_tensor(&stego).map_err(py_err)?;
        let z = match aux {
            Some(a) => to_tensor(&a).map_err(py_err)?,
            None => sample_z(&self.net.msr_shape(stego.shape()).map_err(py_err)?, seed),
        };
        let rev = self.net.reveal(&stego, &z).map_err(py_err)?;
        Ok((to_nested(&rev.cover_hat), rev.secrets.iter().map(to_nested).collect()))
    }
}

#[pyfunction]
fn psnr(a: Nested, b: Nested) -> PyResult<f64> {
    metrics::psnr(&to_tensor(&a).map_err(py_err)?, &to_tensor(&b).map_err(py_err)?).map_err(py_err)
}

#[pyfunction]
fn rmse(a: Nested, b: Nested) -> PyResult<f64> {
    metrics::rmse(&to_tensor(&a).map_err(py_err)?, &to_tensor(&b).map_err(py_err)?).map_err(py_err)
}

#[pyfunction]
fn ssim(a: Nested, b: Nested) -> PyResult<f64> {
    metrics::ssim(&to_tensor(&a).map_err(py_err)?, &to_tensor(&b).map_err(py_err)?).map_err(py_err)
}

#[pyfunction]
fn nmi(a: Nested, b: Nested) -> PyResult<f64> {
    metrics::nmi(&to_tensor(&a).map_err(py_err)?, &to_tensor(&b).map_err(py_err)?).map_err(py_err)
}

/// `(rows, cols)` of the mosaic grid for `n` secrets.
#[pyfunction]
fn grid_shape(n: usize) -> PyResult<(usize, usize)> {
    smilenet::grid_shape(n).map(|l| l.grid()).map_err(py_err)
}

#[pyfunction]
fn load_image(path: PathBuf) -> PyResult<Nested> {
    smilenet::io::load_image(&path).map(|t| to_nested(&t)).map_err(py_err)
}

#[pyfunction]
fn save_image(image: Nested, path: PathBuf) -> PyResult<()> {
    smilenet::io::save_image(&to_tensor(&image).map_err(py_err)?, &path).map_err(py_err)
}

/// Runs the built-in invariant suite; returns `(name, passed, detail)` rows.
#[pyfunction]
fn selftest() -> Vec<(String, bool, String)> {
    smilenet::selftest::run_all()
        .into_iter()
        .map(|c| (c.name.to_string(), c.passed, c.detail))
        .collect()
}

#[pymodule]
fn smilenet_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyNetwork>()?;
    m.add_function(wrap_pyfunction!(psnr, m)?)?;
    m.add_function(wrap_pyfunction!(rmse, m)?)?;
    m.add_function(wrap_pyfunction!(ssim, m)?)?;
    m.add_function(wrap_pyfunction!(nmi, m)?)?;
    m.add_function(wrap_pyfunction!(grid_shape, m)?)?;
    m.add_function(wrap_pyfunction!(load_image, m)?)?;
    m.add_function(wrap_pyfunction!(save_image, m)?)?;
    m.add_function(wrap_pyfunction!(selftest, m)?)?;
    Ok(())
}
