//! Python bindings for the value-level parts of commfuse: directives,
//! the analyzer, scoring, edit scripts and the hashed embedder.

#[pyo3::pymodule]
mod commfuse {
    use pyo3::exceptions::PyValueError;
    use pyo3::prelude::*;

    use commfuse_core::analyzer::{analyze as analyze_src, graph_to_json, render_graph};
    use commfuse_core::cascade::sim::{sim_compile, sim_latency, sim_verify};
    use commfuse_core::cascade::{score_from_latency, SimCostModel};
    use commfuse_core::directive::{
        conservative_directive, enumerate_concrete_space, parse_directive, render_directive, Backend,
        OptimizationDirective,
    };
    use commfuse_core::evolve::{apply_diff as apply_diff_core, choose_phase, embedding_text};
    use commfuse_core::store::{cosine_similarity, HashEmbedder};

    fn err(e: impl std::fmt::Display) -> PyErr {
        PyValueError::new_err(e.to_string())
    }

    #[pyclass(frozen, eq, skip_from_py_object, module = "commfuse")]
    #[derive(Clone, PartialEq)]
    pub struct Directive {
        inner: OptimizationDirective,
    }

    #[pymethods]
    impl Directive {
        /// Parse a YAML `optimization_directive` block.
        #[new]
        fn new(text: &str) -> PyResult<Self> {
            parse_directive(text).map(|inner| Self { inner }).map_err(err)
        }

        #[staticmethod]
        fn conservative(backend: &str) -> PyResult<Self> {
            let b: Backend = backend.parse().map_err(err)?;
            Ok(Self {
                inner: conservative_directive(b),
            })
        }

        #[getter]
        fn backend(&self) -> String {
            self.inner.backend.to_string()
        }

        #[getter]
        fn issuer(&self) -> String {
            self.inner.issuer.to_string()
        }

        #[getter]
        fn placement(&self) -> String {
            self.inner.placement().to_string()
        }

        #[getter]
        fn sync_scope(&self) -> String {
            self.inner.sync_scope().to_string()
        }

        #[getter]
        fn chunk_size(&self) -> String {
            self.inner.chunk_size().to_string()
        }

        fn render(&self) -> String {
            render_directive(&self.inner)
        }

        fn __repr__(&self) -> String {
            format!(
                "Directive({}, {}, {:?}, {:?}, {:?})",
                self.inner.backend,
                self.inner.issuer,
                self.inner.placement(),
                self.inner.sync_scope(),
                self.inner.chunk_size()
            )
        }
    }

    /// All (backend, issuer) pairs.
    #[pyfunction]
    fn concrete_space() -> Vec<(String, String)> {
        enumerate_concrete_space()
            .into_iter()
            .map(|(b, i)| (b.to_string(), i.to_string()))
            .collect()
    }

    /// Rendered communication graph of a CUDA source.
    #[pyfunction]
    fn analyze(source: &str) -> PyResult<String> {
        analyze_src(source).map(|g| render_graph(&g)).map_err(err)
    }

    #[pyfunction]
    fn analyze_json(source: &str) -> PyResult<String> {
        analyze_src(source).map(|g| graph_to_json(&g)).map_err(err)
    }

    #[pyfunction]
    fn score(latency_ms: f64) -> PyResult<f64> {
        score_from_latency(latency_ms).map_err(err)
    }

    /// "Explore" or "Exploit" for generation `g` of `total`.
    #[pyfunction]
    fn phase(g: u32, total: u32, alpha: f64) -> &'static str {
        choose_phase(g, total, alpha).as_str()
    }

    /// Apply an edit script to a marked program; edits outside evolve
    /// blocks raise ValueError.
    #[pyfunction]
    fn apply_diff(parent: &str, patch: &str) -> PyResult<String> {
        apply_diff_core(parent, patch).map_err(err)
    }

    #[pyfunction]
    fn embed(source: &str, directive: &Directive) -> Vec<f64> {
        HashEmbedder::default().vector(&embedding_text(source, &directive.inner))
    }

    #[pyfunction]
    fn cosine(u: Vec<f64>, v: Vec<f64>) -> PyResult<f64> {
        cosine_similarity(&u, &v).map_err(err)
    }

    /// Simulated latency in ms, or ValueError with the compile/verify
    /// diagnostics.
    #[pyfunction]
    fn simulate(source: &str, directive: &Directive) -> PyResult<f64> {
        let m = SimCostModel::default();
        sim_compile(source, &directive.inner, &m).map_err(err)?;
        sim_verify(source, &directive.inner, &m).map_err(err)?;
        Ok(sim_latency(source, &directive.inner, &m))
    }

    #[pymodule_init]
    fn init(m: &Bound<'_, PyModule>) -> PyResult<()> {
        m.add("__version__", env!("CARGO_PKG_VERSION"))
    }
}
