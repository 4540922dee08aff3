//! JSON file formats for plants and controllers, tabulated plant data, and
//! CSV output.
//!
//! Matrices are stored as arrays of rows. Every file carries a `format`
//! tag: `ph-plant/v1`, `sampled-plant/v1`, `ph-form/v1` or
//! `state-space/v1`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::{Complex, DMatrix};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::hinf::SigmaRow;
use crate::linalg::CMatrix;
use crate::lti::{eval_plant, PlantDims, PlantEvaluation, PlantResponse};
use crate::passivity::PopovRow;
use crate::ph::{PhForm, PhPlant};
use crate::statespace::StateSpace;

pub const PH_PLANT_FORMAT: &str = "ph-plant/v1";
pub const SAMPLED_PLANT_FORMAT: &str = "sampled-plant/v1";
pub const PH_FORM_FORMAT: &str = "ph-form/v1";
pub const STATE_SPACE_FORMAT: &str = "state-space/v1";

type Rows = Vec<Vec<f64>>;

fn to_rows(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// Reads a matrix of known shape. Empty row lists are accepted for shapes
/// with no rows, and empty rows for shapes with no columns.
fn from_rows(field: &str, rows: &Rows, shape: (usize, usize)) -> Result<DMatrix<f64>> {
    let (r, c) = shape;
    if rows.len() != r {
        return Err(Error::Schema(format!("field `{field}`: {} rows, expected {r}", rows.len())));
    }
    for (i, row) in rows.iter().enumerate() {
        if row.len() != c {
            return Err(Error::Schema(format!(
                "field `{field}`: row {i} has {} entries, expected {c}",
                row.len()
            )));
        }
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::Schema(format!("field `{field}`: entry ({i}, {j}) is not finite")));
        }
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

fn width(rows: &Rows) -> Option<usize> {
    rows.first().map(Vec::len)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhFormFile {
    format: String,
    j: Rows,
    r: Rows,
    q: Rows,
    g: Rows,
    f: Rows,
    s: Rows,
    n: Rows,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct PhPlantFile {
    format: String,
    j: Rows,
    r: Rows,
    q: Rows,
    g: Rows,
    f: Rows,
    s: Rows,
    n: Rows,
    b1: Rows,
    c1: Rows,
    d11: Rows,
    d12: Rows,
    d21: Rows,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StateSpaceFile {
    format: String,
    a: Rows,
    b: Rows,
    c: Rows,
    d: Rows,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ComplexRows {
    re: Rows,
    im: Rows,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampleEntry {
    omega: f64,
    p11: ComplexRows,
    p12: ComplexRows,
    p21: ComplexRows,
    p22: ComplexRows,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SampledPlantFile {
    format: String,
    m1: usize,
    p1: usize,
    m: usize,
    p2: usize,
    samples: Vec<SampleEntry>,
}

fn schema<T: for<'de> Deserialize<'de>>(value: Value, what: &str) -> Result<T> {
    serde_json::from_value(value).map_err(|e| Error::Schema(format!("{what}: {e}")))
}

fn ph_form_from_parts(
    j: &Rows,
    r: &Rows,
    q: &Rows,
    g: &Rows,
    f: &Rows,
    s: &Rows,
    n: &Rows,
) -> Result<PhForm> {
    let states = j.len();
    let ports = s.len();
    let sq = (states, states);
    let sp = (states, ports);
    let pp = (ports, ports);
    PhForm::new(
        from_rows("j", j, sq)?,
        from_rows("r", r, sq)?,
        from_rows("q", q, sq)?,
        from_rows("g", g, sp)?,
        from_rows("f", f, sp)?,
        from_rows("s", s, pp)?,
        from_rows("n", n, pp)?,
    )
}

fn ph_form_file(ph: &PhForm) -> PhFormFile {
    PhFormFile {
        format: PH_FORM_FORMAT.into(),
        j: to_rows(ph.j()),
        r: to_rows(ph.r()),
        q: to_rows(ph.q()),
        g: to_rows(ph.g()),
        f: to_rows(ph.f()),
        s: to_rows(ph.s()),
        n: to_rows(ph.n()),
    }
}

fn ph_plant_file(plant: &PhPlant) -> PhPlantFile {
    let ph = plant.ph();
    PhPlantFile {
        format: PH_PLANT_FORMAT.into(),
        j: to_rows(ph.j()),
        r: to_rows(ph.r()),
        q: to_rows(ph.q()),
        g: to_rows(ph.g()),
        f: to_rows(ph.f()),
        s: to_rows(ph.s()),
        n: to_rows(ph.n()),
        b1: to_rows(plant.b1()),
        c1: to_rows(plant.c1()),
        d11: to_rows(plant.d11()),
        d12: to_rows(plant.d12()),
        d21: to_rows(plant.d21()),
    }
}

fn ph_plant_from_file(f: PhPlantFile) -> Result<PhPlant> {
    let ph = ph_form_from_parts(&f.j, &f.r, &f.q, &f.g, &f.f, &f.s, &f.n)?;
    let n = ph.states();
    let m = ph.ports();
    let p1 = f.c1.len();
    let m1 = width(&f.b1).or_else(|| width(&f.d21)).or_else(|| width(&f.d11)).unwrap_or(0);
    let b1 = from_rows("b1", &f.b1, (n, m1))?;
    let c1 = from_rows("c1", &f.c1, (p1, n))?;
    let d11 = from_rows("d11", &f.d11, (p1, m1))?;
    let d12 = from_rows("d12", &f.d12, (p1, m))?;
    let d21 = from_rows("d21", &f.d21, (m, m1))?;
    PhPlant::new(ph, b1, c1, d11, d12, d21)
}

fn format_tag(value: &Value) -> Result<String> {
    value
        .get("format")
        .and_then(Value::as_str)
        .map(str::to_owned)
        .ok_or_else(|| Error::Schema("missing string field `format`".into()))
}

fn read_json(path: &Path) -> Result<Value> {
    let reader = BufReader::new(File::open(path)?);
    serde_json::from_reader(reader).map_err(|e| Error::Schema(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn plant_to_json(plant: &PhPlant) -> Result<String> {
    Ok(serde_json::to_string_pretty(&ph_plant_file(plant))?)
}

pub fn plant_from_json(text: &str) -> Result<PhPlant> {
    let value: Value = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
    match load_plant_value(value)? {
        LoadedPlant::Model(p) => Ok(p),
        LoadedPlant::Sampled(_) => Err(Error::Schema(format!("expected `{PH_PLANT_FORMAT}`"))),
    }
}

pub fn save_plant(plant: &PhPlant, path: &Path) -> Result<()> {
    write_json(path, &ph_plant_file(plant))
}

/// A plant read from disk.
#[allow(clippy::large_enum_variant)]
pub enum LoadedPlant {
    Model(PhPlant),
    Sampled(SampledPlant),
}

fn load_plant_value(value: Value) -> Result<LoadedPlant> {
    match format_tag(&value)?.as_str() {
        PH_PLANT_FORMAT => Ok(LoadedPlant::Model(ph_plant_from_file(schema(value, PH_PLANT_FORMAT)?)?)),
        SAMPLED_PLANT_FORMAT => Ok(LoadedPlant::Sampled(SampledPlant::from_file(schema(
            value,
            SAMPLED_PLANT_FORMAT,
        )?)?)),
        other => Err(Error::Schema(format!(
            "unknown plant format `{other}`, expected `{PH_PLANT_FORMAT}` or `{SAMPLED_PLANT_FORMAT}`"
        ))),
    }
}

/// Reads a `ph-plant/v1` or `sampled-plant/v1` file. Models are checked
/// against the port-Hamiltonian constraints.
pub fn load_plant(path: &Path) -> Result<LoadedPlant> {
    load_plant_value(read_json(path)?)
}

/// A controller read from disk.
#[derive(Debug, Clone)]
pub enum LoadedController {
    Ph(PhForm),
    StateSpace(StateSpace),
}

impl LoadedController {
    pub fn to_state_space(&self) -> StateSpace {
        match self {
            LoadedController::Ph(ph) => ph.to_state_space(),
            LoadedController::StateSpace(ss) => ss.clone(),
        }
    }
}

pub fn save_controller(ph: &PhForm, path: &Path) -> Result<()> {
    write_json(path, &ph_form_file(ph))
}

pub fn save_state_space(ss: &StateSpace, path: &Path) -> Result<()> {
    write_json(
        path,
        &StateSpaceFile {
            format: STATE_SPACE_FORMAT.into(),
            a: to_rows(ss.a()),
            b: to_rows(ss.b()),
            c: to_rows(ss.c()),
            d: to_rows(ss.d()),
        },
    )
}

/// Reads a `ph-form/v1` or `state-space/v1` file. Port-Hamiltonian forms
/// are only checked for consistent dimensions.
pub fn load_controller(path: &Path) -> Result<LoadedController> {
    let value = read_json(path)?;
    match format_tag(&value)?.as_str() {
        PH_FORM_FORMAT => {
            let f: PhFormFile = schema(value, PH_FORM_FORMAT)?;
            Ok(LoadedController::Ph(ph_form_from_parts(&f.j, &f.r, &f.q, &f.g, &f.f, &f.s, &f.n)?))
        }
        STATE_SPACE_FORMAT => {
            let f: StateSpaceFile = schema(value, STATE_SPACE_FORMAT)?;
            let n = f.a.len();
            let m = width(&f.b).or_else(|| width(&f.d)).unwrap_or(0);
            let p = f.c.len();
            Ok(LoadedController::StateSpace(StateSpace::new(
                from_rows("a", &f.a, (n, n))?,
                from_rows("b", &f.b, (n, m))?,
                from_rows("c", &f.c, (p, n))?,
                from_rows("d", &f.d, (p, m))?,
            )?))
        }
        other => Err(Error::Schema(format!(
            "unknown controller format `{other}`, expected `{PH_FORM_FORMAT}` or `{STATE_SPACE_FORMAT}`"
        ))),
    }
}

/// Plant known only through its transfer-function values at fixed
/// frequencies.
///
/// Evaluation succeeds exactly at the tabulated frequencies and fails with
/// [`Error::MissingSample`] elsewhere, so sample sets built on such a plant
/// are subsets of its frequency list.
#[derive(Debug, Clone)]
pub struct SampledPlant {
    dims: PlantDims,
    entries: Vec<Arc<PlantEvaluation>>,
}

fn complex_from(field: &str, c: &ComplexRows, shape: (usize, usize)) -> Result<CMatrix> {
    let re = from_rows(&format!("{field}.re"), &c.re, shape)?;
    let im = from_rows(&format!("{field}.im"), &c.im, shape)?;
    Ok(CMatrix::from_fn(shape.0, shape.1, |i, j| Complex::new(re[(i, j)], im[(i, j)])))
}

fn complex_rows(m: &CMatrix) -> ComplexRows {
    ComplexRows {
        re: to_rows(&m.map(|z| z.re)),
        im: to_rows(&m.map(|z| z.im)),
    }
}

impl SampledPlant {
    pub fn new(dims: PlantDims, mut entries: Vec<PlantEvaluation>) -> Result<Self> {
        let PlantDims { m1, p1, m, p2 } = dims;
        for e in &entries {
            let ok = e.p11.shape() == (p1, m1)
                && e.p12.shape() == (p1, m)
                && e.p21.shape() == (p2, m1)
                && e.p22.shape() == (p2, m);
            if !ok || !e.omega.is_finite() {
                return Err(Error::Schema(format!("sample at omega = {} has inconsistent blocks", e.omega)));
            }
        }
        entries.sort_by(|a, b| a.omega.total_cmp(&b.omega));
        if entries.windows(2).any(|w| w[0].omega == w[1].omega) {
            return Err(Error::Schema("duplicate sample frequency".into()));
        }
        if entries.is_empty() {
            return Err(Error::Schema("sampled plant has no samples".into()));
        }
        Ok(Self {
            dims,
            entries: entries.into_iter().map(Arc::new).collect(),
        })
    }

    /// Tabulates a model at the given frequencies.
    pub fn from_model(plant: &PhPlant, omegas: &[f64]) -> Result<Self> {
        let dims = PlantDims {
            m1: plant.disturbances(),
            p1: plant.performance_outputs(),
            m: plant.ports(),
            p2: plant.ports(),
        };
        let entries = omegas
            .iter()
            .map(|&w| eval_plant(plant, Complex::new(0.0, w)).map(|mut e| {
                e.omega = w;
                e
            }))
            .collect::<Result<Vec<_>>>()?;
        Self::new(dims, entries)
    }

    fn from_file(f: SampledPlantFile) -> Result<Self> {
        let dims = PlantDims {
            m1: f.m1,
            p1: f.p1,
            m: f.m,
            p2: f.p2,
        };
        let entries = f
            .samples
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let at = |name: &str| format!("samples[{i}].{name}");
                Ok(PlantEvaluation {
                    omega: s.omega,
                    p11: complex_from(&at("p11"), &s.p11, (f.p1, f.m1))?,
                    p12: complex_from(&at("p12"), &s.p12, (f.p1, f.m))?,
                    p21: complex_from(&at("p21"), &s.p21, (f.p2, f.m1))?,
                    p22: complex_from(&at("p22"), &s.p22, (f.p2, f.m))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(dims, entries)
    }

    fn to_file(&self) -> SampledPlantFile {
        SampledPlantFile {
            format: SAMPLED_PLANT_FORMAT.into(),
            m1: self.dims.m1,
            p1: self.dims.p1,
            m: self.dims.m,
            p2: self.dims.p2,
            samples: self
                .entries
                .iter()
                .map(|e| SampleEntry {
                    omega: e.omega,
                    p11: complex_rows(&e.p11),
                    p12: complex_rows(&e.p12),
                    p21: complex_rows(&e.p21),
                    p22: complex_rows(&e.p22),
                })
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, &self.to_file())
    }

    pub fn frequencies(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.omega).collect()
    }
}

impl PlantResponse for SampledPlant {
    fn dims(&self) -> PlantDims {
        self.dims
    }

    fn evaluate(&self, omega: f64) -> Result<Arc<PlantEvaluation>> {
        self.entries
            .binary_search_by(|e| e.omega.total_cmp(&omega))
            .map(|i| Arc::clone(&self.entries[i]))
            .map_err(|_| Error::MissingSample { omega })
    }

    /// Tabulated frequencies in `[lo, hi]`; when there are more than
    /// `count`, an evenly strided subset including both ends.
    fn grid(&self, lo: f64, hi: f64, count: usize) -> Vec<f64> {
        let inside: Vec<f64> = self
            .entries
            .iter()
            .map(|e| e.omega)
            .filter(|w| *w >= lo && *w <= hi)
            .collect();
        if inside.len() <= count || count == 0 {
            return if count == 0 { Vec::new() } else { inside };
        }
        if count == 1 {
            return vec![inside[0]];
        }
        let last = inside.len() - 1;
        let mut out: Vec<f64> = (0..count)
            .map(|i| inside[(i * last + (count - 1) / 2) / (count - 1)])
            .collect();
        out.dedup();
        out
    }
}

/// Writes `omega, sigma_1, …` rows with a header.
pub fn write_sigma_csv<W: Write>(writer: W, rows: &[SigmaRow]) -> Result<()> {
    let width = rows.iter().map(|r| r.sigma.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["omega".to_string()];
    header.extend((1..=width).map(|i| format!("sigma_{i}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.omega.to_string()];
        rec.extend(r.sigma.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `omega, eig_1, …` rows with a header.
pub fn write_popov_csv<W: Write>(writer: W, rows: &[PopovRow]) -> Result<()> {
    let width = rows.iter().map(|r| r.eigs.len()).max().unwrap_or(0);
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec!["omega".to_string()];
    header.extend((1..=width).map(|i| format!("eig_{i}")));
    w.write_record(&header)?;
    for r in rows {
        let mut rec = vec![r.omega.to_string()];
        rec.extend(r.eigs.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
