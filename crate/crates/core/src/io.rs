//! Market and outcome files (JSON) and matrix export (CSV).

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::demand::ShockConfig;
use crate::error::{Error, Result};
use crate::model::MarketSpec;

/// On-disk layout of a market file. Field order is the serialization order.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarketFile {
    pub passenger_types: Vec<String>,
    pub taxi_types: Vec<String>,
    pub n: Vec<f64>,
    pub m: Vec<f64>,
    pub alpha: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shocks: Option<ShockConfig>,
}

impl MarketFile {
    pub fn into_spec(self) -> Result<MarketSpec> {
        let (nx, ny) = (self.passenger_types.len(), self.taxi_types.len());
        let spec = MarketSpec {
            alpha: to_array("alpha", self.alpha, nx, ny)?,
            gamma: to_array("gamma", self.gamma, nx, ny)?,
            passenger_types: self.passenger_types,
            taxi_types: self.taxi_types,
            n: self.n,
            m: self.m,
            shocks: self.shocks,
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl From<&MarketSpec> for MarketFile {
    fn from(spec: &MarketSpec) -> Self {
        MarketFile {
            passenger_types: spec.passenger_types.clone(),
            taxi_types: spec.taxi_types.clone(),
            n: spec.n.clone(),
            m: spec.m.clone(),
            alpha: to_rows(&spec.alpha),
            gamma: to_rows(&spec.gamma),
            shocks: spec.shocks.clone(),
        }
    }
}

fn to_array(what: &str, rows: Vec<Vec<f64>>, nx: usize, ny: usize) -> Result<Array2<f64>> {
    let mismatch = |found: String| Error::DimensionMismatch {
        what: what.to_string(),
        expected: format!("{nx}x{ny}"),
        found,
    };
    if rows.len() != nx {
        let cols = rows.first().map_or(0, Vec::len);
        return Err(mismatch(format!("{}x{}", rows.len(), cols)));
    }
    if let Some((r, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != ny) {
        return Err(mismatch(format!("row {r} of length {}", row.len())));
    }
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((nx, ny), flat).map_err(|e| mismatch(e.to_string()))
}

fn to_rows<T: Copy>(a: &Array2<T>) -> Vec<Vec<T>> {
    a.rows().into_iter().map(|r| r.to_vec()).collect()
}

/// Parses a market from JSON text and validates it.
pub fn parse_market(text: &str, context: &str) -> Result<MarketSpec> {
    let file: MarketFile = serde_json::from_str(text).map_err(|source| Error::Json {
        context: context.to_string(),
        source,
    })?;
    file.into_spec()
}

pub fn market_to_json(spec: &MarketSpec) -> String {
    // Plain data; serialization cannot fail.
    serde_json::to_string_pretty(&MarketFile::from(spec)).expect("market serializes")
}

pub fn read_market(path: impl AsRef<Path>) -> Result<MarketSpec> {
    let path = path.as_ref();
    let text = read_text(path)?;
    parse_market(&text, &path.display().to_string())
}

pub fn write_market(spec: &MarketSpec, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &market_to_json(spec))
}

/// Reads any JSON document (outcomes, capacities, individual matchings).
pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = read_text(path)?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        context: "serialize".to_string(),
        source,
    })
}

/// Writes an outcome (or any serializable value) as pretty JSON.
pub fn write_outcome<T: Serialize>(outcome: &T, path: impl AsRef<Path>) -> Result<()> {
    write_text(path.as_ref(), &to_json(outcome)?)
}

pub(crate) fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Writes `text` plus a trailing newline.
pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    writeln!(f, "{text}").map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Formats a float with `digits` significant digits, like C's `%.{digits}g`.
pub fn fmt_sig(x: f64, digits: usize) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let digits = digits.max(1);
    let sci = format!("{:.*e}", digits - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent present");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= digits as i32 {
        let mantissa = trim_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{mantissa}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{x:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// CSV rendering of an X×Y matrix: a header row of taxi types and a header
/// column of passenger types, values at 12 significant digits.
pub fn matrix_csv(
    matrix: &Array2<f64>,
    passenger_types: &[String],
    taxi_types: &[String],
) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |source| Error::Csv {
        context: "matrix export".to_string(),
        source,
    };
    let mut header = vec![String::new()];
    header.extend(taxi_types.iter().cloned());
    w.write_record(&header).map_err(csv_err)?;
    for (x, row) in matrix.rows().into_iter().enumerate() {
        let mut record = vec![passenger_types[x].clone()];
        record.extend(row.iter().map(|&v| fmt_sig(v, 12)));
        w.write_record(&record).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_matrix_csv(
    matrix: &Array2<f64>,
    spec: &MarketSpec,
    path: impl AsRef<Path>,
) -> Result<()> {
    let text = matrix_csv(matrix, &spec.passenger_types, &spec.taxi_types)?;
    let path = path.as_ref();
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Serde adapter between `Array2<T>` and nested JSON arrays `[[...], ...]`.
pub mod nested {
    use ndarray::Array2;
    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<T, S>(a: &Array2<T>, s: S) -> Result<S::Ok, S::Error>
    where
        T: Serialize + Copy,
        S: Serializer,
    {
        super::to_rows(a).serialize(s)
    }

    pub fn deserialize<'de, T, D>(d: D) -> Result<Array2<T>, D::Error>
    where
        T: Deserialize<'de> + Copy,
        D: Deserializer<'de>,
    {
        let rows: Vec<Vec<T>> = Vec::deserialize(d)?;
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if let Some((r, row)) = rows.iter().enumerate().find(|(_, r)| r.len() != ncols) {
            return Err(D::Error::custom(format!(
                "ragged matrix: row {r} has {} entries, expected {ncols}",
                row.len()
            )));
        }
        let flat: Vec<T> = rows.into_iter().flatten().collect();
        Array2::from_shape_vec((nrows, ncols), flat).map_err(D::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demand::{Family, ShockSpec};
    use ndarray::array;

    fn sample() -> MarketSpec {
        MarketSpec {
            passenger_types: vec!["a".into(), "b".into()],
            taxi_types: vec!["t1".into(), "t2".into(), "t3".into()],
            n: vec![0.1, 2.0 / 3.0],
            m: vec![1.0, 1e-7, 3.25],
            alpha: array![[0.1, -2.5, 1e-300], [std::f64::consts::PI, 0.0, -0.0]],
            gamma: array![[1.0 / 3.0, 2.0, 3.0], [4.0, 5.0, 6.123456789012345]],
            shocks: Some(ShockConfig::uniform(ShockSpec::Iid {
                family: Family::Normal,
                sigma: 0.7,
                order: 32,
            })),
        }
    }

    #[test]
    fn market_round_trip_is_bit_exact() {
        let spec = sample();
        let back = parse_market(&market_to_json(&spec), "mem").unwrap();
        assert_eq!(back, spec);
        for (a, b) in spec.alpha.iter().zip(back.alpha.iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn missing_gamma_names_field() {
        let text = r#"{"passenger_types":["a"],"taxi_types":["t"],"n":[1],"m":[1],"alpha":[[0]]}"#;
        let err = parse_market(text, "f.json").unwrap_err();
        assert!(err.to_string().contains("gamma"), "{err}");
    }

    #[test]
    fn unknown_shock_kind_rejected() {
        let text = r#"{"passenger_types":["a"],"taxi_types":["t"],"n":[1],"m":[1],
            "alpha":[[0]],"gamma":[[0]],"shocks":{"kind":"probit","sigma":1}}"#;
        let err = parse_market(text, "f.json").unwrap_err();
        assert!(err.to_string().contains("probit"), "{err}");
    }

    #[test]
    fn ragged_matrix_is_dimension_mismatch() {
        let text = r#"{"passenger_types":["a","b"],"taxi_types":["t"],"n":[1,1],"m":[1],
            "alpha":[[0],[1,2]],"gamma":[[0],[0]]}"#;
        assert!(matches!(
            parse_market(text, "f").unwrap_err(),
            Error::DimensionMismatch { .. }
        ));
    }

    #[test]
    fn csv_export_shape() {
        let spec = sample();
        let text = matrix_csv(&spec.gamma, &spec.passenger_types, &spec.taxi_types).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 1 + spec.nx());
        assert_eq!(lines[0], ",t1,t2,t3");
        assert!(lines.iter().all(|l| l.split(',').count() == 1 + spec.ny()));
        assert_eq!(lines[1], "a,0.333333333333,2,3");
    }

    #[test]
    fn significant_digit_formatting() {
        assert_eq!(fmt_sig(1.0 / 3.0, 12), "0.333333333333");
        assert_eq!(fmt_sig(1.098612288668110, 12), "1.09861228867");
        assert_eq!(fmt_sig(2.0, 12), "2");
        assert_eq!(fmt_sig(-1.5e-9, 12), "-1.5e-09");
        assert_eq!(fmt_sig(123456789012345.0, 12), "1.23456789012e+14");
        assert_eq!(fmt_sig(0.0, 12), "0");
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        write_market(&sample(), &path).unwrap();
        assert_eq!(read_market(&path).unwrap(), sample());
    }
}
