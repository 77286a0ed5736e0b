//! CSV ingestion and emission.
//!
//! One header row, UTF-8, '.' decimal separator. Dates are ISO-8601 days
//! (YYYY-MM-DD) and are stored as days since 1970-01-01.

use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};

use super::record::{Dataset, PropertyRecord};

/// Maps dataset roles to CSV column names. Columns listed in `features`
/// become the feature vector in declared order.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSchema {
    pub id: String,
    pub lat: String,
    pub lon: String,
    #[serde(default)]
    pub date: Option<String>,
    #[serde(default)]
    pub surface: Option<String>,
    pub price: String,
    pub features: Vec<String>,
}

impl CsvSchema {
    /// The conventional layout emitted by [`write_csv`]:
    /// `id,lat,lon[,date][,surface],price,f1..fk`.
    pub fn standard(feature_dim: usize, dated: bool, with_surface: bool) -> Self {
        Self {
            id: "id".into(),
            lat: "lat".into(),
            lon: "lon".into(),
            date: dated.then(|| "date".into()),
            surface: with_surface.then(|| "surface".into()),
            price: "price".into(),
            features: (1..=feature_dim).map(|i| format!("f{i}")).collect(),
        }
    }
}

fn column_index(header: &csv::StringRecord, name: &str) -> Result<usize> {
    header
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| Error::Schema(format!("missing column '{name}'")))
}

fn parse_f64(field: &str, row: usize, col: &str) -> Result<f64> {
    field.trim().parse::<f64>().map_err(|_| Error::Row {
        row,
        msg: format!("column '{col}': cannot parse '{field}' as a number"),
    })
}

fn parse_date(field: &str, row: usize, col: &str) -> Result<i64> {
    let date = NaiveDate::parse_from_str(field.trim(), "%Y-%m-%d").map_err(|_| Error::Row {
        row,
        msg: format!("column '{col}': cannot parse '{field}' as YYYY-MM-DD"),
    })?;
    Ok(date
        .signed_duration_since(NaiveDate::from_ymd_opt(1970, 1, 1).unwrap())
        .num_days())
}

/// Formats a days-since-epoch date back to YYYY-MM-DD.
pub(crate) fn format_date(days: i64) -> String {
    let epoch = NaiveDate::from_ymd_opt(1970, 1, 1).unwrap();
    (epoch + chrono::Duration::days(days))
        .format("%Y-%m-%d")
        .to_string()
}

/// Loads a dataset from a CSV file. All rows parse or the first offending
/// row is reported with its 1-based data row index.
pub fn load_csv(path: impl AsRef<Path>, schema: &CsvSchema) -> Result<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path.as_ref())?;
    let header = reader.headers()?.clone();

    let id_ix = column_index(&header, &schema.id)?;
    let lat_ix = column_index(&header, &schema.lat)?;
    let lon_ix = column_index(&header, &schema.lon)?;
    let price_ix = column_index(&header, &schema.price)?;
    let date_ix = schema
        .date
        .as_ref()
        .map(|c| column_index(&header, c))
        .transpose()?;
    let surface_ix = schema
        .surface
        .as_ref()
        .map(|c| column_index(&header, c))
        .transpose()?;
    let feature_ix: Vec<usize> = schema
        .features
        .iter()
        .map(|c| column_index(&header, c))
        .collect::<Result<_>>()?;

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row?;
        let field = |ix: usize| -> Result<&str> {
            row.get(ix).ok_or(Error::Row {
                row: row_no,
                msg: format!("expected at least {} fields, got {}", ix + 1, row.len()),
            })
        };

        let id = field(id_ix)?
            .trim()
            .parse::<u64>()
            .map_err(|_| Error::Row {
                row: row_no,
                msg: format!(
                    "column '{}': invalid id '{}'",
                    schema.id,
                    field(id_ix).unwrap_or("")
                ),
            })?;
        let lat = parse_f64(field(lat_ix)?, row_no, &schema.lat)?;
        let lon = parse_f64(field(lon_ix)?, row_no, &schema.lon)?;
        let price = parse_f64(field(price_ix)?, row_no, &schema.price)?;
        if price.is_nan() || price <= 0.0 {
            return Err(Error::Row {
                row: row_no,
                msg: format!("non-positive price {price}"),
            });
        }
        let date = match date_ix {
            Some(ix) => {
                let raw = field(ix)?;
                if raw.trim().is_empty() {
                    None
                } else {
                    Some(parse_date(raw, row_no, schema.date.as_ref().unwrap())?)
                }
            }
            None => None,
        };
        let surface = match surface_ix {
            Some(ix) => {
                let raw = field(ix)?;
                if raw.trim().is_empty() {
                    None
                } else {
                    Some(parse_f64(raw, row_no, schema.surface.as_ref().unwrap())?)
                }
            }
            None => None,
        };
        let mut features = Vec::with_capacity(feature_ix.len());
        for (&ix, name) in feature_ix.iter().zip(&schema.features) {
            let v = parse_f64(field(ix)?, row_no, name)?;
            if !v.is_finite() {
                return Err(Error::Row {
                    row: row_no,
                    msg: format!("column '{name}': non-finite feature value"),
                });
            }
            features.push(v);
        }

        let record = PropertyRecord {
            id,
            lat,
            lon,
            date,
            price,
            surface,
            features,
        };
        record.validate(feature_ix.len()).map_err(|e| Error::Row {
            row: row_no,
            msg: e.to_string(),
        })?;
        records.push(record);
    }

    Dataset::new(records)
}

/// Writes a dataset in the standard column layout
/// (`id,lat,lon[,date][,surface],price,f1..fk`).
pub fn write_csv(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    let dated = dataset.records().iter().any(|r| r.date.is_some());
    let with_surface = dataset.records().iter().any(|r| r.surface.is_some());
    let schema = CsvSchema::standard(dataset.feature_dim(), dated, with_surface);

    let mut writer = csv::Writer::from_path(path.as_ref())?;
    let mut header = vec![schema.id.clone(), schema.lat.clone(), schema.lon.clone()];
    if let Some(ref c) = schema.date {
        header.push(c.clone());
    }
    if let Some(ref c) = schema.surface {
        header.push(c.clone());
    }
    header.push(schema.price.clone());
    header.extend(schema.features.iter().cloned());
    writer.write_record(&header)?;

    for rec in dataset.records() {
        let mut row = vec![
            rec.id.to_string(),
            format!("{:.8}", rec.lat),
            format!("{:.8}", rec.lon),
        ];
        if dated {
            row.push(rec.date.map(format_date).unwrap_or_default());
        }
        if with_surface {
            row.push(rec.surface.map(|s| format!("{s:.4}")).unwrap_or_default());
        }
        row.push(format!("{:.4}", rec.price));
        row.extend(rec.features.iter().map(|f| format!("{f:.10}")));
        writer.write_record(&row)?;
    }
    writer.flush()?;
    Ok(())
}
