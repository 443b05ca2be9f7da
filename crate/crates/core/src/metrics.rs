//! Error metrics between predicted and ground-truth speeds.
//!
//! Prediction and truth tables are CSV with header `id,speed_kmh` and are
//! joined by row position, not by id. The accuracy figure aggregates first:
//! `100 - |sum(P) / sum(A) - 1| * 100`.

use std::fmt::Write as _;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Predicted-vs-measured table from the field evaluation, in original row
/// order. Columns: `car_id,predicted,actual`.
pub const TABLE1_CSV: &str = include_str!("../../../fixtures/table1.csv");

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("no rows to evaluate")]
    EmptyInput,
    #[error("prediction table has {predictions} rows but truth table has {truth}")]
    RowCountMismatch { predictions: usize, truth: usize },
    #[error("sum of actual speeds is zero")]
    ZeroActualSum,
    #[error("parse error: {0}")]
    ParseError(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPair {
    pub predicted: f64,
    pub actual: f64,
}

impl EvalPair {
    pub fn new(predicted: f64, actual: f64) -> Self {
        Self { predicted, actual }
    }

    pub fn error(&self) -> f64 {
        self.predicted - self.actual
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub sse: f64,
    pub sae: f64,
    pub mae: f64,
    pub rmse: f64,
    pub accuracy_pct: f64,
}

impl EvalReport {
    /// JSON document with rmse kept to 4 decimals.
    pub fn to_json(&self) -> String {
        let doc = EvalReport {
            rmse: (self.rmse * 1e4).round() / 1e4,
            ..*self
        };
        serde_json::to_string_pretty(&doc).expect("report serializes") + "\n"
    }
}

fn nonempty(pairs: &[EvalPair]) -> Result<(), MetricsError> {
    if pairs.is_empty() {
        Err(MetricsError::EmptyInput)
    } else {
        Ok(())
    }
}

pub fn sse(pairs: &[EvalPair]) -> f64 {
    pairs.iter().map(|p| p.error().powi(2)).sum()
}

pub fn sae(pairs: &[EvalPair]) -> f64 {
    pairs.iter().map(|p| p.error().abs()).sum()
}

pub fn mae(pairs: &[EvalPair]) -> Result<f64, MetricsError> {
    nonempty(pairs)?;
    Ok(sae(pairs) / pairs.len() as f64)
}

pub fn rmse(pairs: &[EvalPair]) -> Result<f64, MetricsError> {
    nonempty(pairs)?;
    Ok((sse(pairs) / pairs.len() as f64).sqrt())
}

pub fn accuracy(pairs: &[EvalPair]) -> Result<f64, MetricsError> {
    let sum_p: f64 = pairs.iter().map(|p| p.predicted).sum();
    let sum_a: f64 = pairs.iter().map(|p| p.actual).sum();
    if sum_a == 0.0 {
        return Err(MetricsError::ZeroActualSum);
    }
    Ok(100.0 - (sum_p / sum_a - 1.0).abs() * 100.0)
}

pub fn report(pairs: &[EvalPair]) -> Result<EvalReport, MetricsError> {
    nonempty(pairs)?;
    Ok(EvalReport {
        n: pairs.len(),
        sse: sse(pairs),
        sae: sae(pairs),
        mae: mae(pairs)?,
        rmse: rmse(pairs)?,
        accuracy_pct: accuracy(pairs)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedRow {
    pub id: String,
    pub speed_kmh: f64,
}

/// Reads an `id,speed_kmh` table.
pub fn read_speed_rows<R: Read>(reader: R) -> Result<Vec<SpeedRow>, MetricsError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| MetricsError::ParseError(e.to_string()))?
        .clone();
    if headers.is_empty() {
        return Ok(Vec::new());
    }
    if headers.iter().collect::<Vec<_>>() != ["id", "speed_kmh"] {
        return Err(MetricsError::ParseError(format!(
            "expected header id,speed_kmh, found {}",
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize::<SpeedRow>().enumerate() {
        let row = rec.map_err(|e| MetricsError::ParseError(format!("row {}: {e}", i + 1)))?;
        if !row.speed_kmh.is_finite() || row.speed_kmh < 0.0 {
            return Err(MetricsError::ParseError(format!(
                "row {}: speed {} must be finite and nonnegative",
                i + 1,
                row.speed_kmh
            )));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_speed_rows(rows: &[SpeedRow]) -> String {
    let mut out = String::from("id,speed_kmh\n");
    for r in rows {
        let _ = writeln!(out, "{},{}", r.id, r.speed_kmh);
    }
    out
}

/// Positional join of two `id,speed_kmh` tables.
pub fn join_tables<P: Read, T: Read>(predictions: P, truth: T) -> Result<Vec<EvalPair>, MetricsError> {
    let pred = read_speed_rows(predictions)?;
    let truth = read_speed_rows(truth)?;
    if pred.len() != truth.len() {
        return Err(MetricsError::RowCountMismatch {
            predictions: pred.len(),
            truth: truth.len(),
        });
    }
    let pairs: Vec<EvalPair> = pred
        .iter()
        .zip(&truth)
        .map(|(p, t)| EvalPair::new(p.speed_kmh, t.speed_kmh))
        .collect();
    nonempty(&pairs)?;
    Ok(pairs)
}

pub fn evaluate<P: Read, T: Read>(predictions: P, truth: T) -> Result<EvalReport, MetricsError> {
    report(&join_tables(predictions, truth)?)
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
pub struct FixtureRow {
    pub car_id: u32,
    pub predicted: f64,
    pub actual: f64,
}

pub fn parse_fixture(csv_text: &str) -> Result<Vec<FixtureRow>, MetricsError> {
    csv::Reader::from_reader(csv_text.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| MetricsError::ParseError(e.to_string()))
}

pub fn table1() -> Vec<FixtureRow> {
    parse_fixture(TABLE1_CSV).expect("bundled fixture parses")
}

/// Splits fixture rows into (predictions, truth) tables in the
/// `id,speed_kmh` format.
pub fn split_fixture(rows: &[FixtureRow]) -> (String, String) {
    let pred: Vec<SpeedRow> = rows
        .iter()
        .map(|r| SpeedRow { id: r.car_id.to_string(), speed_kmh: r.predicted })
        .collect();
    let truth: Vec<SpeedRow> = rows
        .iter()
        .map(|r| SpeedRow { id: r.car_id.to_string(), speed_kmh: r.actual })
        .collect();
    (write_speed_rows(&pred), write_speed_rows(&truth))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlotDocuments {
    /// `pred_vs_actual.svg`
    pub pred_vs_actual: String,
    /// `mae_vs_rmse.svg`
    pub mae_vs_rmse: String,
}

pub const PRED_VS_ACTUAL_SVG: &str = "pred_vs_actual.svg";
pub const MAE_VS_RMSE_SVG: &str = "mae_vs_rmse.svg";

const W: f64 = 640.0;
const H: f64 = 400.0;
const MARGIN: f64 = 50.0;

fn svg_open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{title}</text>"#,
        W / 2.0
    );
    let _ = writeln!(
        out,
        r#"<path d="M{MARGIN} {MARGIN} V{} H{}" stroke="black" fill="none"/>"#,
        H - MARGIN,
        W - MARGIN
    );
}

fn nice_max(v: f64) -> f64 {
    if v <= 0.0 {
        1.0
    } else {
        (v * 1.1).ceil()
    }
}

fn polyline(out: &mut String, class: &str, color: &str, pts: &[(f64, f64)]) {
    let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let _ = writeln!(
        out,
        r#"<polyline class="{class}" points="{}" stroke="{color}" fill="none" stroke-width="1.5"/>"#,
        coords.join(" ")
    );
}

/// Renders the two comparison charts. Output depends only on the inputs.
/// Plotted values are carried in `data-value` attributes.
pub fn emit_plots(report: &EvalReport, pairs: &[EvalPair]) -> Result<PlotDocuments, MetricsError> {
    nonempty(pairs)?;
    let plot_w = W - 2.0 * MARGIN;
    let plot_h = H - 2.0 * MARGIN;

    let mut a = String::new();
    svg_open(&mut a, "Predicted vs actual speed (km/h)");
    let y_max = nice_max(
        pairs
            .iter()
            .flat_map(|p| [p.predicted, p.actual])
            .fold(0.0, f64::max),
    );
    let n = pairs.len();
    let x_at = |i: usize| {
        if n == 1 {
            MARGIN + plot_w / 2.0
        } else {
            MARGIN + plot_w * i as f64 / (n - 1) as f64
        }
    };
    let y_at = |v: f64| H - MARGIN - plot_h * v / y_max;
    let pred: Vec<_> = pairs.iter().enumerate().map(|(i, p)| (x_at(i), y_at(p.predicted))).collect();
    let act: Vec<_> = pairs.iter().enumerate().map(|(i, p)| (x_at(i), y_at(p.actual))).collect();
    polyline(&mut a, "predicted", "#d62728", &pred);
    polyline(&mut a, "actual", "#1f77b4", &act);
    for (i, p) in pairs.iter().enumerate() {
        let _ = writeln!(
            a,
            r##"<circle class="predicted" cx="{:.2}" cy="{:.2}" r="3" fill="#d62728" data-value="{}"/>"##,
            pred[i].0, pred[i].1, p.predicted
        );
        let _ = writeln!(
            a,
            r##"<circle class="actual" cx="{:.2}" cy="{:.2}" r="3" fill="#1f77b4" data-value="{}"/>"##,
            act[i].0, act[i].1, p.actual
        );
    }
    let _ = writeln!(
        a,
        r#"<text x="{MARGIN}" y="{}" font-family="sans-serif" font-size="12">0</text>"#,
        H - MARGIN + 16.0
    );
    let _ = writeln!(
        a,
        r#"<text x="4" y="{}" font-family="sans-serif" font-size="12">{y_max}</text>"#,
        MARGIN + 4.0
    );
    let _ = writeln!(
        a,
        r##"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="#d62728">predicted</text>"##,
        W - MARGIN - 140.0,
        MARGIN
    );
    let _ = writeln!(
        a,
        r##"<text x="{}" y="{}" font-family="sans-serif" font-size="12" fill="#1f77b4">actual</text>"##,
        W - MARGIN - 60.0,
        MARGIN
    );
    a.push_str("</svg>\n");

    let mut b = String::new();
    svg_open(&mut b, "MAE vs RMSE (km/h)");
    let bar_max = nice_max(report.mae.max(report.rmse));
    let bar_w = plot_w / 5.0;
    for (i, (label, value, color)) in [("MAE", report.mae, "#2ca02c"), ("RMSE", report.rmse, "#9467bd")]
        .into_iter()
        .enumerate()
    {
        let height = plot_h * value / bar_max;
        let x = MARGIN + bar_w * (1.0 + 2.0 * i as f64);
        let _ = writeln!(
            b,
            r#"<rect class="bar" id="{}" x="{x:.2}" y="{:.2}" width="{bar_w:.2}" height="{height:.2}" fill="{color}" data-value="{value:.4}"/>"#,
            label.to_lowercase(),
            H - MARGIN - height
        );
        let _ = writeln!(
            b,
            r#"<text x="{:.2}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12">{label} {value:.2}</text>"#,
            x + bar_w / 2.0,
            H - MARGIN + 16.0
        );
    }
    b.push_str("</svg>\n");

    Ok(PlotDocuments {
        pred_vs_actual: a,
        mae_vs_rmse: b,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairs(v: &[(f64, f64)]) -> Vec<EvalPair> {
        v.iter().map(|&(p, a)| EvalPair::new(p, a)).collect()
    }

    fn bar_value(svg: &str, id: &str) -> f64 {
        let tag = svg
            .lines()
            .find(|l| l.contains(&format!(r#"id="{id}""#)))
            .unwrap();
        let start = tag.find("data-value=\"").unwrap() + 12;
        let end = start + tag[start..].find('"').unwrap();
        tag[start..end].parse().unwrap()
    }

    #[test]
    fn mae_examples() {
        assert_eq!(mae(&pairs(&[(3., 3.), (50., 50.)])).unwrap(), 0.0);
        assert_eq!(mae(&pairs(&[(2., 0.), (0., 2.)])).unwrap(), 2.0);
        assert_eq!(mae(&[]), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&pairs(&[(3., 3.), (7., 7.)])).unwrap(), 0.0);
        assert_eq!(rmse(&pairs(&[(3., 0.)])).unwrap(), 3.0);
        assert_eq!(rmse(&[]), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn accuracy_examples() {
        assert_eq!(accuracy(&pairs(&[(10., 10.), (20., 20.)])).unwrap(), 100.0);
        assert!((accuracy(&pairs(&[(1695., 1581.)])).unwrap() - 92.79).abs() < 0.005);
        assert_eq!(accuracy(&pairs(&[(20., 10.), (40., 20.)])).unwrap(), 0.0);
        assert_eq!(accuracy(&pairs(&[(1., 0.)])), Err(MetricsError::ZeroActualSum));
    }

    #[test]
    fn fixture_has_forty_rows_and_printed_column_totals() {
        let rows = table1();
        assert_eq!(rows.len(), 40);
        assert_eq!(rows.iter().map(|r| r.predicted).sum::<f64>(), 1695.0);
        assert_eq!(rows.iter().map(|r| r.actual).sum::<f64>(), 1581.0);
        // repeated ids are preserved in place
        assert_eq!(rows.iter().filter(|r| r.car_id == 62).count(), 2);
        assert_eq!(rows.iter().filter(|r| r.car_id == 145).count(), 2);
    }

    #[test]
    fn fixture_error_sums_match_row_by_row_oracle() {
        // Independent oracle: the per-row (P-A)^2 and |P-A| values as
        // printed beside each row of the source table, in row order.
        let sq = [
            16, 1, 9, 16, 36, 9, 0, 9, 9, 4, 16, 0, 4, 16, 36, 4, 4, 9, 25, 16, 25, 36, 64, 36,
            16, 49, 25, 4, 25, 49, 9, 49, 16, 9, 36, 9, 0, 9, 16, 9,
        ];
        let ab = [
            4, 1, 3, 4, 6, 3, 0, 3, 3, 2, 4, 0, 2, 4, 6, 2, 2, 3, 5, 4, 5, 6, 8, 6, 4, 7, 5, 2,
            5, 7, 3, 7, 4, 3, 6, 3, 0, 3, 4, 3,
        ];
        let p: Vec<_> = table1().iter().map(|r| EvalPair::new(r.predicted, r.actual)).collect();
        assert_eq!(sse(&p), sq.iter().sum::<i32>() as f64);
        assert_eq!(sae(&p), ab.iter().sum::<i32>() as f64);
        for (i, pair) in p.iter().enumerate() {
            assert_eq!(pair.error().powi(2), sq[i] as f64);
            assert_eq!(pair.error().abs(), ab[i] as f64);
        }
    }

    #[test]
    fn evaluate_errors() {
        assert_eq!(evaluate("".as_bytes(), "".as_bytes()), Err(MetricsError::EmptyInput));
        assert_eq!(
            evaluate("id,speed_kmh\n".as_bytes(), "id,speed_kmh\n".as_bytes()),
            Err(MetricsError::EmptyInput)
        );
        assert_eq!(
            evaluate("id,speed_kmh\n1,30\n2,40\n".as_bytes(), "id,speed_kmh\n1,30\n".as_bytes()),
            Err(MetricsError::RowCountMismatch { predictions: 2, truth: 1 })
        );
        assert!(matches!(
            evaluate("id,speed\n1,30\n".as_bytes(), "id,speed_kmh\n1,30\n".as_bytes()),
            Err(MetricsError::ParseError(_))
        ));
        assert!(matches!(
            evaluate("id,speed_kmh\n1,fast\n".as_bytes(), "id,speed_kmh\n1,30\n".as_bytes()),
            Err(MetricsError::ParseError(_))
        ));
        assert!(matches!(
            evaluate("id,speed_kmh\n1,-3\n".as_bytes(), "id,speed_kmh\n1,30\n".as_bytes()),
            Err(MetricsError::ParseError(_))
        ));
    }

    #[test]
    fn evaluate_joins_by_position_not_id() {
        let r = evaluate(
            "id,speed_kmh\n9,30\n9,40\n".as_bytes(),
            "id,speed_kmh\n1,32\n2,40\n".as_bytes(),
        )
        .unwrap();
        assert_eq!((r.n, r.sse, r.sae), (2, 4.0, 2.0));
    }

    #[test]
    fn plot_examples() {
        let p = pairs(&[(50., 50.)]);
        let r = report(&p).unwrap();
        let docs = emit_plots(&r, &p).unwrap();
        assert_eq!(bar_value(&docs.mae_vs_rmse, "mae"), 0.0);
        assert_eq!(bar_value(&docs.mae_vs_rmse, "rmse"), 0.0);

        let p = pairs(&[(54., 50.), (26., 30.)]);
        let r = report(&p).unwrap();
        let docs = emit_plots(&r, &p).unwrap();
        assert_eq!(bar_value(&docs.mae_vs_rmse, "mae"), 4.0);
        assert_eq!(bar_value(&docs.mae_vs_rmse, "rmse"), 4.0);
        assert_eq!(docs.pred_vs_actual.matches("<circle").count(), 4);
        assert_eq!(emit_plots(&r, &p).unwrap(), docs);
        assert!(emit_plots(&r, &[]).is_err());
    }

    #[test]
    fn report_json_keys() {
        let r = report(&pairs(&[(3., 0.), (1., 1.)])).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys.len(), 6);
        for k in ["n", "sse", "sae", "mae", "rmse", "accuracy_pct"] {
            assert!(v.get(k).is_some(), "{k}");
        }
        assert_eq!(v["rmse"], 2.1213);
    }

    fn arb_pairs() -> impl Strategy<Value = Vec<EvalPair>> {
        prop::collection::vec((0.0f64..200.0, 0.0f64..200.0), 1..50)
            .prop_map(|v| v.into_iter().map(|(p, a)| EvalPair::new(p, a)).collect())
    }

    proptest! {
        #[test]
        fn mae_never_exceeds_rmse(p in arb_pairs()) {
            prop_assert!(mae(&p).unwrap() <= rmse(&p).unwrap() * (1.0 + 1e-12));
        }

        #[test]
        fn symmetric_under_swap(p in arb_pairs()) {
            let swapped: Vec<_> = p.iter().map(|e| EvalPair::new(e.actual, e.predicted)).collect();
            prop_assert_eq!(mae(&p).unwrap(), mae(&swapped).unwrap());
            prop_assert_eq!(rmse(&p).unwrap(), rmse(&swapped).unwrap());
        }
    }
}
