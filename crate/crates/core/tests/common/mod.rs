#![allow(dead_code)]

use std::path::PathBuf;
use std::process::{Command, Output};
use std::thread;
use std::time::Duration;

use boxplain::data::{Column, ColumnData, TabularDataset};
use boxplain::model::FnPredictor;
use rand::{Rng, RngCore};
use serde_json::{json, Value as Json};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

/// Sum of the numeric cells of row `i`, left to right from 0.
pub fn sum_row(data: &TabularDataset, i: usize) -> f64 {
    let mut s = 0.0;
    for c in data.columns() {
        if let ColumnData::Numeric(v) = c.data() {
            s += v[i];
        }
    }
    s
}

pub fn sum_predictor() -> FnPredictor<impl Fn(&TabularDataset) -> boxplain::Result<Vec<f64>> + Send + Sync> {
    FnPredictor::new(|q: &TabularDataset| Ok((0..q.n_rows()).map(|i| sum_row(q, i)).collect()))
}

pub fn sum_command(mode: &str) -> String {
    format!("python3 {} {mode}", fixture("sum_model.py").display())
}

/// Mixed-kind table with awkward floats: tiny, huge, negative, many digits.
pub fn conformance_table(n: usize, rng: &mut impl RngCore) -> TabularDataset {
    let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1e3..1e3)).collect();
    let b: Vec<f64> = (0..n)
        .map(|i| match i % 4 {
            0 => rng.random::<f64>() * 1e-12,
            1 => rng.random::<f64>() * 1e12,
            2 => -rng.random::<f64>(),
            _ => (i as f64) / 3.0,
        })
        .collect();
    let d: Vec<String> = (0..n).map(|i| format!("lvl,{}", i % 5)).collect();
    let c: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0)).collect();
    TabularDataset::new(vec![
        Column::numeric("a", a),
        Column::numeric("b", b),
        Column::categorical("d", d),
        Column::numeric("c", c),
    ])
    .unwrap()
}

/// Random regression table with `p` features, some categorical, and a
/// target that depends on them non-linearly.
pub fn random_table(rng: &mut impl RngCore, n: usize, p: usize) -> (TabularDataset, Vec<f64>) {
    let mut columns = Vec::with_capacity(p);
    let mut y = vec![0.0; n];
    for j in 0..p {
        let name = format!("x{j}");
        if j % 3 == 2 {
            let k = rng.random_range(2..5usize);
            let levels: Vec<String> = (0..n).map(|_| format!("L{}", rng.random_range(0..k))).collect();
            for (yi, l) in y.iter_mut().zip(&levels) {
                *yi += l.len() as f64 + if l.ends_with('1') { 1.5 } else { -0.5 };
            }
            columns.push(Column::categorical(name, levels));
        } else {
            let v: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
            let w = rng.random_range(-3.0..3.0);
            for (yi, x) in y.iter_mut().zip(&v) {
                *yi += w * x + if j == 0 { x * x } else { 0.0 };
            }
            columns.push(Column::numeric(name, v));
        }
    }
    for yi in &mut y {
        *yi += rng.random_range(-0.3..0.3);
    }
    (TabularDataset::new(columns).unwrap(), y)
}

pub fn run_cli(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_boxplain"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

/// In-process HTTP model server for the JSON batch protocol.
///
/// Routes: `/ok`, `/short`, `/garbage`, `/fail` (500), `/slow`, `/nopred`,
/// `/auth` (requires `X-Api-Key: secret`).
pub struct HttpFixture {
    pub base: String,
}

impl HttpFixture {
    pub fn start() -> HttpFixture {
        let server = tiny_http::Server::http("127.0.0.1:0").expect("bind test server");
        let port = server.server_addr().to_ip().expect("ip listener").port();
        thread::spawn(move || {
            for request in server.incoming_requests() {
                thread::spawn(move || handle(request));
            }
        });
        HttpFixture {
            base: format!("http://127.0.0.1:{port}"),
        }
    }

    pub fn url(&self, route: &str) -> String {
        format!("{}/{route}", self.base)
    }
}

fn handle(mut request: tiny_http::Request) {
    let mut body = String::new();
    let _ = request.as_reader().read_to_string(&mut body);
    let route = request.url().trim_start_matches('/').to_string();
    let authorised = request
        .headers()
        .iter()
        .any(|h| h.field.equiv("X-Api-Key") && h.value.as_str() == "secret");
    let parsed: Json = serde_json::from_str(&body).unwrap_or(Json::Null);
    let mut predictions: Vec<Json> = parsed["rows"]
        .as_array()
        .map(|rows| {
            rows.iter()
                .map(|row| {
                    let mut s = 0.0;
                    for cell in row.as_array().unwrap() {
                        if let Some(v) = cell.as_f64() {
                            s += v;
                        }
                    }
                    json!(s)
                })
                .collect()
        })
        .unwrap_or_default();
    let (status, text) = match route.as_str() {
        "ok" => (200, json!({ "predictions": predictions }).to_string()),
        "auth" if authorised => (200, json!({ "predictions": predictions }).to_string()),
        "auth" => (401, "missing api key".to_string()),
        "short" => {
            predictions.pop();
            (200, json!({ "predictions": predictions }).to_string())
        }
        "garbage" => (200, "<html>surprise</html>".to_string()),
        "nopred" => (200, json!({ "scores": predictions }).to_string()),
        "fail" => (500, "internal model failure".to_string()),
        "slow" => {
            thread::sleep(Duration::from_secs(5));
            (200, json!({ "predictions": predictions }).to_string())
        }
        _ => (404, "no such route".to_string()),
    };
    let header = tiny_http::Header::from_bytes(&b"Content-Type"[..], &b"application/json"[..]).unwrap();
    let _ = request.respond(
        tiny_http::Response::from_string(text)
            .with_status_code(status)
            .with_header(header),
    );
}

/// Deterministic apartments-like CSV (surface, year, district, price) built
/// from integer arithmetic only.
pub fn apartments_csv(n: u32) -> String {
    let mut text = String::from("surface,year,district,price\n");
    for i in 0..n {
        let surface = 20.0 + f64::from((i * 37) % 130);
        let year = 1920 + (i * 53) % 90;
        let district = ["Mokotow", "Ochota", "Wola", "Srodmiescie"][(i % 4) as usize];
        let offset = [400.0, 0.0, -150.0, 900.0][(i % 4) as usize];
        let dy = f64::from(year) - 1965.0;
        let price = 3000.0 - 8.0 * surface + dy * dy / 2.0 + offset + f64::from((i * 7919) % 97);
        text.push_str(&format!("{surface},{year},{district},{price}\n"));
    }
    text
}
