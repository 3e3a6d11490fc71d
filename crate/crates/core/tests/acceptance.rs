//! Acceptance runner: one line per criterion, nonzero exit on any failure.

mod common;

use std::collections::BTreeMap;
use std::path::Path;
use std::time::{Duration, Instant};

use impactsel::config::PipelineConfig;
use impactsel::doe;
use impactsel::dsp;
use impactsel::features::{self, FeatureConfig, FeatureId, FeatureMatrix};
use impactsel::mlp::{self, MlpConfig};
use impactsel::pipeline::{self, ModelKind, Pipeline};
use impactsel::rng::SeededRng;
use impactsel::selection;
use impactsel::synthgen::{self, ImpactScenario, PanelConfig};
use nalgebra::DMatrix;
use ndarray::Array2;

type Check = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok { Ok(()) } else { Err(msg()) }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

fn random_burst(rng: &mut SeededRng, n: usize) -> Vec<f64> {
    let f = rng.uniform_range(0.01, 0.4);
    let decay = rng.uniform_range(0.001, 0.05);
    let start = rng.index(n / 4);
    (0..n)
        .map(|i| {
            let t = i.saturating_sub(start) as f64;
            let burst = if i >= start { (-decay * t).exp() * (2.0 * std::f64::consts::PI * f * t).sin() } else { 0.0 };
            burst + 0.02 * rng.gaussian()
        })
        .collect()
}

fn formula_exactness() -> Check {
    let mut rng = SeededRng::new(1);
    let cfg = FeatureConfig::default();
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let x = random_burst(&mut rng, 256);
        let v = features::extract_channel(&x, 1e5, &cfg).map_err(|e| e.to_string())?;
        let (pf, cf) = (v.get(FeatureId::PF), v.get(FeatureId::CF));
        worst = worst.max(rel_err(v.get(FeatureId::WPF).powi(2), pf * cf));
        if pf > 0.0 {
            worst = worst.max(rel_err(v.get(FeatureId::PCR) * cf, pf));
        } else {
            ensure(v.get(FeatureId::PCR) == 0.0, || "PCR nonzero at PF = 0".into())?;
        }
    }
    let ids = FeatureId::ALL;
    for _ in 0..20 {
        let clean = common::random_matrix(&mut rng, 50, &ids);
        let mut noisy = clean.values.clone();
        let spread = rng.uniform_range(0.01, 1.5);
        noisy.mapv_inplace(|v| v + spread * rng.gaussian());
        let noisy = FeatureMatrix::new(clean.ids.clone(), clean.row_ids.clone(), noisy).unwrap();
        let r = selection::robustness_scores(&clean, &noisy).map_err(|e| e.to_string())?;
        let w: Vec<f64> = (0..ids.len()).map(|_| rng.uniform()).collect();
        let s = selection::selection_scores(&w, &r);
        for j in 0..ids.len() {
            let rmse = ((0..50).map(|i| (clean.values[[i, j]] - noisy.values[[i, j]]).powi(2)).sum::<f64>() / 50.0).sqrt();
            let expect = if rmse >= 1.0 { 0.0 } else { 1.0 - rmse };
            ensure((r[j] - expect).abs() <= 1e-12, || format!("r {} vs {expect}", r[j]))?;
            ensure(s[j] == w[j] * r[j], || "s != w·r".into())?;
        }
    }
    ensure(worst < 1e-12, || format!("worst relative error {worst:.2e}"))?;
    Ok(format!("max rel err {worst:.1e}"))
}

fn dsp_conservation() -> Check {
    let mut rng = SeededRng::new(2);
    let (mut worst_psd, mut worst_wpt): (f64, f64) = (0.0, 0.0);
    for i in 0..100 {
        let n = 64 + rng.index(2000);
        let x = if i % 2 == 0 { common::random_signal(&mut rng, n) } else { random_burst(&mut rng, n) };
        let fs = rng.uniform_range(1e3, 1e6);
        let s = dsp::psd(&x, fs).map_err(|e| e.to_string())?;
        let win = dsp::hann(n);
        let ms = x.iter().zip(&win).map(|(a, w)| (a * w).powi(2)).sum::<f64>() / n as f64;
        worst_psd = worst_psd.max(rel_err(s.total_power(), ms));
        let w = dsp::wpt3(&x).map_err(|e| e.to_string())?;
        let e: f64 = x.iter().map(|v| v * v).sum();
        worst_wpt = worst_wpt.max(rel_err(w.total_energy(), e));
    }
    ensure(worst_psd < 1e-6 && worst_wpt < 1e-6, || format!("psd {worst_psd:.2e}, wpt {worst_wpt:.2e}"))?;
    Ok(format!("psd {worst_psd:.1e}, wpt {worst_wpt:.1e}"))
}

fn anova_oracle() -> Check {
    let mut rng = SeededRng::new(3);
    let (mut worst_ss, mut worst_add, mut worst_f): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for _ in 0..200 {
        let n = 2 + rng.index(6);
        let effect = rng.uniform_range(0.0, 5.0);
        let mut cell = |i: usize, j: usize| -> Vec<f64> {
            (0..n).map(|_| effect * (i as f64 - j as f64 * 0.5) + rng.gaussian()).collect()
        };
        let cells = [[cell(0, 0), cell(0, 1)], [cell(1, 0), cell(1, 1)]];
        let r = doe::two_way_anova(&cells).map_err(|e| e.to_string())?;
        let (a, b, ab, e, t) = common::brute_ss(&cells);
        for (x, y) in [(r.a.ss, a), (r.b.ss, b), (r.interaction.ss, ab), (r.ss_error, e), (r.ss_total, t)] {
            worst_ss = worst_ss.max((x - y).abs() / t.max(1.0));
        }
        worst_add = worst_add.max((r.a.ss + r.b.ss + r.interaction.ss + r.ss_error - r.ss_total).abs() / t.max(1.0));
        let (scale, shift) = (rng.uniform_range(0.1, 10.0), rng.uniform_range(-100.0, 100.0));
        let moved = cells.clone().map(|row| row.map(|c| c.iter().map(|v| scale * v + shift).collect()));
        let m = doe::two_way_anova(&moved).map_err(|e| e.to_string())?;
        for (x, y) in [(r.a.f, m.a.f), (r.b.f, m.b.f), (r.interaction.f, m.interaction.f)] {
            worst_f = worst_f.max(rel_err(x, y));
        }
    }
    ensure(worst_ss < 1e-10 && worst_add < 1e-9 && worst_f < 1e-9, || {
        format!("ss {worst_ss:.2e}, additivity {worst_add:.2e}, F {worst_f:.2e}")
    })?;
    Ok(format!("ss {worst_ss:.1e}, additivity {worst_add:.1e}, F {worst_f:.1e}"))
}

fn f_critical() -> Check {
    let f = doe::f_critical(1, 4, 0.05).map_err(|e| e.to_string())?;
    ensure((f - 7.71).abs() <= 0.02, || format!("F_crit {f}"))?;
    Ok(format!("F(1,4) = {f:.4}"))
}

fn pca_oracle() -> Check {
    let mut rng = SeededRng::new(5);
    let ids = &FeatureId::ALL[..8];
    let (mut worst_vec, mut worst_val, mut worst_rec, mut worst_sum): (f64, f64, f64, f64) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..50 {
        let k = 12 + rng.index(60);
        let m = common::random_matrix(&mut rng, k, ids);
        let p = selection::pca(&m).map_err(|e| e.to_string())?;
        let x = DMatrix::from_fn(k, ids.len(), |i, j| m.values[[i, j]]);
        let mean = x.row_mean();
        let mut c = x.clone();
        for mut row in c.row_iter_mut() {
            row -= &mean;
        }
        let eig = (c.transpose() * &c / (k as f64 - 1.0)).symmetric_eigen();
        let mut order: Vec<usize> = (0..ids.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        for (i, &o) in order.iter().enumerate() {
            worst_val = worst_val.max((p.eigenvalues[i] - eig.eigenvalues[o].max(0.0)).abs());
            let dot: f64 = (0..ids.len()).map(|r| p.loadings[[r, i]] * eig.eigenvectors[(r, o)]).sum();
            let sign = dot.signum();
            for r in 0..ids.len() {
                worst_vec = worst_vec.max((p.loadings[[r, i]] - sign * eig.eigenvectors[(r, o)]).abs());
            }
        }
        let back = p.scores.dot(&p.loadings.t()) + &p.mean;
        for (a, b) in back.iter().zip(m.values.iter()) {
            worst_rec = worst_rec.max((a - b).abs());
        }
        worst_sum = worst_sum.max((p.explained_variance_ratio.sum() - 1.0).abs());
    }
    ensure(worst_vec < 1e-8 && worst_val < 1e-8 && worst_rec < 1e-8 && worst_sum < 1e-12, || {
        format!("loadings {worst_vec:.2e}, eigenvalues {worst_val:.2e}, reconstruction {worst_rec:.2e}, evr {worst_sum:.2e}")
    })?;
    Ok(format!("loadings {worst_vec:.1e}, eigenvalues {worst_val:.1e}, reconstruction {worst_rec:.1e}"))
}

fn gradient_check() -> Check {
    let cfg = MlpConfig { seed: 6, ..MlpConfig::new(7) };
    let model = mlp::init_model(&cfg).map_err(|e| e.to_string())?;
    ensure(cfg.batch_norm && model.params.hidden.len() == 2 && model.params.hidden[1].dense.w.dim() == (32, 32), || {
        "unexpected architecture".into()
    })?;
    let mut rng = SeededRng::new(6);
    let x = Array2::from_shape_fn((32, 7), |_| rng.uniform());
    let t: Vec<f64> = (0..32).map(|_| rng.gaussian()).collect();
    let (_, g) = mlp::loss_and_grad(&model.params, x.view(), &t);
    let grads: Vec<Vec<f64>> = g.trainable().iter().map(|s| s.to_vec()).collect();
    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let ti = rng.index(grads.len());
        let i = rng.index(grads[ti].len());
        let mut p = model.params.clone();
        p.trainable_mut()[ti][i] += h;
        let up = mlp::train_loss(&p, x.view(), &t);
        p.trainable_mut()[ti][i] -= 2.0 * h;
        let down = mlp::train_loss(&p, x.view(), &t);
        let fd = (up - down) / (2.0 * h);
        worst = worst.max((fd - grads[ti][i]).abs() / fd.abs().max(grads[ti][i].abs()).max(1e-6));
    }
    ensure(worst < 1e-4, || format!("max relative error {worst:.2e}"))?;
    Ok(format!("max rel err {worst:.1e}"))
}

fn sensitivity_screening() -> Check {
    let tm = doe::build_confirmation_matrix();
    let mut notes = Vec::new();
    for seed in 0..3u64 {
        let ds = synthgen::generate_confirmation_dataset(&PanelConfig::default(), seed).map_err(|e| e.to_string())?;
        let fm = features::extract_dataset(&ds, &FeatureConfig::default()).map_err(|e| e.to_string())?;
        let rep = doe::evaluate_sensitivity(&fm, &tm).map_err(|e| e.to_string())?;
        let f = |id| rep.get(id).unwrap().f_reported;
        for id in [FeatureId::PA, FeatureId::RMS, FeatureId::TE] {
            ensure(rep.get(id).unwrap().energy_sensitive, || format!("seed {seed}: {id} F = {:.2}", f(id)))?;
        }
        ensure(!rep.get(FeatureId::NDA).unwrap().energy_sensitive, || {
            format!("seed {seed}: NDA flagged, F = {:.2}", f(FeatureId::NDA))
        })?;
        notes.push(format!("PA {:.1}/RMS {:.1}/TE {:.1}/NDA {:.2}", f(FeatureId::PA), f(FeatureId::RMS), f(FeatureId::TE), f(FeatureId::NDA)));
    }
    Ok(notes.join("; "))
}

fn monotonicity() -> Check {
    let panel = PanelConfig::default().noise_free();
    let energies: Vec<f64> = (0..10).map(|i| 2.0 * 1.45f64.powi(i)).collect();
    let mut cols: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for &e in &energies {
        let sc = ImpactScenario::at(&panel, e, 1.154, 25.0, "IC2").map_err(|e| e.to_string())?;
        let rec = synthgen::generate_impact(&sc, &panel, 0).map_err(|e| e.to_string())?;
        let v = features::extract_record(&rec, &FeatureConfig::default()).map_err(|e| e.to_string())?;
        for id in [FeatureId::PA, FeatureId::RMS, FeatureId::TE] {
            cols.entry(id.as_str()).or_default().push(v.get(id));
        }
    }
    let mut notes = Vec::new();
    for (name, v) in &cols {
        let rho = common::spearman(&energies, v);
        ensure(rho == 1.0, || format!("{name}: Spearman {rho}"))?;
        notes.push(format!("{name} {rho:.1}"));
    }
    Ok(notes.join(", "))
}

fn model_ordering() -> Check {
    let mut m1 = Vec::new();
    let mut m3 = Vec::new();
    for seed in 1..=3 {
        let mut cfg = PipelineConfig::default();
        cfg.set("mlp.seed", &seed.to_string()).map_err(|e| e.to_string())?;
        let p = Pipeline::new(cfg).map_err(|e| e.to_json().to_string())?;
        let n = p.training().map_err(|e| e.to_json().to_string())?.len();
        ensure(n >= 120, || format!("only {n} records"))?;
        m1.push(p.model(ModelKind::Selected).map_err(|e| e.to_json().to_string())?.metrics.mape);
        m3.push(p.model(ModelKind::Full).map_err(|e| e.to_json().to_string())?.metrics.mape);
    }
    let median = |v: &mut Vec<f64>| {
        v.sort_by(f64::total_cmp);
        v[1]
    };
    let (a, b) = (median(&mut m1.clone()), median(&mut m3.clone()));
    let detail = format!("median MAPE model 1 {a:.2}% vs model 3 {b:.2}% (seeds 1-3: {m1:.1?} vs {m3:.1?})");
    ensure(a <= b, || detail.clone())?;
    Ok(detail)
}

fn collect_files(root: &Path, dir: &Path, out: &mut BTreeMap<String, Vec<u8>>) {
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        if path.is_dir() {
            collect_files(root, &path, out);
        } else {
            let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
            out.insert(rel, std::fs::read(&path).unwrap());
        }
    }
}

fn full_run(dir: &Path) -> Result<BTreeMap<String, Vec<u8>>, String> {
    let mut cfg = PipelineConfig::default();
    cfg.output_dir = dir.to_path_buf();
    let started = pipeline::unix_now();
    let mut p = Pipeline::new(cfg).map_err(|e| e.to_json().to_string())?;
    p.write_all().map_err(|e| e.to_json().to_string())?;
    p.write_manifest(started).map_err(|e| e.to_json().to_string())?;
    let mut files = BTreeMap::new();
    collect_files(dir, dir, &mut files);
    Ok(files)
}

fn determinism() -> Check {
    let a_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b_dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let a = full_run(a_dir.path())?;
    let b = full_run(b_dir.path())?;
    ensure(a.keys().eq(b.keys()), || "file sets differ".into())?;
    let differing: Vec<&String> = a.iter().filter(|(k, v)| b[*k] != **v).map(|(k, _)| k).collect();
    ensure(differing.iter().all(|k| *k == pipeline::MANIFEST_FILE), || format!("differing artifacts: {differing:?}"))?;

    let strip = |bytes: &[u8]| -> serde_json::Value {
        let mut v: serde_json::Value = serde_json::from_slice(bytes).unwrap();
        let o = v.as_object_mut().unwrap();
        o.remove("started_unix");
        o.remove("finished_unix");
        o["config"].as_object_mut().unwrap().remove("output.dir");
        v
    };
    let (ma, mb) = (&a[pipeline::MANIFEST_FILE], &b[pipeline::MANIFEST_FILE]);
    ensure(strip(ma) == strip(mb), || "manifests differ beyond timestamps and output dir".into())?;
    Ok(format!("{} artifacts identical", a.len() - 1))
}

fn report_schema() -> Check {
    let mut rng = SeededRng::new(11);
    let ids = [FeatureId::PA, FeatureId::CF];
    let m = common::random_matrix(&mut rng, 10, &ids);
    let cr = selection::correlation_clusters(&m, 0.9).map_err(|e| e.to_string())?;
    let rep = selection::select_indicators(&cr, &[0.80, 0.40], &[0.99, 0.95], 0.85).map_err(|e| e.to_string())?;
    let mut buf = Vec::new();
    rep.write_csv(&mut buf).map_err(|e| e.to_string())?;
    let text = String::from_utf8(buf).map_err(|e| e.to_string())?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let expect = ["domain", "group", "id", "w", "r", "s", "rank", "evaluation"];
    ensure(header[..8] == expect, || format!("header {header:?}"))?;
    let row: Vec<&str> = lines.find(|l| l.split(',').nth(2) == Some("PA")).unwrap_or("").split(',').collect();
    let num = |i: usize| row.get(i).and_then(|v| v.parse::<f64>().ok()).unwrap_or(f64::NAN);
    let s2 = (num(5) * 100.0).round() / 100.0;
    ensure(row.first() == Some(&"Time") && row[2] == "PA" && num(3) == 0.8 && num(4) == 0.99 && s2 == 0.79, || {
        format!("row {row:?}")
    })?;
    ensure(row[6] == "1" && row[7] == "** / ••", || format!("rank/evaluation {:?}", &row[6..8]))?;
    Ok(format!("PA: w {} r {} s {} -> {s2:.2}", row[3], row[4], row[5]))
}

struct Criterion {
    n: u32,
    name: &'static str,
    budget: Duration,
    run: fn() -> Check,
}

fn main() {
    let secs = Duration::from_secs;
    let criteria = [
        Criterion { n: 1, name: "formula exactness", budget: secs(1), run: formula_exactness },
        Criterion { n: 2, name: "DSP conservation", budget: secs(5), run: dsp_conservation },
        Criterion { n: 3, name: "ANOVA oracle equivalence", budget: secs(5), run: anova_oracle },
        Criterion { n: 4, name: "F-critical value", budget: secs(1), run: f_critical },
        Criterion { n: 5, name: "PCA oracle equivalence", budget: secs(5), run: pca_oracle },
        Criterion { n: 6, name: "MLP gradient check", budget: secs(10), run: gradient_check },
        Criterion { n: 7, name: "synthetic sensitivity screening", budget: secs(30), run: sensitivity_screening },
        Criterion { n: 8, name: "feature monotonicity", budget: secs(30), run: monotonicity },
        Criterion { n: 9, name: "end-to-end model ordering", budget: secs(600), run: model_ordering },
        Criterion { n: 10, name: "determinism", budget: secs(1200), run: determinism },
        Criterion { n: 11, name: "selection report schema", budget: secs(1), run: report_schema },
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for c in &criteria {
        if !filter.is_empty() && !filter.iter().any(|f| c.name.contains(f.as_str()) || c.n.to_string() == *f) {
            continue;
        }
        let start = Instant::now();
        let result = (c.run)();
        let took = start.elapsed();
        let (ok, detail) = match result {
            Ok(d) if took <= c.budget => (true, d),
            Ok(d) => (false, format!("{d}; over budget {:?}", c.budget)),
            Err(e) => (false, e),
        };
        failed += usize::from(!ok);
        println!(
            "[{}] {:>2} {} ({:.2}s): {}",
            if ok { "PASS" } else { "FAIL" },
            c.n,
            c.name,
            took.as_secs_f64(),
            detail
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
