use std::path::{Path, PathBuf};
use std::str::FromStr;

use debris_core::classifiers::{
    fit_rf, fit_svm, grid_search_design, load_model, save_model, Algo, Design, GridSpec, MaxFeatures, RfHyperParams,
    SvmHyperParams, TrainedClassifier, TuneTarget,
};
use debris_core::dataset::{
    build_test_case, load_samples, spectral_profile, write_samples, SampleTable, TestCase, CSV_COLUMNS,
    SAMPLE_BANDS,
};
use debris_core::experiment::{
    classify_scene, export_matrix, run_matrix, table_path_for, LabelGrid, MatrixConfig, PixelClass,
};
use debris_core::label::Label;
use debris_core::metrics::{
    average_reports, class_report, confusion, evaluate as evaluate_metrics, metrics_csv, render_aggregate, render_metrics,
    ConfusionMatrix,
};
use debris_core::raster::{compute_index_raster, histogram_stretch, read_stack, write_index_raster, write_stack, BsqfRaster};
use debris_core::spectra::{FeatureSet, IndexKind};
use debris_core::synth::{gen_dataset, gen_scene, EndmemberKind, EndmemberLibrary, Patch, SynthConfig};
use serde_json::Value;

use crate::config::RunConfig;
use crate::{
    CliError, EvaluateArgs, GridArgs, HyperArgs, IndicesArgs, MatrixArgs, ModelArgs, PredictSceneArgs, ProfileArgs,
    StretchArgs, SynthDataArgs, SynthSceneArgs, TableArgs, TrainArgs, TuneArgs,
};

pub struct Context {
    pub config: RunConfig,
    pub seed: u64,
}

impl Context {
    fn path(&self, flag: Option<PathBuf>, key: &str) -> Result<PathBuf, CliError> {
        self.config.require(flag, key)
    }

    /// Flag or config value parsed with `FromStr`; config numbers are
    /// accepted for ids such as `"model": 3`.
    fn parsed<T: FromStr>(&self, flag: Option<String>, key: &str) -> Result<Option<T>, CliError>
    where
        T::Err: std::fmt::Display,
    {
        let raw = match flag {
            Some(s) => Some(s),
            None => match self.config.pick::<Value>(None, key)? {
                Some(Value::String(s)) => Some(s),
                Some(Value::Number(n)) => Some(n.to_string()),
                Some(other) => return Err(CliError::Usage(format!("config key `{key}`: unexpected value {other}"))),
                None => None,
            },
        };
        raw.map(|s| {
            s.parse::<T>()
                .map_err(|e| CliError::Usage(format!("--{}: {e}", key.replace('_', "-"))))
        })
        .transpose()
    }

    fn require_parsed<T: FromStr>(&self, flag: Option<String>, key: &str) -> Result<T, CliError>
    where
        T::Err: std::fmt::Display,
    {
        self.parsed(flag, key)?
            .ok_or_else(|| CliError::Usage(format!("missing required --{}", key.replace('_', "-"))))
    }
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub fn indices(ctx: &Context, a: IndicesArgs) -> Result<(), CliError> {
    let input = ctx.path(a.input, "in")?;
    let out = ctx.path(a.out, "out")?;
    let index: IndexKind = ctx.require_parsed(a.index, "index")?;
    let stack = read_stack(&input)?;
    let grid = compute_index_raster(&stack, index)?;
    let provenance = format!("{index} of {}", input.display());
    write_index_raster(&grid, index, stack.resolution_m, &provenance, &out)?;
    println!(
        "{index}: {}x{} raster, {} nodata cells -> {}",
        grid.width(),
        grid.height(),
        grid.nodata_count(),
        out.display()
    );
    Ok(())
}

pub fn stretch(ctx: &Context, a: StretchArgs) -> Result<(), CliError> {
    let input = ctx.path(a.input, "in")?;
    let out = ctx.path(a.out, "out")?;
    let p_low = ctx.config.pick_or(a.p_low, "p_low", 2.0)?;
    let p_high = ctx.config.pick_or(a.p_high, "p_high", 98.0)?;
    let mut raster = BsqfRaster::read(&input)?;
    for (band, grid) in raster.bands.iter().zip(raster.grids.iter_mut()) {
        let s = histogram_stretch(grid, p_low, p_high)?;
        if s.degenerate {
            log::warn!("band {}: percentile range collapsed, stretched to 0", band.id);
        }
        println!("{}: [{}, {}] -> [0, 1]", band.id, s.low_value, s.high_value);
        *grid = s.grid;
    }
    raster.provenance = format!("{} | stretched p{p_low}-p{p_high}", raster.provenance);
    raster.write(&out)?;
    Ok(())
}

fn synth_config(ctx: &Context, n_plastic: Option<usize>, n_water: Option<usize>, noise_sd: Option<f64>, endmembers: Option<PathBuf>) -> Result<SynthConfig, CliError> {
    let mut cfg = ctx.config.overlay(SynthConfig::default(), "synth")?;
    if let Some(path) = ctx.config.pick(endmembers, "endmembers")? {
        cfg.endmembers = EndmemberLibrary::load(&path)?;
    }
    cfg.n_plastic = ctx.config.pick_or(n_plastic, "n_plastic", cfg.n_plastic)?;
    cfg.n_water = ctx.config.pick_or(n_water, "n_water", cfg.n_water)?;
    cfg.noise_sd = ctx.config.pick_or(noise_sd, "noise_sd", cfg.noise_sd)?;
    cfg.seed = ctx.seed;
    Ok(cfg)
}

pub fn synth_data(ctx: &Context, a: SynthDataArgs) -> Result<(), CliError> {
    let out = ctx.config.pick(a.out, "out")?;
    let plastic = ctx.config.pick(a.plastic, "plastic")?;
    let water = ctx.config.pick(a.water, "water")?;
    if out.is_none() && plastic.is_none() && water.is_none() {
        return Err(CliError::Usage("need at least one of --out, --plastic, --water".into()));
    }
    let cfg = synth_config(ctx, a.n_plastic, a.n_water, a.noise_sd, a.endmembers)?;
    let table = gen_dataset(&cfg)?;
    if let Some(p) = &out {
        write_samples(&table, p)?;
    }
    if let Some(p) = &plastic {
        write_samples(&table.filter_label(Label::Plastic), p)?;
    }
    if let Some(p) = &water {
        write_samples(&table.filter_label(Label::Water), p)?;
    }
    println!(
        "{} plastic and {} water samples, seed {}",
        table.count(Label::Plastic),
        table.count(Label::Water),
        cfg.seed
    );
    Ok(())
}

fn parse_patch(s: &str) -> Result<Patch, CliError> {
    let bad = || CliError::Usage(format!("--patch {s:?}: expected row,col,height,width,fraction[,kind]"));
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    if !(5..=6).contains(&parts.len()) {
        return Err(bad());
    }
    let n = |i: usize| parts[i].parse::<usize>().map_err(|_| bad());
    Ok(Patch {
        row: n(0)?,
        col: n(1)?,
        height: n(2)?,
        width: n(3)?,
        fraction: parts[4].parse().map_err(|_| bad())?,
        kind: parts
            .get(5)
            .map(|k| k.parse::<EndmemberKind>().map_err(CliError::Usage))
            .transpose()?,
    })
}

pub fn synth_scene(ctx: &Context, a: SynthSceneArgs) -> Result<(), CliError> {
    let out = ctx.path(a.out, "out")?;
    let truth_path = ctx.config.pick(a.truth, "truth")?;
    let width = ctx.config.require(a.width, "width")?;
    let height = ctx.config.require(a.height, "height")?;
    let patches = if a.patches.is_empty() {
        ctx.config.pick_or(None, "patches", Vec::new())?
    } else {
        a.patches.iter().map(|s| parse_patch(s)).collect::<Result<Vec<_>, _>>()?
    };
    let cfg = synth_config(ctx, None, None, a.noise_sd, a.endmembers)?;
    let (stack, truth) = gen_scene::<f32>(&cfg, width, height, &patches)?;
    write_stack(&stack, &out)?;
    if let Some(p) = &truth_path {
        truth.write_pgm(p)?;
    }
    println!(
        "{width}x{height} scene with {} plastic cells -> {}",
        truth.count(PixelClass::Plastic),
        out.display()
    );
    Ok(())
}

fn load_table(ctx: &Context, a: TableArgs) -> Result<SampleTable, CliError> {
    if let Some(path) = ctx.config.pick(a.input, "in")? {
        return Ok(load_samples(&path)?);
    }
    let plastic = ctx.config.pick(a.plastic, "plastic")?;
    let water = ctx.config.pick(a.water, "water")?;
    match (plastic, water) {
        (Some(p), Some(w)) => {
            let tc: TestCase = ctx.parsed(a.test_case, "test_case")?.unwrap_or(TestCase::TC1);
            Ok(build_test_case(&load_samples(&p)?, &load_samples(&w)?, tc, ctx.seed)?)
        }
        _ => Err(CliError::Usage("need --in, or both --plastic and --water".into())),
    }
}

fn model_choice(ctx: &Context, a: ModelArgs) -> Result<(FeatureSet, Algo), CliError> {
    let spec = ctx.parsed(a.model, "model")?.unwrap_or(FeatureSet::Model1);
    let algo = ctx.parsed(a.algo, "algo")?.unwrap_or(Algo::Rf);
    Ok((spec, algo))
}

fn rf_params(ctx: &Context, base: RfHyperParams, h: &HyperArgs) -> Result<RfHyperParams, CliError> {
    let mut hp = ctx.config.overlay(base, "rf")?;
    if let Some(n) = h.trees {
        hp.n_trees = n;
    }
    if let Some(m) = h.mtry {
        hp.mtry = MaxFeatures::Count(m);
    }
    if h.max_depth.is_some() {
        hp.max_depth = h.max_depth;
    }
    if h.max_leaf_nodes.is_some() {
        hp.max_leaf_nodes = h.max_leaf_nodes;
    }
    if let Some(m) = h.min_samples_leaf {
        hp.min_samples_leaf = m;
    }
    hp.seed = ctx.seed;
    Ok(hp)
}

fn svm_params(ctx: &Context, h: &HyperArgs) -> Result<SvmHyperParams, CliError> {
    let mut hp = ctx.config.overlay(SvmHyperParams::default(), "svm")?;
    hp.c = h.cost.unwrap_or(hp.c);
    hp.sigma = h.sigma.unwrap_or(hp.sigma);
    hp.seed = ctx.seed;
    Ok(hp)
}

fn grid_spec(ctx: &Context, base: GridSpec, g: GridArgs) -> Result<GridSpec, CliError> {
    let mut grid = ctx.config.overlay(base, "grid")?;
    if g.mtry_grid.is_some() {
        grid.rf_mtry_grid = g.mtry_grid;
    }
    grid.svm_sigma_grid = g.sigma_grid.unwrap_or(grid.svm_sigma_grid);
    grid.svm_c_grid = g.c_grid.unwrap_or(grid.svm_c_grid);
    grid.cv_folds = g.folds.unwrap_or(grid.cv_folds);
    Ok(grid)
}

pub fn train(ctx: &Context, a: TrainArgs) -> Result<(), CliError> {
    let out = ctx.path(a.out, "out")?;
    let (spec, algo) = model_choice(ctx, a.model)?;
    let design = Design::from_table(&load_table(ctx, a.table)?, spec)?;
    let model: TrainedClassifier = match algo {
        Algo::Rf => fit_rf(&design, &rf_params(ctx, RfHyperParams::final_model(), &a.hyper)?)?.into(),
        Algo::Svm => fit_svm(&design, &svm_params(ctx, &a.hyper)?)?.into(),
    };
    save_model(&model, &out)?;
    match &model {
        TrainedClassifier::Rf(m) => println!(
            "rf {spec}: {} trees on {} rows, OOB error {}",
            m.trees.len(),
            m.n_train,
            m.oob_error.map_or("NA".into(), |e| format!("{e:.4}"))
        ),
        TrainedClassifier::Svm(m) => println!(
            "svm {spec}: {} support vectors on {} rows",
            m.support_vectors.len(),
            design.len()
        ),
    }
    Ok(())
}

pub fn tune(ctx: &Context, a: TuneArgs) -> Result<(), CliError> {
    let out = ctx.path(a.out, "out")?;
    let (spec, algo) = model_choice(ctx, a.model)?;
    let design = Design::from_table(&load_table(ctx, a.table)?, spec)?;
    let target = match algo {
        Algo::Rf => TuneTarget::Rf(rf_params(ctx, RfHyperParams::matrix_profile(), &a.hyper)?),
        Algo::Svm => TuneTarget::Svm(svm_params(ctx, &a.hyper)?),
    };
    let grid = grid_spec(ctx, GridSpec::default(), a.grid)?;
    let result = grid_search_design(&design, &target, &grid, ctx.seed)?;
    let json = serde_json::to_string_pretty(&result).map_err(|e| CliError::Data(e.to_string()))?;
    write_text(&out, &(json + "\n"))?;
    for row in &result.table {
        println!("{} mean accuracy {:.4}", serde_json::to_string(&row.point).unwrap_or_default(), row.mean_accuracy);
    }
    println!("best {}", serde_json::to_string(&result.best_point).unwrap_or_default());
    Ok(())
}

pub fn predict_scene(ctx: &Context, a: PredictSceneArgs) -> Result<(), CliError> {
    let input = ctx.path(a.input, "in")?;
    let classifier = ctx.path(a.classifier, "classifier")?;
    let out = ctx.path(a.out, "out")?;
    let model = load_model(&classifier)?;
    let stack = read_stack(&input)?;
    let labels = classify_scene(&stack, &model)?;
    labels.write_pgm(&out)?;
    println!(
        "plastic {} water {} nodata {} -> {}",
        labels.count(PixelClass::Plastic),
        labels.count(PixelClass::Water),
        labels.count(PixelClass::Nodata),
        out.display()
    );
    Ok(())
}

fn is_pgm(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

fn read_label_csv(path: &Path) -> Result<Vec<Label>, CliError> {
    let data = |e: String| CliError::Data(format!("{}: {e}", path.display()));
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| data(e.to_string()))?;
    let headers = reader.headers().map_err(|e| data(e.to_string()))?.clone();
    let column = match headers.iter().position(|h| h.eq_ignore_ascii_case("label")) {
        Some(c) => c,
        None if headers.len() == 1 => 0,
        None => return Err(data("no `label` column".into())),
    };
    reader
        .records()
        .enumerate()
        .map(|(i, rec)| {
            let rec = rec.map_err(|e| data(e.to_string()))?;
            let raw = rec.get(column).unwrap_or_default();
            raw.parse::<Label>()
                .map_err(|_| data(format!("line {}: bad label {raw:?}", i + 2)))
        })
        .collect()
}

/// Pairs of (prediction, truth) from two label files. Label maps skip cells
/// that are nodata in either map.
fn label_pairs(pred: &Path, truth: &Path) -> Result<(Vec<Label>, Vec<Label>), CliError> {
    if is_pgm(pred) && is_pgm(truth) {
        let p = LabelGrid::read_pgm(pred)?;
        let t = LabelGrid::read_pgm(truth)?;
        if (p.width(), p.height()) != (t.width(), t.height()) {
            return Err(CliError::Data(format!(
                "label maps differ in size: {}x{} vs {}x{}",
                p.width(),
                p.height(),
                t.width(),
                t.height()
            )));
        }
        let as_label = |c: PixelClass| match c {
            PixelClass::Plastic => Some(Label::Plastic),
            PixelClass::Water => Some(Label::Water),
            PixelClass::Nodata => None,
        };
        Ok(p
            .cells()
            .iter()
            .zip(t.cells())
            .filter_map(|(a, b)| Some((as_label(*a)?, as_label(*b)?)))
            .unzip())
    } else {
        Ok((read_label_csv(pred)?, read_label_csv(truth)?))
    }
}

fn parse_confusion(s: &str) -> Result<ConfusionMatrix, CliError> {
    let counts: Vec<u64> = s
        .split(',')
        .map(|v| v.trim().parse::<u64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("--confusion {s:?}: expected tp,fn,fp,tn")))?;
    match counts[..] {
        [tp, fn_, fp, tn] => Ok(ConfusionMatrix::new(tp, fn_, fp, tn)),
        _ => Err(CliError::Usage(format!("--confusion {s:?}: expected tp,fn,fp,tn"))),
    }
}

pub fn evaluate(ctx: &Context, a: EvaluateArgs) -> Result<(), CliError> {
    let pred = ctx.config.pick(a.pred, "pred")?;
    let truth = ctx.config.pick(a.truth, "truth")?;
    let confusions = if a.confusions.is_empty() {
        ctx.config.pick_or(None, "confusion", Vec::<String>::new())?
    } else {
        a.confusions
    };
    let matrices: Vec<ConfusionMatrix> = match (pred, truth) {
        (Some(p), Some(t)) if confusions.is_empty() => {
            let (preds, truths) = label_pairs(&p, &t)?;
            vec![confusion(&preds, &truths)?]
        }
        (None, None) if !confusions.is_empty() => confusions.iter().map(|s| parse_confusion(s)).collect::<Result<_, _>>()?,
        _ => return Err(CliError::Usage("give --pred and --truth, or --confusion".into())),
    };
    let out = ctx.config.pick(a.out, "out")?;
    let mut csv = String::new();
    let mut reports = Vec::new();
    for (i, cm) in matrices.iter().enumerate() {
        let report = evaluate_metrics::<f64>(cm)?;
        if matrices.len() > 1 {
            println!("site {}", i + 1);
        }
        println!(
            "TP {} FN {} FP {} TN {}",
            cm.true_pos, cm.false_neg, cm.false_pos, cm.true_neg
        );
        print!("{}", render_metrics(&report));
        if i == 0 {
            csv = metrics_csv(&report);
        }
        reports.push(class_report::<f64>(cm)?);
    }
    if reports.len() > 1 {
        println!("averaged over {} sites", reports.len());
        print!("{}", render_aggregate(&average_reports(&reports)?));
    }
    if let Some(p) = &out {
        write_text(p, &csv)?;
    }
    Ok(())
}

pub fn matrix(ctx: &Context, a: MatrixArgs) -> Result<(), CliError> {
    let plastic = load_samples(&ctx.path(a.plastic, "plastic")?)?;
    let water = load_samples(&ctx.path(a.water, "water")?)?;
    let out = ctx.path(a.out, "out")?;
    let mut config = ctx.config.overlay(MatrixConfig::default(), "matrix")?;
    if let Some(n) = ctx.config.pick(a.trees, "trees")? {
        config.rf_base.n_trees = n;
    }
    config.train_fraction = ctx.config.pick_or(a.train_fraction, "train_fraction", config.train_fraction)?;
    config.grid = grid_spec(ctx, config.grid, a.grid)?;
    let result = run_matrix(&plastic, &water, &config, ctx.seed)?;
    export_matrix(&result, &out)?;
    let failed = result.cells.iter().filter(|c| c.outcome.is_err()).count();
    println!(
        "{} cells ({failed} failed) -> {} and {}",
        result.cells.len(),
        out.display(),
        table_path_for(&out).display()
    );
    Ok(())
}

pub fn profile(ctx: &Context, a: ProfileArgs) -> Result<(), CliError> {
    let table = load_samples(&ctx.path(a.input, "in")?)?;
    let out = ctx.path(a.out, "out")?;
    let profiles = spectral_profile(&table, &SAMPLE_BANDS)?;
    let mut text = format!("category,count,{}\n", CSV_COLUMNS[6..10].join(","));
    for p in &profiles {
        text.push_str(&format!("{},{}", p.category.as_str(), p.count));
        for (_, mean) in &p.means {
            text.push_str(&format!(",{mean}"));
        }
        text.push('\n');
    }
    write_text(&out, &text)?;
    print!("{text}");
    Ok(())
}
