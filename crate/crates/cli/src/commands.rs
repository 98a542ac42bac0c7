use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use topolevel::evolve2d::{optimize2d_observed, write_history_csv, Optimization2D};
use topolevel::evolve3d::{optimize3d, optimize_shadow, write_history3d_csv};
use topolevel::grid::LevelSetGrid;
use topolevel::render3d::{make_target, read_cameras, render, render_references, SceneModel3D, TargetShape, View};
use topolevel::scenarios::{
    annulus_setup, cameras_from_directions, far_square_setup, fibonacci_directions, holeball_directions, iou,
    paired_runs, shadow_setup, torus_directions, Scene2DSetup,
};
use topolevel::scene2d::{composite, fit_colors, SceneModel2D};
use topolevel::vector::{build_document, svg_bytes};
use topolevel::grid::extract_mesh;
use topolevel::ImageBuffer;

use crate::config::RunConfig;
use crate::manifest::ManifestBuilder;
use crate::{CheckArgs, DemoArgs, DemoName, InitShape, Outcome, ReconArgs, SyntheticShape, VectorizeArgs};

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn out_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn sibling(out: &Path, name: &str) -> PathBuf {
    out.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).join(name)
}

fn init_grid(shape: InitShape, w: usize, h: usize) -> Result<LevelSetGrid> {
    let (cx, cy) = (0.5 * (w as f64 - 1.0), 0.5 * (h as f64 - 1.0));
    let short = w.min(h) as f64;
    let g = match shape {
        InitShape::Disk => {
            let r = 0.35 * short;
            LevelSetGrid::from_fn_2d(w, h, 1.0, [0.0, 0.0], |p| (p[0] - cx).hypot(p[1] - cy) - r)?
        }
        InitShape::Box => {
            let (hx, hy) = (0.25 * w as f64, 0.25 * h as f64);
            LevelSetGrid::from_fn_2d(w, h, 1.0, [0.0, 0.0], |p| ((p[0] - cx).abs() - hx).max((p[1] - cy).abs() - hy))?
        }
        InitShape::Grid => {
            let cell = (short / 6.0).max(4.0);
            LevelSetGrid::from_fn_2d(w, h, 1.0, [0.0, 0.0], |p| {
                let fx = p[0] / cell - (p[0] / cell).floor() - 0.5;
                let fy = p[1] / cell - (p[1] / cell).floor() - 0.5;
                (fx.hypot(fy) - 0.25) * cell
            })?
        }
        InitShape::Empty => LevelSetGrid::from_fn_2d(w, h, 1.0, [0.0, 0.0], |_| 8.0)?,
    };
    Ok(g)
}

pub fn vectorize(a: &VectorizeArgs, mut cfg: RunConfig, mut manifest: ManifestBuilder) -> Result<Outcome> {
    let target = ImageBuffer::read_png(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    manifest.input(&a.input);
    let e = &mut cfg.evolve2d;
    if let Some(v) = a.max_iters {
        e.max_iters = v;
    }
    if let Some(v) = a.dt_cfl {
        e.dt_cfl = v;
    }
    if let Some(v) = a.eps {
        e.eps_h = v;
    }
    if let Some(v) = a.refit_every {
        e.color_refit_every = v;
    }
    if a.no_td {
        e.topological = false;
    }
    if let Some(v) = a.tol {
        cfg.vectorize.simplify_tol = v;
    }
    if let Some(v) = a.frame_every {
        cfg.vectorize.frame_every = v;
    }
    cfg.evolve2d.validate()?;
    if !(cfg.vectorize.simplify_tol >= 0.0) {
        bail!("simplification tolerance must be non-negative");
    }

    out_dir(&sibling(&a.out, ""))?;
    let init = init_grid(a.init, target.width(), target.height())?;
    let m = cfg.evolve2d.mollifier(1.0);
    // initial colors: weighted means inside and outside the initial shape,
    // falling back to black on white for an empty phase
    let ch = target.channels();
    let fit = fit_colors(&init, &target, &m, &vec![0.0; ch], &vec![1.0; ch])?;
    let scene = SceneModel2D::constant(&fit.fg, &fit.bg, target)?;

    let frame_every = if a.frames.is_some() { cfg.vectorize.frame_every.max(1) } else { 0 };
    if let Some(dir) = &a.frames {
        out_dir(dir)?;
    }
    let mut frame_err: Option<anyhow::Error> = None;
    let mut observer = |it: usize, g: &LevelSetGrid, s: &SceneModel2D| {
        if frame_every == 0 || it % frame_every != 0 || frame_err.is_some() {
            return;
        }
        let dir = a.frames.as_ref().expect("frames dir");
        let path = dir.join(format!("frame_{it:05}.png"));
        let res = composite(g, s, &m).and_then(|img| img.write_png(&path));
        if let Err(e) = res {
            frame_err = Some(e.into());
        }
    };
    let run = optimize2d_observed(&init, &scene, &cfg.evolve2d, None, Some(&mut observer))?;
    if let Some(e) = frame_err {
        return Err(e);
    }

    write_vector_outputs(&run, &a.out, "history.csv", cfg.vectorize.simplify_tol, &mut manifest)?;
    let last = run.history.last().expect("history has the initial row");
    println!(
        "iterations {} I {:.6e} components {} holes {} converged {}",
        last.iter, last.value, last.components, last.holes, run.converged
    );
    manifest.write(&cfg, &sibling(&a.out, "manifest.json"))?;
    Ok(if run.converged || cfg.evolve2d.max_iters == 0 { Outcome::Success } else { Outcome::NotConverged })
}

fn scene_colors(s: &SceneModel2D) -> (Vec<f64>, Vec<f64>) {
    use topolevel::scene2d::ColorModel;
    let c = |m: &ColorModel| match m {
        ColorModel::Constant(c) => c.clone(),
        ColorModel::PerPixel(img) => {
            // mean color stands in for a per-pixel model in the flat SVG fill
            let n = img.pixel_count() as f64;
            (0..img.channels()).map(|k| (0..img.pixel_count()).map(|i| img.at(i)[k]).sum::<f64>() / n).collect()
        }
    };
    (c(&s.fg), c(&s.bg))
}

fn write_vector_outputs(run: &Optimization2D, out: &Path, history: &str, tol: f64, manifest: &mut ManifestBuilder) -> Result<()> {
    let (fg, bg) = scene_colors(&run.scene);
    let doc = build_document(&run.grid, &fg, &bg, tol);
    fs::write(out, svg_bytes(&doc)?).with_context(|| format!("writing {}", out.display()))?;
    manifest.output(out);
    let hist = sibling(out, history);
    let mut w = create(&hist)?;
    write_history_csv(&run.history, &mut w)?;
    w.flush()?;
    manifest.output(hist);
    Ok(())
}

fn synthetic_target(shape: SyntheticShape) -> (TargetShape, Vec<[f64; 3]>) {
    match shape {
        SyntheticShape::Sphere => (TargetShape::Sphere { radius: 0.5 }, fibonacci_directions(8)),
        SyntheticShape::Torus => (TargetShape::Torus { major: 0.5, minor: 0.2 }, torus_directions()),
        SyntheticShape::Holeball => (TargetShape::Holeball { radius: 0.6, hole_radius: 0.2 }, holeball_directions()),
        SyntheticShape::Box => (TargetShape::Box { half: [0.45, 0.35, 0.3] }, fibonacci_directions(8)),
    }
}

pub fn recon3d(a: &ReconArgs, mut cfg: RunConfig, mut manifest: ManifestBuilder) -> Result<Outcome> {
    let r = &mut cfg.recon3d;
    if let Some(v) = a.grid {
        r.grid = v;
    }
    if let Some(v) = a.res {
        r.res = v;
    }
    if let Some(v) = a.snapshot_every {
        r.snapshot_every = v;
    }
    let e = &mut cfg.evolve3d;
    if let Some(v) = a.lambda_td {
        e.lambda_td = v;
    }
    if let Some(v) = a.lambda_sd {
        e.lambda_sd = v;
    }
    if let Some(v) = a.max_iters {
        e.max_iters = v;
    }
    cfg.evolve3d.validate()?;
    let r = cfg.recon3d.clone();
    if r.grid < 8 || r.res < 4 || !(r.half > 0.0) || !(r.init_radius > 0.0 && r.init_radius < 1.0) {
        bail!("recon3d needs grid >= 8, res >= 4, half > 0 and 0 < init_radius < 1");
    }

    let (scene, target_points) = match a.synthetic {
        Some(shape) => {
            let (target_shape, default_dirs) = synthetic_target(shape);
            let dirs = match a.views {
                Some(0) => bail!("--views must be positive"),
                Some(k) if k != default_dirs.len() => fibonacci_directions(k),
                _ => default_dirs,
            };
            let target = make_target(&target_shape, r.grid, r.half)?;
            let cams = cameras_from_directions(&dirs, 3.0 * r.half, 0.6, r.res)?;
            let scene = render_references(&target, &cams, &r.shading, r.background)?;
            (scene, Some(extract_mesh(&target).vertices))
        }
        None => {
            let Some(cam_path) = &a.cameras else { bail!("give --synthetic or --cameras with --refs") };
            let f = File::open(cam_path).with_context(|| format!("opening {}", cam_path.display()))?;
            let cams = read_cameras(BufReader::new(f)).with_context(|| format!("reading {}", cam_path.display()))?;
            manifest.input(cam_path);
            if cams.len() != a.refs.len() {
                bail!("{} cameras but {} reference images", cams.len(), a.refs.len());
            }
            let mut views = Vec::new();
            for (c, p) in cams.into_iter().zip(&a.refs) {
                let img = ImageBuffer::read_png(p).with_context(|| format!("reading {}", p.display()))?;
                let img = if img.channels() == 1 { img } else { luminance(&img)? };
                manifest.input(p);
                views.push(View { camera: c, reference: img });
            }
            (SceneModel3D::new(r.shading.clone(), r.background, views)?, None)
        }
    };

    out_dir(&a.out)?;
    let init_r = r.init_radius * r.half;
    let init = LevelSetGrid::cube(r.grid, r.half, |p| (p[0] * p[0] + p[1] * p[1] + p[2] * p[2]).sqrt() - init_r)?;
    let mut snap_err: Option<anyhow::Error> = None;
    let mut snapshots = Vec::new();
    let mut observer = |it: usize, g: &LevelSetGrid| {
        if r.snapshot_every == 0 || it % r.snapshot_every != 0 || snap_err.is_some() {
            return;
        }
        let path = a.out.join(format!("mesh_{it:05}.obj"));
        let res = create(&path).and_then(|mut w| {
            extract_mesh(g).write_obj(&mut w)?;
            w.flush()?;
            Ok(())
        });
        match res {
            Ok(()) => snapshots.push(path),
            Err(e) => snap_err = Some(e),
        }
    };
    let run = optimize3d(&init, &scene, &cfg.evolve3d, target_points.as_deref(), Some(&mut observer))?;
    if let Some(e) = snap_err {
        return Err(e);
    }
    for p in snapshots {
        manifest.output(p);
    }
    let mesh = run.final_mesh();
    let final_obj = a.out.join("final.obj");
    let mut w = create(&final_obj)?;
    mesh.write_obj(&mut w)?;
    w.flush()?;
    manifest.output(&final_obj);
    let metrics = a.out.join("metrics.csv");
    let mut w = create(&metrics)?;
    write_history3d_csv(&run.history, &mut w)?;
    w.flush()?;
    manifest.output(&metrics);
    manifest.write(&cfg, &a.out.join("manifest.json"))?;

    let last = run.history.last().expect("history has the initial row");
    if let Some(c) = last.chamfer {
        println!("chamfer {c:.6}");
    }
    println!("final genus {} I {:.6e}", mesh.genus(), last.value);
    let plateau_expected = cfg.evolve3d.stop_tol > 0.0 && cfg.evolve3d.max_iters > 0;
    Ok(if run.converged || !plateau_expected { Outcome::Success } else { Outcome::NotConverged })
}

fn luminance(img: &ImageBuffer) -> Result<ImageBuffer> {
    let ch = img.channels();
    let data = (0..img.pixel_count()).map(|i| img.at(i).iter().take(3).sum::<f64>() / ch.min(3) as f64).collect();
    Ok(ImageBuffer::scalar(img.width(), img.height(), data)?)
}

pub fn check(a: &CheckArgs, cfg: &RunConfig) -> Result<Outcome> {
    let report = topolevel::checks::run_checks(cfg.seed, a.only.as_deref())?;
    let table = report.table();
    print!("{table}");
    if let Some(p) = &a.out {
        fs::write(p, &table).with_context(|| format!("writing {}", p.display()))?;
    }
    Ok(if report.all_pass() { Outcome::Success } else { Outcome::NotConverged })
}

pub fn demo(a: &DemoArgs, cfg: RunConfig, mut manifest: ManifestBuilder) -> Result<Outcome> {
    out_dir(&a.out)?;
    let ok = match a.name {
        DemoName::TeaserA | DemoName::TeaserB => {
            let n = a.size.unwrap_or(256);
            if n < 32 {
                bail!("--size must be at least 32 for the 2D demos");
            }
            let setup = if a.name == DemoName::TeaserA { far_square_setup(n)? } else { annulus_setup(n)? };
            demo_2d(a.name, &setup, &a.out, &mut manifest)?
        }
        DemoName::Shadow => demo_shadow(a.size.unwrap_or(64), &a.out, &mut manifest)?,
    };
    manifest.write(&cfg, &a.out.join("manifest.json"))?;
    Ok(if ok { Outcome::Success } else { Outcome::NotConverged })
}

fn demo_2d(name: DemoName, s: &Scene2DSetup, dir: &Path, manifest: &mut ManifestBuilder) -> Result<bool> {
    let (td, sd) = paired_runs(s)?;
    let m = s.config.mollifier(1.0);
    let mut save = |img: ImageBuffer, file: &str| -> Result<()> {
        let p = dir.join(file);
        img.write_png(&p)?;
        manifest.output(p);
        Ok(())
    };
    save(s.scene.target.clone(), "target.png")?;
    save(composite(&s.init, &s.scene, &m)?, "init.png")?;
    save(composite(&td.grid, &td.scene, &m)?, "td_final.png")?;
    save(composite(&sd.grid, &sd.scene, &m)?, "sd_final.png")?;
    write_vector_outputs(&td, &dir.join("td_final.svg"), "td_history.csv", 0.25, manifest)?;
    let sd_hist = dir.join("sd_history.csv");
    let mut w = create(&sd_hist)?;
    write_history_csv(&sd.history, &mut w)?;
    w.flush()?;
    manifest.output(sd_hist);

    let mut summary = String::from("run,iterations,I0,I,components,holes,iou\n");
    for (label, r) in [("td", &td), ("sd", &sd)] {
        let l = r.history.last().expect("history has the initial row");
        summary += &format!(
            "{label},{},{:.6e},{:.6e},{},{},{:.4}\n",
            l.iter,
            r.history[0].value,
            l.value,
            l.components,
            l.holes,
            iou(&r.grid, &s.target_mask)
        );
    }
    let summary_path = dir.join("summary.csv");
    fs::write(&summary_path, &summary)?;
    manifest.output(summary_path);
    print!("{summary}");

    let (t, c) = (td.history.last().expect("row"), sd.history.last().expect("row"));
    let i0 = td.history[0].value;
    Ok(match name {
        DemoName::TeaserB => {
            (t.components, t.holes) == (1, 1) && t.value < 0.01 * i0 && (c.components, c.holes) == (1, 0) && c.value > 0.2 * i0
        }
        _ => iou(&td.grid, &s.target_mask) > 0.95 && iou(&sd.grid, &s.target_mask) < 0.5,
    })
}

fn demo_shadow(n: usize, dir: &Path, manifest: &mut ManifestBuilder) -> Result<bool> {
    if n < 16 {
        bail!("--size must be at least 16 for the shadow demo");
    }
    let s = shadow_setup(n, 2 * n)?;
    let steps = 50;
    let run = optimize_shadow(&s.init, &s.scene, &s.config, steps)?;
    let view = &s.scene.views[0];
    let mut save = |img: ImageBuffer, file: &str| -> Result<()> {
        let p = dir.join(file);
        img.write_png(&p)?;
        manifest.output(p);
        Ok(())
    };
    save(view.reference.clone(), "reference.png")?;
    save(render(&s.init, &view.camera, &s.scene).radiance, "init_render.png")?;
    save(render(&run.grid, &view.camera, &s.scene).radiance, "final_render.png")?;
    let mut csv = String::from("step,region_error,I\n");
    for (k, (e, v)) in run.region_error.iter().zip(&run.values).enumerate() {
        csv += &format!("{k},{e:.6e},{v:.6e}\n");
    }
    let p = dir.join("shadow_metrics.csv");
    fs::write(&p, &csv)?;
    manifest.output(p);
    let (first, last) = (run.region_error[0], *run.region_error.last().expect("rows"));
    let reduction = if first > 0.0 { 1.0 - last / first } else { 0.0 };
    println!("shadow region error {first:.6e} -> {last:.6e} (reduction {:.1}%)", 100.0 * reduction);
    Ok(reduction > 0.5)
}
