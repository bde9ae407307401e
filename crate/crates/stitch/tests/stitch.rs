use std::path::{Path, PathBuf};
use std::process::Command;

use copano_core::imaging::{decode, encode_png};
use copano_core::texture::procedural;
use copano_core::{DeviceId, Image};
use copano_sim::scene::{render_viewport, Scene, Viewport, VirtualCamera};
use copano_stitch::{stitch, Input, Mode, Options};

fn write_png(dir: &Path, name: &str, img: &Image) -> PathBuf {
    let path = dir.join(name);
    std::fs::write(&path, encode_png(img).unwrap()).unwrap();
    path
}

fn run(args: &[&std::ffi::OsStr]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_stitch")).args(args).output().unwrap();
    (out.status.code().unwrap_or(-1), String::from_utf8_lossy(&out.stdout).into(), String::from_utf8_lossy(&out.stderr).into())
}

/// Four 480x360 viewports in a 2x2 grid over the bundled scene and their
/// top-left corners.
fn grid_views() -> Vec<(Image, (i64, i64))> {
    let scene = Scene::bundled();
    [(1000.0, 200.0), (1370.0, 215.0), (990.0, 480.0), (1385.0, 470.0)]
        .into_iter()
        .map(|(x, y)| {
            let cam = VirtualCamera::native(Viewport::new(x, y, 480, 360), 0.0);
            (render_viewport(&scene, &cam, 0.0).unwrap(), cam.viewport.origin())
        })
        .collect()
}

#[test]
fn one_image_is_its_own_panorama() {
    let dir = tempfile::tempdir().unwrap();
    let img = procedural(320, 240, 4);
    let input = write_png(dir.path(), "only.png", &img);
    let out = dir.path().join("pano.png");
    for mode in ["final", "preview"] {
        let (code, stdout, stderr) = run(&[
            "--out".as_ref(),
            out.as_os_str(),
            "--mode".as_ref(),
            mode.as_ref(),
            input.as_os_str(),
        ]);
        assert_eq!(code, 0, "{stderr}");
        assert!(stdout.contains("unplaced none"), "{stdout}");
        let pano = decode(&std::fs::read(&out).unwrap()).unwrap();
        assert_eq!(pano, img, "{mode}");
    }
}

#[test]
fn grid_bounds_match_ground_truth() {
    let views = grid_views();
    let inputs: Vec<Input> =
        views.iter().enumerate().map(|(i, (img, _))| Input { name: format!("v{i}"), image: img.clone() }).collect();
    let (ax, ay) = views[0].1;
    let left = views.iter().map(|(_, o)| o.0 - ax).min().unwrap() as f64;
    let top = views.iter().map(|(_, o)| o.1 - ay).min().unwrap() as f64;
    let right = views.iter().map(|(_, o)| o.0 - ax + 480).max().unwrap() as f64;
    let bottom = views.iter().map(|(_, o)| o.1 - ay + 360).max().unwrap() as f64;

    for mode in [Mode::Final, Mode::Preview] {
        let outcome = stitch(&inputs, &Options { mode, ..Options::default() }).unwrap();
        assert!(outcome.all_placed(), "{}", outcome.report);
        // Exact extent of the recovered quads, not the integer canvas.
        let corners: Vec<_> = (0..4).flat_map(|i| outcome.layout.quad(&DeviceId::from(format!("{i:04}"))).unwrap()).collect();
        let min_x = corners.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
        let min_y = corners.iter().map(|p| p.y).fold(f64::INFINITY, f64::min);
        let max_x = corners.iter().map(|p| p.x).fold(f64::NEG_INFINITY, f64::max);
        let max_y = corners.iter().map(|p| p.y).fold(f64::NEG_INFINITY, f64::max);
        for (got, want) in [(min_x, left), (min_y, top), (max_x, right), (max_y, bottom)] {
            assert!((got - want).abs() <= 2.0, "{mode:?}: {got} vs {want}\n{}", outcome.report);
        }
        let (w, h) = outcome.panorama.dimensions();
        assert!((w as f64 - (right - left)).abs() <= 3.0 && (h as f64 - (bottom - top)).abs() <= 3.0);
    }
}

#[test]
fn disjoint_images_exit_two() {
    let dir = tempfile::tempdir().unwrap();
    let a = write_png(dir.path(), "a.png", &procedural(320, 240, 1));
    let b = write_png(dir.path(), "b.png", &procedural(320, 240, 2));
    let out = dir.path().join("pano.png");
    let (code, stdout, _) = run(&["--out".as_ref(), out.as_os_str(), a.as_os_str(), b.as_os_str()]);
    assert_eq!(code, 2, "{stdout}");
    assert!(stdout.lines().any(|l| l == "unplaced 1"), "{stdout}");
    let pano = decode(&std::fs::read(&out).unwrap()).unwrap();
    assert_eq!(pano.dimensions(), (320, 240));
}

#[test]
fn unreadable_input_exits_one() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.png");
    let junk = dir.path().join("junk.png");
    std::fs::write(&junk, b"not an image").unwrap();
    let out = dir.path().join("pano.png");
    for bad in [&missing, &junk] {
        let (code, _, stderr) = run(&["--out".as_ref(), out.as_os_str(), bad.as_os_str()]);
        assert_eq!(code, 1);
        assert!(stderr.contains(&*bad.to_string_lossy()), "{stderr}");
    }
    assert!(!out.exists());
}

#[test]
fn output_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let paths: Vec<PathBuf> =
        grid_views().iter().enumerate().map(|(i, (img, _))| write_png(dir.path(), &format!("v{i}.png"), img)).collect();
    let mut outputs = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("pano{k}.png"));
        let report = dir.path().join(format!("report{k}.txt"));
        let mut args: Vec<&std::ffi::OsStr> =
            vec!["--out".as_ref(), out.as_os_str(), "--seed".as_ref(), "7".as_ref(), "--report".as_ref(), report.as_os_str()];
        args.extend(paths.iter().map(|p| p.as_os_str()));
        let (code, stdout, stderr) = run(&args);
        assert_eq!(code, 0, "{stderr}");
        assert_eq!(std::fs::read_to_string(&report).unwrap(), stdout);
        outputs.push((std::fs::read(&out).unwrap(), stdout));
    }
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn anchor_choice_moves_the_origin() {
    let views = grid_views();
    let inputs: Vec<Input> =
        views.iter().enumerate().map(|(i, (img, _))| Input { name: format!("v{i}"), image: img.clone() }).collect();
    let outcome = stitch(&inputs, &Options { anchor: 3, ..Options::default() }).unwrap();
    let p = outcome.layout.placements[&DeviceId::from("0003")].params();
    assert_eq!(p, [1.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    assert!(outcome.report.lines().any(|l| l == "anchor 3 v3"));
    assert!(stitch(&inputs, &Options { anchor: 4, ..Options::default() }).is_err());
}
