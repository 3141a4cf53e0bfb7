mod common;

use std::path::{Path, PathBuf};
use std::process::Command;

use common::{expected_translation, fixture};

fn crate_dir() -> &'static Path {
    Path::new(env!("CARGO_MANIFEST_DIR"))
}

/// Directory holding this test binary, where cargo also places the
/// static library built for this run.
fn deps_dir() -> PathBuf {
    std::env::current_exe().unwrap().parent().unwrap().to_owned()
}

fn compiler() -> String {
    std::env::var("CC").unwrap_or_else(|_| "cc".to_owned())
}

#[test]
fn header_is_valid_c_and_cpp() {
    let header = crate_dir().join("include/v2c.h");
    for (lang, std) in [("c", "-std=c99"), ("c++", "-std=c++11")] {
        let status = Command::new(compiler()).args(["-x", lang, std, "-Wall", "-Werror", "-fsyntax-only"]).arg(&header).status().unwrap();
        assert!(status.success(), "{lang}");
    }
}

#[test]
fn c_program_links_and_runs() {
    let lib = deps_dir().join("libv2c_ffi.a");
    assert!(lib.exists(), "{} missing", lib.display());
    let out_dir = tempfile::tempdir().unwrap();
    let exe = out_dir.path().join("smoke");
    let build = Command::new(compiler())
        .args(["-std=c99", "-Wall", "-Werror", "-o"])
        .arg(&exe)
        .arg(crate_dir().join("tests/c/smoke.c"))
        .arg("-I")
        .arg(crate_dir().join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm"])
        .output()
        .unwrap();
    assert!(build.status.success(), "{}", String::from_utf8_lossy(&build.stderr));

    let fx = fixture();
    let run = Command::new(&exe).arg(&fx.checkpoint).arg(&fx.features).output().unwrap();
    let stdout = String::from_utf8(run.stdout).unwrap();
    assert!(run.status.success(), "{stdout}{}", String::from_utf8_lossy(&run.stderr));
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[0], "dims 3 4");
    assert_eq!(lines[1], format!("file {}", expected_translation(&fx, &fx.frames)));
    assert!(lines[2].contains("expected 3, found 4"), "{}", lines[2]);
    assert_eq!(lines[3], "map 1 righthand carry spatula");
    assert_eq!(lines[4], "similarity 0.80000000000000004");
    assert_eq!(lines[5], format!("version {}", env!("CARGO_PKG_VERSION")));
}
