//! The colormap table in the docs must match the code.
//! Regenerate with `CUEING_BLESS=1 cargo test -p cueing --test docs`.

use std::path::Path;

use cueing::render::colormap_markdown;

const INTRO: &str = "# Overlay colormap\n\n\
Gaze value `v` in `[0, 1]` selects entry `round(v * 255)`. Overlays blend the\n\
entry onto the image as `(1 - alpha) * image + alpha * color`.\n\n\
The table is a piecewise-linear jet map: dark blue at 0, cyan, green near the\n\
middle, yellow, dark red at 255.\n\n";

#[test]
fn colormap_doc_is_current() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../docs/colormap.md");
    let want = format!("{INTRO}{}", colormap_markdown());
    if std::env::var_os("CUEING_BLESS").is_some() {
        std::fs::write(&path, &want).unwrap();
    }
    let got = std::fs::read_to_string(&path).expect("docs/colormap.md exists");
    assert!(got == want, "docs/colormap.md is stale; rerun with CUEING_BLESS=1");
}
