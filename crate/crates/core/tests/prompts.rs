//! Golden prompt bytes. A wording change must come with a template version
//! bump; `UPDATE_GOLDEN=1` writes the files for the new version.

mod common;

use std::fs;

#[test]
fn prompts_match_golden_files() {
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    for (path, rendered) in common::rendered_goldens() {
        if update {
            fs::create_dir_all(path.parent().unwrap()).unwrap();
            fs::write(&path, &rendered).unwrap();
            continue;
        }
        let golden = fs::read_to_string(&path)
            .unwrap_or_else(|e| panic!("{}: {e} (new template version? rerun with UPDATE_GOLDEN=1)", path.display()));
        assert_eq!(rendered, golden, "{} differs from the rendered prompt", path.display());
    }
}
