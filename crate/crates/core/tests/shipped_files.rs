use std::path::PathBuf;

use nfseg::data::SceneSpec;
use nfseg::Config;

fn repo_file(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../scenes").join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn one_object_scene_is_the_default() {
    assert_eq!(SceneSpec::from_toml(&repo_file("one_object.toml")).unwrap(), SceneSpec::default());
}

#[test]
fn two_object_scene_adds_a_second_object() {
    let spec = SceneSpec::from_toml(&repo_file("two_objects.toml")).unwrap();
    assert_eq!(spec.objects.len(), 2);
    assert_eq!(spec.objects[0], SceneSpec::default().objects[0]);
}

#[test]
fn shipped_config_is_the_default() {
    assert_eq!(Config::from_toml(&repo_file("default_config.toml")).unwrap(), Config::default());
}
