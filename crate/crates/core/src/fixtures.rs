//! Robot descriptions shipped with the crate.

pub const HUMANOID_URDF: &str = include_str!("../fixtures/humanoid.urdf");
pub const QUADRUPED_URDF: &str = include_str!("../fixtures/quadruped.urdf");
pub const OVERLAP_URDF: &str = include_str!("../fixtures/y_overlap.urdf");

/// Looks up a shipped fixture by short name (`humanoid`, `quadruped`, `y_overlap`).
pub fn by_name(name: &str) -> Option<&'static str> {
    match name {
        "humanoid" => Some(HUMANOID_URDF),
        "quadruped" => Some(QUADRUPED_URDF),
        "y_overlap" | "overlap" => Some(OVERLAP_URDF),
        _ => None,
    }
}

/// Robot description text for a fixture name or a URDF file path.
pub fn resolve(spec: &str) -> crate::Result<String> {
    match by_name(spec) {
        Some(text) => Ok(text.to_string()),
        None => std::fs::read_to_string(spec).map_err(|e| {
            crate::DemosError::Config(format!("robot `{spec}` is neither a fixture name nor a readable file: {e}"))
        }),
    }
}
