use super::mutation::{Mutation, StoryError};
use super::types::{Project, Scene, StoryVersion, VersionOrigin};
use crate::ids::{unique_id, SceneId, VersionId};

/// Builds a deep copy of a version: fresh scene ids, scene contents copied,
/// shots shared by reference. Returns the new version and the mutation that
/// adds it.
pub fn duplicate_version(project: &Project, version_id: &VersionId, name: &str) -> Result<(StoryVersion, Mutation), StoryError> {
    let source = project.version(version_id).ok_or_else(|| StoryError::UnknownId {
        kind: "version",
        id: version_id.to_string(),
    })?;
    let count = project.versions.len().to_string();
    let new_id = unique_id(VersionId::derive(&[version_id.as_str(), name, &count]), |s| {
        project.versions.iter().any(|v| v.version_id.as_str() == s)
    });
    let scenes: Vec<Scene> = source
        .scenes
        .iter()
        .filter_map(|sid| project.scenes.get(sid))
        .map(|scene| {
            let mut copy = scene.clone();
            copy.scene_id = unique_id(SceneId::derive(&[new_id.as_str(), scene.scene_id.as_str()]), |s| {
                project.scenes.keys().any(|k| k.as_str() == s)
            });
            copy
        })
        .collect();
    let version = StoryVersion {
        version_id: new_id,
        name: name.to_string(),
        scenes: scenes.iter().map(|s| s.scene_id.clone()).collect(),
        origin: VersionOrigin::Duplicate,
        variation_prompt: None,
    };
    let mutation = Mutation::AddVersion {
        version: version.clone(),
        scenes,
    };
    Ok((version, mutation))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::fixtures::two_scene_project;
    use crate::model::{apply_mutation, Mutation};
    use std::collections::HashSet;

    #[test]
    fn duplicate_has_disjoint_scene_ids() {
        let p = two_scene_project();
        let v = p.active_version.clone();
        let (copy, m) = duplicate_version(&p, &v, "Copy").unwrap();
        let p2 = apply_mutation(&p, &m).unwrap().project;
        let orig = p2.version(&v).unwrap();
        assert_eq!(copy.scenes.len(), orig.scenes.len());
        let a: HashSet<_> = orig.scenes.iter().collect();
        assert!(copy.scenes.iter().all(|s| !a.contains(s)));
        assert_eq!(copy.name, "Copy");
    }

    #[test]
    fn editing_the_copy_leaves_the_source_alone() {
        let p = two_scene_project();
        let v = p.active_version.clone();
        let (copy, m) = duplicate_version(&p, &v, "Copy").unwrap();
        let p2 = apply_mutation(&p, &m).unwrap().project;
        let p3 = apply_mutation(
            &p2,
            &Mutation::RenameScene {
                scene_id: copy.scenes[0].clone(),
                title: "Changed".into(),
            },
        )
        .unwrap()
        .project;
        let first = &p3.version(&v).unwrap().scenes[0];
        assert_eq!(p3.scenes[first].title, "A");
        assert_eq!(p3.scenes[&copy.scenes[0]].title, "Changed");
    }

    #[test]
    fn duplicate_empty_version() {
        let p = Project::new("empty");
        let v = p.active_version.clone();
        let (copy, m) = duplicate_version(&p, &v, "Copy").unwrap();
        assert!(copy.scenes.is_empty());
        apply_mutation(&p, &m).unwrap();
    }

    #[test]
    fn unknown_version() {
        let p = Project::new("x");
        assert!(matches!(
            duplicate_version(&p, &VersionId::new("nope"), "n"),
            Err(StoryError::UnknownId { kind: "version", .. })
        ));
    }
}
