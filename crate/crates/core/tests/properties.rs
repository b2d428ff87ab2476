//! Invariants over randomly generated topologies. The expected values come
//! from the generator's own description of each topology, not from the parser.

use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use toskose::config::{
    complete_config, parse_config, validate_config, CompletionDefaults, DockerConfig, ManagerConfig, NodeConfig,
    ToskoseConfig, LOG_LEVELS,
};
use toskose::packager::{enrich_model, generate_compose, generate_supervisor_config, BaseImages, MANAGER_SERVICE};
use toskose::tosca::{classify_nodes, parse_service_template, validate_topology};
use toskose::unit::load_unit_config_with;

const OPS: [&str; 5] = ["create", "configure", "start", "stop", "delete"];

#[derive(Debug, Clone)]
struct Software {
    /// Index into containers when `< n_containers`, otherwise into earlier software.
    host: usize,
    ops: Vec<&'static str>,
}

#[derive(Debug, Clone)]
struct Topology {
    containers: Vec<Option<String>>, // attached volume location, if any
    software: Vec<Software>,
}

impl Topology {
    fn container(&self, sw: usize) -> usize {
        let h = self.software[sw].host;
        if h < self.containers.len() {
            h
        } else {
            self.container(h - self.containers.len())
        }
    }

    fn host_name(&self, sw: usize) -> String {
        let h = self.software[sw].host;
        if h < self.containers.len() {
            format!("c{h}")
        } else {
            format!("s{}", h - self.containers.len())
        }
    }

    /// Container name to the programs it must run.
    fn programs(&self) -> BTreeMap<String, BTreeSet<String>> {
        let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (i, sw) in self.software.iter().enumerate() {
            let entry = out.entry(format!("c{}", self.container(i))).or_default();
            entry.extend(sw.ops.iter().map(|op| format!("s{i}-{op}")));
        }
        out
    }

    fn hosted(&self) -> BTreeMap<String, BTreeSet<String>> {
        let mut out: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for i in 0..self.software.len() {
            out.entry(format!("c{}", self.container(i))).or_default().insert(format!("s{i}"));
        }
        out
    }

    fn to_yaml(&self, extra: &str) -> String {
        let mut y = String::from(
            "tosca_definitions_version: tosca_simple_yaml_1_0\nmetadata:\n  template_name: app\ntopology_template:\n  node_templates:\n",
        );
        for (i, volume) in self.containers.iter().enumerate() {
            y += &format!(
                "    c{i}:\n      type: tosker.nodes.Container\n      artifacts:\n        my_image:\n          file: image{i}:1.{i}\n          type: tosker.artifacts.Image\n          repository: docker_hub\n"
            );
            if let Some(location) = volume {
                y += &format!(
                    "      requirements:\n        - storage:\n            node: v{i}\n            relationship:\n              type: tosca.relationships.AttachesTo\n              properties:\n                location: {location}\n    v{i}:\n      type: tosker.nodes.Volume\n"
                );
            }
        }
        for (i, sw) in self.software.iter().enumerate() {
            y += &format!(
                "    s{i}:\n      type: tosker.nodes.Software\n      requirements:\n        - host: {}\n",
                self.host_name(i)
            );
            y += "      interfaces:\n        Standard:\n";
            for op in &sw.ops {
                y += &format!("          {op}: s{i}/{op}.sh\n");
            }
        }
        y + extra
    }
}

fn topology() -> impl Strategy<Value = Topology> {
    let containers = prop::collection::vec(prop::option::of("/data/[a-z]{1,6}"), 1..5);
    containers.prop_flat_map(|containers| {
        let n = containers.len();
        let software = prop::collection::vec(
            (any::<prop::sample::Index>(), prop::sample::subsequence(OPS.to_vec(), 1..=OPS.len())),
            0..7,
        );
        (Just(containers), software).prop_map(move |(containers, raw)| {
            let software =
                raw.into_iter().enumerate().map(|(i, (host, ops))| Software { host: host.index(n + i), ops }).collect();
            Topology { containers, software }
        })
    })
}

fn node_config() -> impl Strategy<Value = NodeConfig> {
    (
        prop::option::of("[a-z]{1,8}"),
        prop::option::of(1i64..=65535),
        prop::option::of("[a-z]{1,8}"),
        prop::option::of("[a-zA-Z0-9]{1,12}"),
        prop::option::of(prop::sample::select(LOG_LEVELS.to_vec())),
        prop::option::of("[a-z]{1,8}"),
        prop::option::of("[0-9]\\.[0-9]"),
    )
        .prop_map(|(alias, port, user, password, level, name, tag)| NodeConfig {
            alias,
            port,
            user,
            password,
            log_level: level.map(str::to_owned),
            docker: DockerConfig { name, tag, registry_password: None },
        })
}

fn manager_config() -> impl Strategy<Value = Option<ManagerConfig>> {
    prop::option::of(
        (
            prop::option::of(1i64..=65535),
            prop::option::of("[a-z]{1,8}"),
            prop::option::of(Just("development".to_owned())),
        )
            .prop_map(|(port, user, mode)| ManagerConfig { port, user, mode, ..ManagerConfig::default() }),
    )
}

/// A topology plus a partial configuration touching some of its hosting containers.
fn with_config() -> impl Strategy<Value = (Topology, ToskoseConfig)> {
    topology().prop_flat_map(|t| {
        let hosting: Vec<String> = t.hosted().into_keys().collect();
        let n = hosting.len();
        (Just(t), prop::collection::vec(prop::option::of(node_config()), n..=n), manager_config()).prop_map(
            move |(t, nodes, manager)| {
                let nodes = hosting.iter().cloned().zip(nodes).filter_map(|(c, n)| Some((c, n?))).collect();
                (t, ToskoseConfig { nodes, manager })
            },
        )
    })
}

fn kept<T: PartialEq + Clone>(before: &Option<T>, after: &Option<T>) -> bool {
    before.is_none() || before == after
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 128, failure_persistence: None, ..ProptestConfig::default() })]

    #[test]
    fn classification_matches_generator(t in topology()) {
        let template = parse_service_template(&t.to_yaml("")).unwrap();
        prop_assert!(validate_topology(&template).is_clean(), "{}", validate_topology(&template));
        let classes = classify_nodes(&template);
        let hosted = t.hosted();
        let got: BTreeMap<String, BTreeSet<String>> =
            classes.hosting.iter().map(|(c, s)| (c.clone(), s.iter().cloned().collect())).collect();
        prop_assert_eq!(&got, &hosted);
        let standalone: BTreeSet<String> = classes.standalone.iter().cloned().collect();
        let expected: BTreeSet<String> =
            (0..t.containers.len()).map(|i| format!("c{i}")).filter(|c| !hosted.contains_key(c)).collect();
        prop_assert_eq!(standalone, expected);
    }

    #[test]
    fn compose_and_unit_configs_agree_with_generator((t, partial) in with_config()) {
        let template = parse_service_template(&t.to_yaml("")).unwrap();
        prop_assert!(validate_config(&partial, &template).is_clean(), "{}", validate_config(&partial, &template));
        let completed = complete_config(&partial, &template, &CompletionDefaults::for_template(&template));
        let complete = completed.to_complete().unwrap();
        let model = enrich_model(&template, &complete, &BaseImages::default());
        let compose = generate_compose(&model);

        let mut names: Vec<String> = (0..t.containers.len()).map(|i| format!("c{i}")).collect();
        names.push(MANAGER_SERVICE.to_owned());
        prop_assert_eq!(compose.services.keys().cloned().collect::<Vec<_>>(), names);

        let programs = t.programs();
        for (i, volume) in t.containers.iter().enumerate() {
            let name = format!("c{i}");
            let service = &compose.services[&name];
            let expected: Vec<String> = volume.iter().map(|l| format!("v{i}:{l}")).collect();
            prop_assert_eq!(&service.volumes, &expected);
            prop_assert_eq!(service.init, programs.contains_key(&name));
            if let Some(expected) = programs.get(&name) {
                let doc = generate_supervisor_config(&model, &name).unwrap();
                let parsed = load_unit_config_with(&doc, |k| service.env(k).map(str::to_owned)).unwrap();
                let got: BTreeSet<String> = parsed.programs.keys().cloned().collect();
                prop_assert_eq!(&got, expected);
                let unit = &complete.nodes[&name];
                prop_assert_eq!(parsed.http.port, unit.port);
                prop_assert_eq!(&parsed.http.user, &unit.user);
            } else {
                prop_assert!(service.env("SUPERVISORD_PORT").is_none());
            }
        }
    }

    #[test]
    fn completion_keeps_provided_values_and_is_idempotent((t, partial) in with_config()) {
        let template = parse_service_template(&t.to_yaml("")).unwrap();
        let defaults = CompletionDefaults::for_template(&template);
        let completed = complete_config(&partial, &template, &defaults);
        for (name, before) in &partial.nodes {
            let after = &completed.nodes[name];
            prop_assert!(kept(&before.alias, &after.alias));
            prop_assert!(kept(&before.port, &after.port));
            prop_assert!(kept(&before.user, &after.user));
            prop_assert!(kept(&before.password, &after.password));
            prop_assert!(kept(&before.log_level, &after.log_level));
            prop_assert!(kept(&before.docker.name, &after.docker.name));
            prop_assert!(kept(&before.docker.tag, &after.docker.tag));
        }
        if let Some(before) = &partial.manager {
            let after = completed.manager.as_ref().unwrap();
            prop_assert!(kept(&before.port, &after.port));
            prop_assert!(kept(&before.user, &after.user));
            prop_assert!(kept(&before.mode, &after.mode));
        }
        prop_assert_eq!(completed.nodes.keys().cloned().collect::<BTreeSet<_>>(), t.hosted().into_keys().collect());
        prop_assert!(completed.to_complete().is_some());
        prop_assert_eq!(&complete_config(&completed, &template, &defaults), &completed);
    }

    #[test]
    fn config_survives_a_file_round_trip((t, partial) in with_config()) {
        let template = parse_service_template(&t.to_yaml("")).unwrap();
        let completed = complete_config(&partial, &template, &CompletionDefaults::for_template(&template));
        prop_assert_eq!(parse_config(&completed.to_yaml()).unwrap(), completed);
    }

    #[test]
    fn injected_faults_are_always_reported(t in topology(), hostless in any::<bool>(), unplaced in any::<bool>()) {
        prop_assume!(hostless || unplaced);
        let mut extra = String::new();
        if hostless {
            extra += "    orphan:\n      type: tosker.nodes.Software\n      interfaces:\n        Standard:\n          start: orphan/start.sh\n";
        }
        if unplaced {
            extra += "    bare:\n      type: tosker.nodes.Container\n      artifacts:\n        my_image:\n          file: bare:1\n          type: tosker.artifacts.Image\n      requirements:\n        - storage:\n            node: loose\n            relationship: tosca.relationships.AttachesTo\n    loose:\n      type: tosker.nodes.Volume\n";
        }
        let template = parse_service_template(&t.to_yaml(&extra)).unwrap();
        let report = validate_topology(&template);
        prop_assert!(!hostless || report.has_code("software-without-host"), "{}", report);
        prop_assert!(!unplaced || report.has_code("attachment-without-location"), "{}", report);
    }

    #[test]
    fn unknown_host_is_rejected_while_parsing(t in topology()) {
        let extra = "    lost:\n      type: tosker.nodes.Software\n      requirements:\n        - host: nowhere\n";
        prop_assert!(parse_service_template(&t.to_yaml(extra)).is_err());
    }
}
