//! `storyloom`: runs pipeline operations against a project directory.
//!
//! Every command prints one JSON document on stdout; progress goes to
//! stderr. Failures exit nonzero with `{"error": ...}` on stdout.

use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Map, Value};
use storyloom_core::compiler;
use storyloom_core::config::ProviderKind;
use storyloom_core::ids::SceneId;
use storyloom_core::model::{Mutation, Script};
use storyloom_core::workspace::{load_config, ErrorClass, Op, OpError, OpResult, Workspace};
use storyloom_server::AppState;

#[derive(Parser)]
#[command(name = "storyloom", version, about = "Grow a video story from captured footage")]
struct Cli {
    /// Project directory.
    #[arg(long, global = true, default_value = ".")]
    project: PathBuf,
    /// Config file; defaults to `storyloom.toml` in the project.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Model provider, overriding the config.
    #[arg(long, global = true)]
    provider: Option<ProviderKind>,
    /// Generation seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Level {
    Story,
    Scene,
}

#[derive(Subcommand)]
enum Command {
    /// Create an empty project.
    Init,
    /// Import media files, then describe the new shots.
    Ingest {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        /// Skip describing the new shots.
        #[arg(long)]
        no_describe: bool,
    },
    /// Describe shots that have no description yet.
    Describe {
        /// Re-describe shots that already have one.
        #[arg(long)]
        force: bool,
        /// Limit to these shots.
        #[arg(long, value_delimiter = ',')]
        shots: Option<Vec<String>>,
    },
    /// Group ungrouped shots into scenes.
    Group,
    /// Order the active version's scenes and propose missing ones.
    Sequence {
        #[arg(long)]
        version: Option<String>,
    },
    /// Create a story variation from a prompt.
    Variation {
        #[arg(long)]
        prompt: String,
    },
    /// Ask for writing suggestions.
    Suggest {
        #[arg(long, value_enum, default_value = "story")]
        level: Level,
        #[arg(long)]
        category: Option<String>,
        /// Scene to suggest for; required at scene level.
        #[arg(long)]
        scene: Option<String>,
    },
    /// Order a scene's shots and propose new ones.
    ExpandScene { scene: String },
    /// Generate keyframe candidates for a shot between two neighbors.
    ContextualShot {
        scene: String,
        /// `before,after` shot ids; either side may be empty.
        #[arg(long)]
        between: String,
        #[arg(long)]
        prompt: Option<String>,
    },
    /// Generate video variations of a shot.
    Animate {
        shot: String,
        #[arg(long)]
        prompt: Option<String>,
        /// PNG with spatial annotations drawn over the keyframe.
        #[arg(long)]
        annotations: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
    },
    /// Link script excerpts to shots and retime the scene.
    Align {
        scene: String,
        /// Replace the scene script first.
        #[arg(long)]
        script: Option<String>,
        /// Generate narration for the aligned script.
        #[arg(long)]
        narrate: bool,
    },
    /// Compile a scene, or the active story version, into an edit list.
    Compile {
        #[arg(required_unless_present = "story", conflicts_with = "story")]
        scene: Option<String>,
        #[arg(long)]
        story: bool,
        /// Run the configured render command.
        #[arg(long)]
        render: bool,
    },
    /// Run any operation by name with JSON parameters.
    Op {
        name: String,
        #[arg(default_value = "{}")]
        params: String,
    },
    /// Undo the latest change.
    Undo,
    /// Redo the latest undone change.
    Redo,
    /// Serve the HTTP API for this project.
    Serve {
        #[arg(long, default_value_t = 7878)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: std::net::IpAddr,
    },
    /// Codec-free renderer: writes an MP4 whose length matches the edit list.
    #[command(hide = true)]
    PlaceholderRender { edl: PathBuf, out: PathBuf },
}

fn op(name: &str, params: Value) -> Result<Op, OpError> {
    Op::from_parts(name, params)
}

fn params(pairs: &[(&str, Value)]) -> Value {
    let m: Map<String, Value> = pairs
        .iter()
        .filter(|(_, v)| !v.is_null())
        .map(|(k, v)| ((*k).to_string(), v.clone()))
        .collect();
    Value::Object(m)
}

fn to_value(r: &OpResult) -> Value {
    serde_json::to_value(r).expect("op result serializes")
}

async fn run(ws: &Workspace, op: Op) -> Result<Value, OpError> {
    eprintln!("storyloom: running {}", op.name());
    let r = ws.run(op).await?;
    eprintln!("storyloom: {} done at revision {}", r.op, r.revision);
    Ok(to_value(&r))
}

fn between(spec: &str) -> Result<(Value, Value), OpError> {
    let (a, b) = spec
        .split_once(',')
        .ok_or_else(|| OpError::invalid("--between takes `before,after`; leave a side empty for a boundary"))?;
    let side = |s: &str| if s.trim().is_empty() { Value::Null } else { json!(s.trim()) };
    Ok((side(a), side(b)))
}

async fn execute(cli: Cli) -> Result<Value, OpError> {
    let root = cli.project.clone();
    let mut config = load_config(&root, cli.config.as_deref())?;
    if let Some(p) = cli.provider {
        config.provider = p;
    }
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    let open = || Workspace::open(&root, config.clone());
    match cli.command {
        Command::Init => {
            let ws = Workspace::init(&root, config.clone())?;
            eprintln!("storyloom: created project in {}", root.display());
            let p = ws.snapshot();
            Ok(json!({ "op": "init", "project_id": p.project_id, "revision": ws.session().revision() }))
        }
        Command::Ingest { paths, no_describe } => {
            let ws = open()?;
            let paths: Vec<Value> = paths.iter().map(|p| json!(p)).collect();
            let mut out = run(&ws, op("ingest", json!({ "paths": paths }))?).await?;
            let shots = out["result"]["shots"].clone();
            let has_shots = shots.as_array().is_some_and(|s| !s.is_empty());
            if !no_describe && has_shots {
                let d = run(&ws, op("describe", json!({ "shot_ids": shots }))?).await?;
                out["revision"] = d["revision"].clone();
                out["describe"] = d;
            }
            Ok(out)
        }
        Command::Describe { force, shots } => {
            let ws = open()?;
            run(
                &ws,
                op("describe", params(&[("force", json!(force)), ("shot_ids", json!(shots))]))?,
            )
            .await
        }
        Command::Group => run(&open()?, op("group", json!({}))?).await,
        Command::Sequence { version } => run(&open()?, op("sequence_scenes", params(&[("version_id", json!(version))]))?).await,
        Command::Variation { prompt } => run(&open()?, op("story_variation", json!({ "prompt": prompt }))?).await,
        Command::Suggest { level, category, scene } => {
            let ws = open()?;
            let o = match level {
                Level::Story => op("story_suggestions", params(&[("category", json!(category))]))?,
                Level::Scene => {
                    let scene = scene.ok_or_else(|| OpError::invalid("--level scene needs --scene"))?;
                    op(
                        "scene_suggestions",
                        params(&[("scene_id", json!(scene)), ("category", json!(category))]),
                    )?
                }
            };
            run(&ws, o).await
        }
        Command::ExpandScene { scene } => run(&open()?, op("sequence_visuals", json!({ "scene_id": scene }))?).await,
        Command::ContextualShot {
            scene,
            between: b,
            prompt,
        } => {
            let (before, after) = between(&b)?;
            let p = params(&[
                ("scene_id", json!(scene)),
                ("before", before),
                ("after", after),
                ("prompt", json!(prompt)),
            ]);
            run(&open()?, op("contextual_shot", p)?).await
        }
        Command::Animate {
            shot,
            prompt,
            annotations,
            n,
        } => {
            let png = match annotations {
                None => Value::Null,
                Some(path) => {
                    let bytes = std::fs::read(&path).map_err(|e| OpError::invalid(format!("{}: {e}", path.display())))?;
                    json!(STANDARD.encode(bytes))
                }
            };
            let p = params(&[
                ("shot_id", json!(shot)),
                ("annotations_png", png),
                ("prompt", json!(prompt)),
                ("n", json!(n)),
            ]);
            run(&open()?, op("video_variations", p)?).await
        }
        Command::Align { scene, script, narrate } => {
            let ws = open()?;
            if let Some(text) = script {
                ws.apply(
                    Mutation::SetSceneScript {
                        scene_id: SceneId::new(&scene),
                        script: Script::plain(text),
                    },
                    None,
                )?;
                eprintln!("storyloom: script set for {scene}");
            }
            let mut out = run(&ws, op("auto_align", json!({ "scene_id": scene }))?).await?;
            if narrate {
                let n = run(&ws, op("narration", json!({ "scene_id": scene }))?).await?;
                out["revision"] = n["revision"].clone();
                out["narration"] = n;
            }
            Ok(out)
        }
        Command::Compile { scene, story: _, render } => {
            run(
                &open()?,
                op("compile", params(&[("scene_id", json!(scene)), ("render", json!(render))]))?,
            )
            .await
        }
        Command::Op { name, params } => {
            let p: Value = serde_json::from_str(&params).map_err(|e| OpError::invalid(format!("params: {e}")))?;
            run(&open()?, op(&name, p)?).await
        }
        Command::Undo => {
            let c = open()?.undo(None)?;
            Ok(json!({ "op": "undo", "seq": c.seq, "revision": c.revision }))
        }
        Command::Redo => {
            let c = open()?.redo(None)?;
            Ok(json!({ "op": "redo", "seq": c.seq, "revision": c.revision }))
        }
        Command::Serve { port, host } => {
            let ws = Arc::new(open()?);
            let addr = SocketAddr::new(host, port);
            eprintln!("storyloom: serving {} on http://{addr}", ws.snapshot().project_id);
            storyloom_server::serve(addr, AppState::new([ws]))
                .await
                .map_err(|e| OpError::new(ErrorClass::Internal, "io_error", e.to_string()))?;
            Ok(json!({ "op": "serve" }))
        }
        Command::PlaceholderRender { edl, out } => {
            compiler::render_placeholder(&edl, &out)?;
            Ok(json!({ "op": "placeholder_render", "out": out }))
        }
    }
}

#[tokio::main]
async fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli).await {
        Ok(v) => {
            println!("{}", serde_json::to_string_pretty(&v).expect("json"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("storyloom: {}: {}", e.body.code, e.body.message);
            println!("{}", serde_json::to_string_pretty(&json!({ "error": e })).expect("json"));
            ExitCode::FAILURE
        }
    }
}
