//! Read-only HTTP server for the browser viewer.
//!
//! Everything is read into memory at startup, so request handling never touches the disk.

use std::collections::HashMap;
use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::body::Body;
use axum::extract::State;
use axum::http::{header, Method, StatusCode, Uri};
use axum::response::{IntoResponse, Response};
use axum::Router;
use pianodiff_core::export_peaks_json;

use crate::error::CliError;
use crate::sources::Project;

pub struct Config {
    pub host: String,
    pub port: u16,
    pub assets: Option<PathBuf>,
    pub document_json: String,
    pub project: Project,
}

struct Resource {
    content_type: &'static str,
    body: Vec<u8>,
}

type Routes = HashMap<String, Resource>;

fn content_type(path: &str) -> &'static str {
    let ext = path
        .rsplit_once('.')
        .map(|(_, e)| e.to_ascii_lowercase())
        .unwrap_or_default();
    match ext.as_str() {
        "json" => "application/json",
        "mid" | "midi" => "audio/midi",
        "wav" => "audio/wav",
        "html" | "htm" => "text/html; charset=utf-8",
        "js" | "mjs" => "text/javascript; charset=utf-8",
        "css" => "text/css; charset=utf-8",
        "svg" => "image/svg+xml",
        "wasm" => "application/wasm",
        "png" => "image/png",
        "txt" => "text/plain; charset=utf-8",
        _ => "application/octet-stream",
    }
}

fn collect_assets(root: &Path, dir: &Path, routes: &mut Routes) -> io::Result<()> {
    let mut entries = fs::read_dir(dir)?.collect::<io::Result<Vec<_>>>()?;
    entries.sort_by_key(|e| e.file_name());
    for entry in entries {
        let path = entry.path();
        if entry.file_type()?.is_dir() {
            collect_assets(root, &path, routes)?;
            continue;
        }
        let rel = path
            .strip_prefix(root)
            .expect("walk stays under the asset root")
            .components()
            .map(|c| c.as_os_str().to_string_lossy().into_owned())
            .collect::<Vec<_>>()
            .join("/");
        let body = fs::read(&path)?;
        if rel == "index.html" {
            routes.insert(
                "/".to_string(),
                Resource {
                    content_type: content_type(&rel),
                    body: body.clone(),
                },
            );
        }
        routes.entry(format!("/{rel}")).or_insert(Resource {
            content_type: content_type(&rel),
            body,
        });
    }
    Ok(())
}

fn build_routes(config: Config) -> Result<Routes, CliError> {
    let mut routes = Routes::new();
    routes.insert(
        "/document.json".into(),
        Resource {
            content_type: "application/json",
            body: config.document_json.into_bytes(),
        },
    );
    if let Some(wave) = &config.project.waveform {
        routes.insert(
            "/peaks.json".into(),
            Resource {
                content_type: "application/json",
                body: export_peaks_json(wave).into_bytes(),
            },
        );
    }
    for (name, bytes) in config.project.files {
        routes.insert(
            format!("/files/{}", name.trim_start_matches("./")),
            Resource {
                content_type: content_type(&name),
                body: bytes,
            },
        );
    }
    if let Some(dir) = &config.assets {
        collect_assets(dir, dir, &mut routes).map_err(|e| CliError::input(dir, e))?;
    }
    Ok(routes)
}

fn percent_decode(path: &str) -> Option<String> {
    let bytes = path.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' {
            let hex = std::str::from_utf8(bytes.get(i + 1..i + 3)?).ok()?;
            out.push(u8::from_str_radix(hex, 16).ok()?);
            i += 3;
        } else {
            out.push(bytes[i]);
            i += 1;
        }
    }
    String::from_utf8(out).ok()
}

async fn handle(State(routes): State<Arc<Routes>>, method: Method, uri: Uri) -> Response {
    if method != Method::GET && method != Method::HEAD {
        return (
            StatusCode::METHOD_NOT_ALLOWED,
            [(header::ALLOW, "GET, HEAD")],
        )
            .into_response();
    }
    let found = percent_decode(uri.path()).and_then(|p| routes.get(&p));
    match found {
        Some(resource) => {
            let body = if method == Method::HEAD {
                Body::empty()
            } else {
                Body::from(resource.body.clone())
            };
            (
                [
                    (header::CONTENT_TYPE, resource.content_type),
                    (header::CACHE_CONTROL, "no-cache"),
                ],
                body,
            )
                .into_response()
        }
        None => (StatusCode::NOT_FOUND, "not found\n").into_response(),
    }
}

pub fn run(config: Config) -> Result<(), CliError> {
    let address = format!("{}:{}", config.host, config.port);
    let listener = std::net::TcpListener::bind(&address).map_err(|e| match e.kind() {
        io::ErrorKind::AddrInUse => {
            CliError::Usage(format!("port {} is already in use", config.port))
        }
        _ => CliError::Usage(format!("cannot listen on {address}: {e}")),
    })?;
    listener
        .set_nonblocking(true)
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let local = listener
        .local_addr()
        .map_err(|e| CliError::Internal(e.to_string()))?;

    let app = Router::new()
        .fallback(handle)
        .with_state(Arc::new(build_routes(config)?));

    println!("serving on http://{local}/");
    let _ = io::stdout().flush();

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    runtime
        .block_on(async move {
            let listener = tokio::net::TcpListener::from_std(listener)?;
            axum::serve(listener, app).await
        })
        .map_err(|e| CliError::Internal(e.to_string()))
}
