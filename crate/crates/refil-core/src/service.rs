//! Networked split inference over the frame protocol.
//!
//! The server owns the server-side model halves and never sees raw inputs;
//! the client runs its half plus the noised forward pass locally and ships
//! only the noised activation. In honest-but-curious mode the server also
//! appends every received activation to a log file for offline attack
//! evaluation — that log is exactly what a curious operator would hold.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use crate::checkpoint::load_model;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::privacy::{refil_forward, RefilConfig};
use crate::rng::SeededRng;
use crate::tensor::Tensor;
use crate::wire::{read_frame, write_frame, ActivationPayload, WireMessage};

/// Immutable map from model id to the server-side model half.
#[derive(Debug, Clone, Default)]
pub struct ServerCatalog {
    models: BTreeMap<String, Model>,
}

impl ServerCatalog {
    pub fn new() -> ServerCatalog {
        ServerCatalog::default()
    }

    pub fn insert(&mut self, id: impl Into<String>, model: Model) {
        self.models.insert(id.into(), model);
    }

    pub fn get(&self, id: &str) -> Option<&Model> {
        self.models.get(id)
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.models.keys().map(|s| s.as_str())
    }

    /// Load every `*.rflm` in a directory; the file stem becomes the id.
    pub fn from_dir(dir: &Path) -> Result<ServerCatalog> {
        let mut catalog = ServerCatalog::new();
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|e| e == "rflm"))
            .collect();
        entries.sort();
        for path in entries {
            let id = path
                .file_stem()
                .and_then(|s| s.to_str())
                .ok_or_else(|| Error::Data(format!("unusable model filename {path:?}")))?
                .to_string();
            catalog.insert(id, load_model(&path)?);
        }
        Ok(catalog)
    }
}

#[derive(Debug, Clone)]
pub enum LogMode {
    Off,
    /// Append every received activation frame to `path`.
    HonestButCurious { path: PathBuf },
}

/// Handle to a running server; dropping it does not stop the server, call
/// [`ServerHandle::shutdown`].
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    join: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Unblock accept with a throwaway connection.
        let _ = TcpStream::connect(self.addr);
        if let Some(join) = self.join.take() {
            let _ = join.join();
        }
    }
}

/// Bind and serve until shutdown. Connections are handled concurrently;
/// each request on a connection is processed in order.
pub fn serve(catalog: ServerCatalog, bind: &str, log_mode: LogMode) -> Result<ServerHandle> {
    if catalog.is_empty() {
        return Err(Error::InvalidArgument("server catalog is empty".into()));
    }
    let listener = TcpListener::bind(bind)?;
    let addr = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let catalog = Arc::new(catalog);
    let log = match log_mode {
        LogMode::Off => None,
        LogMode::HonestButCurious { path } => Some(Arc::new(Mutex::new(BufWriter::new(
            File::create(&path)?,
        )))),
    };

    let stop_accept = Arc::clone(&stop);
    let join = std::thread::spawn(move || {
        for conn in listener.incoming() {
            if stop_accept.load(Ordering::SeqCst) {
                break;
            }
            let Ok(stream) = conn else { continue };
            let catalog = Arc::clone(&catalog);
            let log = log.clone();
            // Workers are detached: shutdown stops accepting, live
            // connections run to their own close.
            std::thread::spawn(move || {
                let _ = handle_connection(stream, &catalog, log.as_deref());
            });
        }
    });

    Ok(ServerHandle {
        addr,
        stop,
        join: Some(join),
    })
}

type SharedLog = Mutex<BufWriter<File>>;

fn handle_connection(
    stream: TcpStream,
    catalog: &ServerCatalog,
    log: Option<&SharedLog>,
) -> Result<()> {
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = stream;
    loop {
        let msg = match crate::wire::read_frame_or_eof(&mut reader) {
            Ok(Some(msg)) => msg,
            Ok(None) => return Ok(()), // clean close at a frame boundary
            Err(e) => {
                // Malformed or truncated frame: report and drop the
                // connection, since the stream offset can no longer be
                // trusted.
                let _ = write_frame(
                    &mut writer,
                    &WireMessage::Error {
                        message: format!("malformed frame: {e}"),
                    },
                );
                return Ok(());
            }
        };
        match msg {
            WireMessage::Hello { .. } => {
                write_frame(
                    &mut writer,
                    &WireMessage::Hello {
                        info: format!("split-server models={}", catalog.models.len()),
                    },
                )?;
            }
            WireMessage::ActivationRequest(payload) => {
                let reply = match serve_activation(catalog, &payload) {
                    Ok(output) => {
                        if let Some(log) = log {
                            append_log(log, &payload)?;
                        }
                        WireMessage::PredictionResponse {
                            request_id: payload.request_id,
                            output,
                        }
                    }
                    Err(e) => WireMessage::Error {
                        message: e.to_string(),
                    },
                };
                write_frame(&mut writer, &reply)?;
            }
            WireMessage::PredictionResponse { .. } | WireMessage::Error { .. } => {
                write_frame(
                    &mut writer,
                    &WireMessage::Error {
                        message: "unexpected message direction".into(),
                    },
                )?;
            }
        }
        writer.flush()?;
    }
}

fn serve_activation(catalog: &ServerCatalog, payload: &ActivationPayload) -> Result<Tensor> {
    let model = catalog
        .get(&payload.model_id)
        .ok_or_else(|| Error::RemoteError(format!("unknown model_id {:?}", payload.model_id)))?;
    payload
        .tensor
        .expect_shape(model.input_shape(), "activation for server model")?;
    model.forward(&payload.tensor)
}

fn append_log(log: &SharedLog, payload: &ActivationPayload) -> Result<()> {
    let mut guard = log.lock().expect("log writer poisoned");
    write_frame(&mut *guard, &WireMessage::ActivationRequest(payload.clone()))?;
    guard.flush()?;
    Ok(())
}

/// Read back an honest-but-curious activation log.
pub fn read_activation_log(path: &Path) -> Result<Vec<ActivationPayload>> {
    let mut reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    while let Some(msg) = crate::wire::read_frame_or_eof(&mut reader)? {
        match msg {
            WireMessage::ActivationRequest(p) => out.push(p),
            other => {
                return Err(Error::Protocol(format!(
                    "unexpected message in activation log: {other:?}"
                )))
            }
        }
    }
    Ok(out)
}

/// A persistent client connection.
pub struct ClientSession {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
    next_request_id: u64,
}

impl ClientSession {
    pub fn connect(server_addr: impl ToSocketAddrs) -> Result<ClientSession> {
        let stream = TcpStream::connect(server_addr)?;
        let mut session = ClientSession {
            reader: BufReader::new(stream.try_clone()?),
            writer: stream,
            next_request_id: 1,
        };
        write_frame(
            &mut session.writer,
            &WireMessage::Hello {
                info: "split-client".into(),
            },
        )?;
        match read_frame(&mut session.reader)? {
            WireMessage::Hello { .. } => Ok(session),
            WireMessage::Error { message } => Err(Error::RemoteError(message)),
            other => Err(Error::Protocol(format!("unexpected hello reply {other:?}"))),
        }
    }

    /// Ship a noised activation, wait for the prediction.
    pub fn request(&mut self, payload: ActivationPayload) -> Result<Tensor> {
        let expect_id = payload.request_id;
        write_frame(&mut self.writer, &WireMessage::ActivationRequest(payload))?;
        self.writer.flush()?;
        match read_frame(&mut self.reader)? {
            WireMessage::PredictionResponse { request_id, output } => {
                if request_id != expect_id {
                    return Err(Error::Protocol(format!(
                        "response id {request_id} does not match request {expect_id}"
                    )));
                }
                Ok(output)
            }
            WireMessage::Error { message } => Err(Error::RemoteError(message)),
            other => Err(Error::Protocol(format!("unexpected reply {other:?}"))),
        }
    }

    fn take_request_id(&mut self) -> u64 {
        let id = self.next_request_id;
        self.next_request_id += 1;
        id
    }
}

/// One-shot split inference: run the noised client forward locally, ship the
/// activation, return the server's prediction. The raw input never enters a
/// wire message — the payload schema has no field for it.
pub fn client_infer(
    client_model: &Model,
    model_id: &str,
    cfg: &RefilConfig,
    x: &Tensor,
    server_addr: impl ToSocketAddrs,
    rng: &mut SeededRng,
) -> Result<Tensor> {
    let mut session = ClientSession::connect(server_addr)?;
    client_infer_on(&mut session, client_model, model_id, cfg, x, rng)
}

/// Same as [`client_infer`] over an existing session.
pub fn client_infer_on(
    session: &mut ClientSession,
    client_model: &Model,
    model_id: &str,
    cfg: &RefilConfig,
    x: &Tensor,
    rng: &mut SeededRng,
) -> Result<Tensor> {
    // For index-input clients the leakage is measured on the differentiable
    // part; the embedding prefix runs first, locally.
    let (prefix, diff_client) = client_model.split_embedding_prefix()?;
    let x_diff = match &prefix {
        Some(p) => p.forward(x)?,
        None => x.clone(),
    };
    let noised = refil_forward(&diff_client, &x_diff, cfg, rng)?;
    let payload = ActivationPayload {
        model_id: model_id.to_string(),
        tensor: noised.z_noised,
        sigma: noised.sigma as f32,
        achieved_dfil: noised.achieved_dfil as f32,
        request_id: session.take_request_id(),
    };
    session.request(payload)
}

#[cfg(test)]
mod tests {
    use std::io::Read;

    use super::*;
    use crate::privacy::Estimator;

    fn catalog_with_identity(dim: usize) -> ServerCatalog {
        let mut c = ServerCatalog::new();
        c.insert("echo", Model::identity(vec![dim]).unwrap());
        c
    }

    #[test]
    fn hello_and_echo_roundtrip() {
        let server = serve(catalog_with_identity(3), "127.0.0.1:0", LogMode::Off).unwrap();
        let mut session = ClientSession::connect(server.addr()).unwrap();
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0]);
        let payload = ActivationPayload {
            model_id: "echo".into(),
            tensor: x.clone(),
            sigma: 0.0,
            achieved_dfil: 0.0,
            request_id: 5,
        };
        let out = session.request(payload).unwrap();
        assert_eq!(out.data(), x.data());
        server.shutdown();
    }

    #[test]
    fn unknown_model_id_gets_error_reply_and_connection_survives() {
        let server = serve(catalog_with_identity(2), "127.0.0.1:0", LogMode::Off).unwrap();
        let mut session = ClientSession::connect(server.addr()).unwrap();
        let bad = ActivationPayload {
            model_id: "nope".into(),
            tensor: Tensor::from_vec(vec![0.0, 0.0]),
            sigma: 0.0,
            achieved_dfil: 0.0,
            request_id: 1,
        };
        assert!(matches!(
            session.request(bad),
            Err(Error::RemoteError(_))
        ));
        // same connection still works
        let good = ActivationPayload {
            model_id: "echo".into(),
            tensor: Tensor::from_vec(vec![4.0, 5.0]),
            sigma: 0.0,
            achieved_dfil: 0.0,
            request_id: 2,
        };
        assert_eq!(session.request(good).unwrap().data(), &[4.0, 5.0]);
        server.shutdown();
    }

    #[test]
    fn truncated_frame_gets_error_and_new_connections_work() {
        let server = serve(catalog_with_identity(2), "127.0.0.1:0", LogMode::Off).unwrap();
        {
            let mut raw = TcpStream::connect(server.addr()).unwrap();
            raw.write_all(b"SPLT\x01\x01\x08\x00").unwrap(); // truncated header
            drop(raw.shutdown(std::net::Shutdown::Write));
            let mut reply = Vec::new();
            let _ = raw.read_to_end(&mut reply);
            let msg = crate::wire::decode(&reply).unwrap();
            assert!(matches!(msg, WireMessage::Error { .. }), "got {msg:?}");
        }
        let mut session = ClientSession::connect(server.addr()).unwrap();
        let x = Tensor::from_vec(vec![1.0, 1.0]);
        let out = session
            .request(ActivationPayload {
                model_id: "echo".into(),
                tensor: x,
                sigma: 0.0,
                achieved_dfil: 0.0,
                request_id: 9,
            })
            .unwrap();
        assert_eq!(out.data(), &[1.0, 1.0]);
        server.shutdown();
    }

    #[test]
    fn client_infer_reports_target_dfil_in_payload() {
        let tmp = tempfile::tempdir().unwrap();
        let log_path = tmp.path().join("acts.log");
        let server = serve(
            catalog_with_identity(4),
            "127.0.0.1:0",
            LogMode::HonestButCurious {
                path: log_path.clone(),
            },
        )
        .unwrap();
        let client = Model::identity(vec![4]).unwrap();
        let cfg = RefilConfig::new(1.0, Estimator::Exact, 3);
        let x = Tensor::from_vec(vec![0.25, 0.5, 0.75, 1.0]);
        let mut rng = SeededRng::new(3);
        let _ = client_infer(&client, "echo", &cfg, &x, server.addr(), &mut rng).unwrap();
        server.shutdown();

        let log = read_activation_log(&log_path).unwrap();
        assert_eq!(log.len(), 1);
        let rel = ((log[0].achieved_dfil as f64) - 1.0).abs();
        assert!(rel < 1e-6, "achieved {}", log[0].achieved_dfil);
        assert!((log[0].sigma - 1.0).abs() < 1e-6);
    }
}
