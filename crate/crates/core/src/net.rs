// SPDX-License-Identifier: Apache-2.0

//! One request, one response per TCP connection.
//!
//! The server holds the preprocessed dataset behind an [`Arc`] and handles
//! each connection on its own thread. Equality evaluation inside a query
//! runs on a rayon pool.

use std::collections::HashMap;
use std::io::{BufReader, BufWriter, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use log::{debug, info, warn};
use rand::Rng;

use crate::backend::SimdBackend;
use crate::binning::{BinTable, ClientSlot};
use crate::error::{Error, Result};
use crate::protocol::{self, PsiParams, ServerDataset};
use crate::variants::{self, LabelLayout, ValuePlanes, Variant};
use crate::wire::{Request, Response, Status, WireError};

/// Per-element server payloads.
#[derive(Debug, Clone)]
pub enum ServerLabels {
    /// One nonzero label per element.
    Scalar(ValuePlanes),
    /// Fixed-length byte labels.
    Bytes(LabelLayout, ValuePlanes),
}

impl ServerLabels {
    fn planes(&self) -> &ValuePlanes {
        match self {
            ServerLabels::Scalar(p) | ServerLabels::Bytes(_, p) => p,
        }
    }
}

/// Everything a server needs to answer queries.
pub struct ServerState<B: SimdBackend> {
    backend: B,
    params: PsiParams,
    dataset: ServerDataset,
    values: Option<ValuePlanes>,
    labels: Option<ServerLabels>,
    noise_flooding: bool,
    pool: Option<rayon::ThreadPool>,
    queries: AtomicU64,
}

impl<B: SimdBackend> ServerState<B> {
    pub fn new(backend: B, params: PsiParams, dataset: ServerDataset) -> Result<Self> {
        if dataset.fingerprint() != params.fingerprint() {
            return Err(Error::FingerprintMismatch);
        }
        if backend.params() != &params.he {
            return Err(Error::FingerprintMismatch);
        }
        Ok(Self {
            backend,
            params,
            dataset,
            values: None,
            labels: None,
            noise_flooding: false,
            pool: None,
            queries: AtomicU64::new(0),
        })
    }

    /// Values for PSI-Sum and inner products.
    pub fn with_values(mut self, values: ValuePlanes) -> Self {
        self.values = Some(values);
        self
    }

    pub fn with_labels(mut self, labels: ServerLabels) -> Self {
        self.labels = Some(labels);
        self
    }

    pub fn with_noise_flooding(mut self, on: bool) -> Self {
        self.noise_flooding = on;
        self
    }

    /// Bounds the workers used inside one query.
    pub fn with_threads(mut self, threads: usize) -> Result<Self> {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::InvalidParams(e.to_string()))?;
        self.pool = Some(pool);
        Ok(self)
    }

    pub fn backend(&self) -> &B {
        &self.backend
    }

    pub fn params(&self) -> &PsiParams {
        &self.params
    }

    /// Requests that reached the computation stage.
    pub fn queries_computed(&self) -> u64 {
        self.queries.load(Ordering::Relaxed)
    }

    /// Answers one request. Fingerprints are checked before any
    /// ciphertext is touched.
    pub fn handle(&self, req: &Request) -> Response {
        if req.plan_fingerprint != self.params.fingerprint()
            || req.params_fingerprint != self.params.he.fingerprint()
        {
            return Response::error(
                Status::FingerprintMismatch,
                req.variant,
                "plan or parameter fingerprint differs",
            );
        }
        let run = || self.compute(req);
        let result = match &self.pool {
            Some(pool) => pool.install(run),
            None => run(),
        };
        match result {
            Ok((groups, cts)) => Response {
                status: Status::Ok,
                variant: req.variant,
                groups,
                ciphertexts: cts.iter().map(|c| self.backend.serialize(c)).collect(),
                message: String::new(),
            },
            Err(e) => {
                let status = match e {
                    Error::FingerprintMismatch => Status::FingerprintMismatch,
                    Error::UnsupportedVariant(_) => Status::Unsupported,
                    Error::Malformed(_) | Error::ShapeMismatch(_) | Error::KeyMismatch => {
                        Status::Malformed
                    }
                    _ => Status::Error,
                };
                Response::error(status, req.variant, e.to_string())
            }
        }
    }

    fn decode_all(&self, blobs: &[Vec<u8>]) -> Result<Vec<B::Ciphertext>> {
        blobs.iter().map(|b| self.backend.deserialize(b)).collect()
    }

    fn compute(&self, req: &Request) -> Result<(u32, Vec<B::Ciphertext>)> {
        let (b, p, d) = (&self.backend, &self.params, &self.dataset);
        if req.variant != Variant::InnerProduct && !req.client_values.is_empty() {
            return Err(Error::Malformed(
                "client values only accompany inner products".into(),
            ));
        }
        let values = || {
            self.values.as_ref().ok_or_else(|| {
                Error::UnsupportedVariant(format!("{}: server has no values", req.variant))
            })
        };
        let cts = self.decode_all(&req.ciphertexts)?;
        let mut rng = rand::thread_rng();
        self.queries.fetch_add(1, Ordering::Relaxed);
        let (groups, out) = match req.variant {
            Variant::Psi => (1, protocol::intersect(b, p, d, &cts)?),
            Variant::Labelled => {
                let labels = self.labels.as_ref().ok_or_else(|| {
                    Error::UnsupportedVariant("labelled: server has no labels".into())
                })?;
                let planes = labels.planes();
                (
                    planes.groups() as u32,
                    variants::labelled_psi(b, p, d, planes, &cts)?,
                )
            }
            Variant::Sum => (
                1,
                vec![variants::psi_sum(b, p, d, values()?, &cts, &mut rng)?],
            ),
            Variant::Cardinality => (1, vec![variants::psi_cardinality(b, p, d, &cts, &mut rng)?]),
            Variant::InnerProduct => {
                let client_values = self.decode_all(&req.client_values)?;
                (
                    1,
                    vec![variants::psi_inner_product(
                        b,
                        p,
                        d,
                        values()?,
                        &cts,
                        &client_values,
                        &mut rng,
                    )?],
                )
            }
        };
        let out = if self.noise_flooding {
            protocol::rerandomize_all(b, out)?
        } else {
            out
        };
        Ok((groups, out))
    }

    fn serve_connection(&self, stream: TcpStream) -> Result<()> {
        let peer = stream.peer_addr().ok();
        let mut reader = BufReader::new(stream.try_clone().map_err(Error::Network)?);
        let req = match Request::read_from(&mut reader) {
            Ok(r) => r,
            Err(e) => {
                warn!("closing connection from {peer:?}: {e}");
                let _ = stream.shutdown(Shutdown::Both);
                return Err(e.into());
            }
        };
        let start = Instant::now();
        let resp = self.handle(&req);
        let mut w = BufWriter::new(&stream);
        resp.write_to(&mut w)?;
        w.flush().map_err(Error::Network)?;
        drop(w);
        let _ = stream.shutdown(Shutdown::Write);
        info!(
            "{peer:?} {} {:?}: request {} B, response {} B, online {:.3} s",
            req.variant,
            resp.status,
            req.encoded_len(),
            resp.encoded_len(),
            start.elapsed().as_secs_f64()
        );
        Ok(())
    }
}

/// A running server; dropping the handle does not stop it, [`shutdown`]
/// does.
///
/// [`shutdown`]: ServerHandle::shutdown
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    thread: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn shutdown(mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the accept loop.
        let _ = TcpStream::connect(self.addr);
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    /// Blocks until the accept loop exits.
    pub fn join(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

/// Accepts connections on `listener` until shut down, one thread per
/// connection.
pub fn spawn<B>(listener: TcpListener, state: Arc<ServerState<B>>) -> Result<ServerHandle>
where
    B: SimdBackend + 'static,
{
    let addr = listener.local_addr().map_err(Error::Network)?;
    let stop = Arc::new(AtomicBool::new(false));
    let stop_flag = stop.clone();
    let thread = thread::spawn(move || {
        for conn in listener.incoming() {
            if stop_flag.load(Ordering::SeqCst) {
                break;
            }
            match conn {
                Ok(stream) => {
                    let state = state.clone();
                    thread::spawn(move || {
                        if let Err(e) = state.serve_connection(stream) {
                            debug!("connection ended with error: {e}");
                        }
                    });
                }
                Err(e) => warn!("accept failed: {e}"),
            }
        }
    });
    info!("listening on {addr}");
    Ok(ServerHandle {
        addr,
        stop,
        thread: Some(thread),
    })
}

/// Sends `req` and reads exactly one response.
pub fn exchange(
    addr: impl ToSocketAddrs,
    req: &Request,
    timeout: Option<Duration>,
) -> Result<Response> {
    let stream = TcpStream::connect(addr).map_err(Error::Network)?;
    stream.set_read_timeout(timeout).map_err(Error::Network)?;
    stream.set_write_timeout(timeout).map_err(Error::Network)?;
    let mut w = BufWriter::new(&stream);
    req.write_to(&mut w).map_err(net_wire)?;
    w.flush().map_err(Error::Network)?;
    drop(w);
    stream.shutdown(Shutdown::Write).map_err(Error::Network)?;
    Response::read_from(&mut BufReader::new(&stream)).map_err(net_wire)
}

fn net_wire(e: WireError) -> Error {
    match e {
        WireError::Io(io) => Error::Network(io),
        other => Error::Wire(other),
    }
}

/// What the client wants to learn.
#[derive(Debug, Clone, Copy)]
pub struct QuerySpec<'a> {
    pub variant: Variant,
    /// Client values for inner products, keyed by element.
    pub client_values: Option<&'a HashMap<u64, u64>>,
    /// Byte length of server labels, when labels are multi-limb.
    pub label_bytes: Option<usize>,
}

impl<'a> QuerySpec<'a> {
    pub fn new(variant: Variant) -> Self {
        Self {
            variant,
            client_values: None,
            label_bytes: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum QueryOutput {
    Intersection(Vec<u64>),
    Labels(Vec<(u64, u64)>),
    ByteLabels(Vec<(u64, Vec<u8>)>),
    Scalar(u64),
}

/// Byte counts and timings of one query.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryStats {
    pub request_bytes: usize,
    pub response_bytes: usize,
    /// Client preparation: binning, encoding, encryption.
    pub prepare: Duration,
    /// From sending the request to receiving the response.
    pub online: Duration,
    /// Decryption and extraction.
    pub extract: Duration,
}

/// Client-side state for building requests and reading responses.
pub struct Client<'a, B: SimdBackend> {
    pub backend: &'a B,
    pub params: &'a PsiParams,
    pub key: &'a B::SecretKey,
}

/// A prepared query: the request plus the table needed to read the answer.
pub struct PreparedQuery {
    pub request: Request,
    pub table: BinTable<ClientSlot>,
}

impl<B: SimdBackend> Client<'_, B> {
    pub fn prepare<R: Rng>(
        &self,
        spec: &QuerySpec<'_>,
        elements: &[u64],
        rng: &mut R,
    ) -> Result<PreparedQuery> {
        let q = protocol::client_prepare(self.backend, self.params, elements, self.key, rng)?;
        let mut client_values = Vec::new();
        if spec.variant == Variant::InnerProduct {
            let values = spec
                .client_values
                .ok_or_else(|| Error::InvalidParams("inner product needs client values".into()))?;
            for pt in variants::client_value_planes(self.params, &q.table, |x| {
                values
                    .get(&x)
                    .copied()
                    .ok_or_else(|| Error::Malformed(format!("no client value for {x:#x}")))
            })? {
                client_values.push(
                    self.backend
                        .serialize(&self.backend.encrypt(&pt, self.key)?),
                );
            }
        }
        Ok(PreparedQuery {
            request: Request {
                variant: spec.variant,
                plan_fingerprint: self.params.fingerprint(),
                params_fingerprint: self.params.he.fingerprint(),
                ciphertexts: q
                    .ciphertexts
                    .iter()
                    .map(|c| self.backend.serialize(c))
                    .collect(),
                client_values,
            },
            table: q.table,
        })
    }

    pub fn finish(
        &self,
        spec: &QuerySpec<'_>,
        table: &BinTable<ClientSlot>,
        resp: &Response,
    ) -> Result<QueryOutput> {
        match resp.status {
            Status::Ok => {}
            Status::FingerprintMismatch => return Err(Error::FingerprintMismatch),
            status => {
                return Err(Error::Rejected {
                    status,
                    message: resp.message.clone(),
                })
            }
        }
        if resp.variant != spec.variant {
            return Err(Error::Malformed(format!(
                "asked for {}, got {}",
                spec.variant, resp.variant
            )));
        }
        let cts = resp
            .ciphertexts
            .iter()
            .map(|b| self.backend.deserialize(b))
            .collect::<Result<Vec<_>>>()?;
        let (b, p, k) = (self.backend, self.params, self.key);
        Ok(match spec.variant {
            Variant::Psi => {
                QueryOutput::Intersection(protocol::extract_intersection(b, p, table, &cts, k)?)
            }
            Variant::Labelled => match spec.label_bytes {
                Some(len) => {
                    let layout = LabelLayout::new(len, p.he.t())?;
                    if layout.limbs() != resp.groups as usize {
                        return Err(Error::Malformed(format!(
                            "{} label groups for {len}-byte labels",
                            resp.groups
                        )));
                    }
                    QueryOutput::ByteLabels(variants::extract_large_labels(
                        b, p, table, &cts, &layout, k,
                    )?)
                }
                None => QueryOutput::Labels(variants::extract_labels(b, p, table, &cts, k)?),
            },
            Variant::Sum | Variant::Cardinality | Variant::InnerProduct => {
                let [ct] = cts.as_slice() else {
                    return Err(Error::Malformed(format!(
                        "{} ciphertexts in an aggregate response",
                        cts.len()
                    )));
                };
                QueryOutput::Scalar(variants::extract_sum(b, ct, k)?)
            }
        })
    }

    /// Prepares, sends, and decodes one query.
    pub fn query<R: Rng>(
        &self,
        addr: impl ToSocketAddrs,
        spec: &QuerySpec<'_>,
        elements: &[u64],
        rng: &mut R,
    ) -> Result<(QueryOutput, QueryStats)> {
        let t0 = Instant::now();
        let prepared = self.prepare(spec, elements, rng)?;
        let t1 = Instant::now();
        let resp = exchange(addr, &prepared.request, None)?;
        let t2 = Instant::now();
        let out = self.finish(spec, &prepared.table, &resp)?;
        let stats = QueryStats {
            request_bytes: prepared.request.encoded_len(),
            response_bytes: resp.encoded_len(),
            prepare: t1 - t0,
            online: t2 - t1,
            extract: t2.elapsed(),
        };
        Ok((out, stats))
    }
}
