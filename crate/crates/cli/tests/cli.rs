// SPDX-License-Identifier: Apache-2.0

use std::io::{BufRead, BufReader};
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};

use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_pepsi");

struct Fixture {
    dir: TempDir,
}

impl Fixture {
    fn new() -> Self {
        Self {
            dir: tempfile::tempdir().unwrap(),
        }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        std::fs::write(&p, text).unwrap();
        p
    }

    fn cmd(&self) -> Command {
        let mut c = Command::new(BIN);
        c.env("PEPSI_CACHE_DIR", self.path("cache"));
        c.env_remove("RUST_LOG");
        c
    }

    fn run(&self, args: &[&str]) -> Output {
        self.cmd().args(args).output().unwrap()
    }

    fn plan(&self, m: u64, n: u64) -> PathBuf {
        self.plan_for(m, n, "psi")
    }

    fn plan_for(&self, m: u64, n: u64, variant: &str) -> PathBuf {
        let plan = self.path(&format!("plan-{variant}.toml"));
        let out = self.run(&[
            "params",
            "--m",
            &m.to_string(),
            "--n",
            &n.to_string(),
            "--element-bits",
            "32",
            "--profile",
            "experiments",
            "--seed",
            "5",
            "--variant",
            variant,
            "--out",
            plan.to_str().unwrap(),
        ]);
        assert_ok(&out);
        plan
    }
}

fn assert_ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

struct Server(Child, String);

impl Server {
    fn start(fx: &Fixture, plan: &Path) -> Self {
        let mut child = fx
            .cmd()
            .args([
                "serve",
                "--plan",
                plan.to_str().unwrap(),
                "--listen",
                "127.0.0.1:0",
            ])
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap())
            .read_line(&mut line)
            .unwrap();
        let addr = line
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected server output {line:?}"))
            .to_string();
        Server(child, addr)
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

#[test]
fn params_writes_a_loadable_plan() {
    let fx = Fixture::new();
    let plan = fx.path("plan.toml");
    let out = fx.run(&[
        "params",
        "-m",
        "1024",
        "-n",
        "65536",
        "--element-bits",
        "32",
        "--profile",
        "experiments",
        "--no-index-bits",
        "--out",
        plan.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let text = stdout(&out);
    assert!(text.contains("code length             24"), "{text}");
    assert!(text.contains("effective bits          19"), "{text}");
    let file = pepsi_plan(&plan);
    assert!(
        file.contains("[binning]") && file.contains("[he]"),
        "{file}"
    );
}

fn pepsi_plan(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap()
}

#[test]
fn serve_and_query_every_variant() {
    let fx = Fixture::new();
    // Planned for inner products, which leaves room for every variant.
    let plan = fx.plan_for(32, 600, "inner-product");
    let server: Vec<u64> = (0..600u64).map(|i| i * 7919 + 11).collect();
    let client: Vec<u64> = server[100..116]
        .iter()
        .copied()
        .chain((0..16).map(|i| 5_000_000 + i))
        .collect();
    let lines = |xs: &[u64]| xs.iter().map(|x| format!("{x}\n")).collect::<String>();
    let set = fx.write("server.txt", &lines(&server));
    let values = fx.write(
        "values.tsv",
        &server
            .iter()
            .map(|x| format!("{x}\t{}\n", x % 1000 + 1))
            .collect::<String>(),
    );
    let query_set = fx.write("client.txt", &lines(&client));
    let client_values = fx.write(
        "client_values.tsv",
        &client
            .iter()
            .map(|x| format!("{x}\t3\n"))
            .collect::<String>(),
    );

    let out = fx.run(&[
        "preprocess",
        "--plan",
        plan.to_str().unwrap(),
        "--set-file",
        set.to_str().unwrap(),
        "--values-file",
        values.to_str().unwrap(),
    ]);
    assert_ok(&out);
    assert!(stdout(&out).contains(fx.path("cache").to_str().unwrap()));

    let srv = Server::start(&fx, &plan);
    let query = |variant: &str, extra: &[&str]| {
        let mut args = vec![
            "query",
            "--plan",
            plan.to_str().unwrap(),
            "--set-file",
            query_set.to_str().unwrap(),
            "--server",
            &srv.1,
            "--variant",
            variant,
        ];
        args.extend_from_slice(extra);
        let out = fx.run(&args);
        assert_ok(&out);
        let stderr = String::from_utf8_lossy(&out.stderr);
        assert!(
            stderr.contains("request ") && stderr.contains("response "),
            "{stderr}"
        );
        stdout(&out)
    };

    let mut hits: Vec<u64> = client[..16].to_vec();
    hits.sort_unstable();
    assert_eq!(query("psi", &[]), lines(&hits));
    assert_eq!(query("cardinality", &[]), "16\n");
    // Inner products need a plan with an extra level.
    let psi_only = fx.plan(32, 600);
    let out = fx.run(&[
        "query",
        "--plan",
        psi_only.to_str().unwrap(),
        "--set-file",
        query_set.to_str().unwrap(),
        "--server",
        &srv.1,
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("fingerprint"));
    let sum: u64 = hits.iter().map(|x| x % 1000 + 1).sum();
    assert_eq!(query("sum", &[]), format!("{sum}\n"));
    assert_eq!(
        query(
            "inner-product",
            &["--values-file", client_values.to_str().unwrap()]
        ),
        format!("{}\n", 3 * sum)
    );
    let labels: String = hits
        .iter()
        .map(|x| format!("{x}\t{}\n", x % 1000 + 1))
        .collect();
    assert_eq!(query("labelled", &[]), labels);

    let out_file = fx.path("result.txt");
    query("cardinality", &["--out", out_file.to_str().unwrap()]);
    assert_eq!(std::fs::read_to_string(out_file).unwrap(), "16\n");
}

#[test]
fn string_elements_and_byte_labels() {
    let fx = Fixture::new();
    let plan = fx.plan(8, 100);
    let names: Vec<String> = (0..100).map(|i| format!("user-{i}@example.org")).collect();
    let set = fx.write("server.txt", &names.join("\n"));
    let labels = fx.write(
        "labels.tsv",
        &names
            .iter()
            .enumerate()
            .map(|(i, n)| format!("{n}\t{:02x}00ff{:02x}\n", i, 255 - i))
            .collect::<String>(),
    );
    let out = fx.run(&[
        "preprocess",
        "--plan",
        plan.to_str().unwrap(),
        "--set-file",
        set.to_str().unwrap(),
        "--format",
        "string",
        "--values-file",
        labels.to_str().unwrap(),
        "--label-bytes",
        "4",
    ]);
    assert_ok(&out);
    let srv = Server::start(&fx, &plan);
    let query_set = fx.write(
        "client.txt",
        "user-3@example.org\nnobody@example.org\nuser-42@example.org\n",
    );
    let out = fx.run(&[
        "query",
        "--plan",
        plan.to_str().unwrap(),
        "--set-file",
        query_set.to_str().unwrap(),
        "--format",
        "string",
        "--server",
        &srv.1,
        "--variant",
        "labelled",
        "--label-bytes",
        "4",
    ]);
    assert_ok(&out);
    let mut got: Vec<String> = stdout(&out).lines().map(String::from).collect();
    got.sort();
    assert_eq!(
        got,
        vec![
            "user-3@example.org\t0300fffc",
            "user-42@example.org\t2a00ffd5"
        ]
    );
}

#[test]
fn bin_overflow_exits_with_protocol_status() {
    let fx = Fixture::new();
    let plan = fx.plan(8, 64);
    // Far more elements than the plan's server bin load allows.
    let set = fx.write(
        "server.txt",
        &(0..200_000u64)
            .map(|x| format!("{x}\n"))
            .collect::<String>(),
    );
    let out = fx.run(&[
        "preprocess",
        "--plan",
        plan.to_str().unwrap(),
        "--set-file",
        set.to_str().unwrap(),
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn cuckoo_failure_exits_with_protocol_status() {
    let fx = Fixture::new();
    let plan = fx.plan(8, 64);
    let set = fx.write(
        "client.txt",
        &(0..20_000u64).map(|x| format!("{x}\n")).collect::<String>(),
    );
    let out = fx.run(&[
        "query",
        "--plan",
        plan.to_str().unwrap(),
        "--set-file",
        set.to_str().unwrap(),
        "--server",
        "127.0.0.1:9",
    ]);
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn unreachable_server_exits_with_network_status() {
    let fx = Fixture::new();
    let plan = fx.plan(8, 64);
    let set = fx.write("client.txt", "1\n2\n3\n");
    let port = {
        let l = TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let addr = format!("127.0.0.1:{port}");
    let out = fx.run(&[
        "query",
        "--plan",
        plan.to_str().unwrap(),
        "--set-file",
        set.to_str().unwrap(),
        "--server",
        &addr,
    ]);
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn usage_errors_do_not_use_protocol_status() {
    let fx = Fixture::new();
    assert_eq!(fx.run(&["params", "--m"]).status.code(), Some(1));
    assert_eq!(fx.run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        fx.run(&["query", "--variant", "nope"]).status.code(),
        Some(1)
    );
    assert!(fx.run(&["--help"]).status.success());
}

#[test]
fn missing_cache_is_an_ordinary_error() {
    let fx = Fixture::new();
    let plan = fx.plan(8, 64);
    let out = fx.run(&[
        "serve",
        "--plan",
        plan.to_str().unwrap(),
        "--listen",
        "127.0.0.1:0",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn bench_writes_csv() {
    let fx = Fixture::new();
    let scenarios = fx.write(
        "scenarios.toml",
        "runs = 3\n[[scenario]]\nn = 256\nm = 8\nvariant = \"sum\"\nelement_bits = 24\n",
    );
    let csv = fx.path("out.csv");
    let out = fx.run(&[
        "bench",
        scenarios.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert_ok(&out);
    let text = std::fs::read_to_string(csv).unwrap();
    let lines: Vec<_> = text.lines().collect();
    assert_eq!(lines[0], "variant,n,m,mu,offline_s,online_s,req_MB,resp_MB");
    assert!(lines[1].starts_with("sum,256,8,"), "{text}");
}
